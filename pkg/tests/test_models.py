import json
import warnings

import numpy as np
import pytest

from ecgage import models
from ecgage.errors import DataError
from ecgage.models.base import load_model, model_to_dict, predict, save_model
from ecgage.models.finetune import derived_finetune_seed
from ecgage.models.tree import TIE_RTOL


# --- exhaustive reference implementations -----------------------------------


def oracle_best_split(X, y, idx, min_leaf):
    cands = []
    n = len(idx)
    for f in range(X.shape[1]):
        vals = sorted(set(X[idx, f]))
        for a, b in zip(vals, vals[1:]):
            thr = 0.5 * (a + b)
            if thr >= b:
                continue
            left = idx[X[idx, f] <= thr]
            right = idx[X[idx, f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            sse = ((y[left] - y[left].mean()) ** 2).sum() + (
                (y[right] - y[right].mean()) ** 2
            ).sum()
            cands.append((float(sse), f, float(thr)))
    if not cands:
        return None
    gmin = min(c[0] for c in cands)
    cut = gmin + TIE_RTOL * max(abs(gmin), 1.0)
    tied = sorted((c for c in cands if c[0] <= cut), key=lambda c: (c[1], c[2]))
    return tied[0]


def oracle_tree(X, y, idx, depth, max_depth, min_leaf):
    mean = float(y[idx].mean())
    if (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
        return ("leaf", mean)
    sse_parent = float(((y[idx] - mean) ** 2).sum())
    if sse_parent <= 0:
        return ("leaf", mean)
    best = oracle_best_split(X, y, idx, min_leaf)
    if best is None or best[0] >= sse_parent:
        return ("leaf", mean)
    _, f, thr = best
    return (
        "node",
        f,
        thr,
        oracle_tree(X, y, idx[X[idx, f] <= thr], depth + 1, max_depth, min_leaf),
        oracle_tree(X, y, idx[X[idx, f] > thr], depth + 1, max_depth, min_leaf),
    )


def flatten(params, node=0):
    f = int(params.feature[node])
    if f < 0:
        return ("leaf", pytest.approx(float(params.value[node]), rel=1e-12))
    return (
        "node",
        f,
        float(params.threshold[node]),
        flatten(params, int(params.left[node])),
        flatten(params, int(params.right[node])),
    )


# --- linear & ridge ----------------------------------------------------------


class TestLinear:
    def test_exact_recovery_on_noiseless_data(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(120, 7))
        y = X @ rng.normal(size=7) + 2.5
        m = models.fit_linear(X, y)
        assert np.mean((predict(m, X) - y) ** 2) < 1e-9

    def test_constant_column_gives_mean_intercept(self):
        X = np.full((30, 1), 4.0)
        y = np.arange(30.0)
        m = models.fit_linear(X, y)
        assert m.params.intercept == pytest.approx(y.mean())
        assert np.allclose(predict(m, X), y.mean())

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(200, 6))
        y = rng.normal(size=200)
        m = models.fit_linear(X, y)
        means, stds = X.mean(0), X.std(0)
        Xs = (X - means) / stds
        A = np.column_stack([np.ones(200), Xs])
        coef = np.linalg.solve(A.T @ A, A.T @ y)
        assert np.abs(m.params.weights - coef[1:]).max() < 1e-6 * max(
            1.0, np.abs(coef).max()
        )

    def test_underdetermined_warns_and_returns(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(5, 8))
        y = rng.normal(size=5)
        with pytest.warns(UserWarning, match="minimum-norm"):
            m = models.fit_linear(X, y)
        assert np.mean((predict(m, X) - y) ** 2) < 1e-12  # interpolates


class TestRidge:
    def test_lambda_zero_equals_ols(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(80, 5))
        y = rng.normal(size=80)
        w_ols = models.fit_linear(X, y).params.weights
        w_ridge = models.fit_ridge(X, y, 0.0).params.weights
        assert np.abs(w_ols - w_ridge).max() < 1e-8

    def test_huge_lambda_predicts_mean(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(60, 4))
        y = rng.normal(size=60) + 7.0
        m = models.fit_ridge(X, y, 1e12)
        assert np.abs(m.params.weights).max() < 1e-9
        assert np.allclose(predict(m, X), y.mean(), atol=1e-6)

    def test_matches_closed_form_oracle(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(50, 4))
        y = rng.normal(size=50)
        lam = 1.0
        m = models.fit_ridge(X, y, lam)
        Xs = (X - X.mean(0)) / X.std(0)
        w = np.linalg.solve(Xs.T @ Xs + lam * np.eye(4), Xs.T @ (y - y.mean()))
        assert np.abs(m.params.weights - w).max() < 1e-8

    def test_weight_norm_monotone_in_lambda(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(100, 6))
        y = rng.normal(size=100)
        norms = [
            np.linalg.norm(models.fit_ridge(X, y, lam).params.weights)
            for lam in (0.0, 0.1, 1.0, 10.0, 100.0)
        ]
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))

    def test_negative_lambda_rejected(self):
        with pytest.raises(DataError):
            models.fit_ridge(np.ones((10, 1)), np.ones(10), -1.0)


# --- trees and forests -------------------------------------------------------


class TestTree:
    def test_constant_target_single_leaf(self):
        X = np.arange(12.0).reshape(-1, 1)
        m = models.fit_tree(X, np.full(12, 3.0))
        assert len(m.params.feature) == 1
        assert predict(m, X)[0] == 3.0

    def test_step_function_depth_one(self):
        X = np.array([[0.1], [0.3], [0.6], [0.9]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        m = models.fit_tree(X, y, max_depth=1)
        assert 0.3 < m.params.threshold[0] < 0.6
        assert np.mean((predict(m, X) - y) ** 2) == 0.0

    def test_identical_to_exhaustive_oracle(self):
        for ds in range(20):
            rng = np.random.default_rng(1000 + ds)
            X = rng.uniform(size=(50, 3))
            y = rng.normal(size=50)
            mine = models.fit_tree(X, y, max_depth=3, min_leaf=1)
            assert flatten(mine.params) == oracle_tree(X, y, np.arange(50), 0, 3, 1), ds

    def test_memorizes_training_data(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(40, 3))
        y = rng.normal(size=40)
        m = models.fit_tree(X, y, max_depth=None, min_leaf=1)
        assert np.array_equal(predict(m, X), y)

    def test_min_leaf_respected(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(64, 2))
        y = rng.normal(size=64)
        m = models.fit_tree(X, y, min_leaf=5)
        counts = np.zeros(len(m.params.feature), dtype=int)
        # count rows reaching each leaf
        node_rows = {0: np.arange(64)}
        for i in range(len(m.params.feature)):
            rows = node_rows.pop(i)
            f = m.params.feature[i]
            if f < 0:
                counts[i] = len(rows)
                continue
            mask = X[rows, f] <= m.params.threshold[i]
            node_rows[m.params.left[i]] = rows[mask]
            node_rows[m.params.right[i]] = rows[~mask]
        leaf_counts = counts[m.params.feature == -1]
        assert leaf_counts.min() >= 5

    def test_scale_invariance_of_structure(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(80, 4))
        y = rng.normal(size=80)
        Xs = X.copy()
        Xs[:, 2] *= 37.5  # positive rescale of one column
        a = models.fit_tree(X, y, max_depth=4)
        b = models.fit_tree(Xs, y, max_depth=4)
        assert np.array_equal(a.params.feature, b.params.feature)
        assert np.array_equal(a.params.left, b.params.left)
        assert np.allclose(a.params.value, b.params.value)
        assert np.array_equal(predict(a, X), predict(b, Xs))


class TestForest:
    def test_single_tree_degenerate_case(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(50, 3))
        y = rng.normal(size=50)
        spec = models.ModelSpec(
            kind="forest", forest_n_trees=1, forest_bootstrap=False,
            forest_max_features=3, tree_min_leaf=1, seed=5,
        )
        f = models.fit_forest(X, y, spec)
        t = models.fit_tree(X, y, min_leaf=1, seed=5)
        assert np.array_equal(predict(f, X), predict(t, X))

    def test_seeded_determinism_across_thread_counts(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(120, 5))
        y = rng.normal(size=120)
        spec = models.ModelSpec(
            kind="forest", forest_n_trees=12, forest_max_features=2, seed=77
        )
        a = models.fit_forest(X, y, spec, n_jobs=1)
        b = models.fit_forest(X, y, spec, n_jobs=4)
        assert json.dumps(model_to_dict(a), sort_keys=True) == json.dumps(
            model_to_dict(b), sort_keys=True
        )

    def test_variance_reduction_over_single_tree(self):
        rng = np.random.default_rng(13)
        X = rng.uniform(size=(300, 4))
        y = (X[:, 0] > 0.5).astype(float) + 0.3 * (X[:, 1] > 0.3) + rng.normal(0, 0.3, 300)
        X_test = rng.uniform(size=(200, 4))
        y_test = (X_test[:, 0] > 0.5).astype(float) + 0.3 * (X_test[:, 1] > 0.3)
        tree_mse, forest_mse = [], []
        for seed in range(20):
            spec = models.ModelSpec(
                kind="forest", forest_n_trees=25, forest_max_features=2,
                tree_min_leaf=2, seed=seed,
            )
            fm = models.fit_forest(X, y, spec)
            forest_mse.append(np.mean((predict(fm, X_test) - y_test) ** 2))
            boot = np.random.default_rng(seed).integers(0, 300, 300)
            tm = models.fit_tree(X[boot], y[boot], min_leaf=2)
            tree_mse.append(np.mean((predict(tm, X_test) - y_test) ** 2))
        assert np.var(forest_mse) < np.var(tree_mse)

    def test_piecewise_constant_benchmark(self):
        rng = np.random.default_rng(14)
        X = rng.uniform(size=(500, 5))
        f = lambda X: 2.0 * (X[:, 0] > 0.5) + 1.0 * (X[:, 1] > 0.7) - 1.5 * (X[:, 2] > 0.2)
        y = f(X)
        X_hold = rng.uniform(size=(300, 5))
        y_hold = f(X_hold)
        spec = models.ModelSpec(kind="forest", forest_n_trees=200, forest_max_features=2, seed=3)
        m = models.fit_forest(X, y, spec)
        pred = predict(m, X_hold)
        ss_res = np.sum((pred - y_hold) ** 2)
        ss_tot = np.sum((y_hold - y_hold.mean()) ** 2)
        assert 1.0 - ss_res / ss_tot >= 0.9


class TestPredict:
    def fit_toy(self, columns=None):
        rng = np.random.default_rng(15)
        return models.fit_linear(rng.normal(size=(10, 3)), rng.normal(size=10), columns=columns)

    def test_empty_rows(self):
        assert predict(self.fit_toy(), np.empty((0, 3))).shape == (0,)

    def test_column_count_mismatch(self):
        with pytest.raises(DataError, match="columns"):
            predict(self.fit_toy(), np.ones((2, 4)))

    def test_column_name_mismatch(self):
        m = self.fit_toy(columns=["a", "b", "c"])
        with pytest.raises(DataError, match="order"):
            predict(m, np.ones((1, 3)), columns=["b", "a", "c"])


class TestSerialization:
    def fit_all(self):
        rng = np.random.default_rng(20)
        X = rng.normal(size=(60, 4))
        y = rng.normal(size=60)
        spec = models.ModelSpec(forest_n_trees=5, forest_max_features=2, seed=1)
        return X, [
            models.fit_linear(X, y),
            models.fit_ridge(X, y, 2.0),
            models.fit_tree(X, y, max_depth=4),
            models.fit_forest(X, y, spec),
        ]

    def test_round_trip_exact_predictions(self, tmp_path):
        X, fitted = self.fit_all()
        for i, m in enumerate(fitted):
            path = tmp_path / f"m{i}.json"
            save_model(m, path)
            back = load_model(path)
            assert np.array_equal(predict(back, X), predict(m, X))
            assert back.spec == m.spec
            assert back.feature_columns == m.feature_columns

    def test_serialization_is_byte_stable(self, tmp_path):
        X, fitted = self.fit_all()
        for i, m in enumerate(fitted):
            p1, p2 = tmp_path / f"a{i}.json", tmp_path / f"b{i}.json"
            save_model(m, p1)
            save_model(m, p2)
            assert p1.read_bytes() == p2.read_bytes()


class TestGridSearch:
    def data(self):
        rng = np.random.default_rng(30)
        X = rng.normal(size=(120, 4))
        y = X @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.01 * rng.normal(size=120)
        return (X[:80], y[:80]), (X[80:], y[80:])

    def test_single_point_grid(self):
        train, val = self.data()
        grid = [models.ModelSpec(kind="ridge", ridge_lambda=1.0)]
        res = models.grid_search(grid, train, val)
        assert res.best_spec == grid[0]
        assert len(res.leaderboard) == 1

    def test_regularization_hurts_near_linear_data(self):
        train, val = self.data()
        grid = [
            models.ModelSpec(kind="ridge", ridge_lambda=0.0),
            models.ModelSpec(kind="ridge", ridge_lambda=1e6),
        ]
        res = models.grid_search(grid, train, val)
        assert res.best_spec.ridge_lambda == 0.0

    def test_leaderboard_covers_grid_in_order(self):
        train, val = self.data()
        grid = models.expand_grid("ridge", {"ridge_lambda": [0.0, 0.5, 5.0]})
        res = models.grid_search(grid, train, val)
        assert [s.ridge_lambda for s, _ in res.leaderboard] == [0.0, 0.5, 5.0]

    def test_empty_grid_rejected(self):
        with pytest.raises(DataError):
            models.grid_search([], (np.ones((4, 1)), np.ones(4)), (np.ones((2, 1)), np.ones(2)))

    def test_expand_grid_cross_product(self):
        specs = models.expand_grid(
            "tree", {"tree_max_depth": [2, 4], "tree_min_leaf": [1, 3]}
        )
        assert len(specs) == 4
        assert [(s.tree_max_depth, s.tree_min_leaf) for s in specs] == [
            (2, 1), (2, 3), (4, 1), (4, 3),
        ]

    def test_expand_grid_unknown_field(self):
        with pytest.raises(DataError, match="unknown grid field"):
            models.expand_grid("tree", {"bogus": [1]})


class TestFinetune:
    def data(self, seed, n=150):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 5))
        y = X @ np.array([1.0, 0.5, -1.0, 0.0, 2.0]) + rng.normal(0, 0.2, n)
        return X, y

    def pretrained(self):
        X, y = self.data(40)
        spec = models.ModelSpec(kind="forest", forest_n_trees=10, forest_max_features=3, seed=9)
        return models.fit_forest(X, y, spec), X, y

    def test_weight_zero_reproduces_pretrained(self):
        m, X, _ = self.pretrained()
        Xf, yf = self.data(41)
        cols = m.feature_columns
        tuned = models.finetune_model(
            m, Xf, yf, cols, models.FinetunePolicy(k=4, weight=0.0)
        )
        assert np.array_equal(predict(tuned, X), predict(m, X))

    def test_weight_one_equals_fresh_forest_with_subseed(self):
        m, _, _ = self.pretrained()
        Xf, yf = self.data(41)
        sub = derived_finetune_seed(m.spec)
        tuned = models.finetune_model(
            m, Xf, yf, m.feature_columns, models.FinetunePolicy(k=6, weight=1.0)
        )
        fresh = models.fit_forest(
            Xf, yf, m.spec.with_(forest_n_trees=6, seed=sub), columns=m.feature_columns
        )
        assert np.array_equal(predict(tuned, Xf), predict(fresh, Xf))

    def test_same_set_finetune_within_forest_spread(self):
        # fine-tuning on the training set itself should look like another
        # seeded forest on that set, not an outlier
        X, y = self.data(42, n=200)
        spec = models.ModelSpec(kind="forest", forest_n_trees=20, forest_max_features=3, seed=1)
        base = models.fit_forest(X, y, spec)
        tuned = models.finetune_model(
            base, X, y, base.feature_columns, models.FinetunePolicy(weight=0.5)
        )
        mse_tuned = np.mean((predict(tuned, X) - y) ** 2)
        spread = [
            np.mean((predict(models.fit_forest(X, y, spec.with_(seed=s)), X) - y) ** 2)
            for s in range(5, 11)
        ]
        assert mse_tuned <= max(spread) * 2.0

    def test_warm_start_converges_toward_refit(self):
        Xp, yp = self.data(50)
        Xf, yf = self.data(51)
        pre = models.fit_linear(Xp, yp)
        short = models.finetune_model(
            pre, Xf, yf, pre.feature_columns,
            models.FinetunePolicy(name="warm-start", iterations=5),
        )
        long = models.finetune_model(
            pre, Xf, yf, pre.feature_columns,
            models.FinetunePolicy(name="warm-start", iterations=4000),
        )
        refit = models.fit_linear(Xf, yf)
        d_short = np.abs(short.params.weights - refit.params.weights).max()
        d_long = np.abs(long.params.weights - refit.params.weights).max()
        assert d_long < d_short
        assert d_long < 1e-3

    def test_schema_intersection(self):
        Xp, yp = self.data(60)
        Xf, yf = self.data(61)
        pre_cols = ["a", "b", "c", "d", "e"]
        fin_cols = ["c", "b", "z", "a", "w"]
        tuned = models.pretrain_finetune(
            "forest",
            (Xp, yp, pre_cols),
            (Xf, yf, fin_cols),
            base_spec=models.ModelSpec(forest_n_trees=4, forest_max_features=2, seed=2),
        )
        assert tuned.feature_columns == ["a", "b", "c"]
        schema = tuned.provenance["schema"]
        assert schema["dropped_from_pretrain"] == ["d", "e"]
        assert schema["dropped_from_finetune"] == ["z", "w"]

    def test_disjoint_schema_rejected(self):
        Xp, yp = self.data(62)
        with pytest.raises(DataError, match="no feature columns"):
            models.pretrain_finetune(
                "forest", (Xp, yp, ["a", "b", "c", "d", "e"]),
                (Xp, yp, ["v", "w", "x", "y", "z"]),
            )

    def test_parse_policy(self):
        p = models.parse_policy("forest-augment:k=100,w=0.5")
        assert p.name == "forest-augment" and p.k == 100 and p.weight == 0.5
        with pytest.raises(DataError):
            models.parse_policy("nonsense")
