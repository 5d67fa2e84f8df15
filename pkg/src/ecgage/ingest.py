"""Dataset loading, validation, and bit-exact persistence.

File formats (UTF-8, '.' decimal separator throughout):

* Recording CSV: one sample per line, either ``value`` or ``index,value``.
  The literal token ``NaN`` (any case) marks an unusable sample; the row is
  kept in place and masked out.  Whitespace-separated columns are accepted
  as well, so raw serial-logger dumps load unchanged.
* Metadata: a single JSON document for the whole cohort, keyed by
  subject id, carrying ``schema_version``.
* Manifest: a JSON document naming the dataset, its version, the metadata
  document, and one ``(recording, subject_id)`` entry per subject.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

METADATA_SCHEMA_VERSION = "1"
MANIFEST_SCHEMA_VERSION = "1"

#: |bmi - weight/(height/100)^2| above this is rejected at load time.
BMI_TOLERANCE = 0.5

# Downstream numeric encoding (documented convention, see README):
# male = 1, female = 0; booleans encode as 1/0.
SEX_ENCODING = {"male": 1.0, "female": 0.0}


@dataclass(frozen=True)
class EcgRecording:
    """A raw sampled single-lead trace with a per-sample validity mask."""

    subject_id: str
    sampling_rate_hz: float
    samples: np.ndarray
    validity_mask: np.ndarray

    def __post_init__(self):
        if self.sampling_rate_hz <= 0:
            raise DataError(f"{self.subject_id}: sampling rate must be positive")
        if len(self.samples) == 0:
            raise DataError(f"{self.subject_id}: recording is empty")
        if len(self.samples) != len(self.validity_mask):
            raise DataError(f"{self.subject_id}: mask length does not match samples")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz


@dataclass
class SubjectMetadata:
    """Demographic and clinical fields recorded alongside each trace."""

    subject_id: str
    age_years: int
    sex: str
    smoker: bool
    bmi_kg_m2: float
    sleep_hours: float
    systolic_mmhg: float
    diastolic_mmhg: float
    resting_hr_bpm: float
    family_history: bool
    height_cm: float | None = None
    weight_kg: float | None = None

    def violations(self) -> list[str]:
        """Return invariant violations as human-readable strings."""
        bad = []
        if self.sex not in SEX_ENCODING:
            bad.append(f"sex must be one of {sorted(SEX_ENCODING)}, got {self.sex!r}")
        if self.bmi_kg_m2 <= 0:
            bad.append("bmi_kg_m2 must be positive")
        if self.height_cm is not None and self.weight_kg is not None:
            implied = self.weight_kg / (self.height_cm / 100.0) ** 2
            if abs(self.bmi_kg_m2 - implied) > BMI_TOLERANCE:
                bad.append(
                    f"bmi {self.bmi_kg_m2:.2f} inconsistent with "
                    f"weight/height^2 = {implied:.2f}"
                )
        if self.systolic_mmhg <= self.diastolic_mmhg:
            bad.append("systolic must exceed diastolic")
        if not 0 < self.resting_hr_bpm < 250:
            bad.append(f"resting_hr_bpm out of range: {self.resting_hr_bpm}")
        if self.sleep_hours < 0:
            bad.append("sleep_hours must be nonnegative")
        return bad


@dataclass(frozen=True)
class ManifestEntry:
    recording: str
    subject_id: str


@dataclass
class DatasetManifest:
    dataset_name: str
    version: str
    metadata_path: str
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.subject_id in seen:
                raise DataError(f"manifest: duplicate subject_id {e.subject_id!r}")
            seen.add(e.subject_id)


# ---------------------------------------------------------------------------
# Recording I/O

_NAN_TOKENS = {"nan"}


def _parse_line(line: str):
    fields = [f for f in line.replace(",", " ").split() if f]
    return fields


def load_recording(path: Path | str, sampling_rate_hz: float) -> EcgRecording:
    """Load a recording CSV; rows whose value is the NaN token are masked."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"recording file not found: {path}")
    values: list[float] = []
    mask: list[bool] = []
    last_index: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = _parse_line(line)
            if len(fields) == 1:
                index_field, value_field = None, fields[0]
            elif len(fields) == 2:
                index_field, value_field = fields
            else:
                raise DataError(f"{path}:{lineno}: expected 1 or 2 columns, got {len(fields)}")
            if index_field is not None:
                try:
                    idx = int(index_field)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad sample index {index_field!r}") from None
                if last_index is not None and idx <= last_index:
                    raise DataError(f"{path}:{lineno}: non-monotone sample index {idx}")
                last_index = idx
            if value_field.lower() in _NAN_TOKENS:
                values.append(math.nan)
                mask.append(False)
            else:
                try:
                    values.append(float(value_field))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad sample value {value_field!r}") from None
                mask.append(True)
    if not values:
        raise DataError(f"{path}: empty recording file")
    return EcgRecording(
        subject_id=path.stem,
        sampling_rate_hz=sampling_rate_hz,
        samples=np.asarray(values, dtype=np.float64),
        validity_mask=np.asarray(mask, dtype=bool),
    )


def write_recording(recording: EcgRecording, path: Path | str) -> None:
    """Persist a recording; round-trips sample values and mask exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i, (v, ok) in enumerate(zip(recording.samples, recording.validity_mask)):
            token = repr(float(v)) if ok else "NaN"
            fh.write(f"{i},{token}\n")


# ---------------------------------------------------------------------------
# Metadata I/O

_MANDATORY_FIELDS = ("age_years", "sex", "smoker")
_NUMERIC_FIELDS = (
    "bmi_kg_m2",
    "sleep_hours",
    "systolic_mmhg",
    "diastolic_mmhg",
    "resting_hr_bpm",
)


def load_metadata(path: Path | str) -> list[SubjectMetadata]:
    """Load the cohort metadata document; all record invariants are checked."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"metadata file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
    if doc.get("schema_version") != METADATA_SCHEMA_VERSION:
        raise DataError(
            f"{path}: unsupported metadata schema_version {doc.get('schema_version')!r}"
        )
    subjects = doc.get("subjects")
    if not isinstance(subjects, dict) or not subjects:
        raise DataError(f"{path}: 'subjects' must be a non-empty mapping")

    records = []
    problems = []
    for sid, row in subjects.items():
        missing = [f for f in _MANDATORY_FIELDS if f not in row]
        if missing:
            problems.append(f"{sid}: missing mandatory field(s) {', '.join(missing)}")
            continue
        missing_num = [f for f in _NUMERIC_FIELDS if f not in row]
        if missing_num:
            problems.append(f"{sid}: missing field(s) {', '.join(missing_num)}")
            continue
        try:
            rec = SubjectMetadata(
                subject_id=sid,
                age_years=int(row["age_years"]),
                sex=str(row["sex"]),
                smoker=bool(row["smoker"]),
                bmi_kg_m2=float(row["bmi_kg_m2"]),
                sleep_hours=float(row["sleep_hours"]),
                systolic_mmhg=float(row["systolic_mmhg"]),
                diastolic_mmhg=float(row["diastolic_mmhg"]),
                resting_hr_bpm=float(row["resting_hr_bpm"]),
                family_history=bool(row.get("family_history", False)),
                height_cm=float(row["height_cm"]) if row.get("height_cm") is not None else None,
                weight_kg=float(row["weight_kg"]) if row.get("weight_kg") is not None else None,
            )
        except (TypeError, ValueError) as exc:
            problems.append(f"{sid}: {exc}")
            continue
        for v in rec.violations():
            problems.append(f"{sid}: {v}")
        records.append(rec)
    if problems:
        raise DataError(f"{path}: invalid metadata:\n  " + "\n  ".join(problems))
    return records


def write_metadata(records: list[SubjectMetadata], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    subjects = {}
    for r in records:
        row = {
            "age_years": r.age_years,
            "sex": r.sex,
            "smoker": r.smoker,
            "bmi_kg_m2": r.bmi_kg_m2,
            "sleep_hours": r.sleep_hours,
            "systolic_mmhg": r.systolic_mmhg,
            "diastolic_mmhg": r.diastolic_mmhg,
            "resting_hr_bpm": r.resting_hr_bpm,
            "family_history": r.family_history,
        }
        if r.height_cm is not None:
            row["height_cm"] = r.height_cm
        if r.weight_kg is not None:
            row["weight_kg"] = r.weight_kg
        subjects[r.subject_id] = row
    doc = {"schema_version": METADATA_SCHEMA_VERSION, "subjects": subjects}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def metadata_summary(records: list[SubjectMetadata]) -> dict:
    """Cohort counts in the shape of the dataset-statistics table."""
    smokers = sum(1 for r in records if r.smoker)
    return {
        "total": len(records),
        "smokers": smokers,
        "non_smokers": len(records) - smokers,
        "male": sum(1 for r in records if r.sex == "male"),
        "female": sum(1 for r in records if r.sex == "female"),
    }


# ---------------------------------------------------------------------------
# Manifest I/O and dataset validation


def load_manifest(path: Path | str, root: Path | str | None = None) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
    for key in ("dataset_name", "version", "metadata", "entries"):
        if key not in doc:
            raise DataError(f"{path}: manifest missing key {key!r}")
    entries = [
        ManifestEntry(recording=e["recording"], subject_id=e["subject_id"])
        for e in doc["entries"]
    ]
    return DatasetManifest(
        dataset_name=doc["dataset_name"],
        version=doc["version"],
        metadata_path=doc["metadata"],
        entries=entries,
        root=Path(root) if root is not None else path.parent,
    )


def write_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "dataset_name": manifest.dataset_name,
        "version": manifest.version,
        "metadata": manifest.metadata_path,
        "entries": [
            {"recording": e.recording, "subject_id": e.subject_id} for e in manifest.entries
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class SubjectValidation:
    subject_id: str
    duration_s: float
    masked_fraction: float
    metadata_complete: bool


@dataclass
class ValidationReport:
    subjects: list[SubjectValidation]
    errors: list[str]
    summary: dict

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def total_duration_s(self) -> float:
        return sum(s.duration_s for s in self.subjects)


def validate_dataset(
    manifest: DatasetManifest, sampling_rate_hz: float = 100.0
) -> ValidationReport:
    """Check that every manifest entry resolves and its files load.

    The report lists per-subject recording duration, masked-sample fraction,
    and metadata completeness; unreadable files and dangling metadata
    references become error items rather than exceptions.
    """
    if not manifest.entries:
        raise DataError("empty dataset: manifest has no entries")
    errors: list[str] = []
    try:
        metadata = load_metadata(manifest.root / manifest.metadata_path)
        by_id = {m.subject_id: m for m in metadata}
    except DataError as exc:
        errors.append(str(exc))
        metadata, by_id = [], {}

    subjects = []
    for entry in manifest.entries:
        meta = by_id.get(entry.subject_id)
        if meta is None:
            errors.append(f"{entry.subject_id}: no metadata record (dangling reference)")
        try:
            rec = load_recording(manifest.root / entry.recording, sampling_rate_hz)
        except DataError as exc:
            errors.append(str(exc))
            continue
        subjects.append(
            SubjectValidation(
                subject_id=entry.subject_id,
                duration_s=rec.duration_s,
                masked_fraction=float(1.0 - rec.validity_mask.mean()),
                metadata_complete=meta is not None,
            )
        )
    return ValidationReport(subjects=subjects, errors=errors, summary=metadata_summary(metadata))
