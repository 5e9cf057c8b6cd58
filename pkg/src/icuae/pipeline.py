"""Raw charted events to normalized fixed-length windows.

Stages: CSV ingestion, cohort filtering, hourly bucketing (half-up
rounding, collisions averaged), backward-fill imputation with
population-mean fallback, percentile-clamped min-max normalization,
mortality-stratified 70/15/15 splitting, and zero-padded windowing.
Normalization statistics come from the train split only.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .training import WindowSet

NUM_FEATURES = 30
CARE_UNITS = ("MICU", "CCU", "CSRU", "SICU", "TSICU")
SPLIT_NAMES = ("train", "validation", "test")
SPLIT_RATIOS = (0.70, 0.15, 0.15)

EVENTS_COLUMNS = ["stay_id", "feature_id", "time_offset_hours", "value"]
STAYS_COLUMNS = ["stay_id", "age", "care_unit", "stay_hours",
                 "first_icu_stay", "in_hospital_mortality"]


@dataclass(frozen=True)
class RawEvent:
    stay_id: int
    feature_id: int
    time_offset: float  # hours since ICU admission
    value: float


@dataclass(frozen=True)
class StayMeta:
    stay_id: int
    age: float
    care_unit: str
    stay_hours: float
    first_icu_stay: bool
    in_hospital_mortality: bool


@dataclass
class PatientMatrix:
    stay_id: int
    grid: np.ndarray  # true_hours x 30
    observed_mask: np.ndarray  # same shape, bool
    true_hours: int


@dataclass
class NormalizationStats:
    population_mean: np.ndarray  # per feature, bucketed units
    low: np.ndarray  # 1st train percentile
    high: np.ndarray  # 99th train percentile

    def to_dict(self) -> dict:
        return {"population_mean": [float(x) for x in self.population_mean],
                "low": [float(x) for x in self.low],
                "high": [float(x) for x in self.high]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(population_mean=np.asarray(d["population_mean"], dtype=np.float64),
                   low=np.asarray(d["low"], dtype=np.float64),
                   high=np.asarray(d["high"], dtype=np.float64))


@dataclass
class SplitAssignment:
    assignment: Dict[int, str]  # stay_id -> train | validation | test

    def ids_for(self, split: str) -> List[int]:
        return sorted(s for s, name in self.assignment.items() if name == split)


def _parse_table(path, columns: Sequence[str], label: str) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{label} file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataError(f"{label} file has no header row: {path}")
    if list(frame.columns) != list(columns):
        raise DataError(f"{label} columns must be {','.join(columns)}, "
                        f"got {','.join(frame.columns)}")
    return frame


def _numeric_column(frame: pd.DataFrame, col: str, label: str) -> np.ndarray:
    converted = pd.to_numeric(frame[col], errors="coerce")
    bad = converted.isna()
    if bad.any():
        line = int(np.argmax(bad.to_numpy())) + 2  # header is line 1
        raise DataError(f"{label} line {line}: non-numeric {col} "
                        f"{frame[col].iloc[line - 2]!r}")
    return converted.to_numpy(dtype=np.float64)


def _fail_line(mask: np.ndarray, label: str, message: str) -> None:
    if mask.any():
        line = int(np.argmax(mask)) + 2
        raise DataError(f"{label} line {line}: {message}")


def load_events(events_path, stays_path) -> Tuple[List[RawEvent], List[StayMeta]]:
    """Parse the two input CSVs, rejecting malformed rows with line numbers."""
    events_frame = load_events_frame(events_path)
    stays = load_stays(stays_path)
    events = [RawEvent(int(s), int(f), float(t), float(v))
              for s, f, t, v in zip(events_frame["stay_id"],
                                    events_frame["feature_id"],
                                    events_frame["time_offset_hours"],
                                    events_frame["value"])]
    return events, stays


def load_events_frame(path) -> pd.DataFrame:
    """Events CSV as typed columns; same validation as load_events."""
    frame = _parse_table(path, EVENTS_COLUMNS, "events")
    if len(frame) == 0:
        return pd.DataFrame({"stay_id": np.array([], dtype=np.int64),
                             "feature_id": np.array([], dtype=np.int64),
                             "time_offset_hours": np.array([], dtype=np.float64),
                             "value": np.array([], dtype=np.float64)})
    stay = _numeric_column(frame, "stay_id", "events")
    feat = _numeric_column(frame, "feature_id", "events")
    time = _numeric_column(frame, "time_offset_hours", "events")
    value = _numeric_column(frame, "value", "events")
    _fail_line(stay != np.floor(stay), "events", "stay_id must be an integer")
    _fail_line(feat != np.floor(feat), "events", "feature_id must be an integer")
    _fail_line((feat < 0) | (feat >= NUM_FEATURES), "events",
               f"feature_id out of range 0..{NUM_FEATURES - 1}")
    _fail_line(time < 0, "events", "time_offset_hours must be >= 0")
    _fail_line(~np.isfinite(value), "events", "value must be finite")
    return pd.DataFrame({"stay_id": stay.astype(np.int64),
                         "feature_id": feat.astype(np.int64),
                         "time_offset_hours": time,
                         "value": value})


def load_stays(path) -> List[StayMeta]:
    frame = _parse_table(path, STAYS_COLUMNS, "stays")
    if len(frame) == 0:
        return []
    stay = _numeric_column(frame, "stay_id", "stays")
    age = _numeric_column(frame, "age", "stays")
    hours = _numeric_column(frame, "stay_hours", "stays")
    first = _numeric_column(frame, "first_icu_stay", "stays")
    mort = _numeric_column(frame, "in_hospital_mortality", "stays")
    _fail_line(stay != np.floor(stay), "stays", "stay_id must be an integer")
    unit_bad = ~frame["care_unit"].isin(CARE_UNITS).to_numpy()
    _fail_line(unit_bad, "stays", "unknown care unit")
    _fail_line(hours <= 0, "stays", "stay_hours must be positive")
    _fail_line(~np.isin(first, (0.0, 1.0)), "stays",
               "first_icu_stay must be 0 or 1")
    _fail_line(~np.isin(mort, (0.0, 1.0)), "stays",
               "in_hospital_mortality must be 0 or 1")
    ids = stay.astype(np.int64)
    dup = pd.Series(ids).duplicated().to_numpy()
    _fail_line(dup, "stays", "duplicate stay_id")
    return [StayMeta(int(s), float(a), u, float(h), bool(f), bool(m))
            for s, a, u, h, f, m in zip(ids, age, frame["care_unit"],
                                        hours, first, mort)]


def apply_cohort_filters(stays: Iterable[StayMeta]) -> List[StayMeta]:
    """Adults (> 15), stay length in [12, 2000] h, first ICU stay, known unit."""
    return [s for s in stays
            if s.age > 15
            and 12.0 <= s.stay_hours <= 2000.0
            and s.first_icu_stay
            and s.care_unit in CARE_UNITS]


def filter_breakdown(stays: Sequence[StayMeta]) -> Dict[str, int]:
    """Per-rule drop counts (a stay may fail several rules)."""
    return {
        "total": len(stays),
        "dropped_age": sum(1 for s in stays if not s.age > 15),
        "dropped_stay_hours": sum(1 for s in stays
                                  if not 12.0 <= s.stay_hours <= 2000.0),
        "dropped_not_first_stay": sum(1 for s in stays if not s.first_icu_stay),
        "dropped_care_unit": sum(1 for s in stays
                                 if s.care_unit not in CARE_UNITS),
        "kept": len(apply_cohort_filters(stays)),
    }


def true_hour_count(stay_hours: float) -> int:
    return max(1, math.ceil(stay_hours))


def _bucket_arrays(stay_id: int, hours: np.ndarray, features: np.ndarray,
                   values: np.ndarray, true_hours: int) -> PatientMatrix:
    grid = np.zeros((true_hours, NUM_FEATURES))
    counts = np.zeros((true_hours, NUM_FEATURES))
    np.add.at(grid, (hours, features), values)
    np.add.at(counts, (hours, features), 1.0)
    observed = counts > 0
    grid[observed] /= counts[observed]
    grid[~observed] = np.nan
    return PatientMatrix(stay_id=stay_id, grid=grid, observed_mask=observed,
                         true_hours=true_hours)


def round_half_up_hour(time_offset: np.ndarray, true_hours: int) -> np.ndarray:
    """Nearest hour with .5 rounding up; late events land on the last hour."""
    hour = np.floor(np.asarray(time_offset, dtype=np.float64) + 0.5).astype(np.int64)
    return np.clip(hour, 0, true_hours - 1)


def bucket_hourly(events: Sequence[RawEvent], true_hours: int,
                  stay_id: Optional[int] = None) -> PatientMatrix:
    """Average events into an hourly grid; unobserved cells are NaN."""
    if true_hours < 1:
        raise ConfigError("true_hours must be >= 1")
    ids = {e.stay_id for e in events}
    if len(ids) > 1:
        raise DataError(f"bucket_hourly got events for several stays: {sorted(ids)}")
    if stay_id is None:
        stay_id = ids.pop() if ids else -1
    time = np.array([e.time_offset for e in events], dtype=np.float64)
    feats = np.array([e.feature_id for e in events], dtype=np.int64)
    values = np.array([e.value for e in events], dtype=np.float64)
    hours = round_half_up_hour(time, true_hours)
    return _bucket_arrays(stay_id, hours, feats, values, true_hours)


def impute(matrix: PatientMatrix, stats: NormalizationStats,
           fill: str = "backward") -> PatientMatrix:
    """Fill gaps from the nearest later observation; leftovers take the
    population mean (with ``fill="forward"``, nearest earlier instead)."""
    if fill not in ("backward", "forward"):
        raise ConfigError(f"fill must be backward or forward, got {fill!r}")
    grid = matrix.grid.copy()
    n = matrix.true_hours
    rows = np.arange(n)[:, None]
    if fill == "backward":
        # index of the nearest observed row at or below, scanning upward
        idx = np.where(matrix.observed_mask, rows, n)
        idx = np.minimum.accumulate(idx[::-1], axis=0)[::-1]
        reachable = idx < n
    else:
        idx = np.where(matrix.observed_mask, rows, -1)
        idx = np.maximum.accumulate(idx, axis=0)
        reachable = idx >= 0
    cols = np.broadcast_to(np.arange(NUM_FEATURES), (n, NUM_FEATURES))
    filled = np.where(reachable, grid[idx.clip(0, n - 1), cols],
                      stats.population_mean[None, :])
    return PatientMatrix(stay_id=matrix.stay_id, grid=filled,
                         observed_mask=matrix.observed_mask.copy(),
                         true_hours=n)


def compute_stats(train_matrices: Sequence[PatientMatrix]) -> NormalizationStats:
    """Per-feature mean and 1st/99th percentile over observed train cells."""
    if not train_matrices:
        raise ConfigError("train split is empty")
    per_feature = [[] for _ in range(NUM_FEATURES)]
    for m in train_matrices:
        for f in range(NUM_FEATURES):
            col = m.grid[m.observed_mask[:, f], f]
            if col.size:
                per_feature[f].append(col)
    never = [f for f in range(NUM_FEATURES) if not per_feature[f]]
    if never:
        raise ConfigError(f"features never observed in train split: {never}")
    mean = np.empty(NUM_FEATURES)
    low = np.empty(NUM_FEATURES)
    high = np.empty(NUM_FEATURES)
    for f in range(NUM_FEATURES):
        observed = np.concatenate(per_feature[f])
        mean[f] = observed.mean()
        low[f], high[f] = np.percentile(observed, [1.0, 99.0])
        if low[f] == high[f]:  # constant feature: widen to a usable range
            low[f] -= 0.5
            high[f] += 0.5
    return NormalizationStats(population_mean=mean, low=low, high=high)


def normalize(matrix: PatientMatrix, stats: NormalizationStats) -> PatientMatrix:
    """Clamp to [low, high] per feature, then map linearly onto [0, 1]."""
    clamped = np.clip(matrix.grid, stats.low[None, :], stats.high[None, :])
    scaled = (clamped - stats.low[None, :]) / (stats.high - stats.low)[None, :]
    return PatientMatrix(stay_id=matrix.stay_id, grid=scaled,
                         observed_mask=matrix.observed_mask.copy(),
                         true_hours=matrix.true_hours)


def denormalize(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Inverse of normalize on an hours x 30 array of [0,1] values."""
    values = np.asarray(values, dtype=np.float64)
    return values * (stats.high - stats.low)[None, :] + stats.low[None, :]


def split_stratified(stays: Sequence[StayMeta], seed: int,
                     ratios: Tuple[float, float, float] = SPLIT_RATIOS
                     ) -> SplitAssignment:
    """70/15/15 by mortality stratum, shuffled deterministically by seed."""
    if not stays:
        raise ConfigError("cannot split an empty cohort")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"ratios must sum to 1, got {ratios}")
    assignment: Dict[int, str] = {}
    for stratum, flag in enumerate((False, True)):
        ids = sorted(s.stay_id for s in stays if s.in_hospital_mortality == flag)
        if not ids:
            continue
        if len(ids) < 3:
            warnings.warn(f"mortality stratum {flag} has only {len(ids)} stays; "
                          f"validation/test may be empty", stacklevel=2)
        order = np.random.default_rng([seed, stratum]).permutation(len(ids))
        n_train = round(ratios[0] * len(ids))
        n_val = round(ratios[1] * len(ids))
        for pos, idx in enumerate(order):
            if pos < n_train:
                name = "train"
            elif pos < n_train + n_val:
                name = "validation"
            else:
                name = "test"
            assignment[ids[idx]] = name
    return SplitAssignment(assignment=assignment)


def window_and_pad(matrix: PatientMatrix,
                   interval_hours: int) -> Tuple[np.ndarray, np.ndarray]:
    """First interval_hours rows, zero-padded; returns (seq, hour-major flat)."""
    if interval_hours < 1:
        raise ConfigError("interval_hours must be >= 1")
    seq = np.zeros((interval_hours, NUM_FEATURES))
    take = min(matrix.true_hours, interval_hours)
    seq[:take] = matrix.grid[:take]
    return seq, seq.reshape(-1).copy()


@dataclass
class PreparedSplit:
    windows: WindowSet
    stay_ids: List[int]
    stays: List[StayMeta]


def default_feature_names() -> List[str]:
    return [f"feature_{i:02d}" for i in range(NUM_FEATURES)]


def read_schema_csv(path) -> List[Tuple[int, str, str]]:
    """Parse a feature schema file: lines of feature_id,name,unit."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line or line.startswith("feature_id"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path} line {lineno}: expected "
                            f"feature_id,name,unit, got {line!r}")
        try:
            rows.append((int(parts[0]), parts[1], parts[2]))
        except ValueError:
            raise DataError(f"{path} line {lineno}: feature_id must be "
                            f"an integer, got {parts[0]!r}") from None
    return rows


def _load_schema_names(schema_path) -> List[str]:
    rows = read_schema_csv(schema_path)
    if [r[0] for r in rows] != list(range(NUM_FEATURES)):
        raise DataError(f"{schema_path} must list feature ids "
                        f"0..{NUM_FEATURES - 1} exactly once, in order")
    return [r[1] for r in rows]


@dataclass
class PreparedDataset:
    interval_hours: int
    seed: int
    care_unit: Optional[str]
    fill: str
    stats: NormalizationStats
    splits: Dict[str, PreparedSplit]
    filter_summary: Dict[str, int] = field(default_factory=dict)
    feature_names: List[str] = field(default_factory=default_feature_names)
    schema_hash: Optional[str] = None

    def split_windows(self, name: str) -> WindowSet:
        return self.splits[name].windows


def prepare_dataset(events_path, stays_path, interval_hours: int, seed: int,
                    care_unit: Optional[str] = None, fill: str = "backward",
                    schema_path=None) -> PreparedDataset:
    """Run the full pipeline in memory; raises DataError/ConfigError on bad input.

    schema_path defaults to a features.csv next to the events file; when
    neither exists the dataset carries placeholder feature names and no
    schema hash.
    """
    if care_unit is not None and care_unit not in CARE_UNITS:
        raise ConfigError(f"unknown care unit {care_unit!r}; "
                          f"expected one of {', '.join(CARE_UNITS)}")
    if schema_path is None:
        candidate = Path(events_path).parent / "features.csv"
        schema_path = candidate if candidate.exists() else None
    if schema_path is not None:
        feature_names = _load_schema_names(schema_path)
        schema_hash = _file_sha256(Path(schema_path))
    else:
        feature_names = default_feature_names()
        schema_hash = None
    events_frame = load_events_frame(events_path)
    stays = load_stays(stays_path)
    summary = filter_breakdown(stays)
    cohort = apply_cohort_filters(stays)
    if care_unit is not None:
        cohort = [s for s in cohort if s.care_unit == care_unit]
        summary["kept_after_care_unit"] = len(cohort)
    if not cohort:
        raise DataError("no stays left after cohort filters")

    meta_by_id = {s.stay_id: s for s in cohort}
    all_ids = {s.stay_id for s in stays}
    orphans = sorted(set(int(s) for s in events_frame["stay_id"]) - all_ids)
    if orphans:
        raise DataError(f"events reference unknown stay_ids: {orphans[:5]}")

    matrices: Dict[int, PatientMatrix] = {}
    grouped = dict(tuple(events_frame.groupby("stay_id", sort=True)))
    for stay in cohort:
        hours_count = true_hour_count(stay.stay_hours)
        group = grouped.get(stay.stay_id)
        if group is None:
            hours = np.array([], dtype=np.int64)
            feats = np.array([], dtype=np.int64)
            values = np.array([], dtype=np.float64)
        else:
            hours = round_half_up_hour(
                group["time_offset_hours"].to_numpy(), hours_count)
            feats = group["feature_id"].to_numpy()
            values = group["value"].to_numpy()
        matrices[stay.stay_id] = _bucket_arrays(
            stay.stay_id, hours, feats, values, hours_count)

    split = split_stratified(cohort, seed=seed)
    train_ids = split.ids_for("train")
    if not train_ids:
        raise DataError("train split is empty")
    stats = compute_stats([matrices[i] for i in train_ids])

    prepared: Dict[str, PreparedSplit] = {}
    for name in SPLIT_NAMES:
        ids = split.ids_for(name)
        seqs = []
        hours_list = []
        for stay_id in ids:
            dense = normalize(impute(matrices[stay_id], stats, fill), stats)
            seq, _ = window_and_pad(dense, interval_hours)
            seqs.append(seq)
            hours_list.append(min(dense.true_hours, interval_hours))
        windows = (np.stack(seqs) if seqs
                   else np.zeros((0, interval_hours, NUM_FEATURES)))
        prepared[name] = PreparedSplit(
            windows=WindowSet(windows=windows,
                              true_hours=np.array(hours_list, dtype=np.int64)),
            stay_ids=ids,
            stays=[meta_by_id[i] for i in ids])
    return PreparedDataset(interval_hours=interval_hours, seed=seed,
                           care_unit=care_unit, fill=fill, stats=stats,
                           splits=prepared, filter_summary=summary,
                           feature_names=feature_names,
                           schema_hash=schema_hash)


def _file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_dataset(dataset: PreparedDataset, out_dir) -> str:
    """Write per-split arrays + stays CSVs + manifest; returns content hash."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_files = []
    for name in SPLIT_NAMES:
        split = dataset.splits[name]
        np.save(out / f"{name}_windows.npy", split.windows.windows)
        np.save(out / f"{name}_hours.npy", split.windows.true_hours)
        frame = pd.DataFrame({
            "stay_id": [s.stay_id for s in split.stays],
            "age": [repr(s.age) for s in split.stays],
            "care_unit": [s.care_unit for s in split.stays],
            "stay_hours": [repr(s.stay_hours) for s in split.stays],
            "first_icu_stay": [int(s.first_icu_stay) for s in split.stays],
            "in_hospital_mortality": [int(s.in_hospital_mortality)
                                      for s in split.stays],
        })
        frame.to_csv(out / f"{name}_stays.csv", index=False, lineterminator="\n")
        data_files += [f"{name}_windows.npy", f"{name}_hours.npy",
                       f"{name}_stays.csv"]

    digest = hashlib.sha256()
    for fname in data_files:
        digest.update(fname.encode())
        digest.update(_file_sha256(out / fname).encode())
    content_hash = digest.hexdigest()

    manifest = {
        "kind": "prepared_dataset",
        "interval_hours": dataset.interval_hours,
        "num_features": NUM_FEATURES,
        "seed": dataset.seed,
        "care_unit": dataset.care_unit,
        "fill": dataset.fill,
        "stats": dataset.stats.to_dict(),
        "filter_summary": dataset.filter_summary,
        "feature_names": dataset.feature_names,
        "schema_hash": dataset.schema_hash,
        "split_sizes": {name: len(dataset.splits[name].stay_ids)
                        for name in SPLIT_NAMES},
        "files": data_files,
        "content_hash": content_hash,
    }
    with (out / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return content_hash


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"dataset manifest not found: {path}")
    with path.open() as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "prepared_dataset":
        raise DataError(f"not a prepared dataset manifest: {path}")
    return manifest


def load_split(dataset_dir, name: str) -> PreparedSplit:
    if name not in SPLIT_NAMES:
        raise ConfigError(f"unknown split {name!r}")
    base = Path(dataset_dir)
    load_manifest(dataset_dir)  # validates directory kind
    windows = np.load(base / f"{name}_windows.npy")
    hours = np.load(base / f"{name}_hours.npy")
    stays = load_stays(base / f"{name}_stays.csv")
    return PreparedSplit(
        windows=WindowSet(windows=windows, true_hours=hours),
        stay_ids=[s.stay_id for s in stays],
        stays=stays)
