"""C-MAPSS-format ingestion: parsing, feature selection, scaling, windowing.

Input files are whitespace-separated text with 26 columns per line: unit id,
cycle, 3 operational settings, 21 sensors. Training units run to failure;
test units are pruned early and ship with a separate file of true RULs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ParseError, ValidationError

FIELDS_PER_RECORD = 26
N_SENSORS = 21

# The commonly used informative subset for C-MAPSS; sensors outside it are
# near-constant over an engine's life.
DEFAULT_SENSORS = (2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21)

FORMAT_VERSION = 1


@dataclass
class RawRecord:
    unit_id: int
    cycle: int
    settings: tuple  # 3 floats
    sensors: tuple   # 21 floats


@dataclass
class EngineSeries:
    """All records of one unit, in cycle order."""

    unit_id: int
    records: list
    total_life: Optional[int] = None   # set for run-to-failure (training) units
    truth_rul: Optional[int] = None    # set for test units once attached


@dataclass(frozen=True)
class FeatureSpec:
    """Which of the 26 columns become model features.

    Selected columns are ordered settings first (1..include_settings), then
    sensors ascending.
    """

    sensor_indices: tuple = DEFAULT_SENSORS
    include_settings: int = 3

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.sensor_indices)))
        object.__setattr__(self, "sensor_indices", idx)
        if any(i < 1 or i > N_SENSORS for i in idx):
            raise ValidationError(f"sensor indices must be in 1..{N_SENSORS}, got {idx}")
        if not 0 <= self.include_settings <= 3:
            raise ValidationError(f"include_settings must be 0..3, got {self.include_settings}")
        if self.n_features < 1:
            raise ValidationError("feature spec selects no columns")

    @property
    def n_features(self) -> int:
        return len(self.sensor_indices) + self.include_settings


@dataclass
class NormalizationStats:
    """Per-feature min and max, fitted on training data only."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if np.any(self.maximum < self.minimum):
            raise ValidationError("per-feature max below min")


@dataclass
class TimeWindow:
    unit_id: int
    window_id: int            # 1-based index within the unit
    values: np.ndarray        # (T, F) normalized
    rul_target: float


@dataclass
class UnitWindows:
    unit_id: int
    total_life: Optional[int]
    truth_rul: Optional[int]
    windows: list = field(default_factory=list)


@dataclass
class WindowedDataset:
    split: str                # "train" or "test"
    window_length: int
    cap: float
    feature_spec: FeatureSpec
    stats: NormalizationStats
    units: list = field(default_factory=list)

    def all_windows(self) -> list:
        return [w for u in self.units for w in u.windows]


# ----- parsing ----------------------------------------------------------------


def parse_cmapss(lines: Iterable[str], run_to_failure: bool = True) -> list:
    """Parse raw C-MAPSS text into one EngineSeries per unit.

    Blank lines are skipped; any other malformed line raises ParseError with
    its line number. Extra trailing fields beyond 26 are ignored.
    """
    by_unit: dict = {}
    for line_no, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < FIELDS_PER_RECORD:
            raise ParseError(
                f"expected at least {FIELDS_PER_RECORD} fields, got {len(tokens)}", line_no
            )
        try:
            values = [float(t) for t in tokens[:FIELDS_PER_RECORD]]
        except ValueError as exc:
            raise ParseError(f"non-numeric field: {exc}", line_no) from None
        unit_id, cycle = int(values[0]), int(values[1])
        if unit_id < 1 or cycle < 1:
            raise ParseError(f"unit and cycle must be positive, got {unit_id}, {cycle}", line_no)
        record = RawRecord(
            unit_id=unit_id,
            cycle=cycle,
            settings=tuple(values[2:5]),
            sensors=tuple(values[5:26]),
        )
        by_unit.setdefault(unit_id, []).append(record)

    series = []
    for unit_id in sorted(by_unit):
        records = by_unit[unit_id]
        for prev, cur in zip(records, records[1:]):
            if cur.cycle != prev.cycle + 1:
                raise ValidationError(
                    f"unit {unit_id}: cycles not contiguous ({prev.cycle} -> {cur.cycle})"
                )
        series.append(
            EngineSeries(
                unit_id=unit_id,
                records=records,
                total_life=len(records) if run_to_failure else None,
            )
        )
    return series


def serialize_records(series_list: Iterable[EngineSeries]) -> str:
    """Render series back to C-MAPSS text. Floats use repr, so values round-trip."""
    lines = []
    for s in series_list:
        for r in s.records:
            parts = [str(r.unit_id), str(r.cycle)]
            parts += [repr(v) for v in r.settings]
            parts += [repr(v) for v in r.sensors]
            lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def attach_truth_rul(series_list: list, rul_lines: Iterable[str]) -> list:
    """Assign the k-th RUL value to the k-th series, in order."""
    values = []
    for line_no, line in enumerate(rul_lines, start=1):
        token = line.strip()
        if not token:
            continue
        try:
            values.append(int(float(token)))
        except ValueError:
            raise ParseError(f"non-numeric RUL value {token!r}", line_no) from None
    if len(values) != len(series_list):
        raise ValidationError(
            f"RUL file has {len(values)} values for {len(series_list)} units"
        )
    for s, rul in zip(series_list, values):
        s.truth_rul = rul
    return series_list


# ----- feature extraction and scaling ------------------------------------------


def extract_features(series: EngineSeries, spec: FeatureSpec) -> np.ndarray:
    """(L, F) matrix of the selected columns, settings first then sensors."""
    rows = np.empty((len(series.records), spec.n_features), dtype=np.float64)
    for i, r in enumerate(series.records):
        rows[i, : spec.include_settings] = r.settings[: spec.include_settings]
        rows[i, spec.include_settings :] = [r.sensors[j - 1] for j in spec.sensor_indices]
    return rows


def fit_minmax(training_series: Iterable[EngineSeries], spec: FeatureSpec) -> NormalizationStats:
    """Per-feature min/max over every training record."""
    mats = [extract_features(s, spec) for s in training_series]
    if not mats or sum(m.shape[0] for m in mats) == 0:
        raise ValidationError("cannot fit normalization on empty training data")
    stacked = np.vstack(mats)
    return NormalizationStats(minimum=stacked.min(axis=0), maximum=stacked.max(axis=0))


def apply_minmax(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Scale to [0, 1]; constant features map to 0; out-of-range values clamp."""
    values = np.asarray(values, dtype=np.float64)
    span = stats.maximum - stats.minimum
    safe = np.where(span > 0, span, 1.0)
    scaled = (values - stats.minimum) / safe
    scaled = np.where(span > 0, scaled, 0.0)
    return np.clip(scaled, 0.0, 1.0)


def piecewise_rul(total_life: int, cycle: int, cap: float) -> float:
    """min(cap, total_life - cycle); constant early life, linear decay to 0."""
    if cap <= 0:
        raise ValueError(f"cap must be positive, got {cap}")
    if cycle < 1 or cycle > total_life:
        raise ValueError(f"cycle {cycle} outside 1..{total_life}")
    return float(min(cap, total_life - cycle))


# ----- windowing ----------------------------------------------------------------


def make_windows(
    series: EngineSeries,
    window_length: int,
    spec: FeatureSpec,
    stats: NormalizationStats,
    cap: float,
) -> list:
    """Stride-1 overlapping windows with piecewise RUL targets.

    The target belongs to the window's last cycle. Test units shorter than the
    window are left-padded by repeating their first record so they still yield
    one window; training units shorter than the window are an error.
    """
    n = len(series.records)
    if n == 0:
        raise ValueError(f"unit {series.unit_id}: empty series")
    matrix = apply_minmax(extract_features(series, spec), stats)

    # Effective end-of-life measured in record positions: the last record sits
    # truth_rul cycles before failure for test units, zero for training units.
    if series.total_life is not None:
        life = n
    elif series.truth_rul is not None:
        life = n + series.truth_rul
    else:
        life = None

    if n < window_length:
        if series.total_life is not None:
            raise ValueError(
                f"unit {series.unit_id}: {n} records is shorter than window {window_length}"
            )
        pad = np.repeat(matrix[:1], window_length - n, axis=0)
        matrix = np.vstack([pad, matrix])
        if life is not None:
            life += window_length - n
        n = window_length

    windows = []
    for i in range(n - window_length + 1):
        # 1-based position of the window's final row; padding repeats the first
        # record, so row n-1 is always the true last record.
        end_pos = i + window_length
        if life is not None:
            target = piecewise_rul(life, end_pos, cap)
        else:
            target = float("nan")
        windows.append(
            TimeWindow(
                unit_id=series.unit_id,
                window_id=i + 1,
                values=matrix[i : i + window_length],
                rul_target=target,
            )
        )
    return windows


def build_dataset(
    series_list: list,
    split: str,
    window_length: int,
    spec: FeatureSpec,
    stats: NormalizationStats,
    cap: float,
) -> WindowedDataset:
    units = []
    for s in series_list:
        units.append(
            UnitWindows(
                unit_id=s.unit_id,
                total_life=s.total_life,
                truth_rul=s.truth_rul,
                windows=make_windows(s, window_length, spec, stats, cap),
            )
        )
    return WindowedDataset(
        split=split,
        window_length=window_length,
        cap=cap,
        feature_spec=spec,
        stats=stats,
        units=units,
    )


# ----- serialization -------------------------------------------------------------


def _spec_to_json(spec: FeatureSpec) -> dict:
    return {
        "sensor_indices": list(spec.sensor_indices),
        "include_settings": spec.include_settings,
    }


def _stats_to_json(stats: NormalizationStats) -> dict:
    return {"minimum": stats.minimum.tolist(), "maximum": stats.maximum.tolist()}


def save_dataset(dataset: WindowedDataset, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "windows",
        "split": dataset.split,
        "window_length": dataset.window_length,
        "cap": dataset.cap,
        "feature_spec": _spec_to_json(dataset.feature_spec),
        "stats": _stats_to_json(dataset.stats),
        "units": [
            {
                "unit_id": u.unit_id,
                "total_life": u.total_life,
                "truth_rul": u.truth_rul,
                "windows": [
                    {
                        "window_id": w.window_id,
                        "rul_target": None if np.isnan(w.rul_target) else w.rul_target,
                        "values": w.values.tolist(),
                    }
                    for w in u.windows
                ],
            }
            for u in dataset.units
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_dataset(path) -> WindowedDataset:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "windows":
        raise ValidationError(f"{path}: not a windowed dataset file")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"{path}: format version {doc.get('format_version')} != {FORMAT_VERSION}"
        )
    spec = FeatureSpec(
        sensor_indices=tuple(doc["feature_spec"]["sensor_indices"]),
        include_settings=doc["feature_spec"]["include_settings"],
    )
    stats = NormalizationStats(minimum=doc["stats"]["minimum"], maximum=doc["stats"]["maximum"])
    units = []
    for u in doc["units"]:
        windows = [
            TimeWindow(
                unit_id=u["unit_id"],
                window_id=w["window_id"],
                values=np.asarray(w["values"], dtype=np.float64),
                rul_target=float("nan") if w["rul_target"] is None else float(w["rul_target"]),
            )
            for w in u["windows"]
        ]
        units.append(
            UnitWindows(
                unit_id=u["unit_id"],
                total_life=u["total_life"],
                truth_rul=u["truth_rul"],
                windows=windows,
            )
        )
    return WindowedDataset(
        split=doc["split"],
        window_length=doc["window_length"],
        cap=doc["cap"],
        feature_spec=spec,
        stats=stats,
        units=units,
    )
