"""SCADA table ingestion, feature encoding, normalisation and splitting."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

COLUMNS = (
    "timestamp",
    "wind_speed",
    "wind_direction",
    "active_power",
    "rotor_speed",
    "generator_speed",
    "current",
)
INPUT_LABELS = ("wind_speed", "wind_direction")
TARGET_LABELS = ("active_power", "rotor_speed", "generator_speed", "current")
NOMINAL_SPACING = 600
DIRECTION_MODES = ("cos", "sincos")


class ScadaError(ValueError):
    """Base class for malformed or invalid SCADA data."""


class SchemaError(ScadaError):
    pass


class ScadaParseError(ScadaError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class OrderingError(ScadaError):
    pass


class RecordValidationError(ScadaError):
    pass


class SCADARecord(NamedTuple):
    timestamp: int
    wind_speed: float
    wind_direction: float
    active_power: float
    rotor_speed: float
    generator_speed: float
    current: float


@dataclass(frozen=True)
class SCADADataset:
    """Time-ordered 10-minute records, stored column-wise.

    ``timestamps`` is an int64 vector of epoch seconds; ``values`` is an
    ``(m, 6)`` float64 array in ``COLUMNS[1:]`` order. Both are read-only.
    """

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=np.int64).reshape(-1)
        vals = np.array(self.values, dtype=np.float64).reshape(-1, len(COLUMNS) - 1)
        if ts.shape[0] != vals.shape[0]:
            raise SchemaError("timestamps and values have different row counts")
        ts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return int(self.timestamps.shape[0])

    def __len__(self):
        return self.m

    def column(self, name: str) -> np.ndarray:
        if name == "timestamp":
            return self.timestamps
        return self.values[:, COLUMNS.index(name) - 1]

    def records(self) -> Iterator[SCADARecord]:
        for t, row in zip(self.timestamps.tolist(), self.values.tolist()):
            yield SCADARecord(t, *row)

    def with_column(self, name: str, data) -> "SCADADataset":
        vals = self.values.copy()
        vals[:, COLUMNS.index(name) - 1] = data
        return SCADADataset(self.timestamps, vals)

    @classmethod
    def from_records(cls, records: Sequence[SCADARecord]) -> "SCADADataset":
        if not records:
            return cls(np.empty(0, np.int64), np.empty((0, 6)))
        ts = [int(r[0]) for r in records]
        vals = [[float(v) for v in r[1:]] for r in records]
        return cls(ts, vals)


def validate_dataset(ds: SCADADataset) -> None:
    """Check the per-record invariants and timestamp ordering."""
    v = ds.values
    checks = (
        ("wind_speed", lambda c: c >= 0, "must be >= 0"),
        ("wind_direction", lambda c: (c >= 0) & (c < 360), "must be in [0, 360)"),
        ("rotor_speed", lambda c: c >= 0, "must be >= 0"),
        ("generator_speed", lambda c: c >= 0, "must be >= 0"),
    )
    finite = np.isfinite(v)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise RecordValidationError(f"row {row}: non-finite {COLUMNS[col + 1]}")
    for name, ok, msg in checks:
        good = ok(ds.column(name))
        if not good.all():
            row = int(np.flatnonzero(~good)[0])
            raise RecordValidationError(
                f"row {row}: {name}={ds.column(name)[row]!r} {msg}"
            )
    if ds.m > 1:
        steps = np.diff(ds.timestamps)
        if (steps <= 0).any():
            row = int(np.flatnonzero(steps <= 0)[0]) + 1
            raise OrderingError(f"row {row}: timestamp not strictly increasing")


def parse_scada_table(stream) -> SCADADataset:
    """Read a comma-delimited SCADA table (header + data lines).

    ``stream`` is a text stream or a string. Row numbers in validation errors
    are zero-based data rows; parse errors carry the physical line number.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty table: missing header") from None
    header = [h.strip() for h in header]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    if len(header) != len(COLUMNS) or tuple(header) != COLUMNS:
        extra = [h for h in header if h not in COLUMNS]
        if extra:
            raise SchemaError(f"unexpected column(s): {', '.join(extra)}")
        raise SchemaError(f"columns must appear in order {','.join(COLUMNS)}")

    ts, vals = [], []
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(COLUMNS):
            raise ScadaParseError(f"expected {len(COLUMNS)} cells, got {len(row)}", line)
        try:
            t = int(row[0])
        except ValueError:
            raise ScadaParseError(f"timestamp {row[0]!r} is not an integer", line) from None
        cells = []
        for name, cell in zip(COLUMNS[1:], row[1:]):
            try:
                x = float(cell)
            except ValueError:
                raise ScadaParseError(f"{name} {cell!r} is not a number", line) from None
            if not math.isfinite(x):
                raise ScadaParseError(f"{name} {cell!r} is missing or non-finite", line)
            cells.append(x)
        ts.append(t)
        vals.append(cells)
    ds = SCADADataset(
        np.array(ts, dtype=np.int64), np.array(vals, dtype=np.float64).reshape(-1, 6)
    )
    validate_dataset(ds)
    return ds


def read_scada_table(path) -> SCADADataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_scada_table(fh)


def format_scada_table(ds: SCADADataset) -> str:
    """Serialise with shortest round-trip float reprs (lossless, deterministic)."""
    out = [",".join(COLUMNS)]
    for t, row in zip(ds.timestamps.tolist(), ds.values.tolist()):
        out.append(",".join([str(t)] + [repr(x) for x in row]))
    return "\n".join(out) + "\n"


def write_scada_table(ds: SCADADataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_scada_table(ds))


def encode_direction(theta, mode: str = "cos"):
    """Cyclic encoding of wind direction in degrees.

    ``cos`` returns ``cos(theta)``; ``sincos`` stacks ``(sin, cos)`` on a
    trailing axis. The angle is reduced modulo 360 first.
    """
    rad = np.deg2rad(np.mod(np.asarray(theta, dtype=np.float64), 360.0))
    if mode == "cos":
        return np.cos(rad)
    if mode == "sincos":
        return np.stack([np.sin(rad), np.cos(rad)], axis=-1)
    raise ValueError(f"direction mode must be one of {DIRECTION_MODES}, got {mode!r}")


@dataclass(frozen=True)
class DesignMatrices:
    X: np.ndarray
    Y: np.ndarray
    input_labels: tuple
    target_labels: tuple = TARGET_LABELS


def build_design_matrices(ds: SCADADataset, direction_mode: str = "cos") -> DesignMatrices:
    if ds.m == 0:
        raise ValueError("cannot build design matrices from an empty dataset")
    bad = ~np.isfinite(ds.values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise RecordValidationError(f"row {row}: non-finite {COLUMNS[col + 1]}")
    enc = encode_direction(ds.column("wind_direction"), direction_mode)
    speed = ds.column("wind_speed")[:, None]
    if direction_mode == "cos":
        X = np.hstack([speed, enc[:, None]])
        labels = ("wind_speed", "wind_direction_cos")
    else:
        X = np.hstack([speed, enc])
        labels = ("wind_speed", "wind_direction_sin", "wind_direction_cos")
    Y = np.column_stack([ds.column(c) for c in TARGET_LABELS])
    return DesignMatrices(X, Y, labels)


@dataclass(frozen=True)
class NormalizationParams:
    mean: np.ndarray
    std: np.ndarray
    labels: tuple = ()
    zero_variance: tuple = ()

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        std = np.array(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise ValueError("mean and std lengths differ")
        if (std <= 0).any():
            raise ValueError("std must be > 0 for every column")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "labels", tuple(self.labels))
        zv = tuple(bool(z) for z in self.zero_variance) or (False,) * mean.size
        object.__setattr__(self, "zero_variance", zv)

    @property
    def width(self) -> int:
        return int(self.mean.size)

    @property
    def warned(self) -> bool:
        return any(self.zero_variance)

    def subset(self, columns) -> "NormalizationParams":
        cols = list(columns)
        return NormalizationParams(
            self.mean[cols],
            self.std[cols],
            tuple(self.labels[c] for c in cols) if self.labels else (),
            tuple(self.zero_variance[c] for c in cols),
        )


def fit_normalizer(matrix, fit_rows=None, labels=()) -> NormalizationParams:
    """Per-column mean and population std over ``fit_rows`` only.

    ``fit_rows`` is a ``range``/slice/index array; ``None`` uses all rows.
    Zero-variance columns get ``std = 1`` and a ``RuntimeWarning``.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    sub = M if fit_rows is None else M[_as_index(fit_rows)]
    if sub.shape[0] == 0:
        raise ValueError("fit_rows is empty")
    # A constant column can get a mean one ulp off its value from summation
    # rounding, and with it a tiny non-zero std; pin both exactly.
    const = (sub == sub[0]).all(axis=0)
    mean = np.where(const, sub[0], sub.mean(axis=0))
    std = np.where(const, 0.0, np.sqrt(((sub - mean) ** 2).mean(axis=0)))
    zero = std == 0
    if zero.any():
        names = [labels[i] if labels else str(i) for i in np.flatnonzero(zero)]
        warnings.warn(
            f"zero-variance column(s) {', '.join(names)}: std set to 1",
            RuntimeWarning,
            stacklevel=2,
        )
        std = np.where(zero, 1.0, std)
    return NormalizationParams(mean, std, tuple(labels), tuple(zero.tolist()))


def _check_width(M, params):
    if M.shape[-1] != params.width:
        raise ValueError(f"matrix has {M.shape[-1]} columns, params expect {params.width}")


def apply_normalizer(matrix, params: NormalizationParams) -> np.ndarray:
    M = np.asarray(matrix, dtype=np.float64)
    _check_width(M, params)
    return (M - params.mean) / params.std


def invert_normalizer(matrix, params: NormalizationParams) -> np.ndarray:
    M = np.asarray(matrix, dtype=np.float64)
    _check_width(M, params)
    return M * params.std + params.mean


@dataclass(frozen=True)
class SplitIndices:
    """Contiguous train/validation/test ranges over a row ordering.

    ``order`` is ``None`` for the chronological split; for a shuffled split it
    is the seeded permutation the ranges index into.
    """

    train: range
    validation: range
    test: range
    order: np.ndarray | None = field(default=None, compare=False)

    @property
    def s(self) -> int:
        return len(self.test)

    def rows(self, part: str) -> np.ndarray:
        rng_ = getattr(self, part)
        idx = np.arange(rng_.start, rng_.stop)
        return idx if self.order is None else self.order[idx]


def chronological_split(m: int, ratios=(0.6, 0.2, 0.2), shuffle=False, seed=None) -> SplitIndices:
    """Split ``m`` rows into floor/floor/remainder sized parts, in time order."""
    if m < 5:
        raise ValueError(f"need at least 5 rows to split, got {m}")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n_train = math.floor(ratios[0] * m + 1e-9)
    n_val = math.floor(ratios[1] * m + 1e-9)
    order = None
    if shuffle:
        if seed is None:
            raise ValueError("a seed is required for a shuffled split")
        order = np.random.default_rng(seed).permutation(m)
    return SplitIndices(
        range(0, n_train), range(n_train, n_train + n_val), range(n_train + n_val, m), order
    )


def _as_index(rows):
    if isinstance(rows, range):
        return slice(rows.start, rows.stop, rows.step)
    return rows
