"""Multi-target versus single-target power accuracy across model families."""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import EvalReport, evaluate
from .pipeline import FAMILIES, FAMILY_NAMES, prepare, train_on
from .scada_data import SCADADataset

MULTI_HEADER = ("Model", "Global RMSE", "Power", "Rotor speed", "Generator speed", "Current")
SINGLE_HEADER = ("Model", "RMSE")
DELTA_HEADER = ("Model", "Power delta (multi - single)")
MIN_ROWS = 1000


@dataclass(frozen=True)
class BenchmarkRow:
    family: str
    multi: EvalReport
    single: EvalReport

    @property
    def power_delta(self) -> float:
        return self.multi.per_target[0] - self.single.per_target[0]


@dataclass(frozen=True)
class BenchmarkReport:
    rows: tuple
    seed: int
    direction_mode: str
    test_rows: int


def benchmark_matrix(ds: SCADADataset, families=FAMILIES, seed: int = 0, direction_mode="cos",
                     ratios=(0.6, 0.2, 0.2), n_jobs: int = 1) -> BenchmarkReport:
    """Train each family on all four targets and on power alone; score on the test split."""
    if ds.m < MIN_ROWS:
        raise ValueError(f"benchmark needs at least {MIN_ROWS} rows, got {ds.m}")
    families = tuple(families)
    for f in families:
        if f not in FAMILIES:
            raise ValueError(f"unknown model family {f!r}")
    multi = prepare(ds, direction_mode, ratios)
    single = prepare(ds, direction_mode, ratios, targets=("active_power",))
    rows = []
    for fam in families:
        reports = []
        for data in (multi, single):
            model = train_on(data, fam, seed=seed, n_jobs=n_jobs)
            reports.append(evaluate(model.predict(data.X_test), data.Y_test, data.targets, fam))
        rows.append(BenchmarkRow(fam, *reports))
    return BenchmarkReport(tuple(rows), seed, direction_mode, multi.X_test.shape[0])


def format_report(report: BenchmarkReport, precision: int = 4) -> str:
    """Comma-delimited tables: multi-target accuracy, single-target power, and their delta."""
    f = f"{{:.{precision}f}}"
    lines = [f"# test rows={report.test_rows} seed={report.seed} direction={report.direction_mode}",
             "# Multi-target models", ",".join(MULTI_HEADER)]
    for row in report.rows:
        vals = (row.multi.global_rmse, *row.multi.per_target)
        lines.append(",".join([FAMILY_NAMES[row.family], *(f.format(v) for v in vals)]))
    lines += ["", "# Single-target power models", ",".join(SINGLE_HEADER)]
    for row in report.rows:
        lines.append(f"{FAMILY_NAMES[row.family]},{f.format(row.single.per_target[0])}")
    lines += ["", "# Power RMSE difference", ",".join(DELTA_HEADER)]
    for row in report.rows:
        lines.append(f"{FAMILY_NAMES[row.family]},{f.format(row.power_delta)}")
    return "\n".join(lines) + "\n"


def format_report_kv(report: BenchmarkReport) -> str:
    """The same numbers as lossless ``key=value`` lines."""
    lines = [f"seed={report.seed}", f"direction_mode={report.direction_mode}",
             f"test_rows={report.test_rows}"]
    for row in report.rows:
        fam = row.family
        lines.append(f"multi.{fam}.global_rmse={row.multi.global_rmse!r}")
        for label, v in zip(row.multi.target_labels, row.multi.per_target):
            lines.append(f"multi.{fam}.{label}={v!r}")
        lines.append(f"single.{fam}.active_power={row.single.per_target[0]!r}")
        lines.append(f"delta.{fam}.active_power={row.power_delta!r}")
    return "\n".join(lines) + "\n"
