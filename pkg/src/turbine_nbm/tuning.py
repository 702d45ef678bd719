"""Exhaustive grid search scored by validation global RMSE."""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .metrics import global_rmse
from .pipeline import FAMILIES, PreparedData, fit_family, resolve_params

DEFAULT_CAP = 10_000


@dataclass(frozen=True)
class GridSpec:
    """Candidate values per hyperparameter; unnamed ones keep their defaults."""

    family: str
    axes: dict = field(default_factory=dict)
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        axes = {name: tuple(values) for name, values in sorted(self.axes.items())}
        for name, values in axes.items():
            if not values:
                raise ValueError(f"grid axis {name!r} is empty")
        object.__setattr__(self, "axes", axes)
        if self.size > self.cap:
            raise ValueError(f"grid has {self.size} combinations, above the cap of {self.cap}")

    @property
    def size(self) -> int:
        n = 1
        for values in self.axes.values():
            n *= len(values)
        return n

    def points(self):
        names = list(self.axes)
        for combo in itertools.product(*self.axes.values()):
            yield dict(zip(names, combo))


@dataclass(frozen=True)
class TuneRow:
    config: dict
    rmse: float
    fit_seconds: float


@dataclass(frozen=True)
class TuneResult:
    family: str
    axis_names: tuple
    rows: tuple  # ranked, best first

    @property
    def best(self) -> dict:
        return self.rows[0].config

    @property
    def best_rmse(self) -> float:
        return self.rows[0].rmse


def score_config(family, config, data: PreparedData, seed=0, n_jobs=1):
    """Validation global RMSE of one configuration, plus its fit time in seconds."""
    params = resolve_params(family, config, len(data.targets) == 1)
    t0 = time.perf_counter()
    model = fit_family(family, params, data.X_train, data.Y_train, data.X_val, data.Y_val, seed,
                       n_jobs)
    seconds = time.perf_counter() - t0
    return global_rmse(model.predict(data.X_val), data.Y_val), seconds


def grid_search(grid: GridSpec, data: PreparedData, seed=0, n_jobs=1) -> TuneResult:
    """Fit every grid point and rank by validation RMSE.

    Ties in RMSE are broken by the configuration values compared in axis-name
    order, so the ranking does not depend on evaluation order. ``n_jobs``
    scores points on threads; results match a serial run.
    """
    points = list(grid.points())
    # resolve up front so bad names or values fail before any fitting
    for p in points:
        resolve_params(grid.family, p, len(data.targets) == 1)

    def run(p):
        return score_config(grid.family, p, data, seed)

    if n_jobs > 1 and len(points) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            scores = list(pool.map(run, points))
    else:
        scores = [run(p) for p in points]
    names = tuple(grid.axes)
    rows = [TuneRow(p, rmse, sec) for p, (rmse, sec) in zip(points, scores)]
    rows.sort(key=lambda r: (r.rmse, tuple(r.config[n] for n in names)))
    return TuneResult(grid.family, names, tuple(rows))


def _fmt_value(v):
    if isinstance(v, tuple):
        return "-".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def format_tune_report(result: TuneResult, timings: bool = False) -> str:
    """Comma-delimited ranking. Fit times are left out unless ``timings`` is set,
    which keeps the report byte-stable across runs."""
    head = ["rank", *result.axis_names, "val_global_rmse"] + (["fit_seconds"] if timings else [])
    lines = [f"# family={result.family}", ",".join(head)]
    for i, row in enumerate(result.rows, 1):
        cells = [str(i), *(_fmt_value(row.config[n]) for n in result.axis_names), repr(row.rmse)]
        if timings:
            cells.append(f"{row.fit_seconds:.3f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
