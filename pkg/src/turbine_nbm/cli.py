"""``turbine-nbm`` command line: generate, train, tune, evaluate, benchmark, detect.

Every option can also come from a ``--config`` file of ``key=value`` lines
(``#`` starts a comment). Flags win over file values. Hyperparameter
overrides use ``hp.<name>`` keys, grid axes ``grid.<name>`` keys and
synthetic noise levels ``noise.<channel>`` keys.

Exit status is 0 on success, 2 for usage errors and 1 for runtime errors.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import benchmark_matrix, format_report, format_report_kv
from .metrics import detect_anomalies, evaluate, fit_residual_stats, qq_pairs, residual_series
from .model_core import FORMAT_VERSION, load_model, model_to_bytes
from .pipeline import FAMILIES, prepare, prepare_for_model, resolve_params, train_on
from .scada_data import DIRECTION_MODES, TARGET_LABELS, read_scada_table, format_scada_table
from .synth import (
    DEFAULT_START,
    FAULT_KINDS,
    ROWS_PER_DAY,
    FaultSpec,
    NoiseConfig,
    TurbineSpec,
    WindFieldConfig,
    format_key_values,
    format_labels,
    generate_dataset,
    generation_metadata,
    inject_fault,
)
from .tuning import DEFAULT_CAP, GridSpec, format_tune_report, grid_search

PREFIXES = {"generate": ("noise.",), "train": ("hp.",), "tune": ("grid.", "hp.")}


class UsageError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise ValueError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise ValueError(f"expected a non-negative integer, got {text}")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise ValueError(f"expected a positive number, got {text}")
    return v


def _ratios(text):
    parts = tuple(float(x) for x in str(text).split(","))
    if len(parts) != 3 or min(parts) <= 0 or abs(sum(parts) - 1.0) > 1e-9:
        raise ValueError(f"split needs three positive ratios summing to 1, got {text}")
    return parts


def _targets(text):
    if text == "all":
        return TARGET_LABELS
    if text == "power":
        return ("active_power",)
    names = tuple(t.strip() for t in text.split(","))
    bad = [t for t in names if t not in TARGET_LABELS]
    if bad:
        raise ValueError(f"unknown target(s) {', '.join(bad)}")
    return names


def _families(text):
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in names if t not in FAMILIES]
    if bad or not names:
        raise ValueError(f"families must be a comma list drawn from {', '.join(FAMILIES)}")
    return names


def _choice(options):
    def conv(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return conv


def _flag(text):
    if str(text).lower() in ("1", "true", "yes"):
        return True
    if str(text).lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


# name -> (converter, default, help); mandatory names are listed in REQUIRED
_COMMON = {
    "seed": (_seed, None, "PRNG seed (unsigned 64-bit)"),
    "out": (str, None, "output path"),
}
_SPLIT = {
    "direction_mode": (_choice(DIRECTION_MODES), "cos", "wind direction encoding"),
    "split": (_ratios, (0.6, 0.2, 0.2), "train,validation,test ratios"),
}
OPTIONS = {
    "generate": {
        "days": (_positive_int, None, "number of days of 10-minute rows"),
        "start": (int, DEFAULT_START, "first timestamp, epoch seconds"),
        "fault_kind": (_choice(FAULT_KINDS), None, "inject a fault of this kind"),
        "fault_day": (_nonneg_int, None, "fault onset day"),
        "fault_magnitude": (float, 0.0, "fault magnitude (fraction, rpm or held value)"),
        "fault_channel": (_choice(TARGET_LABELS), None, "channel for stuck-sensor faults"),
    },
    "train": {
        "data": (str, None, "SCADA table"),
        "family": (_choice(FAMILIES), None, "model family"),
        "targets": (_targets, TARGET_LABELS, "all, power, or a comma list of channels"),
        "jobs": (_positive_int, 1, "threads for forest members"),
        **_SPLIT,
    },
    "tune": {
        "data": (str, None, "SCADA table"),
        "family": (_choice(FAMILIES), None, "model family"),
        "targets": (_targets, TARGET_LABELS, "all, power, or a comma list of channels"),
        "cap": (_positive_int, DEFAULT_CAP, "maximum number of grid points"),
        "jobs": (_positive_int, 1, "threads for grid points"),
        "timings": (_flag, False, "add fit times to the report (not byte-stable)"),
        **_SPLIT,
    },
    "evaluate": {
        "data": (str, None, "SCADA table"),
        "model": (str, None, "model file"),
        "part": (_choice(("train", "validation", "test")), "test", "split to score"),
        "qq": (_nonneg_int, 0, "also write this many QQ pairs per target (0 = off)"),
    },
    "benchmark": {
        "data": (str, None, "SCADA table; a synthetic set is generated when omitted"),
        "days": (_positive_int, 365, "days to synthesise when no data is given"),
        "families": (_families, FAMILIES, "comma list of model families"),
        "jobs": (_positive_int, 1, "threads for forest members"),
        **_SPLIT,
    },
    "detect": {
        "data": (str, None, "SCADA table"),
        "model": (str, None, "model file"),
        "tau": (_positive_float, 3.0, "|z| threshold"),
        "w": (_positive_int, 6, "minimum run length in rows"),
        "part": (_choice(("validation", "test", "after-train")), "test", "rows to scan"),
    },
}
REQUIRED = {
    "generate": ("days", "seed", "out"),
    "train": ("data", "family", "out"),
    "tune": ("data", "family", "out"),
    "evaluate": ("data", "model", "out"),
    "benchmark": ("seed", "out"),
    "detect": ("data", "model", "out"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="turbine-nbm",
                                     description="Multi-target normal behaviour models for SCADA data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd, help=(COMMANDS[cmd].__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", help="key=value file; flags override its values")
        for name, (_, default, text) in {**_COMMON, **opts}.items():
            hint = f" (default {default})" if default is not None and not isinstance(default, tuple) else ""
            p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, help=text + hint)
        if cmd in PREFIXES:
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help=f"prefixed setting ({', '.join(k + '*' for k in PREFIXES[cmd])})")
    return parser


def read_config(path) -> dict:
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_") if "." not in key else key] = value
    return out


def resolve(cmd, args) -> tuple[dict, dict]:
    """Merge flags over the config file. Returns (options, prefixed settings)."""
    opts = {**_COMMON, **OPTIONS[cmd]}
    raw = read_config(args.config) if args.config else {}
    extra = {}
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        extra[k.strip()] = v.strip()
    prefixed = {}
    for key, value in {**raw, **extra}.items():
        if key.startswith(PREFIXES.get(cmd, ())):
            prefixed[key] = value
        elif key not in opts or key in extra:
            raise UsageError(f"unknown {cmd} setting {key!r}")
    resolved = {}
    for name, (conv, default, _) in opts.items():
        text = getattr(args, name)
        if text is None:
            text = raw.get(name)
        if text is None:
            resolved[name] = default
            continue
        try:
            resolved[name] = conv(text)
        except ValueError as exc:
            raise UsageError(f"--{name.replace('_', '-')}: {exc}") from None
    missing = [n for n in REQUIRED[cmd] if resolved[n] is None]
    if missing:
        raise UsageError(f"{cmd} needs " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return resolved, prefixed


def write_atomic(path, data) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _show(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return "" if v is None else str(v)


def write_manifest(out, cmd, resolved, prefixed) -> None:
    lines = [f"command={cmd}", f"tool_version={__version__}", f"model_format_version={FORMAT_VERSION}"]
    lines += [f"{k}={_show(resolved[k])}" for k in sorted(resolved)]
    lines += [f"{k}={prefixed[k]}" for k in sorted(prefixed)]
    write_atomic(str(out) + ".manifest", "\n".join(lines) + "\n")


def _strip(prefixed, prefix):
    return {k[len(prefix):]: v for k, v in prefixed.items() if k.startswith(prefix)}


def _need_seed(opts, families):
    if opts["seed"] is None and any(f in ("forest", "mlp") for f in families):
        raise UsageError("--seed is required for stochastic model families")
    return opts["seed"] or 0


def run_generate(opts, prefixed):
    """Write a synthetic SCADA table with its generation metadata."""
    noise_kw = _strip(prefixed, "noise.")
    try:
        noise = NoiseConfig(**{k: float(v) for k, v in noise_kw.items()})
    except TypeError:
        raise UsageError(f"unknown noise channel in {sorted(noise_kw)}") from None
    ds = generate_dataset(opts["days"], TurbineSpec(), WindFieldConfig(), noise, opts["seed"],
                          opts["start"])
    meta = generation_metadata(opts["days"], TurbineSpec(), WindFieldConfig(), noise, opts["seed"],
                               opts["start"])
    labels = None
    if opts["fault_kind"]:
        if opts["fault_day"] is None:
            raise UsageError("--fault-kind needs --fault-day")
        onset = opts["fault_day"] * ROWS_PER_DAY
        if onset >= ds.m:
            raise UsageError(f"fault day {opts['fault_day']} is past the end of the data")
        fault = FaultSpec(opts["fault_kind"], onset, opts["fault_magnitude"], opts["fault_channel"])
        ds, labels = inject_fault(ds, fault)
        meta.update({"fault.kind": fault.kind, "fault.onset": onset,
                     "fault.magnitude": fault.magnitude, "fault.channel": fault.channel or ""})
    write_atomic(opts["out"], format_scada_table(ds))
    write_atomic(opts["out"] + ".meta", format_key_values(meta))
    if labels is not None:
        write_atomic(opts["out"] + ".labels", format_labels(ds, labels))
    return f"wrote {ds.m} rows to {opts['out']}"


def run_train(opts, prefixed):
    """Fit one model family and save it with its normalisation parameters."""
    ds = read_scada_table(opts["data"])
    seed = _need_seed(opts, [opts["family"]])
    hp = _strip(prefixed, "hp.")
    try:
        resolve_params(opts["family"], hp, len(opts["targets"]) == 1)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = prepare(ds, opts["direction_mode"], opts["split"], opts["targets"])
    model = train_on(data, opts["family"], hp, seed=seed, n_jobs=opts["jobs"])
    write_atomic(opts["out"], model_to_bytes(model))
    return f"wrote {opts['family']} model to {opts['out']}"


def _parse_grid(family, grid_kw, single):
    axes = {}
    for name, text in grid_kw.items():
        # tuple-valued axes (mlp hidden widths) separate candidates with ';'
        sep = ";" if name == "hidden" else ","
        values = [v.strip() for v in text.split(sep) if v.strip()]
        axes[name] = tuple(resolve_params(family, {name: v}, single)[name] for v in values)
    return axes


def run_tune(opts, prefixed):
    """Grid-search one family and write the ranked validation table."""
    seed = _need_seed(opts, [opts["family"]])
    single = len(opts["targets"]) == 1
    try:
        axes = _parse_grid(opts["family"], _strip(prefixed, "grid."), single)
        grid = GridSpec(opts["family"], axes, opts["cap"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if _strip(prefixed, "hp."):
        raise UsageError("tune takes grid.* axes; give fixed values as one-element axes")
    ds = read_scada_table(opts["data"])
    data = prepare(ds, opts["direction_mode"], opts["split"], opts["targets"])
    result = grid_search(grid, data, seed, opts["jobs"])
    write_atomic(opts["out"], format_tune_report(result, opts["timings"]))
    return f"best {result.best} with validation RMSE {result.best_rmse:.6f}"


def run_evaluate(opts, prefixed):
    """Score a saved model on one split of a SCADA table."""
    ds = read_scada_table(opts["data"])
    model = load_model(opts["model"])
    data = prepare_for_model(ds, model)
    X, Y = data.part(opts["part"])
    pred = model.predict(X)
    rep = evaluate(pred, Y, data.targets, model.family)
    lines = [f"family={model.family}", f"part={opts['part']}", f"rows={rep.s}",
             f"global_rmse={rep.global_rmse!r}"]
    lines += [f"rmse.{t}={v!r}" for t, v in zip(rep.target_labels, rep.per_target)]
    write_atomic(opts["out"], "\n".join(lines) + "\n")
    if opts["qq"]:
        rows = ["target,i,predicted,observed"]
        for j, t in enumerate(data.targets):
            pairs = qq_pairs(pred[:, j], Y[:, j], opts["qq"])
            rows += [f"{t},{i},{a!r},{b!r}" for i, (a, b) in enumerate(pairs.tolist())]
        write_atomic(opts["out"] + ".qq", "\n".join(rows) + "\n")
    return f"global RMSE {rep.global_rmse:.4f} on {rep.s} rows"


def run_benchmark(opts, prefixed):
    """Multi-target versus single-target power accuracy for each family."""
    seed = opts["seed"]
    if opts["data"]:
        ds = read_scada_table(opts["data"])
    else:
        ds = generate_dataset(opts["days"], seed=seed)
    report = benchmark_matrix(ds, opts["families"], seed, opts["direction_mode"], opts["split"],
                              opts["jobs"])
    write_atomic(opts["out"], format_report(report))
    write_atomic(opts["out"] + ".kv", format_report_kv(report))
    return f"benchmarked {len(report.rows)} families on {report.test_rows} test rows"


def run_detect(opts, prefixed):
    """Flag persistent residual excursions; the validation split is the reference."""
    ds = read_scada_table(opts["data"])
    model = load_model(opts["model"])
    data = prepare_for_model(ds, model)
    stats = fit_residual_stats(residual_series(model.predict(data.X_val), data.Y_val))
    if opts["part"] == "after-train":
        rows = np.concatenate([data.split.validation, data.split.test])
        X, Y = np.concatenate([data.X_val, data.X_test]), np.concatenate([data.Y_val, data.Y_test])
    else:
        rows = data.split.rows(opts["part"])
        X, Y = data.part(opts["part"])
    events = detect_anomalies(residual_series(model.predict(X), Y), stats, opts["tau"], opts["w"])
    ts = ds.timestamps
    out = ["target,start_row,end_row,start_timestamp,end_timestamp,length,peak_z,mean_z"]
    for ev in events:
        a, b = int(rows[ev.start]), int(rows[ev.end])
        out.append(f"{data.targets[ev.target]},{a},{b},{ts[a]},{ts[b]},{ev.length},"
                   f"{ev.peak_z:.6f},{ev.mean_z:.6f}")
    write_atomic(opts["out"], "\n".join(out) + "\n")
    return f"{len(events)} event(s)"


COMMANDS = {
    "generate": run_generate,
    "train": run_train,
    "tune": run_tune,
    "evaluate": run_evaluate,
    "benchmark": run_benchmark,
    "detect": run_detect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts, prefixed = resolve(args.command, args)
        message = COMMANDS[args.command](opts, prefixed)
        write_manifest(opts["out"], args.command, opts, prefixed)
    except UsageError as exc:
        print(f"turbine-nbm {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"turbine-nbm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(message, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
