"""End-to-end acceptance checks, one verdict line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are repeated in the terminal summary either way.
"""

import io
import math
import re
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from oracles import Cart1D, brute_best_split, knn_scan_many
from turbine_nbm import pipeline, synth
from turbine_nbm.cli import main
from turbine_nbm.knn import fit_knn
from turbine_nbm.metrics import flagged_rows, fit_residual_stats, global_rmse, residual_series, rmse_per_target
from turbine_nbm.mlp import MlpArchitecture, gradient_check, loss_ssr
from turbine_nbm.model_core import ModelFormatError, ModelVersionError, load_model, model_from_bytes, save_model
from turbine_nbm.scada_data import apply_normalizer, build_design_matrices, fit_normalizer, invert_normalizer
from turbine_nbm.trees import TreeHyperparams, best_split, fit_tree

GOLDEN = Path(__file__).parent / "golden"
SEED = 42
DAYS = 365


@pytest.fixture(scope="module")
def default_ds():
    return synth.generate_dataset(DAYS, seed=SEED)


@pytest.fixture(scope="module")
def default_runs(default_ds):
    """Every family fitted on all four targets and on power alone."""
    multi = pipeline.prepare(default_ds)
    single = pipeline.prepare(default_ds, targets=("active_power",))
    models, seconds = {}, {}
    t0 = time.perf_counter()
    for fam in pipeline.FAMILIES:
        for kind, data in (("multi", multi), ("single", single)):
            t = time.perf_counter()
            models[fam, kind] = pipeline.train_on(data, fam, seed=SEED)
            seconds[fam, kind] = time.perf_counter() - t
    return {"multi": multi, "single": single, "models": models, "seconds": seconds,
            "total": time.perf_counter() - t0}


def test_criterion_01_parity(default_runs):
    multi, single = default_runs["multi"], default_runs["single"]
    deltas = {}
    for fam in pipeline.FAMILIES:
        m = rmse_per_target(default_runs["models"][fam, "multi"].predict(multi.X_test), multi.Y_test)[0]
        s = rmse_per_target(default_runs["models"][fam, "single"].predict(single.X_test), single.Y_test)[0]
        deltas[fam] = m - s
    total = default_runs["total"]
    ok = all(abs(d) <= 0.02 for d in deltas.values()) and total <= 600
    detail = " ".join(f"{f}={d:+.4f}" for f, d in deltas.items()) + f" fit={total:.0f}s"
    record_criterion(1, "multi vs single power RMSE within 0.02", ok, detail)
    assert ok


def test_criterion_02_noise_ordering():
    # per-channel noise chosen so the normalised noise follows 0.13 / 0.10 / 0.10 / 0.18
    pattern = {"active_power": 0.13, "rotor_speed": 0.10, "generator_speed": 0.10, "current": 0.18}
    spec = synth.TurbineSpec()
    rated = {"active_power": spec.rated_power, "rotor_speed": spec.rotor_rated,
             "generator_speed": spec.rotor_rated * spec.gearbox_ratio,
             "current": synth.rated_current(spec)}
    clean = synth.generate_dataset(DAYS, noise=synth.NoiseConfig.zero(), seed=SEED)
    noise = synth.NoiseConfig(**{k: pattern[k] * clean.column(k).std() / rated[k] for k in pattern})
    data = pipeline.prepare(synth.generate_dataset(DAYS, noise=noise, seed=SEED))
    margin, results = 0.005, {}
    for fam in pipeline.FAMILIES:
        model = pipeline.train_on(data, fam, seed=SEED)
        p, r, g, c = rmse_per_target(model.predict(data.X_test), data.Y_test)
        results[fam] = (max(r, g) + margin <= p and p + margin <= c, p, r, g, c)
    ok = all(v[0] for v in results.values())
    detail = " ".join(f"{f}:{'ok' if v[0] else 'x'}(" + ",".join(f"{x:.4f}" for x in v[1:]) + ")"
                      for f, v in results.items())
    record_criterion(2, "per-target RMSE follows injected noise order (margin 0.005)", ok, detail)
    assert ok


def test_criterion_03_gradient_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, count = 0.0, 0
    for i in range(24):
        hidden = tuple(int(w) for w in rng.integers(2, 7, int(rng.integers(1, 4))))
        arch = MlpArchitecture((int(rng.integers(2, 5)), *hidden, int(rng.integers(1, 5))),
                               ("relu", "tanh")[i % 2], (i % 4 < 2,) * len(hidden))
        worst = max(worst, gradient_check(arch, seed=i))
        count += 1
    linear = gradient_check(MlpArchitecture((3, 5, 2), "identity", (False,)), seed=0)
    default = gradient_check(MlpArchitecture.default(), seed=0)
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-4 and default <= 1e-4 and linear <= 1e-8 and seconds <= 30
    record_criterion(3, "gradient check on random architectures", ok,
                     f"{count} archs worst={worst:.1e} default={default:.1e} linear={linear:.1e} "
                     f"{seconds:.1f}s")
    assert ok


def test_criterion_04_single_target_cart():
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(50):
        m = int(rng.integers(20, 1001))
        k = int(rng.integers(1, 4))
        X = np.round(rng.standard_normal((m, k)), int(rng.integers(1, 3)))
        y = np.sin(2 * X[:, 0]) + 0.2 * rng.standard_normal(m)
        depth, leaf = int(rng.integers(1, 7)), int(rng.integers(1, 20))
        split = int(rng.integers(2 * leaf, 4 * leaf + 2))
        weighting = ("count_weighted", "classic")[int(rng.integers(0, 2))]
        t = fit_tree(X, y, TreeHyperparams(depth, split, leaf, weighting))
        ref = Cart1D(depth, split, leaf, weighting).fit(X, y)
        seq = [(int(f), float(th)) if f >= 0 else (-1, int(c))
               for f, th, c in zip(t.feature, t.threshold, t.count)]
        Q = rng.standard_normal((200, k)) * 1.5
        if seq != ref.preorder() or not np.array_equal(t.predict(Q)[:, 0], ref.predict(Q)):
            mismatches += 1
    record_criterion(4, "n=1 tree equals single-target CART oracle", mismatches == 0,
                     f"50 datasets, {mismatches} mismatches")
    assert mismatches == 0


def test_criterion_05_split_brute_force():
    rng = np.random.default_rng(5)
    mismatches, splits = 0, 0
    for i in range(100):
        m = int(rng.integers(2, 201))
        k, n = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        X = np.round(rng.standard_normal((m, k)), int(rng.integers(0, 3)))
        Y = rng.standard_normal((m, n)) + (X[:, :1] > 0)
        leaf = int(rng.integers(1, 10))
        weighting = ("count_weighted", "classic")[i % 2]
        with np.errstate(all="ignore"):
            hp = TreeHyperparams(3, max(2, 2 * leaf), leaf, weighting)
        got = best_split(X, Y, hp)
        want = brute_best_split(X, Y, hp.min_samples_split, leaf, weighting)
        if want is None or got is None:
            mismatches += (want is None) != (got is None)
            continue
        splits += 1
        f, thr, cost = want
        if got.feature != f or got.threshold != thr or abs(got.cost - cost) > 1e-12 * max(1.0, abs(cost)):
            mismatches += 1
    record_criterion(5, "best split equals exhaustive enumeration", mismatches == 0,
                     f"100 datasets ({splits} with a split), {mismatches} mismatches")
    assert mismatches == 0


def test_criterion_06_knn_oracle():
    rng = np.random.default_rng(6)
    m = 5000
    X = np.round(rng.standard_normal((m, 3)), 1)
    Y = rng.standard_normal((m, 4))
    Ks = (1, 33, 45, m)
    models = [fit_knn(X, Y, K) for K in Ks]
    Q = np.round(rng.standard_normal((1000, 3)), 1)
    Q[:100] = X[rng.integers(0, m, 100)]  # exact hits and many distance ties
    preds = [model.predict(Q) for model in models]
    mismatches = 0
    for i, q in enumerate(Q):
        for j, want in enumerate(knn_scan_many(X, Y, q, Ks)):
            mismatches += not np.array_equal(preds[j][i], want)
    record_criterion(6, "KNN equals brute-force scan", mismatches == 0,
                     f"1000 queries x K in {Ks}, {mismatches} mismatches")
    assert mismatches == 0


def test_criterion_07_metric_identities():
    rng = np.random.default_rng(7)
    worst_a = worst_b = 0.0
    for _ in range(500):
        s, n = int(rng.integers(1, 200)), int(rng.integers(1, 8))
        P = rng.standard_normal((s, n)) * 10 ** rng.uniform(-3, 3)
        O = rng.standard_normal((s, n)) * 10 ** rng.uniform(-3, 3)
        g = global_rmse(P, O)
        per = rmse_per_target(P, O)
        lhs = g**2 * s * n
        worst_a = max(worst_a, abs(lhs - float((s * per**2).sum())) / lhs)
        worst_b = max(worst_b, abs(g - math.sqrt(loss_ssr(P, O) / (s * n))) / g)
    ok = worst_a <= 1e-10 and worst_b <= 1e-10
    record_criterion(7, "global RMSE identities", ok, f"rel err {worst_a:.1e}, {worst_b:.1e}")
    assert ok


def test_criterion_08_normalization(default_ds):
    # round trip measured against each column's magnitude: 1e-12 absolute is below
    # one ulp for channels in the thousands
    rng = np.random.default_rng(8)
    worst_rt = 0.0
    for _ in range(100):
        M = rng.standard_normal((50, 4)) * 10 ** rng.uniform(-2, 4, 4) + rng.uniform(-1e3, 1e3, 4)
        params = fit_normalizer(M)
        back = invert_normalizer(apply_normalizer(M, params), params)
        scale = np.maximum(1.0, np.abs(M).max(axis=0))
        worst_rt = max(worst_rt, float((np.abs(back - M) / scale).max()))
    dm = build_design_matrices(default_ds)
    data = pipeline.prepare(default_ds)
    worst_mean = max(float(np.abs(data.X_train.mean(0)).max()), float(np.abs(data.Y_train.mean(0)).max()))
    worst_std = max(float(np.abs(data.X_train.std(0) - 1).max()), float(np.abs(data.Y_train.std(0) - 1).max()))
    phys = invert_normalizer(data.X_train, data.input_norm)
    worst_rt = max(worst_rt, float((np.abs(phys - dm.X[data.split.train]) /
                                    np.maximum(1.0, np.abs(dm.X).max(0))).max()))
    ok = worst_rt <= 1e-12 and worst_mean < 1e-10 and worst_std < 1e-10
    record_criterion(8, "normalisation round trip and training-split moments", ok,
                     f"round trip {worst_rt:.1e} (column scaled), |mean| {worst_mean:.1e}, "
                     f"|std-1| {worst_std:.1e}")
    assert ok


@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("acceptance_cli")
    data = d / "d60.csv"
    assert main(["generate", "--days", "60", "--seed", "9", "--out", str(data)]) == 0
    for name in ("a", "b"):
        assert main(["benchmark", "--data", str(data), "--seed", "9", "--out", str(d / f"bench_{name}.txt")]) == 0
    return d, data


def test_criterion_09_determinism(cli_runs):
    d, data = cli_runs
    same_bench = ((d / "bench_a.txt").read_bytes() == (d / "bench_b.txt").read_bytes()
                  and (d / "bench_a.txt.kv").read_bytes() == (d / "bench_b.txt.kv").read_bytes())
    same_models = True
    for fam in pipeline.FAMILIES:
        blobs = []
        for i in range(2):
            out = d / f"{fam}{i}.nbm"
            assert main(["train", "--data", str(data), "--family", fam, "--seed", "3", "--out", str(out)]) == 0
            blobs.append(out.read_bytes())
        same_models &= blobs[0] == blobs[1]
    par = d / "forest_par.nbm"
    assert main(["train", "--data", str(data), "--family", "forest", "--seed", "3", "--jobs", "3",
                 "--out", str(par)]) == 0
    same_parallel = par.read_bytes() == (d / "forest0.nbm").read_bytes()
    ok = same_bench and same_models and same_parallel
    record_criterion(9, "byte-identical reruns", ok,
                     f"benchmark={same_bench} models={same_models} forest parallel={same_parallel}")
    assert ok


def test_criterion_10_fault_detection(default_ds, default_runs):
    onset = 300 * synth.ROWS_PER_DAY
    faulty, labels = synth.inject_fault(default_ds, synth.FaultSpec("power-derate", onset, 0.10))
    # the fault starts inside the test split, so training on the faulty set gives the same model
    multi = default_runs["multi"]
    faulty_data = pipeline.prepare(faulty)
    assert np.array_equal(faulty_data.X_train, multi.X_train)
    assert np.array_equal(faulty_data.Y_train, multi.Y_train)
    assert np.array_equal(faulty_data.Y_val, multi.Y_val)
    in_fault = np.asarray(labels)[multi.split.test] == 1
    results = {}
    for fam in ("tree", "forest", "knn"):
        model = default_runs["models"][fam, "multi"]
        stats = fit_residual_stats(residual_series(model.predict(multi.X_val), multi.Y_val))
        clean_flags = flagged_rows(residual_series(model.predict(multi.X_test), multi.Y_test), stats)
        fault_flags = flagged_rows(residual_series(model.predict(faulty_data.X_test), faulty_data.Y_test), stats)
        recall = float(fault_flags[in_fault, 0].mean())
        false_rate = float(clean_flags.any(axis=1).mean())
        results[fam] = (recall >= 0.8 and false_rate <= 0.01, recall, false_rate)
    ok = all(v[0] for v in results.values())
    detail = " ".join(f"{f}: recall={v[1]:.3f} clean flags={v[2]:.4f}" for f, v in results.items())
    record_criterion(10, "10% derate recall >= 0.8, clean flags <= 1%", ok, detail)
    assert ok


def test_criterion_11_serialization(default_runs):
    rng = np.random.default_rng(11)
    Q = rng.standard_normal((1000, default_runs["multi"].X_train.shape[1])) * 1.5
    identical = True
    for fam in pipeline.FAMILIES:
        model = default_runs["models"][fam, "multi"]
        buf = io.BytesIO()
        save_model(model, buf)
        again = load_model(io.BytesIO(buf.getvalue()))
        identical &= np.array_equal(model.predict(Q), again.predict(Q))
    data = buf.getvalue()
    rejected = []
    for bad, err in ((data[:100], ModelFormatError), (b"NBM2" + data[4:], ModelFormatError),
                     (data[:-20] + bytes(20), ModelFormatError),
                     (data.replace(b"format_version=1\n", b"format_version=9\n", 1), ModelVersionError)):
        try:
            model_from_bytes(bad)
            rejected.append(False)
        except err as exc:
            rejected.append(bool(str(exc)))
    ok = identical and all(rejected)
    record_criterion(11, "save/load bit-identical; bad files rejected", ok,
                     f"identical={identical} rejected={sum(rejected)}/{len(rejected)}")
    assert ok


def _mask(text):
    return re.sub(r"-?\d+(?:\.\d+)?", "<x>", text)


def test_criterion_12_report_layout(cli_runs):
    d, _ = cli_runs
    got = _mask((d / "bench_a.txt").read_text())
    want = (GOLDEN / "benchmark_layout.txt").read_text()
    ok = got == want
    record_criterion(12, "benchmark report layout matches golden file", ok)
    assert ok
