import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import quantile_hazen
from turbine_nbm.metrics import (
    ResidualStats,
    detect_anomalies,
    evaluate,
    fit_residual_stats,
    flagged_rows,
    global_rmse,
    qq_pairs,
    quantile,
    residual_series,
    rmse_per_target,
)
from turbine_nbm.mlp import loss_ssr


def test_rmse_examples():
    obs = np.arange(6.0).reshape(3, 2)
    assert rmse_per_target(obs, obs).tolist() == [0.0, 0.0]
    assert global_rmse(obs, obs) == 0.0
    pred = obs.copy()
    pred[:, 1] -= 1
    assert rmse_per_target(pred, obs).tolist() == [0.0, 1.0]
    assert rmse_per_target([[0.0], [0.0]], [[0.0], [2.0]])[0] == pytest.approx(math.sqrt(2), abs=1e-15)
    assert global_rmse(np.ones((4, 3)), np.zeros((4, 3))) == 1.0
    assert global_rmse([[0.0, 0.0]], [[2.0, 2.0]]) == 2.0
    with pytest.raises(ValueError):
        rmse_per_target(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        global_rmse(np.zeros((0, 2)), np.zeros((0, 2)))


def test_global_rmse_of_zero_and_two():
    # pooled over a 1x2 matrix with residuals {0, 2}: sqrt((0 + 4) / 2)
    assert global_rmse([[1.0, 1.0]], [[1.0, 3.0]]) == math.sqrt(2)


def test_residual_series():
    obs = np.array([[1.0, 2.0], [3.0, 5.0]])
    assert np.all(residual_series(obs, obs) == 0)
    assert np.all(residual_series(obs - 0.5, obs) == 0.5)
    assert residual_series([[1.0, 1.0], [2.0, 2.0]], obs)[1].tolist() == [1.0, 3.0]
    with pytest.raises(ValueError):
        residual_series(obs, obs[:1])


def test_evaluate_report():
    rep = evaluate(np.zeros((4, 2)), np.ones((4, 2)), ("a", "b"), "tree")
    assert rep.per_target == (1.0, 1.0) and rep.global_rmse == 1.0 and rep.s == 4


@settings(max_examples=200)
@given(st.integers(1, 40), st.integers(1, 6), st.integers(0, 2**32))
def test_metric_identities(s, n, seed):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((s, n)) * rng.uniform(0.01, 100)
    O = rng.standard_normal((s, n))
    g = global_rmse(P, O)
    per = rmse_per_target(P, O)
    assert g**2 * s * n == pytest.approx(float((per**2 * s).sum()), rel=1e-10)
    assert g == pytest.approx(math.sqrt(loss_ssr(P, O) / (s * n)), rel=1e-12)


def test_quantile_examples():
    a = np.arange(1.0, 101.0)
    assert qq_pairs(a, a, 4)[:, 0].tolist() == [13.0, 38.0, 63.0, 88.0]
    pairs = qq_pairs(a, a + 1, 10)
    assert np.all(pairs[:, 1] - pairs[:, 0] == 1)
    assert np.all(qq_pairs(a, a, 7)[:, 0] == qq_pairs(a, a, 7)[:, 1])
    assert quantile([5.0], 0.3) == 5.0
    with pytest.raises(ValueError):
        qq_pairs([], a, 4)
    with pytest.raises(ValueError):
        qq_pairs(a[:3], a, 4)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0, 1))
def test_quantile_matches_oracle(xs, p):
    assert quantile(xs, p) == pytest.approx(quantile_hazen(sorted(xs), p), rel=1e-12, abs=1e-9)


@given(st.lists(st.floats(-1e6, 1e6), min_size=5, max_size=60),
       st.lists(st.floats(-1e6, 1e6), min_size=5, max_size=60), st.integers(2, 5))
def test_qq_pairs_monotone(a, b, q):
    pairs = qq_pairs(a, b, q)
    assert np.all(np.diff(pairs, axis=0) >= 0)


def test_residual_stats_examples():
    st_ = fit_residual_stats([[-1.0], [1.0]])
    assert st_.mean.tolist() == [0.0] and st_.std.tolist() == [1.0]
    with pytest.warns(RuntimeWarning):
        z = fit_residual_stats(np.zeros((5, 2)))
    assert z.std.tolist() == [1.0, 1.0] and z.zero_variance == (True, True)
    with pytest.raises(ValueError):
        fit_residual_stats(np.empty((0, 2)))


UNIT = ResidualStats(np.zeros(1), np.ones(1))


def test_detection_examples():
    assert detect_anomalies(np.zeros((50, 1)), UNIT) == []
    r = np.zeros((40, 1))
    r[10:20] = 5.0
    events = detect_anomalies(r, UNIT, tau=3, w=6)
    assert len(events) == 1
    ev = events[0]
    assert (ev.start, ev.end, ev.length, ev.peak_z, ev.mean_z) == (10, 19, 10, 5.0, 5.0)
    assert flagged_rows(r, UNIT)[:, 0].sum() == 10
    spike = np.zeros((40, 1))
    spike[7] = 8.0
    assert detect_anomalies(spike, UNIT) == []
    # exactly w rows count; w - 1 do not; |z| == tau is not flagged
    edge = np.zeros((20, 1))
    edge[2:8] = -3.5
    edge[12:17] = 4.0
    assert [(e.start, e.length) for e in detect_anomalies(edge, UNIT)] == [(2, 6)]
    assert detect_anomalies(np.full((10, 1), 3.0), UNIT) == []
    with pytest.raises(ValueError):
        detect_anomalies(r, UNIT, tau=0)
    with pytest.raises(ValueError):
        detect_anomalies(r, UNIT, w=0)


def test_detection_per_target():
    r = np.zeros((30, 2))
    r[0:8, 1] = 10.0
    r[20:30, 0] = -10.0
    stats = ResidualStats(np.zeros(2), np.ones(2))
    assert [(e.target, e.start, e.end) for e in detect_anomalies(r, stats)] == [(0, 20, 29), (1, 0, 7)]


@settings(max_examples=100)
@given(st.integers(0, 2**32), st.floats(-1e3, 1e3), st.integers(1, 8))
def test_detection_translation_covariant(seed, c, w):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((200, 2)) * 2
    stats = ResidualStats(rng.uniform(-0.5, 0.5, 2), rng.uniform(0.5, 1.5, 2))
    # keep |z| away from tau so the shift's rounding cannot move a row across it
    z = np.abs((R - stats.mean) / stats.std)
    R[np.abs(z - 2.0) < 1e-6] += 1e-3
    shifted = ResidualStats(stats.mean + c, stats.std)
    a = detect_anomalies(R, stats, 2.0, w)
    b = detect_anomalies(R + c, shifted, 2.0, w)
    assert [(e.target, e.start, e.end) for e in a] == [(e.target, e.start, e.end) for e in b]
