import json
import math
import warnings

import numpy as np
import pytest

from mmisac.array import PhasedArray, steering_vector
from mmisac.cancellation import (
    CancellationReport,
    DegenerateEstimateWarning,
    NullingProblem,
    beam_null,
    cancel_pipeline,
    constraints_hold,
    digital_cancel,
    mainlobe_gains,
    nulling_objective,
    predict_leakage,
    sensing_beamformers,
)
from mmisac.channel import (
    HybridBeamformers,
    Node,
    OfdmConfig,
    Scatterer,
    TxInterference,
    compose,
    dbm_to_mw,
    gen_sensing_channel,
)
from mmisac.errors import InfeasibleError
from mmisac.probing import ti_probe, trn_sequence
from mmisac.sim import gesture_recovery

A16 = PhasedArray(16)
K = 64


def rank1(m, seed, k=K):
    rng = np.random.default_rng(seed)
    ur = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    ut = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    taps = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    return np.einsum("r,t,k->rtk", ur, ut.conj(), taps), ur


def target_problem(seed, **kw):
    h, _ = rank1(16, seed)
    b = math.radians(30)
    bf = sensing_beamformers(A16, A16, b)
    return NullingProblem(h, bf, A16, A16, [(b, 10 * math.log10(16) - 3)], **kw)


def test_zero_interference_returns_init():
    bf = sensing_beamformers(A16, A16, 0.2)
    res = beam_null(NullingProblem(np.zeros((16, 16, 8)), bf, A16, A16, [(0.2, 9.0)]))
    assert res.objective == 0 and res.iterations == 0
    np.testing.assert_array_equal(res.bf.w_ab_rx, bf.w_ab_rx)
    np.testing.assert_array_equal(res.bf.w_ab_tx, bf.w_ab_tx)


def test_two_element_rank1_closed_form_null():
    a2 = PhasedArray(2)
    h, ur = rank1(2, 0)
    # hand oracle: the combiner orthogonal to the interference column
    w = np.conj([ur[1], -ur[0]])
    assert abs(np.vdot(w, ur)) < 1e-12
    bf = HybridBeamformers.from_awvs([np.ones(2)], [np.ones(2)])
    res = beam_null(NullingProblem(h, bf, a2, a2))
    assert res.suppression_db >= 60


def test_sixteen_element_mainlobe_30_deg():
    p = target_problem(1)
    # attainability oracle: project the 30 deg steering vector off the
    # interference column; zero leakage at a gain loss well under 3 dB
    _, ur = rank1(16, 1)
    a = steering_vector(A16, p.mainlobe_targets[0][0])
    w = a - np.vdot(ur, a) / np.vdot(ur, ur) * ur
    assert abs(np.vdot(w, ur)) < 1e-9
    gain = abs(np.vdot(w, a)) ** 2 / np.vdot(w, w).real
    assert 10 * math.log10(gain) >= p.mainlobe_targets[0][1]
    res = beam_null(p)
    assert res.suppression_db >= 30
    assert constraints_hold(res.bf, A16, A16, p.mainlobe_targets, slack_db=0.5)


@pytest.mark.parametrize("seed", range(5))
def test_objective_never_increases_and_constraints_hold(seed):
    p = target_problem(seed, max_iters=200)
    res = beam_null(p)
    assert res.objective <= res.objective_init
    assert nulling_objective(p.h_ti, res.bf) <= nulling_objective(p.h_ti, p.init_bf)
    for (gt, gr), (_, g) in zip(mainlobe_gains(res.bf, A16, A16, p.mainlobe_targets), p.mainlobe_targets):
        assert gt >= g - 0.5 and gr >= g - 0.5


def test_suppression_non_decreasing_in_iterations():
    # full-rank leakage: no exact null, so the budget matters
    rng = np.random.default_rng(7)
    h = rng.standard_normal((16, 16, K)) + 1j * rng.standard_normal((16, 16, K))
    b = math.radians(30)
    bf = sensing_beamformers(A16, A16, b)
    supp = [
        beam_null(NullingProblem(h, bf, A16, A16, [(b, 9.0)], max_iters=n)).suppression_db
        for n in (0, 20, 400)
    ]
    assert supp[0] <= supp[1] <= supp[2]
    assert supp[2] > 0


def test_weights_quantized_on_return():
    res = beam_null(target_problem(2))
    for a in (res.bf.w_ab_rx, res.bf.w_ab_tx):
        amp = np.abs(a) * 16
        np.testing.assert_allclose(amp, np.round(amp), atol=1e-9)
        ph = np.angle(a[np.abs(a) > 0]) / (2 * np.pi / 16)
        np.testing.assert_allclose(ph, np.round(ph), atol=1e-9)


def test_infeasible_target_rejected():
    bf = sensing_beamformers(A16, A16, 0.0)
    h, _ = rank1(16, 0)
    with pytest.raises(InfeasibleError):
        beam_null(NullingProblem(h, bf, A16, A16, [(0.0, 13.0)]))


@pytest.mark.parametrize("kw", [dict(step=0.0), dict(mainlobe_targets=[(0.0, math.nan)])])
def test_problem_invariants(kw):
    bf = sensing_beamformers(A16, A16, 0.0)
    with pytest.raises(ValueError):
        NullingProblem(np.zeros((16, 16, 4)), bf, A16, A16, **kw)


def _link(seed=0):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((4, 4, K)) + 1j * rng.standard_normal((4, 4, K))
    bf = HybridBeamformers.from_awvs([np.ones(4)], [np.ones(4)])
    s = np.exp(2j * np.pi * rng.uniform(size=K))
    return h, bf, s, rng


def test_digital_cancel_exact_with_true_estimate():
    h, bf, s, _ = _link()
    y = predict_leakage(h, bf, s)
    r = digital_cancel(y, h, bf, s)
    assert np.max(np.abs(r)) <= 1e-12 * np.max(np.abs(y))


def test_digital_cancel_five_percent_error():
    h, bf, s, rng = _link(1)
    y = predict_leakage(h, bf, s)
    res = []
    for _ in range(50):
        # 5% error magnitude on every subcarrier, random phase
        e = np.exp(2j * np.pi * rng.uniform(size=K))
        r = digital_cancel(y, h * (1 + 0.05 * e), bf, s)
        res.append(np.mean(np.abs(r) ** 2) / np.mean(np.abs(y) ** 2))
    assert 10 * np.log10(np.mean(res)) == pytest.approx(20 * math.log10(0.05), abs=1.0)


def test_digital_cancel_passthrough_and_warning():
    h, bf, s, rng = _link(2)
    y = rng.standard_normal((1, K)) + 1j * rng.standard_normal((1, K))
    with pytest.warns(DegenerateEstimateWarning):
        out = digital_cancel(y, np.zeros_like(h), bf, s)
    np.testing.assert_array_equal(out, y)


def test_digital_cancel_shape_mismatch():
    h, bf, s, _ = _link()
    with pytest.raises(ValueError):
        digital_cancel(np.zeros((1, K + 1)), h, bf, s)


@pytest.fixture(scope="module")
def pipeline():
    cfg = OfdmConfig()
    ap = Node("ap", (0.0, 0.0), A16, n_chains=2)
    b = math.radians(10)
    subj = Scatterer((2 * math.cos(b), 2 * math.sin(b)), 0.5)
    bf = sensing_beamformers(A16, A16, b)
    proc = TxInterference(cfg, A16, A16, seed=3, margin_db=50)
    v = bf.tx_matrix()[:, 0]
    h_ti = proc.for_awv(v, 0)
    est = ti_probe([v], [h_ti], cfg, leak_taps=proc.n_taps, rng_seed=4).per_sector[0]
    zero = np.zeros_like(h_ti)
    snaps = [compose(h_ti, gen_sensing_channel(ap, ap, [subj], cfg), zero, zero) for _ in range(5)]
    s = math.sqrt(dbm_to_mw(10) / cfg.n_subcarriers) * trn_sequence(cfg.n_subcarriers, 1)
    return cancel_pipeline(snaps, bf, est, s, cfg, tx_array=A16, rx_array=A16,
                           mainlobe_targets=[(b, 10 * math.log10(16) - 3)], max_iters=300)


def test_pipeline_suppression_and_floor(pipeline):
    rep = pipeline.report
    assert rep.total_suppression >= 45
    assert rep.power_after_digital <= rep.noise_floor + 10


def test_pipeline_stages_monotone(pipeline):
    rep = pipeline.report
    assert rep.power_before >= rep.power_after_nulling >= rep.power_after_digital
    assert rep.feasible


def test_report_exports(pipeline):
    rep = pipeline.report
    d = json.loads(rep.to_json())
    assert set(d) == set(CancellationReport.csv_header().split(","))
    row = rep.csv_row().split(",")
    assert float(row[0]) == pytest.approx(rep.power_before, rel=1e-8)
    assert row[-1] == "1"


def test_gesture_recovered_only_after_pipeline():
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        r = gesture_recovery(0, n_packets=100)
    assert r.detected_before == 0
    assert r.detected_after == 1
    assert r.s_snr_after >= 10
