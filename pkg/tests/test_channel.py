import math

import numpy as np
import pytest

from mmisac.array import SPEED_OF_LIGHT, PhasedArray
from mmisac.channel import (
    CirMatrix,
    HybridBeamformers,
    Motion,
    Node,
    OfdmConfig,
    Scatterer,
    TxInterference,
    apply_link,
    background_removal,
    cir_to_csi,
    compose,
    csi_to_cir,
    free_space_loss_db,
    gen_comm_channel,
    gen_sensing_channel,
    gen_tx_interference,
    reference_sensing_power,
    sector_interference_profile,
)

CFG = OfdmConfig()
SMALL = OfdmConfig(n_subcarriers=64)


def nodes(d=3.0, m=4):
    arr = PhasedArray(m)
    return Node("a", (0.0, 0.0), arr), Node("b", (d, 0.0), arr, heading=math.pi)


@pytest.mark.parametrize("kw", [dict(n_subcarriers=100), dict(bandwidth=0.0), dict(noise_power=math.inf)])
def test_ofdm_invariants(kw):
    with pytest.raises(ValueError):
        OfdmConfig(**kw)


def test_range_bin_is_7_5_cm():
    assert CFG.range_bin == pytest.approx(0.0749, abs=1e-4)


def test_scatterer_rejects_nonpositive_rcs():
    with pytest.raises(ValueError):
        Scatterer((1.0, 0.0), 0.0)


def test_pure_los_constant_magnitude():
    a, b = nodes()
    h = gen_comm_channel(a, b, SMALL, np.inf)
    mags = np.abs(h[0, 0])
    np.testing.assert_allclose(mags, mags[0])


def test_los_free_space_loss_3m():
    # 20 log10(4 pi d / lambda) at 3 m, 60 GHz
    assert free_space_loss_db(3.0, 60e9) == pytest.approx(77.5, abs=0.1)
    a, b = nodes(3.0, 1)
    h = gen_comm_channel(a, b, SMALL, np.inf)
    assert -20 * np.log10(abs(h[0, 0, 0])) == pytest.approx(free_space_loss_db(3.0, 60e9), abs=1e-9)


def test_rician_k_factor_ensemble():
    a, b = nodes(3.0, 1)
    los = gen_comm_channel(a, b, SMALL, np.inf)[0, 0]
    k_db = 10.0
    k = 10 ** (k_db / 10)
    scatter = []
    for seed in range(1000):
        h = gen_comm_channel(a, b, SMALL, k_db, rng_seed=seed)[0, 0]
        scatter.append(h - math.sqrt(k / (k + 1)) * los)
    p_los = np.mean(np.abs(math.sqrt(k / (k + 1)) * los) ** 2)
    p_nlos = np.mean(np.abs(np.array(scatter)) ** 2)
    assert 10 * np.log10(p_los / p_nlos) == pytest.approx(k_db, abs=0.5)


def test_comm_channel_deterministic_and_coincident():
    a, b = nodes()
    np.testing.assert_array_equal(gen_comm_channel(a, b, SMALL, 10, 3), gen_comm_channel(a, b, SMALL, 10, 3))
    with pytest.raises(ValueError):
        gen_comm_channel(a, a, SMALL)


def test_sensing_empty_is_zero():
    a, _ = nodes()
    assert not gen_sensing_channel(a, a, [], SMALL).any()


def test_monostatic_peak_tap_40_at_3m():
    ap = Node("ap", (0.0, 0.0), PhasedArray(1))
    # exact bin center: tap 40 <-> R = 40 * c / (2B)
    r = 40 * SPEED_OF_LIGHT / (2 * CFG.bandwidth)
    h = gen_sensing_channel(ap, ap, [Scatterer((r, 0.0))], CFG)
    assert int(np.argmax(np.abs(csi_to_cir(h[0, 0])))) == 40
    assert abs(r - 3.0) < 0.01


def test_two_subjects_four_taps_apart():
    ap = Node("ap", (0.0, 0.0), PhasedArray(1))
    rb = CFG.range_bin
    h = gen_sensing_channel(ap, ap, [Scatterer((40 * rb, 0.0)), Scatterer((44 * rb, 0.0))], CFG)
    cir = np.abs(csi_to_cir(h[0, 0]))
    assert sorted(np.argsort(cir)[-2:]) == [40, 44]


def test_radar_r4_law():
    ap = Node("ap", (0.0, 0.0), PhasedArray(1))
    p1 = np.sum(np.abs(gen_sensing_channel(ap, ap, [Scatterer((2.0, 0.0))], SMALL)) ** 2)
    p2 = np.sum(np.abs(gen_sensing_channel(ap, ap, [Scatterer((4.0, 0.0))], SMALL)) ** 2)
    assert 10 * np.log10(p1 / p2) == pytest.approx(12.04, abs=0.1)


def test_sensing_subject_on_node_rejected():
    ap = Node("ap", (0.0, 0.0), PhasedArray(1))
    with pytest.raises(ValueError):
        gen_sensing_channel(ap, ap, [Scatterer((0.0, 0.0))], SMALL)


def test_tx_interference_rho_one_is_static():
    h0 = gen_tx_interference(SMALL, 16, 0, rng_seed=1, rho=1.0, tx_array=PhasedArray(4), rx_array=PhasedArray(4))
    h5 = gen_tx_interference(SMALL, 16, 5, rng_seed=1, rho=1.0, tx_array=PhasedArray(4), rx_array=PhasedArray(4))
    np.testing.assert_allclose(h0, h5)


def test_tx_interference_ar1_correlation():
    proc = TxInterference(SMALL, PhasedArray(4), PhasedArray(4), seed=3, rho=0.9)
    n = 200
    x = np.array([proc.coefficients(t)[0, 0] for t in range(n)])
    r1 = np.vdot(x[:-1], x[1:]).real / np.vdot(x, x).real
    assert r1 == pytest.approx(0.9, abs=3 / math.sqrt(n))


def test_tx_interference_peaks_at_boresight():
    proc = TxInterference(SMALL, PhasedArray(16), PhasedArray(16), seed=0)
    prof = sector_interference_profile(proc)
    assert int(np.argmax(prof)) in (15, 16)


def test_tx_interference_margin():
    # interference through a unit-norm boresight beam vs. a 1 m^2 reflector
    # at 1 m through the same beam, averaged over realizations
    v = np.ones(16) / 4
    ratios = []
    for seed in range(40):
        proc = TxInterference(SMALL, PhasedArray(16), PhasedArray(16), seed=seed, margin_db=50)
        g = np.einsum("rtk,t->rk", proc.coupling(0), v)
        ratios.append(np.mean(np.abs(g) ** 2) / reference_sensing_power(SMALL, 16))
    assert 10 * np.log10(np.mean(ratios)) == pytest.approx(50, abs=1.0)


def test_tx_interference_rho_out_of_range():
    with pytest.raises(ValueError):
        gen_tx_interference(SMALL, 0, 0, rho=1.5)


def test_compose_total_and_shapes():
    rng = np.random.default_rng(0)
    a, b, c, d = (rng.standard_normal((2, 3, 4)) + 0j for _ in range(4))
    z = np.zeros_like(a)
    np.testing.assert_array_equal(compose(z, z, a, z).total(), a)
    np.testing.assert_allclose(compose(a, b, c, d).total(), a + b + c + d)
    np.testing.assert_allclose(compose(2 * a, z, z, z).total(), 2 * compose(a, z, z, z).total())
    with pytest.raises(ValueError):
        compose(a, b, c, np.zeros((2, 3, 5)))


def test_apply_link_identity_and_linearity():
    rng = np.random.default_rng(1)
    h = rng.standard_normal((3, 3, 8)) + 1j * rng.standard_normal((3, 3, 8))
    bf = HybridBeamformers.identity(3, 3)
    s1 = rng.standard_normal(3) + 0j
    s2 = rng.standard_normal(3) + 0j
    cfg = OfdmConfig(n_subcarriers=8)
    y = apply_link(h, bf, s1, cfg, noise=False)
    np.testing.assert_allclose(y, np.einsum("rtk,t->rk", h, s1))
    assert not apply_link(h, bf, np.zeros(3), cfg, noise=False).any()
    np.testing.assert_allclose(
        apply_link(h, bf, s1 + s2, cfg, noise=False),
        apply_link(h, bf, s1, cfg, noise=False) + apply_link(h, bf, s2, cfg, noise=False),
    )
    with pytest.raises(ValueError):
        apply_link(h, HybridBeamformers.identity(2, 3), s1, cfg)


def test_csi_cir_examples():
    n = 64
    cir = csi_to_cir(np.ones(n))
    assert abs(cir[0]) == pytest.approx(math.sqrt(n))
    assert np.abs(cir[1:]).max() < 1e-12
    k = np.arange(n)
    shifted = csi_to_cir(np.exp(-2j * np.pi * k * 5 / n))
    assert int(np.argmax(np.abs(shifted))) == 5


def test_parseval_and_round_trip():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(512) + 1j * rng.standard_normal(512)
    y = csi_to_cir(x)
    assert abs(np.sum(np.abs(x) ** 2) - np.sum(np.abs(y) ** 2)) <= 1e-10 * np.sum(np.abs(x) ** 2)
    np.testing.assert_allclose(cir_to_csi(y), x, atol=1e-12)


def test_background_removal():
    static = np.tile(np.arange(8)[:, None] + 1j, (1, 50))
    assert not background_removal(CirMatrix(static, 1e-9, 0.01)).taps.any()
    moving = static.copy()
    moving[3] += np.sin(2 * np.pi * np.arange(50) / 10)
    out = background_removal(CirMatrix(moving, 1e-9, 0.01)).taps
    p = np.mean(np.abs(out) ** 2, axis=1)
    others = np.delete(p, 3)
    assert np.all(others <= p[3] * 1e-6)
    np.testing.assert_allclose(out.mean(axis=1), 0, atol=1e-12)
    with pytest.raises(ValueError):
        background_removal(CirMatrix(static[:, :1], 1e-9, 0.01))


def test_cir_matrix_from_csi_shape():
    m = CirMatrix.from_csi(np.ones((5, 64)), SMALL, 0.01)
    assert (m.n_taps, m.n_packets) == (64, 5)
    with pytest.raises(ValueError):
        CirMatrix.from_csi(np.ones((5, 32)), SMALL, 0.01)


def test_motion_models():
    assert np.allclose(Motion().offset(3.0), 0)
    assert np.allclose(Motion("constant-velocity", velocity=(1.0, 2.0)).offset(0.5), [0.5, 1.0])
    m = Motion("sinusoidal-displacement", amplitude=0.01, frequency=0.25, direction=(0, 2))
    assert np.allclose(m.offset(1.0), [0, 0.01])
    with pytest.raises(ValueError):
        Motion("teleport")
