import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmisac.array import (
    FINEST_RX_BEAMWIDTH,
    GAIN_FLOOR_DB,
    PhasedArray,
    array_gain,
    beam_pattern,
    quantize,
    quasi_omni,
    sector_centers,
    sector_codebook,
    steering_vector,
    subarray_beamwidth,
    widen_beam,
)
from mmisac.errors import InfeasibleError

A16 = PhasedArray(16)


@pytest.mark.parametrize(
    "kwargs",
    [dict(element_count=0), dict(element_count=4, phase_bits=0), dict(element_count=4, amp_bits=9),
     dict(element_count=4, spacing=0.0)],
)
def test_array_invariants_rejected(kwargs):
    with pytest.raises(ValueError):
        PhasedArray(**kwargs)


def test_steering_boresight_all_ones():
    np.testing.assert_allclose(steering_vector(A16, 0.0), np.ones(16))


def test_steering_endfire_two_elements():
    np.testing.assert_allclose(steering_vector(PhasedArray(2), np.pi / 2), [1, -1], atol=1e-12)


def test_steering_dft_grid_orthogonal():
    # sin(theta) = 2k/M puts steering vectors on DFT columns
    a = steering_vector(A16, np.arcsin(2 * 1 / 16))
    b = steering_vector(A16, np.arcsin(2 * 3 / 16))
    assert abs(np.vdot(a, b)) < 1e-10


@pytest.mark.parametrize("bearing", [np.pi / 2 + 1e-3, -2.0, np.nan])
def test_steering_domain_error(bearing):
    with pytest.raises(ValueError):
        steering_vector(A16, bearing)


@given(st.floats(-np.pi / 2, np.pi / 2))
def test_steering_unit_magnitude(b):
    np.testing.assert_allclose(np.abs(steering_vector(A16, b)), 1.0)


def test_uniform_gain_boresight():
    assert array_gain(np.ones(16), A16, 0.0) == pytest.approx(20 * np.log10(16), abs=1e-12)


def test_zero_awv_reports_floor():
    assert array_gain(np.zeros(16), A16, 0.3) == GAIN_FLOOR_DB


def test_gain_length_mismatch():
    with pytest.raises(ValueError):
        array_gain(np.ones(8), A16, 0.0)


def test_matched_gain_is_maximal():
    for b in np.radians([-50, -10, 0, 25, 70]):
        w = steering_vector(A16, b)
        sweep = array_gain(w, A16, np.linspace(-np.pi / 2, np.pi / 2, 2001))
        assert array_gain(w, A16, b) >= sweep.max() - 1e-9


def test_codebook_one_sector_is_boresight():
    (w,) = sector_codebook(A16, 1)
    assert beam_pattern(w, A16).main_lobe == pytest.approx(0.0, abs=1e-3)


def test_codebook_32_sectors_peak_near_center():
    cb = sector_codebook(A16, 32)
    centers = sector_centers(32)
    half = np.pi / 32 / 2
    assert len(cb) == 32
    for w, c in zip(cb, centers):
        pat = beam_pattern(w, A16, 20001)
        # ties count: at endfire the two directions alias with d = lambda/2
        near = np.abs(pat.bearings - c) <= half + 1e-9
        assert pat.gains[near].max() >= pat.gains.max() - 1e-9


def test_codebook_outgains_quasi_omni():
    q = quasi_omni(A16)
    for w, c in zip(sector_codebook(A16, 32), sector_centers(32)):
        assert array_gain(w, A16, c) > array_gain(q, A16, c)


def test_quasi_omni_weights_and_flatness():
    q = quasi_omni(A16)
    np.testing.assert_array_equal(q, np.r_[1, np.zeros(15)])
    assert abs(array_gain(q, A16, 0.0) - array_gain(q, A16, np.pi / 4)) <= 3.0
    g = array_gain(q, A16, sector_centers(32))
    assert g.min() >= g.max() - 3.0


def test_quantize_examples():
    assert np.angle(quantize(np.exp(0j), 4, 4)) == 0
    assert np.angle(quantize(np.exp(0.3j), 4, 4)) == pytest.approx(2 * np.pi / 16)


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_quantize_error_bounds_and_idempotence(pb, ab, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0, 1, 16) * np.exp(1j * rng.uniform(0, 2 * np.pi, 16))
    q = quantize(w, pb, ab)
    dphi = np.angle(q * np.conj(w))
    keep = np.abs(q) > 0
    assert np.all(np.abs(dphi[keep]) <= np.pi / 2**pb + 1e-12)
    assert np.all(np.abs(np.abs(q) - np.abs(w)) <= 2.0 ** -(ab + 1) + 1e-12)
    np.testing.assert_allclose(quantize(q, pb, ab), q, atol=1e-12)


def test_quantize_rejects_zero_bits():
    with pytest.raises(ValueError):
        quantize(np.ones(4), 0, 4)


def test_widen_natural_width_is_full_aperture():
    natural = subarray_beamwidth(A16, 16)
    np.testing.assert_allclose(widen_beam(A16, 0.0, natural), steering_vector(A16, 0.0))


def test_widen_doubling_costs_about_6db():
    natural = subarray_beamwidth(A16, 16)
    g1 = array_gain(widen_beam(A16, 0.0, natural), A16, 0.0)
    g2 = array_gain(widen_beam(A16, 0.0, 2 * natural), A16, 0.0)
    assert g1 - g2 == pytest.approx(6.0, abs=1.0)


def test_widen_gain_non_increasing():
    natural = subarray_beamwidth(A16, 16, 0.2)
    gains = [array_gain(widen_beam(A16, 0.2, w), A16, 0.2) for w in np.linspace(natural, 8 * natural, 25)]
    assert np.all(np.diff(gains) <= 1e-9)


def test_widen_too_narrow_is_infeasible():
    with pytest.raises(InfeasibleError):
        widen_beam(A16, 0.0, np.radians(1.0))


def test_finest_rx_beamwidth_config():
    assert np.degrees(FINEST_RX_BEAMWIDTH) == pytest.approx(1.5)
