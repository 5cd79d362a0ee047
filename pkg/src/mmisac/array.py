"""Uniform linear phased arrays: steering, gain, quantized AWVs and codebooks.

Bearings are azimuth angles in radians measured from the array broadside,
positive counter-clockwise, restricted to [-pi/2, pi/2].  An AWV (antenna
weight vector) is a plain complex ndarray with one entry per element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError

SPEED_OF_LIGHT = 299_792_458.0

GAIN_FLOOR_DB = -300.0

# Finest receive beamwidth offered by the hardware scan mode.  It is narrower
# than a 16-element ULA can physically form; kept as a configuration value.
FINEST_RX_BEAMWIDTH = np.radians(1.5)

_BEARING_SLACK = 1e-12


@dataclass(frozen=True)
class PhasedArray:
    """An M-element uniform linear array."""

    element_count: int
    spacing: float = 0.5
    carrier_freq: float = 60e9
    phase_bits: int = 4
    amp_bits: int = 4

    def __post_init__(self):
        if self.element_count < 1:
            raise ValueError("element_count must be >= 1")
        if not (1 <= self.phase_bits <= 8 and 1 <= self.amp_bits <= 8):
            raise ValueError("phase_bits and amp_bits must lie in [1, 8]")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq


@dataclass(frozen=True)
class BeamPattern:
    bearings: np.ndarray
    gains: np.ndarray
    main_lobe: float
    beamwidth_3db: float


def _check_bearing(bearing) -> np.ndarray:
    b = np.asarray(bearing, dtype=float)
    if np.any(np.abs(b) > np.pi / 2 + _BEARING_SLACK) or not np.all(np.isfinite(b)):
        raise ValueError(f"bearing outside [-pi/2, pi/2]: {bearing!r}")
    return b


def steering_vector(array: PhasedArray, bearing: float) -> np.ndarray:
    """Unit-magnitude response of each element to a plane wave from `bearing`."""
    b = float(_check_bearing(bearing))
    m = np.arange(array.element_count)
    return np.exp(1j * 2 * np.pi * array.spacing * m * np.sin(b))


def steering_matrix(array: PhasedArray, bearings) -> np.ndarray:
    """Steering vectors stacked as rows, shape (len(bearings), M)."""
    b = np.atleast_1d(_check_bearing(bearings))
    m = np.arange(array.element_count)
    return np.exp(1j * 2 * np.pi * array.spacing * np.outer(np.sin(b), m))


def _check_awv(awv, array: PhasedArray) -> np.ndarray:
    w = np.asarray(awv, dtype=complex)
    if w.shape != (array.element_count,):
        raise ValueError(
            f"AWV length {w.shape} does not match {array.element_count} elements"
        )
    return w


def _to_db(power) -> np.ndarray:
    power = np.asarray(power, dtype=float)
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(power)
    return np.maximum(db, GAIN_FLOOR_DB)


def array_gain(awv, array: PhasedArray, bearing) -> float | np.ndarray:
    """Beamforming gain 10*log10(|a(bearing)^H w|^2) in dB.

    Accepts a scalar bearing or an array of bearings.  A zero AWV reports
    GAIN_FLOOR_DB instead of -inf.
    """
    w = _check_awv(awv, array)
    scalar = np.ndim(bearing) == 0
    a = steering_matrix(array, bearing)
    g = _to_db(np.abs(a.conj() @ w) ** 2)
    return float(g[0]) if scalar else g


def beam_pattern(awv, array: PhasedArray, n_points: int = 3601) -> BeamPattern:
    """Sample the pattern of `awv` over the full azimuth field of view."""
    bearings = np.linspace(-np.pi / 2, np.pi / 2, n_points)
    gains = array_gain(awv, array, bearings)
    peak = int(np.argmax(gains))
    above = gains >= gains[peak] - 10 * np.log10(2)
    lo = peak
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = peak
    while hi < n_points - 1 and above[hi + 1]:
        hi += 1
    width = bearings[hi] - bearings[lo]
    if width <= 0:
        width = bearings[1] - bearings[0]
    return BeamPattern(bearings, gains, float(bearings[peak]), float(width))


def quantize(awv, phase_bits: int, amp_bits: int) -> np.ndarray:
    """Snap each weight to the phase/amplitude grid of the phase shifters.

    Phases go to the nearest of 2**phase_bits levels on [0, 2*pi); amplitudes
    go to the nearest multiple of 2**-amp_bits in [0, 1], which bounds the
    amplitude error by 2**-(amp_bits + 1).
    """
    if phase_bits < 1 or amp_bits < 1:
        raise ValueError("bit widths must be >= 1")
    w = np.asarray(awv, dtype=complex)
    levels = 2**phase_bits
    step = 2 * np.pi / levels
    k = np.round(np.mod(np.angle(w), 2 * np.pi) / step) % levels
    amp_scale = 2**amp_bits
    amp = np.clip(np.round(np.abs(w) * amp_scale), 0, amp_scale) / amp_scale
    return amp * np.exp(1j * k * step)


def quantize_for(awv, array: PhasedArray) -> np.ndarray:
    return quantize(awv, array.phase_bits, array.amp_bits)


def sector_centers(n_sectors: int) -> np.ndarray:
    """Equally spaced sector centers tiling [-pi/2, pi/2]."""
    if n_sectors < 1:
        raise ValueError("n_sectors must be >= 1")
    width = np.pi / n_sectors
    return -np.pi / 2 + (np.arange(n_sectors) + 0.5) * width


def sector_codebook(array: PhasedArray, n_sectors: int) -> list[np.ndarray]:
    """Quantized steering AWVs, one per sector center."""
    return [quantize_for(steering_vector(array, c), array) for c in sector_centers(n_sectors)]


def quasi_omni(array: PhasedArray) -> np.ndarray:
    """Single active element: a flat 0 dB pattern across the field of view."""
    w = np.zeros(array.element_count, dtype=complex)
    w[0] = 1.0
    return w


def subarray_beamwidth(array: PhasedArray, n_active: int, center: float = 0.0) -> float:
    """3 dB beamwidth of the first `n_active` elements steered at `center`."""
    w = np.zeros(array.element_count, dtype=complex)
    w[:n_active] = steering_vector(array, center)[:n_active]
    return beam_pattern(w, array, n_points=20001).beamwidth_3db


def widen_beam(array: PhasedArray, center: float, target_width: float) -> np.ndarray:
    """Trade aperture for width: keep the largest element subset that is at
    least `target_width` wide at 3 dB, steered at `center`."""
    _check_bearing(center)
    natural = subarray_beamwidth(array, array.element_count, center)
    # sampling grid resolution of subarray_beamwidth
    slack = np.pi / 20000
    if target_width < natural - slack:
        raise InfeasibleError(
            f"target width {np.degrees(target_width):.2f} deg is narrower than the "
            f"full-aperture width {np.degrees(natural):.2f} deg"
        )
    n_active = 1
    for n in range(array.element_count, 0, -1):
        if subarray_beamwidth(array, n, center) >= target_width - slack:
            n_active = n
            break
    w = np.zeros(array.element_count, dtype=complex)
    w[:n_active] = steering_vector(array, center)[:n_active]
    return w
