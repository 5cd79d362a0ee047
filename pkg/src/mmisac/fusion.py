"""Sensing fusion: EKF tracking, grid-likelihood location fusion over
monostatic and bistatic views, S-SNR and the application extractors
(respiration rate, point clouds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import CirMatrix, background_removal
from .errors import DetectionError, NumericalError

MONOSTATIC = "monostatic"
BISTATIC = "bistatic"


def wrap_angle(a):
    """Map angles to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# EKF
# ---------------------------------------------------------------------------


@dataclass
class TrackState:
    mean: np.ndarray  # (x, y, vx, vy)
    covariance: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(4)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(4, 4)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]


@dataclass(frozen=True)
class Measurement:
    source: str
    mode: str
    bearing: float
    range: float | None = None
    noise: tuple[float, float] = (0.05, math.radians(2.0))  # (sigma range m, sigma bearing rad)

    def __post_init__(self):
        if self.mode not in (MONOSTATIC, BISTATIC):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == BISTATIC and self.range is not None:
            raise ValueError("bistatic measurements carry no range")
        if self.mode == MONOSTATIC and self.range is None:
            raise ValueError("monostatic measurements need a range")
        if min(self.noise) <= 0:
            raise ValueError("measurement noise must be positive")


def _check_psd(p, name="covariance"):
    if not np.allclose(p, p.T, atol=1e-10 * max(1.0, np.abs(p).max())):
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(0.5 * (p + p.T)).min() < -1e-10 * max(1.0, np.abs(p).max()):
        raise ValueError(f"{name} is not positive semi-definite")


def cv_transition(dt: float) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    return f


def process_noise(dt: float, q: float) -> np.ndarray:
    """White-acceleration noise of intensity `q` (m^2/s^3) over `dt`."""
    q1 = np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]]) * q
    out = np.zeros((4, 4))
    out[np.ix_([0, 2], [0, 2])] = q1
    out[np.ix_([1, 3], [1, 3])] = q1
    return out


def ekf_predict(state: TrackState, dt: float, q: float) -> TrackState:
    """Constant-velocity prediction."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if q < 0:
        raise ValueError("q must be non-negative")
    _check_psd(state.covariance)
    f = cv_transition(dt)
    p = f @ state.covariance @ f.T + process_noise(dt, q)
    return TrackState(f @ state.mean, 0.5 * (p + p.T), state.time + dt)


def measurement_model(mean, sensor_pos, mode: str, heading: float = 0.0):
    """Predicted measurement and its Jacobian for a sensor at `sensor_pos`.

    Monostatic: (range, bearing); bistatic: (bearing,).  Bearing is measured
    counter-clockwise from the sensor's `heading`.
    """
    dx = mean[0] - sensor_pos[0]
    dy = mean[1] - sensor_pos[1]
    r2 = dx * dx + dy * dy
    if r2 == 0:
        raise NumericalError("target at the sensor position")
    r = math.sqrt(r2)
    bearing = float(wrap_angle(math.atan2(dy, dx) - heading))
    jb = np.array([-dy / r2, dx / r2, 0.0, 0.0])
    if mode == MONOSTATIC:
        jr = np.array([dx / r, dy / r, 0.0, 0.0])
        return np.array([r, bearing]), np.vstack([jr, jb])
    return np.array([bearing]), jb[None, :]


def ekf_correct(state: TrackState, z, h_pred, jac, r_cov, angle_rows=()) -> TrackState:
    """Generic EKF/KF correction with a Joseph-form covariance update.

    `angle_rows` lists residual components to wrap to [-pi, pi).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    y = z - np.atleast_1d(h_pred)
    for i in angle_rows:
        y[i] = wrap_angle(y[i])
    p = state.covariance
    s = jac @ p @ jac.T + r_cov
    if not np.all(np.isfinite(s)) or np.linalg.cond(s) > 1e14:
        raise NumericalError("innovation covariance is singular")
    k = np.linalg.solve(s.T, (p @ jac.T).T).T
    i_kh = np.eye(len(state.mean)) - k @ jac
    p_new = i_kh @ p @ i_kh.T + k @ r_cov @ k.T
    return TrackState(state.mean + k @ y, 0.5 * (p_new + p_new.T), state.time)


def ekf_update(state: TrackState, meas: Measurement, sensor_pos, heading: float = 0.0) -> TrackState:
    """Fuse one range/bearing (monostatic) or bearing-only (bistatic) fix."""
    h, jac = measurement_model(state.mean, sensor_pos, meas.mode, heading)
    sr, sb = meas.noise
    if meas.mode == MONOSTATIC:
        z = [meas.range, meas.bearing]
        r_cov = np.diag([sr**2, sb**2])
        rows = (1,)
    else:
        z = [meas.bearing]
        r_cov = np.array([[sb**2]])
        rows = (0,)
    return ekf_correct(state, z, h, jac, r_cov, rows)


def raw_fix(meas: Measurement, sensor_pos, heading: float = 0.0) -> np.ndarray:
    """Single-packet position from a monostatic range/bearing pair."""
    if meas.mode != MONOSTATIC:
        raise ValueError("a bearing-only measurement has no position fix")
    a = meas.bearing + heading
    return np.array([sensor_pos[0] + meas.range * math.cos(a), sensor_pos[1] + meas.range * math.sin(a)])


def run_ekf(times, measurements, sensors, x0, p0, q: float = 0.5):
    """Filter a time-ordered list of measurement batches.

    ``measurements[i]`` is a list of :class:`Measurement` taken at
    ``times[i]``; ``sensors`` maps a source id to ``(x, y, heading)``.
    Returns one :class:`TrackState` per time.
    """
    state = TrackState(x0, p0, times[0])
    out = []
    for t, batch in zip(times, measurements):
        if t > state.time:
            state = ekf_predict(state, t - state.time, q)
        for m in batch:
            sx, sy, hd = sensors[m.source]
            state = ekf_update(state, m, (sx, sy), hd)
        out.append(state)
    return out


def track_csv(states) -> str:
    lines = ["t,x,y,vx,vy,trace_p"]
    for s in states:
        x, y, vx, vy = s.mean
        lines.append(
            f"{s.time:.9g},{x:.9g},{y:.9g},{vx:.9g},{vy:.9g},{np.trace(s.covariance):.9g}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# grid-likelihood fusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    resolution: float

    def axes(self):
        nx = int(round((self.x_max - self.x_min) / self.resolution))
        ny = int(round((self.y_max - self.y_min) / self.resolution))
        if nx < 1 or ny < 1:
            raise ValueError("grid has no cells")
        xs = self.x_min + (np.arange(nx) + 0.5) * self.resolution
        ys = self.y_min + (np.arange(ny) + 0.5) * self.resolution
        return xs, ys


@dataclass
class LikelihoodGrid:
    cells: np.ndarray  # [ny, nx], max-normalized
    xs: np.ndarray
    ys: np.ndarray
    resolution: float


@dataclass
class FusionResult:
    grid: LikelihoodGrid
    map_point: tuple[float, float]
    halfmax_area: float


def grid_fuse(measurements, sensors, spec: GridSpec) -> FusionResult:
    """Sum Gaussian log-likelihoods of every measurement over an x-y grid.

    ``sensors`` maps source ids to ``(x, y, heading)``.  The MAP point is the
    best cell center (first in row-major order on ties); ``halfmax_area``
    is the area of cells at or above half the peak likelihood.
    """
    if not measurements:
        raise ValueError("at least one measurement required")
    xs, ys = spec.axes()
    gx, gy = np.meshgrid(xs, ys)
    ll = np.zeros_like(gx)
    for m in measurements:
        sx, sy, hd = sensors[m.source]
        dx, dy = gx - sx, gy - sy
        sr, sb = m.noise
        bearing = np.arctan2(dy, dx) - hd
        ll -= 0.5 * (wrap_angle(bearing - m.bearing) / sb) ** 2
        if m.mode == MONOSTATIC:
            ll -= 0.5 * ((np.hypot(dx, dy) - m.range) / sr) ** 2
    like = np.exp(ll - ll.max())
    iy, ix = np.unravel_index(int(np.argmax(like)), like.shape)
    area = float(np.count_nonzero(like >= 0.5)) * spec.resolution**2
    return FusionResult(LikelihoodGrid(like, xs, ys, spec.resolution), (float(xs[ix]), float(ys[iy])), area)


# ---------------------------------------------------------------------------
# S-SNR
# ---------------------------------------------------------------------------


def s_snr(signal, residual_plus_noise) -> float:
    """``10 log10`` of the power of the (background-removed) subject-tap
    series over that of the residual interference plus noise series."""
    sig = np.asarray(signal)
    res = np.asarray(residual_plus_noise)
    den = float(np.mean(np.abs(res) ** 2)) if res.size else 0.0
    if den <= 0:
        raise ValueError("residual-plus-noise energy must be positive")
    num = float(np.mean(np.abs(sig) ** 2))
    return 10 * math.log10(max(num, 1e-300) / den)


def noise_taps(n_taps: int) -> np.ndarray:
    """Taps assumed free of reflections: the last quarter of the CIR."""
    return np.arange(3 * n_taps // 4, n_taps)


def tap_s_snr(cir: CirMatrix, subject_tap: int, reference_taps=None) -> float:
    """S-SNR of a CIR matrix: background-removed subject tap against the
    background-removed reference (noise-only) taps."""
    bg = background_removal(cir).taps
    ref = noise_taps(cir.n_taps) if reference_taps is None else reference_taps
    return s_snr(bg[subject_tap], bg[ref])


def sanitize_bistatic(cir: np.ndarray, los_tap: int | None = None) -> np.ndarray:
    """Remove per-packet timing and phase offsets of an unsynchronized link.

    `cir` is ``[n_taps, n_packets]``.  Each packet is circularly shifted so
    its direct-path (strongest) tap lands on `los_tap` (default: the median
    position), then de-rotated by that tap's phase.
    """
    cir = np.asarray(cir, dtype=complex)
    peaks = np.argmax(np.abs(cir), axis=0)
    ref = int(np.median(peaks)) if los_tap is None else los_tap
    out = np.empty_like(cir)
    for p in range(cir.shape[1]):
        col = np.roll(cir[:, p], ref - peaks[p])
        phase = col[ref] / max(abs(col[ref]), 1e-300)
        out[:, p] = col * np.conj(phase)
    return out


# ---------------------------------------------------------------------------
# respiration
# ---------------------------------------------------------------------------


def _circle_center(z: np.ndarray) -> complex:
    """Algebraic least-squares circle fit of complex samples."""
    x, y = z.real, z.imag
    a = np.column_stack([x, y, np.ones_like(x)])
    b = x * x + y * y
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    return complex(sol[0] / 2, sol[1] / 2)


def respiration_rate(
    cir: CirMatrix,
    subject_tap: int,
    band=(0.1, 0.5),
    min_duration: float = 30.0,
    motion_snr_db: float = 6.0,
    peak_ratio: float = 20.0,
) -> float:
    """Breathing rate (per minute) from the phase of the subject's tap.

    The tap's slow-time samples trace an arc around the static reflection;
    the arc center is fitted and removed, and the unwrapped phase tracks the
    chest displacement.  The strongest in-band spectral line is returned.
    Raises :class:`DetectionError` when the tap shows no motion above the
    noise taps or the spectral line does not stand out.
    """
    duration = cir.n_packets * cir.packet_interval
    if duration < min_duration:
        raise ValueError(f"need >= {min_duration} s of packets, got {duration:.1f} s")
    if tap_s_snr(cir, subject_tap) < motion_snr_db:
        raise DetectionError("no motion at the subject tap")
    z = cir.taps[subject_tap]
    phase = np.unwrap(np.angle(z - _circle_center(z)))
    phase = phase - np.polyval(np.polyfit(np.arange(phase.size), phase, 1), np.arange(phase.size))
    n_fft = max(8 * phase.size, 4096)
    spec = np.abs(np.fft.rfft(phase * np.hanning(phase.size), n_fft)) ** 2
    freqs = np.fft.rfftfreq(n_fft, cir.packet_interval)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    if not in_band.any():
        raise ValueError("band outside the slow-time spectrum")
    k = np.flatnonzero(in_band)[int(np.argmax(spec[in_band]))]
    if spec[k] < peak_ratio * np.median(spec[1:]):
        raise DetectionError("no breathing line above the spectral floor")
    return float(freqs[k] * 60.0)


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------


@dataclass
class Scan:
    """Per-(azimuth, elevation) scan: peak power (dB) and its range (m)."""

    azimuths: np.ndarray
    elevations: np.ndarray
    power_db: np.ndarray  # [n_az, n_el]
    ranges: np.ndarray  # [n_az, n_el]

    def __post_init__(self):
        shape = (len(self.azimuths), len(self.elevations))
        if np.shape(self.power_db) != shape or np.shape(self.ranges) != shape:
            raise ValueError("scan arrays do not match the angle grids")


def point_cloud(scan: Scan, threshold_db: float) -> np.ndarray:
    """Cells above `threshold_db` mapped to Cartesian points, shape [N, 3]."""
    if scan.power_db.size == 0:
        raise ValueError("empty scan")
    ia, ie = np.nonzero(np.asarray(scan.power_db) >= threshold_db)
    az = np.asarray(scan.azimuths)[ia]
    el = np.asarray(scan.elevations)[ie]
    r = np.asarray(scan.ranges)[ia, ie]
    return np.column_stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)])


def synthetic_scan(reflectors, azimuths, elevations, beamwidth: float, range_bin: float,
                   noise_db: float = -60.0) -> Scan:
    """Scan of point reflectors ``(az, el, range, power_db)`` with a
    separable Gaussian beam of 3 dB width `beamwidth`; each cell records its
    strongest contributor's power and range quantized to `range_bin`."""
    azimuths = np.asarray(azimuths, dtype=float)
    elevations = np.asarray(elevations, dtype=float)
    a, e = np.meshgrid(azimuths, elevations, indexing="ij")
    best = np.full(a.shape, noise_db)
    ranges = np.zeros(a.shape)
    # Gaussian beam: -3 dB at +-beamwidth/2
    c = 3.0 / (beamwidth / 2) ** 2
    for az, el, r, p_db in reflectors:
        p = p_db - c * ((a - az) ** 2 + (e - el) ** 2)
        upd = p > best
        best = np.where(upd, p, best)
        ranges = np.where(upd, np.round(r / range_bin) * range_bin, ranges)
    return Scan(azimuths, elevations, best, ranges)


def xyz_text(points) -> str:
    return "".join(f"{x:.6f} {y:.6f} {z:.6f}\n" for x, y, z in np.asarray(points).reshape(-1, 3))
