"""Four-component mmWave MIMO channel, hybrid beamformed links and CSI/CIR.

Channel tensors are complex arrays shaped ``[rx_elements, tx_elements,
n_subcarriers]``.  Paths towards the receiver are steered with
``a_rx(theta_rx)`` and leave the transmitter along ``conj(a_tx(theta_tx))``
so that a transmit AWV ``w`` sees the gain ``a_tx^H w``.  Powers are in mW,
amplitudes in sqrt(mW).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .array import SPEED_OF_LIGHT, PhasedArray, sector_codebook, sector_centers


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    mw = np.asarray(mw, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(mw)


@dataclass(frozen=True)
class OfdmConfig:
    """OFDM numerology; `noise_power` is the per-subcarrier noise variance in dBm."""

    n_subcarriers: int = 512
    bandwidth: float = 2e9
    carrier: float = 60e9
    noise_power: float = -98.0

    def __post_init__(self):
        n = self.n_subcarriers
        if n < 1 or n & (n - 1):
            raise ValueError("n_subcarriers must be a power of two")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not math.isfinite(self.noise_power):
            raise ValueError("noise_power must be finite")

    @property
    def sample_time(self) -> float:
        return 1.0 / self.bandwidth

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier

    @property
    def range_bin(self) -> float:
        """Monostatic range resolution c / (2B)."""
        return SPEED_OF_LIGHT / (2 * self.bandwidth)

    @property
    def noise_var(self) -> float:
        return float(dbm_to_mw(self.noise_power))

    @property
    def subcarrier_freqs(self) -> np.ndarray:
        """Baseband subcarrier offsets k*B/N, k = 0..N-1."""
        return np.arange(self.n_subcarriers) * self.bandwidth / self.n_subcarriers

    def delay_phasor(self, delay: float) -> np.ndarray:
        return np.exp(-2j * np.pi * self.subcarrier_freqs * delay)


@dataclass(frozen=True)
class Motion:
    """Motion model of a scatterer: static, constant-velocity or sinusoidal."""

    kind: str = "static"
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: float = 0.0
    frequency: float = 0.0
    direction: tuple[float, float] = (1.0, 0.0)
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("static", "constant-velocity", "sinusoidal-displacement"):
            raise ValueError(f"unknown motion kind {self.kind!r}")

    def offset(self, t: float) -> np.ndarray:
        if self.kind == "constant-velocity":
            return np.asarray(self.velocity, dtype=float) * t
        if self.kind == "sinusoidal-displacement":
            u = np.asarray(self.direction, dtype=float)
            u = u / np.linalg.norm(u)
            return u * self.amplitude * np.sin(2 * np.pi * self.frequency * t + self.phase)
        return np.zeros(2)


@dataclass(frozen=True)
class Scatterer:
    position: tuple[float, float]
    rcs: float = 1.0
    motion: Motion = field(default_factory=Motion)
    name: str = ""

    def __post_init__(self):
        if not self.rcs > 0:
            raise ValueError("rcs must be positive")
        if not np.all(np.isfinite(self.position)):
            raise ValueError("position must be finite")

    def position_at(self, t: float) -> np.ndarray:
        return np.asarray(self.position, dtype=float) + self.motion.offset(t)


@dataclass(frozen=True)
class Node:
    """An AP or UE: a ULA at `position` whose broadside points along `heading`."""

    name: str
    position: tuple[float, float]
    array: PhasedArray = field(default_factory=lambda: PhasedArray(16))
    n_chains: int = 1
    heading: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.position)):
            raise ValueError("position must be finite")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")

    def bearing_to(self, point) -> float:
        """Bearing of `point` from this node's broadside, folded into
        [-pi/2, pi/2] (a ULA cannot tell front from back)."""
        d = np.asarray(point, dtype=float) - np.asarray(self.position, dtype=float)
        ang = math.atan2(d[1], d[0]) - self.heading
        ang = (ang + math.pi) % (2 * math.pi) - math.pi
        if ang > math.pi / 2:
            ang = math.pi - ang
        elif ang < -math.pi / 2:
            ang = -math.pi - ang
        return ang

    def distance_to(self, point) -> float:
        return float(np.linalg.norm(np.asarray(point, float) - np.asarray(self.position, float)))


@dataclass
class Scene:
    aps: list[Node]
    ues: list[Node] = field(default_factory=list)
    subjects: list[Scatterer] = field(default_factory=list)


def _steer(array: PhasedArray, bearing: float) -> np.ndarray:
    m = np.arange(array.element_count)
    return np.exp(2j * np.pi * array.spacing * m * np.sin(bearing))


def free_space_loss_db(distance: float, carrier: float) -> float:
    """Friis free-space loss 20*log10(4*pi*d/lambda)."""
    lam = SPEED_OF_LIGHT / carrier
    return 20 * math.log10(4 * math.pi * distance / lam)


def radar_amplitude(d_tx: float, d_rx: float, rcs: float, carrier: float) -> float:
    """Field amplitude of a point reflector from the bistatic radar equation."""
    lam = SPEED_OF_LIGHT / carrier
    return math.sqrt(lam**2 * rcs / ((4 * math.pi) ** 3 * d_tx**2 * d_rx**2))


_MIN_SEPARATION = 1e-6


def _path_tensor(rx: Node, tx: Node, rx_bearing, tx_bearing, gain, delay, cfg) -> np.ndarray:
    a_rx = _steer(rx.array, rx_bearing)
    a_tx = _steer(tx.array, tx_bearing)
    return gain * np.einsum("r,t,k->rtk", a_rx, a_tx.conj(), cfg.delay_phasor(delay))


def gen_comm_channel(
    tx: Node, rx: Node, cfg: OfdmConfig, k_factor: float = 10.0, rng_seed=None
) -> np.ndarray:
    """Rician point-to-point channel: geometric LoS plus i.i.d. scattering.

    `k_factor` is the LoS/scattered power ratio in dB; ``np.inf`` gives pure
    LoS.  The LoS term carries Friis path loss and the carrier phase.
    """
    if not np.isfinite(k_factor) and k_factor < 0:
        raise ValueError("k_factor must be finite or +inf")
    d = tx.distance_to(rx.position)
    if d < _MIN_SEPARATION:
        raise ValueError("transmitter and receiver coincide")
    delay = d / SPEED_OF_LIGHT
    amp = cfg.wavelength / (4 * math.pi * d)
    gain = amp * np.exp(-2j * np.pi * cfg.carrier * delay)
    los = _path_tensor(rx, tx, rx.bearing_to(tx.position), tx.bearing_to(rx.position), gain, delay, cfg)
    if np.isposinf(k_factor):
        return los
    k_lin = 10 ** (k_factor / 10)
    rng = np.random.default_rng(rng_seed)
    scatter = amp * (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / math.sqrt(2)
    return math.sqrt(k_lin / (k_lin + 1)) * los + math.sqrt(1 / (k_lin + 1)) * scatter


def gen_sensing_channel(
    tx: Node,
    rx: Node,
    subjects,
    cfg: OfdmConfig,
    t: float = 0.0,
    timing_offset_taps: float = 0.0,
) -> np.ndarray:
    """Reflections off point scatterers at time `t`.

    Monostatic when `tx` and `rx` are co-located (delay 2R/c), bistatic
    otherwise (delay of tx -> subject -> rx).  `timing_offset_taps` adds a
    constant receive delay, e.g. the packet-detection offset that loopback
    calibration removes.
    """
    shape = (rx.array.element_count, tx.array.element_count, cfg.n_subcarriers)
    h = np.zeros(shape, dtype=complex)
    for s in subjects:
        p = s.position_at(t)
        d_tx = tx.distance_to(p)
        d_rx = rx.distance_to(p)
        if d_tx < _MIN_SEPARATION or d_rx < _MIN_SEPARATION:
            raise ValueError("subject coincides with a node")
        delay = (d_tx + d_rx) / SPEED_OF_LIGHT
        alpha = radar_amplitude(d_tx, d_rx, s.rcs, cfg.carrier)
        alpha = alpha * np.exp(-2j * np.pi * cfg.carrier * delay)
        h += _path_tensor(rx, tx, rx.bearing_to(p), tx.bearing_to(p), alpha, delay, cfg)
    if timing_offset_taps:
        h *= cfg.delay_phasor(timing_offset_taps * cfg.sample_time)
    return h


def apply_sync_impairment(h: np.ndarray, cfg: OfdmConfig, rng, max_offset_taps: int = 2) -> np.ndarray:
    """Random common phase and integer timing offset of an unsynchronized
    (bistatic) packet."""
    rng = np.random.default_rng(rng)
    phase = rng.uniform(0, 2 * np.pi)
    offset = int(rng.integers(-max_offset_taps, max_offset_taps + 1))
    return h * np.exp(1j * phase) * cfg.delay_phasor(offset * cfg.sample_time)


# ---------------------------------------------------------------------------
# Tx interference
# ---------------------------------------------------------------------------

# Leakage paths leave the Tx array around broadside.  On the Rx side the
# coupling is near-field, so each path has a fixed unit-modulus element
# response rather than a plane-wave steering vector.
_LEAK_TX_BEARINGS = np.radians([0.0, 11.0, -13.0])
_LEAK_PATH_POWER = np.array([1.0, 0.05, 0.04])


def reference_sensing_power(cfg: OfdmConfig, n_tx: int) -> float:
    """Per-element received power of a 1 m^2 reflector at 1 m on boresight,
    seen through a normalized n_tx-element transmit beam."""
    return radar_amplitude(1.0, 1.0, 1.0, cfg.carrier) ** 2 * n_tx


@dataclass(frozen=True)
class TxInterference:
    """Cross-chain Tx-to-Rx leakage process of one device.

    The physical coupling ``C(t)`` is a few paths with an
    exponentially decaying delay profile.  Path/tap coefficients evolve as a
    complex AR(1) process with coefficient `rho`.  The interference seen
    while transmitting on sector ``i`` is ``C(t) P_i`` where ``P_i`` projects
    onto that sector's AWV, so its power follows the sector's response to
    the leakage paths.
    """

    cfg: OfdmConfig
    tx_array: PhasedArray
    rx_array: PhasedArray
    seed: int = 0
    rho: complex = 0.98
    margin_db: float = 50.0
    n_taps: int = 6
    tap_decay_db: float = 3.0
    n_sectors: int = 32

    def __post_init__(self):
        if not 0 <= abs(self.rho) <= 1:
            raise ValueError("|rho| must lie in [0, 1]")

    @property
    def coefficient_shape(self) -> tuple[int, int]:
        return (len(_LEAK_PATH_POWER), self.n_taps)

    @functools.cached_property
    def _profile(self) -> np.ndarray:
        taps = np.arange(self.n_taps)
        pdp = 10 ** (-self.tap_decay_db * taps / 10)
        prof = np.outer(_LEAK_PATH_POWER, pdp)
        return prof / prof.sum()

    @functools.cached_property
    def _scale(self) -> float:
        ref = reference_sensing_power(self.cfg, self.tx_array.element_count)
        return math.sqrt(ref * 10 ** (self.margin_db / 10))

    @functools.cached_property
    def _steering(self):
        rng = np.random.default_rng([self.seed, 0x5EED])
        phases = rng.uniform(0, 2 * np.pi, (len(_LEAK_PATH_POWER), self.rx_array.element_count))
        a_rx = np.exp(1j * phases)
        a_tx = np.stack([_steer(self.tx_array, b) for b in _LEAK_TX_BEARINGS])
        k = np.arange(self.cfg.n_subcarriers)
        taps = np.arange(self.n_taps)
        delays = np.exp(-2j * np.pi * np.outer(taps, k) / self.cfg.n_subcarriers)
        # tx steering normalized: the margin refers to a unit-norm Tx beam
        return a_rx, a_tx.conj() / math.sqrt(self.tx_array.element_count), delays

    def _innovation(self, t: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, t])
        shape = self.coefficient_shape
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return z * np.sqrt(self._profile / 2)

    @functools.cached_property
    def _history(self) -> list:
        return [self._innovation(0)]

    def coefficients(self, t: int) -> np.ndarray:
        if t < 0:
            raise ValueError("time index must be >= 0")
        hist = self._history
        innov_scale = math.sqrt(max(0.0, 1 - abs(self.rho) ** 2))
        while len(hist) <= t:
            hist.append(self.rho * hist[-1] + innov_scale * self._innovation(len(hist)))
        return hist[t]

    def coupling(self, t: int) -> np.ndarray:
        """Physical coupling tensor C(t), shape [M_rx, M_tx, K]."""
        a_rx, a_tx, delays = self._steering
        beta = self.coefficients(t)
        return self._scale * np.einsum("pl,pr,pt,lk->rtk", beta, a_rx, a_tx, delays)

    def sector_awv(self, sector: int) -> np.ndarray:
        return sector_codebook(self.tx_array, self.n_sectors)[sector]

    def for_awv(self, awv, t: int) -> np.ndarray:
        """Interference while transmitting with an arbitrary AWV."""
        w = np.asarray(awv, dtype=complex)
        proj = np.outer(w, w.conj()) / np.vdot(w, w).real
        return np.einsum("rtk,tu->ruk", self.coupling(t), proj)

    def for_sector(self, sector: int, t: int) -> np.ndarray:
        return self.for_awv(self.sector_awv(sector), t)


@functools.lru_cache(maxsize=64)
def _interference_process(cfg, tx_array, rx_array, seed, rho, margin_db, n_sectors):
    return TxInterference(cfg, tx_array, rx_array, seed, rho, margin_db, n_sectors=n_sectors)


def gen_tx_interference(
    cfg: OfdmConfig,
    tx_sector: int,
    time_index: int,
    rng_seed: int = 0,
    rho: complex = 0.98,
    *,
    tx_array: PhasedArray | None = None,
    rx_array: PhasedArray | None = None,
    margin_db: float = 50.0,
    n_sectors: int = 32,
) -> np.ndarray:
    """Tx-interference tensor seen on `tx_sector` at slot `time_index`."""
    if not 0 <= abs(rho) <= 1:
        raise ValueError("|rho| must lie in [0, 1]")
    tx_array = tx_array or PhasedArray(16)
    rx_array = rx_array or PhasedArray(16)
    proc = _interference_process(cfg, tx_array, rx_array, rng_seed, rho, margin_db, n_sectors)
    return proc.for_sector(tx_sector, time_index)


def sector_interference_profile(proc: TxInterference, t: int = 0) -> np.ndarray:
    """Interference power (dB) per Tx sector."""
    c = proc.coupling(t)
    out = []
    for w in sector_codebook(proc.tx_array, proc.n_sectors):
        g = np.einsum("rtk,t->rk", c, w / np.linalg.norm(w))
        out.append(10 * np.log10(np.mean(np.abs(g) ** 2)))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Snapshot composition and hybrid links
# ---------------------------------------------------------------------------


@dataclass
class ChannelSnapshot:
    h_ti: np.ndarray
    h_s: np.ndarray
    h_c: np.ndarray
    h_ms: np.ndarray
    timestamp: float = 0.0

    def total(self) -> np.ndarray:
        return self.h_ti + self.h_s + self.h_c + self.h_ms

    @property
    def shape(self):
        return self.h_ti.shape


def compose(h_ti, h_s, h_c, h_ms, timestamp: float = 0.0) -> ChannelSnapshot:
    parts = [np.asarray(x, dtype=complex) for x in (h_ti, h_s, h_c, h_ms)]
    if len({p.shape for p in parts}) != 1:
        raise ValueError(f"component shapes differ: {[p.shape for p in parts]}")
    for p in parts:
        if not np.all(np.isfinite(p)):
            raise ValueError("channel components must be finite")
    return ChannelSnapshot(*parts, timestamp=timestamp)


@dataclass
class HybridBeamformers:
    """Analog AWVs (columns) and digital matrices on each side.

    The applied Rx analog matrix is ``w_ab_rx^H`` so a receive AWV ``w``
    combines as ``w^H x``.  Each chain drives the whole array of its side.
    """

    w_ab_tx: np.ndarray  # [M_tx, N_tx]
    w_db_tx: np.ndarray  # [N_tx, N_s]
    w_ab_rx: np.ndarray  # [M_rx, N_rx]
    w_db_rx: np.ndarray  # [N_out, N_rx]
    block_diagonal_rx: bool = False

    def __post_init__(self):
        self.w_ab_tx = np.atleast_2d(np.asarray(self.w_ab_tx, dtype=complex))
        self.w_db_tx = np.atleast_2d(np.asarray(self.w_db_tx, dtype=complex))
        self.w_ab_rx = np.atleast_2d(np.asarray(self.w_ab_rx, dtype=complex))
        self.w_db_rx = np.atleast_2d(np.asarray(self.w_db_rx, dtype=complex))
        if self.w_ab_tx.shape[1] != self.w_db_tx.shape[0]:
            raise ValueError("Tx analog/digital chain counts differ")
        if self.w_ab_rx.shape[1] != self.w_db_rx.shape[1]:
            raise ValueError("Rx analog/digital chain counts differ")

    @classmethod
    def identity(cls, m_rx: int, m_tx: int) -> HybridBeamformers:
        return cls(np.eye(m_tx), np.eye(m_tx), np.eye(m_rx), np.eye(m_rx))

    @classmethod
    def from_awvs(cls, tx_awvs, rx_awvs, w_db_tx=None, w_db_rx=None) -> HybridBeamformers:
        a_tx = np.column_stack([np.asarray(w, complex) for w in tx_awvs])
        a_rx = np.column_stack([np.asarray(w, complex) for w in rx_awvs])
        if w_db_tx is None:
            w_db_tx = np.eye(a_tx.shape[1])
        if w_db_rx is None:
            w_db_rx = np.eye(a_rx.shape[1])
        return cls(a_tx, w_db_tx, a_rx, w_db_rx)

    @property
    def m_tx(self) -> int:
        return self.w_ab_tx.shape[0]

    @property
    def m_rx(self) -> int:
        return self.w_ab_rx.shape[0]

    def tx_matrix(self) -> np.ndarray:
        """Effective precoder W_AB^Tx W_DB^Tx, shape [M_tx, N_s]."""
        return self.w_ab_tx @ self.w_db_tx

    def rx_matrix(self) -> np.ndarray:
        """Effective combiner W_DB^Rx W_AB^Rx, shape [N_out, M_rx]."""
        return self.w_db_rx @ self.w_ab_rx.conj().T

    def copy(self) -> HybridBeamformers:
        return HybridBeamformers(
            self.w_ab_tx.copy(), self.w_db_tx.copy(), self.w_ab_rx.copy(),
            self.w_db_rx.copy(), self.block_diagonal_rx,
        )


def _as_tensor(h) -> np.ndarray:
    return h.total() if isinstance(h, ChannelSnapshot) else np.asarray(h, dtype=complex)


def adc_noise_var(chain_power, enob: float):
    """Quantization noise variance of an ADC whose full scale tracks the
    chain's input power (ideal AGC)."""
    return np.asarray(chain_power) * 10 ** (-(6.02 * enob + 1.76) / 10)


def apply_link(
    h,
    bf: HybridBeamformers,
    s,
    cfg: OfdmConfig,
    rng_seed=None,
    *,
    noise: bool = True,
    adc_enob: float | None = None,
) -> np.ndarray:
    """Received streams ``W_DB^Rx W_AB^Rx (H W_AB^Tx W_DB^Tx s + n)`` per subcarrier.

    `s` is ``[N_s]`` (same symbols on every subcarrier) or ``[N_s, K]``.
    Returns ``[N_out, K]``.  With `adc_enob` set, each Rx chain output gets
    quantization noise before digital combining.
    """
    h = _as_tensor(h)
    m_rx, m_tx, k = h.shape
    if bf.m_tx != m_tx or bf.m_rx != m_rx:
        raise ValueError(f"beamformers {bf.m_rx}x{bf.m_tx} do not fit channel {m_rx}x{m_tx}")
    s = np.asarray(s, dtype=complex)
    if s.ndim == 1:
        s = np.repeat(s[:, None], k, axis=1)
    if s.shape != (bf.w_db_tx.shape[1], k):
        raise ValueError(f"symbol block {s.shape} does not fit {bf.w_db_tx.shape[1]} streams x {k}")
    if not np.all(np.isfinite(s)):
        raise ValueError("symbols must be finite")
    x = np.einsum("rtk,tk->rk", h, bf.tx_matrix() @ s)
    rng = np.random.default_rng(rng_seed)
    if noise:
        sigma = math.sqrt(cfg.noise_var / 2)
        x = x + sigma * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    z = bf.w_ab_rx.conj().T @ x
    if adc_enob is not None:
        var = adc_noise_var(np.mean(np.abs(z) ** 2, axis=1, keepdims=True), adc_enob)
        z = z + np.sqrt(var / 2) * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))
    return bf.w_db_rx @ z


# ---------------------------------------------------------------------------
# CSI -> CIR
# ---------------------------------------------------------------------------


def csi_to_cir(csi, axis: int = -1) -> np.ndarray:
    """Unitary inverse DFT from subcarriers to delay taps."""
    return np.fft.ifft(np.asarray(csi), axis=axis, norm="ortho")


def cir_to_csi(cir, axis: int = -1) -> np.ndarray:
    return np.fft.fft(np.asarray(cir), axis=axis, norm="ortho")


@dataclass
class CirMatrix:
    """Fast-time (taps) x slow-time (packets) channel impulse responses."""

    taps: np.ndarray
    tap_duration: float
    packet_interval: float

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=complex)
        if self.taps.ndim != 2:
            raise ValueError("taps must be a [n_taps, n_packets] matrix")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("taps must be finite")

    @property
    def n_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def n_packets(self) -> int:
        return self.taps.shape[1]

    @classmethod
    def from_csi(cls, csi_packets, cfg: OfdmConfig, packet_interval: float) -> CirMatrix:
        """Build from a ``[n_packets, n_subcarriers]`` CSI block."""
        csi_packets = np.atleast_2d(csi_packets)
        if csi_packets.shape[1] != cfg.n_subcarriers:
            raise ValueError("CSI length must equal n_subcarriers")
        return cls(csi_to_cir(csi_packets, axis=1).T, cfg.sample_time, packet_interval)


def background_removal(cir: CirMatrix) -> CirMatrix:
    """Subtract each tap's slow-time mean."""
    if cir.n_packets < 2:
        raise ValueError("background removal needs at least two packets")
    taps = cir.taps - cir.taps.mean(axis=1, keepdims=True)
    return CirMatrix(taps, cir.tap_duration, cir.packet_interval)


__all__ = [
    "OfdmConfig", "Motion", "Scatterer", "Node", "Scene", "ChannelSnapshot",
    "HybridBeamformers", "CirMatrix", "TxInterference", "gen_comm_channel",
    "gen_sensing_channel", "gen_tx_interference", "apply_sync_impairment",
    "compose", "apply_link", "csi_to_cir", "cir_to_csi", "background_removal",
    "free_space_loss_db", "radar_amplitude", "dbm_to_mw", "mw_to_dbm",
    "sector_interference_profile", "reference_sensing_power", "adc_noise_var",
    "sector_centers",
]
