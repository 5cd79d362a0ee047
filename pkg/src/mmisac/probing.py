"""Sector sweeps, the low-power Tx-interference probing round and the
estimators built on them (MMSE channel estimate, bearing, range, detection).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .array import quasi_omni, sector_centers, sector_codebook
from .channel import (
    CirMatrix,
    Node,
    OfdmConfig,
    background_removal,
    cir_to_csi,
    csi_to_cir,
    dbm_to_mw,
    gen_comm_channel,
)
from .errors import DetectionError, UnsupportedModeError

NOISE_FLOOR_DB = -300.0


@dataclass
class SweepReport:
    per_sector_rssi: np.ndarray
    best_sector: int
    responder: str

    def to_dict(self) -> dict:
        return {
            "responder": self.responder,
            "best_sector": int(self.best_sector),
            "sectors": [
                {"sector": i, "rssi_db": float(r)} for i, r in enumerate(self.per_sector_rssi)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> SweepReport:
        rssi = np.array([s["rssi_db"] for s in sorted(d["sectors"], key=lambda s: s["sector"])])
        return cls(rssi, int(d["best_sector"]), d["responder"])


@dataclass
class SweepResult:
    """Outcome of both sweep stages between the initiator and one peer."""

    peer: str
    initiator_side: SweepReport
    responder_side: SweepReport

    @property
    def sector_pair(self) -> tuple[int, int]:
        return self.initiator_side.best_sector, self.responder_side.best_sector


def _report(rssi_db, responder: str) -> SweepReport:
    rssi_db = np.asarray(rssi_db, dtype=float)
    # np.argmax returns the first maximum: ties go to the lowest sector index
    return SweepReport(rssi_db, int(np.argmax(rssi_db)), responder)


def _sweep_stage(h, codebook, listen_awv, tx_power_dbm, cfg, rng):
    p_sc = dbm_to_mw(tx_power_dbm) / cfg.n_subcarriers
    rssi = []
    for w in codebook:
        g = np.einsum("r,rtk,t->k", listen_awv.conj(), h, w / np.linalg.norm(w))
        power = p_sc * np.abs(g) ** 2
        if rng is not None:
            power = np.abs(
                np.sqrt(p_sc) * g
                + math.sqrt(cfg.noise_var / 2)
                * (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
            ) ** 2
        rssi.append(10 * np.log10(max(power.mean(), 1e-300)))
    return rssi


def sector_sweep(
    initiator: Node,
    peers,
    codebook,
    cfg: OfdmConfig,
    *,
    peer_codebook=None,
    tx_power_dbm: float = 10.0,
    k_factor: float = np.inf,
    rng_seed=None,
) -> list[SweepResult]:
    """Two-stage beam training between `initiator` and every peer.

    Initiator-side stage: the initiator transmits each sector while the peer
    listens quasi-omni; the peer reports the per-sector RSSI.  Responder-side
    stage: roles reversed with the peer's codebook.  Noise is added only when
    `rng_seed` is given.
    """
    if len(codebook) == 0:
        raise ValueError("codebook must be non-empty")
    rng = np.random.default_rng(rng_seed) if rng_seed is not None else None
    results = []
    for i, peer in enumerate(peers):
        peer_cb = peer_codebook or sector_codebook(peer.array, len(codebook))
        seed = None if rng_seed is None else (rng_seed, i)
        down = gen_comm_channel(initiator, peer, cfg, k_factor, rng_seed=seed)
        up = gen_comm_channel(peer, initiator, cfg, k_factor, rng_seed=seed)
        fwd = _sweep_stage(down, codebook, quasi_omni(peer.array), tx_power_dbm, cfg, rng)
        rev = _sweep_stage(up, peer_cb, quasi_omni(initiator.array), tx_power_dbm, cfg, rng)
        results.append(SweepResult(peer.name, _report(fwd, peer.name), _report(rev, initiator.name)))
    return results


def mmse_estimate(y, trn, noise_var: float, prior_var: float):
    """Per-coefficient linear MMSE estimate of h from ``y = h*s + n``.

    ``h_hat = conj(s) y prior / (|s|^2 prior + noise)``; ``prior_var=inf``
    gives the least-squares estimate ``y / s``.
    """
    s = np.asarray(trn, dtype=complex)
    if np.any(s == 0):
        raise ValueError("pilot symbols must be nonzero")
    if not (noise_var > 0 and prior_var > 0):
        raise ValueError("variances must be positive")
    y = np.asarray(y, dtype=complex)
    if np.isposinf(prior_var):
        return y / s
    return np.conj(s) * y * prior_var / (np.abs(s) ** 2 * prior_var + noise_var)


@dataclass
class TiEstimate:
    per_sector: list
    probe_power: float

    def __len__(self):
        return len(self.per_sector)


def trn_sequence(n: int, rng_seed=0) -> np.ndarray:
    """Constant-modulus pseudo-random pilot (QPSK phases)."""
    rng = np.random.default_rng(rng_seed)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, n)))


def ti_probe(
    codebook,
    h_ti_per_sector,
    cfg: OfdmConfig,
    *,
    env=None,
    tx_power_dbm: float = 10.0,
    backoff_db: float = 30.0,
    trn_repeats: int = 4,
    leak_taps: int | None = None,
    noise: bool = True,
    rng_seed=0,
) -> TiEstimate:
    """Estimate the per-sector Tx interference with a low-power sweep.

    For each Tx sector the receive array listens one element at a time
    (a quasi-omni pattern per TRN subfield), so the response ``H_i w_i`` is
    measured per Rx element and subcarrier and rebuilt as ``(H_i w_i) w_i^H``.
    `env` (e.g. sensing reflections) is added to every sector's channel.
    With `leak_taps`, estimates are confined to the leakage delay support.
    """
    if backoff_db < 0:
        raise ValueError("probe power must not exceed the normal Tx power")
    probe_dbm = tx_power_dbm - backoff_db
    p_sc = float(dbm_to_mw(probe_dbm)) / cfg.n_subcarriers
    s = math.sqrt(p_sc) * trn_sequence(cfg.n_subcarriers, rng_seed)
    rng = np.random.default_rng(rng_seed)
    noise_var = cfg.noise_var / trn_repeats
    estimates = []
    for i, w in enumerate(codebook):
        w = np.asarray(w, dtype=complex)
        w = w / np.linalg.norm(w)
        h = np.asarray(h_ti_per_sector[i], dtype=complex)
        if env is not None:
            h = h + env
        g = np.einsum("rtk,t->rk", h, w)
        y = g * s
        if noise:
            y = y + math.sqrt(noise_var / 2) * (
                rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
            )
        prior = max(float(np.mean(np.abs(y) ** 2)) / p_sc - noise_var / p_sc, 1e-30)
        g_hat = mmse_estimate(y, s, noise_var, prior if noise else np.inf)
        if leak_taps is not None:
            cir = csi_to_cir(g_hat, axis=1)
            cir[:, leak_taps:] = 0
            g_hat = cir_to_csi(cir, axis=1)
        estimates.append(np.einsum("rk,t->rtk", g_hat, w.conj()))
    return TiEstimate(estimates, probe_dbm)


def estimate_bearing(report: SweepReport, centers) -> float:
    """Best-sector center refined by a parabola through the neighbouring
    sector RSSIs (dB); the shift is limited to half a sector."""
    centers = np.asarray(centers, dtype=float)
    i = report.best_sector
    if len(centers) < 3 or i == 0 or i == len(centers) - 1:
        return float(centers[i])
    y0, y1, y2 = report.per_sector_rssi[i - 1 : i + 2]
    denom = y0 - 2 * y1 + y2
    if denom >= 0:
        return float(centers[i])
    delta = float(np.clip(0.5 * (y0 - y2) / denom, -0.5, 0.5))
    return float(centers[i] + delta * (centers[1] - centers[0]))


def estimate_range(
    cir,
    cfg: OfdmConfig,
    mode: str = "monostatic",
    *,
    calibration_taps: float = 0.0,
    min_snr_db: float = 10.0,
    first_tap: int = 0,
) -> float:
    """Range from the strongest tap of a monostatic CIR."""
    if mode != "monostatic":
        raise UnsupportedModeError(
            "absolute range needs a synchronized (monostatic) link"
        )
    power = np.abs(np.asarray(cir)) ** 2
    search = power[first_tap:]
    peak = first_tap + int(np.argmax(search))
    floor = float(np.median(power))
    if power[peak] <= 0 or power[peak] < floor * 10 ** (min_snr_db / 10):
        raise DetectionError("no CIR peak above the noise floor")
    return (peak - calibration_taps) * cfg.range_bin


def loopback_calibration(cir, known_range: float, cfg: OfdmConfig) -> float:
    """Constant timing offset (taps) measured on a reflector at a known range."""
    peak = int(np.argmax(np.abs(np.asarray(cir))))
    return peak - known_range / cfg.range_bin


def detect_subjects(
    cirs,
    cfg: OfdmConfig,
    centers=None,
    *,
    k: float = 5.0,
    noise_taps=None,
    calibration_taps: float = 0.0,
    sidelobe_db: float = 20.0,
):
    """Moving subjects from per-sector CIR matrices.

    Each matrix is background-removed; a cell (sector, tap) is declared when
    its mean slow-time power exceeds ``mu + k*sigma`` of the noise-only taps.
    Connected cells are merged and reported once at their strongest cell as
    ``(range, bearing)``.  A cluster more than `sidelobe_db` below the
    strongest cell of its range (+-1 tap), or below the strongest cell of
    its own sector, is treated as an angular or range sidelobe of a
    stronger target and dropped.
    """
    if not cirs:
        return []
    if centers is None:
        centers = sector_centers(len(cirs))
    power = np.stack([np.mean(np.abs(background_removal(c).taps) ** 2, axis=1) for c in cirs])
    n_taps = power.shape[1]
    if noise_taps is None:
        noise_taps = np.arange(3 * n_taps // 4, n_taps)
    ref = power[:, noise_taps]
    mu, sigma = float(ref.mean()), float(ref.std())
    mask = power > mu + k * sigma
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    # strongest return per tap over all sectors, widened by one tap
    col_max = ndimage.maximum_filter1d(power.max(axis=0), 3)
    row_max = power.max(axis=1)
    floor = 10 ** (-sidelobe_db / 10)
    detections = []
    for lab in range(1, n + 1):
        cells = np.argwhere(labels == lab)
        vals = power[cells[:, 0], cells[:, 1]]
        sec, tap = cells[int(np.argmax(vals))]
        if vals.max() < floor * max(col_max[tap], row_max[sec]):
            continue
        detections.append(((tap - calibration_taps) * cfg.range_bin, float(centers[sec])))
    detections.sort()
    return detections


def ti_correlation(h1, h2) -> float:
    """Normalized inner-product magnitude of two interference tensors."""
    a = np.asarray(h1, dtype=complex).ravel()
    b = np.asarray(h2, dtype=complex).ravel()
    if a.shape != b.shape:
        raise ValueError("tensor shapes differ")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("correlation of a zero tensor is undefined")
    return float(min(1.0, abs(np.vdot(a, b)) / (na * nb)))
