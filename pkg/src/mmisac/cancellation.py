"""Two-stage Tx-interference cancellation.

Stage one reshapes the hybrid beamformers so the leakage tensor is nulled
while the sensing main lobe keeps a minimum gain.  Stage two subtracts the
remaining leakage predicted from the low-power probe.

Gains in this module are *normalized* array gains: for a combiner ``w``
the gain towards bearing ``b`` is ``|w^H a(b)|^2 / ||w||^2`` (at most the
element count M, reached by plain steering).  The nulling objective is the
leakage power divided by ``||W_rx||^2 ||W_tx||^2`` so that shrinking the
weights cannot fake a null.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .array import PhasedArray, quantize_for, steering_vector
from .channel import ChannelSnapshot, HybridBeamformers, OfdmConfig, _as_tensor, adc_noise_var
from .errors import InfeasibleError, NumericalError


class DegenerateEstimateWarning(UserWarning):
    """The predicted leakage had zero energy; nothing was subtracted."""


@dataclass
class NullingProblem:
    h_ti: np.ndarray
    init_bf: HybridBeamformers
    tx_array: PhasedArray
    rx_array: PhasedArray
    mainlobe_targets: list = field(default_factory=list)  # [(bearing rad, min_gain dB)]
    max_iters: int = 2000
    step: float = 0.05
    tolerance: float = 1e-6
    checkpoint_every: int = 10
    adc_weight: float = 0.0  # ADC noise-to-input ratio; >0 also penalizes per-chain leakage
    grid_sweeps: int = 6  # coordinate-descent sweeps over the quantized grid at the end

    def __post_init__(self):
        self.h_ti = np.asarray(self.h_ti, dtype=complex)
        if self.h_ti.ndim != 3:
            raise ValueError("h_ti must be [M_rx, M_tx, K]")
        if self.h_ti.shape[:2] != (self.init_bf.m_rx, self.init_bf.m_tx):
            raise ValueError("beamformers do not fit the interference tensor")
        if self.init_bf.w_db_rx.shape[0] != 1 or self.init_bf.w_db_tx.shape[1] != 1:
            raise ValueError("nulling supports one stream per side")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.adc_weight >= 0:
            raise ValueError("adc_weight must be >= 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        for _, g in self.mainlobe_targets:
            if not math.isfinite(g):
                raise ValueError("min_gain must be finite")


@dataclass
class NullingResult:
    bf: HybridBeamformers
    objective_init: float
    objective: float
    iterations: int
    converged: bool

    @property
    def suppression_db(self) -> float:
        if self.objective_init == 0:
            return 0.0
        if self.objective == 0:
            return math.inf
        return 10 * math.log10(self.objective_init / self.objective)


# ---------------------------------------------------------------------------
# objective and gains
# ---------------------------------------------------------------------------


def _rx_vec(bf: HybridBeamformers) -> np.ndarray:
    # effective combiner w, applied as w^H
    return bf.w_ab_rx @ bf.w_db_rx[0].conj()


def _tx_vec(bf: HybridBeamformers) -> np.ndarray:
    return bf.w_ab_tx @ bf.w_db_tx[:, 0]


def _raw_objective(h, w, v) -> float:
    nw, nv = np.vdot(w, w).real, np.vdot(v, v).real
    if nw == 0 or nv == 0:
        return math.inf
    leak = np.einsum("r,rtk,t->k", w.conj(), h, v)
    return float(np.sum(np.abs(leak) ** 2) / (nw * nv))


def nulling_objective(h_ti, bf: HybridBeamformers) -> float:
    """Normalized leakage power summed over subcarriers."""
    return _raw_objective(_as_tensor(h_ti), _rx_vec(bf), _tx_vec(bf))


def _chain_leak(h, a_rx, v) -> np.ndarray:
    # leakage power at each Rx chain's analog output, summed over subcarriers
    z = np.einsum("rc,rtk,t->ck", a_rx.conj(), h, v)
    return np.sum(np.abs(z) ** 2, axis=1)


def _objective(h, bf: HybridBeamformers, adc_weight: float) -> float:
    """Nulling objective plus the ADC noise the per-chain leakage causes
    after digital combining, both normalized like :func:`nulling_objective`."""
    w, v = _rx_vec(bf), _tx_vec(bf)
    j = _raw_objective(h, w, v)
    if adc_weight == 0 or not math.isfinite(j):
        return j
    d = np.abs(bf.w_db_rx[0]) ** 2
    extra = adc_weight * float(d @ _chain_leak(h, bf.w_ab_rx, v))
    return j + extra / (np.vdot(w, w).real * np.vdot(v, v).real)


def normalized_gain_db(w, array: PhasedArray, bearing: float) -> float:
    """``|w^H a|^2 / ||w||^2`` in dB (same convention for Tx and Rx)."""
    a = steering_vector(array, bearing)
    p = abs(np.vdot(w, a)) ** 2 / np.vdot(w, w).real
    return 10 * math.log10(max(p, 1e-300))


def mainlobe_gains(bf: HybridBeamformers, tx_array, rx_array, targets):
    """Per-target (tx_db, rx_db) normalized gains."""
    w, v = _rx_vec(bf), _tx_vec(bf)
    return [
        (normalized_gain_db(v, tx_array, b), normalized_gain_db(w, rx_array, b))
        for b, _ in targets
    ]


def constraints_hold(bf, tx_array, rx_array, targets, slack_db: float = 1e-6) -> bool:
    for (gt, gr), (_, g) in zip(mainlobe_gains(bf, tx_array, rx_array, targets), targets):
        if gt < g - slack_db or gr < g - slack_db:
            return False
    return True


# ---------------------------------------------------------------------------
# digital restoration: constrained Rayleigh quotient over the analog span
# ---------------------------------------------------------------------------


def _solve_digital(analog, cov, steer, min_gain_lin, extra=None):
    """Digital weights d minimizing ``(w^H C w + d^H E d) / w^H w`` for
    ``w = A d`` subject to ``|w^H a_j|^2 / ||w||^2 >= g_j``.

    Works in an orthonormal basis of the analog span and bisects a single
    Lagrange weight on the combined constraint.  Returns ``d`` or None when
    the constraints cannot be met within this span.
    """
    u, s, vh = np.linalg.svd(analog, full_matrices=False)
    keep = s > s[0] * 1e-10 if s.size and s[0] > 0 else np.zeros(0, bool)
    if not keep.any():
        return None
    u, s, vh = u[:, keep], s[keep], vh[keep]
    q = u.conj().T @ cov @ u
    if extra is not None:
        back = vh.conj().T / s  # c -> d
        q = q + back.conj().T @ extra @ back
    q = 0.5 * (q + q.conj().T)
    b = [u.conj().T @ a for a in steer]

    def lift(c):
        return vh.conj().T @ (c / s)

    def ok(c):
        return all(abs(np.vdot(bj, c)) ** 2 >= g * (1 - 1e-9) for bj, g in zip(b, min_gain_lin))

    def argmin(t):
        penalty = sum(
            (np.outer(bj, bj.conj()) - g * np.eye(len(bj))) / g for bj, g in zip(b, min_gain_lin)
        )
        scale = np.linalg.norm(q) or 1.0
        mat = (1 - t) * q / scale - t * penalty
        _, vecs = linalg.eigh(0.5 * (mat + mat.conj().T))
        return vecs[:, 0]

    if not b:
        return lift(argmin(0.0))
    c = argmin(0.0)
    if ok(c):
        return lift(c)
    hi_c = argmin(1.0)
    if not ok(hi_c):
        return None
    lo, hi = 0.0, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        cm = argmin(mid)
        if ok(cm):
            hi, hi_c = mid, cm
        else:
            lo = mid
    return lift(hi_c)


def _tx_cov(h, w, a_rx, d_rx, adc_weight):
    # v^H (sum_k z_k^* z_k^T) v is the Tx-side leakage seen through w, plus
    # the ADC-weighted leakage of every Rx chain
    z = np.einsum("r,rtk->tk", w.conj(), h)
    cov = z.conj() @ z.T
    if adc_weight:
        zc = np.einsum("rc,rtk->ctk", a_rx.conj(), h)
        cov = cov + adc_weight * np.einsum("c,ctk,csk->ts", np.abs(d_rx) ** 2, zc.conj(), zc)
    return cov


def _rx_extra(a_rx, cov, adc_weight):
    if not adc_weight:
        return None
    return adc_weight * np.diag(np.einsum("rc,rs,sc->c", a_rx.conj(), cov, a_rx).real)


def _restore(h, a_tx, a_rx, v_prev, tx_array, rx_array, targets, adc_weight=0.0):
    """Re-solve both digital sides for fixed analog matrices."""
    g_lin = [10 ** (g / 10) for _, g in targets]
    steer_rx = [steering_vector(rx_array, t) for t, _ in targets]
    steer_tx = [steering_vector(tx_array, t) for t, _ in targets]
    u = np.einsum("rtk,t->rk", h, v_prev)
    cov = u @ u.conj().T
    d_rx = _solve_digital(a_rx, cov, steer_rx, g_lin, _rx_extra(a_rx, cov, adc_weight))
    if d_rx is None:
        return None
    w = a_rx @ d_rx
    d_tx = _solve_digital(a_tx, _tx_cov(h, w, a_rx, d_rx, adc_weight), steer_tx, g_lin)
    if d_tx is None:
        return None
    return d_tx, d_rx


def _pack(a_tx, d_tx, a_rx, d_rx) -> HybridBeamformers:
    # unit-norm precoder: nulling must not change the transmitted power
    d_tx = d_tx / max(np.linalg.norm(a_tx @ d_tx), 1e-300)
    return HybridBeamformers(a_tx, d_tx[:, None], a_rx, d_rx.conj()[None, :])


def _quantized(h, a_tx, a_rx, v_prev, problem):
    qa_tx = quantize_for(a_tx, problem.tx_array)
    qa_rx = quantize_for(a_rx, problem.rx_array)
    sol = _restore(h, qa_tx, qa_rx, v_prev, problem.tx_array, problem.rx_array,
                   problem.mainlobe_targets, problem.adc_weight)
    if sol is None:
        return None, math.inf
    bf = _pack(qa_tx, sol[0], qa_rx, sol[1])
    return bf, _objective(h, bf, problem.adc_weight)


def _warm_start(h, init, problem, rounds: int = 3, margin_db: float = 0.5):
    """Analog matrices factored from the unrestricted constrained optimum.

    Alternates full-array solutions on both sides, then puts the optimal
    effective AWV on chain 0 and the dominant leakage directions on the
    remaining chains, so after quantization the digital stage can still
    cancel the leakage that quantization lets through.  Targets are
    tightened by `margin_db` to leave room for the quantization loss.
    """
    targets = problem.mainlobe_targets
    cap = [10 * math.log10(min(problem.tx_array.element_count, problem.rx_array.element_count))]
    g_lin = [10 ** (min(g + margin_db, cap[0]) / 10) for _, g in targets]
    steer_rx = [steering_vector(problem.rx_array, t) for t, _ in targets]
    steer_tx = [steering_vector(problem.tx_array, t) for t, _ in targets]
    eye_rx, eye_tx = np.eye(init.m_rx), np.eye(init.m_tx)
    v = _tx_vec(init)
    w = _rx_vec(init)
    for _ in range(rounds):
        u = np.einsum("rtk,t->rk", h, v)
        w_new = _solve_digital(eye_rx, u @ u.conj().T, steer_rx, g_lin)
        if w_new is None:
            return None
        w = w_new
        z = np.einsum("r,rtk->tk", w.conj(), h)
        v_new = _solve_digital(eye_tx, z.conj() @ z.T, steer_tx, g_lin)
        if v_new is None:
            return None
        v = v_new
    u = np.einsum("rtk,t->rk", h, v)
    z = np.einsum("r,rtk->tk", w.conj(), h)

    def factor(x, cov, n):
        cols = [x / np.max(np.abs(x))]
        if n > 1:
            _, vecs = linalg.eigh(0.5 * (cov + cov.conj().T))
            for c in range(n - 1):
                e = vecs[:, -1 - c]
                cols.append(e / np.max(np.abs(e)))
        return np.column_stack(cols)

    return (
        factor(v, z.conj() @ z.T, init.w_ab_tx.shape[1]),
        factor(w, u @ u.conj().T, init.w_ab_rx.shape[1]),
    )


def _weight_grid(array: PhasedArray) -> np.ndarray:
    amps = np.arange(1, 2**array.amp_bits + 1) / 2**array.amp_bits
    phases = np.exp(2j * np.pi * np.arange(2**array.phase_bits) / 2**array.phase_bits)
    return np.r_[0.0, np.outer(amps, phases).ravel()]


def _grid_descent(h, bf: HybridBeamformers, problem: NullingProblem, sweeps: int = 6):
    """Coordinate descent over the quantized analog weights, digital fixed.

    Each step tries every grid value of one element (Rx chains, then Tx)
    and keeps the best one that lowers the objective and keeps every
    main-lobe target.  Returns the improved beamformers and objective.
    """
    q = problem.adc_weight
    a_tx, a_rx = bf.w_ab_tx.copy(), bf.w_ab_rx.copy()
    d_tx, d_rx = bf.w_db_tx[:, 0], bf.w_db_rx[0].conj()
    g_lin = np.array([10 ** (g / 10) for _, g in problem.mainlobe_targets])
    s_tx = np.array([steering_vector(problem.tx_array, b) for b, _ in problem.mainlobe_targets]
                    ).reshape(len(g_lin), a_tx.shape[0])
    s_rx = np.array([steering_vector(problem.rx_array, b) for b, _ in problem.mainlobe_targets]
                    ).reshape(len(g_lin), a_rx.shape[0])
    grid_tx, grid_rx = _weight_grid(problem.tx_array), _weight_grid(problem.rx_array)
    dr = np.abs(d_rx) ** 2

    def state():
        v, w = a_tx @ d_tx, a_rx @ d_rx
        u = np.einsum("rtk,t->rk", h, v)  # Rx element x subcarrier
        return v, w, u

    def score(leak, chain, nw, nv, gains_ok):
        j = np.sum(np.abs(leak) ** 2, axis=-1) + q * np.sum(dr * np.sum(np.abs(chain) ** 2, axis=-1), axis=-1)
        j = j / (nw * nv)
        return np.where(gains_ok, j, np.inf)

    v, w, _ = state()
    j_best = _objective(h, _pack(a_tx, d_tx, a_rx, d_rx), q)
    for _ in range(sweeps):
        improved = False
        # Rx side: element m of chain c
        for c in range(a_rx.shape[1]):
            if d_rx[c] == 0:
                continue
            for m in range(a_rx.shape[0]):
                v, w, u = state()
                leak = w.conj() @ u  # [K]
                chain = a_rx.conj().T @ u  # [C, K]
                delta = grid_rx - a_rx[m, c]  # candidate changes
                dw = delta * d_rx[c]
                new_leak = leak[None, :] + np.conj(dw)[:, None] * u[m][None, :]
                new_chain = np.repeat(chain[None], len(delta), axis=0)
                new_chain[:, c, :] += np.conj(delta)[:, None] * u[m][None, :]
                nw = np.vdot(w, w).real - abs(w[m]) ** 2 + np.abs(w[m] + dw) ** 2
                nv = np.vdot(v, v).real
                resp = (w.conj() @ s_rx.T)[None, :] + np.conj(dw)[:, None] * s_rx[:, m][None, :]
                ok = np.all(np.abs(resp) ** 2 >= g_lin[None, :] * nw[:, None] * (1 - 1e-9), axis=1)
                ok &= nw > 0
                j = score(new_leak, new_chain, np.maximum(nw, 1e-300), nv, ok)
                i = int(np.argmin(j))
                if j[i] < j_best * (1 - 1e-9):
                    a_rx[m, c] = grid_rx[i]
                    j_best = float(j[i])
                    improved = True
        # Tx side (single stream): element m of chain c
        for c in range(a_tx.shape[1]):
            if d_tx[c] == 0:
                continue
            for m in range(a_tx.shape[0]):
                v, w, _ = state()
                z = np.einsum("r,rtk->tk", w.conj(), h)  # combined, Tx element x K
                zc = np.einsum("rc,rtk->ctk", a_rx.conj(), h)  # per Rx chain
                leak = v @ z
                chain = np.einsum("ctk,t->ck", zc, v)
                delta = grid_tx - a_tx[m, c]
                dv = delta * d_tx[c]
                new_leak = leak[None, :] + dv[:, None] * z[m][None, :]
                new_chain = chain[None] + dv[:, None, None] * zc[:, m, :][None]
                nv = np.vdot(v, v).real - abs(v[m]) ** 2 + np.abs(v[m] + dv) ** 2
                nw = np.vdot(w, w).real
                resp = (v.conj() @ s_tx.T)[None, :] + np.conj(dv)[:, None] * s_tx[:, m][None, :]
                ok = np.all(np.abs(resp) ** 2 >= g_lin[None, :] * nv[:, None] * (1 - 1e-9), axis=1)
                ok &= nv > 0
                j = score(new_leak, new_chain, nw, np.maximum(nv, 1e-300), ok)
                i = int(np.argmin(j))
                if j[i] < j_best * (1 - 1e-9):
                    a_tx[m, c] = grid_tx[i]
                    j_best = float(j[i])
                    improved = True
        if not improved:
            break
    out = _pack(a_tx, d_tx, a_rx, d_rx)
    return out, _objective(h, out, q)


def _clip_amplitude(a):
    mag = np.abs(a)
    return np.where(mag > 1, a / np.maximum(mag, 1e-300), a)


def _log_grad(cov, x):
    # gradient of log(x^H C x / x^H x) with respect to conj(x)
    num = np.vdot(x, cov @ x).real
    return cov @ x / max(num, 1e-300) - x / np.vdot(x, x).real


# ---------------------------------------------------------------------------
# beam nulling
# ---------------------------------------------------------------------------


def feasibility_probe(problem: NullingProblem) -> None:
    """Raise if plain steering cannot reach a target's minimum gain."""
    for bearing, g in problem.mainlobe_targets:
        for arr in (problem.tx_array, problem.rx_array):
            best = 10 * math.log10(arr.element_count)
            if g > best + 1e-9:
                raise InfeasibleError(
                    f"min gain {g:.2f} dB at {math.degrees(bearing):.1f} deg exceeds "
                    f"the {best:.2f} dB steering gain"
                )


def beam_null(problem: NullingProblem) -> NullingResult:
    """Minimize normalized leakage over the analog weights.

    Projected gradient on log-objective with backtracking: after each analog
    step amplitudes are clipped to 1 and the digital weights are re-solved to
    meet every main-lobe target.  Analog weights are quantized to the
    array's bit grid and the digital weights re-solved at checkpoints; the
    best feasible quantized realization is returned, or the initial
    beamformers when nothing beats them.

    With ``adc_weight > 0`` the objective also charges each Rx chain's own
    leakage times that weight and the chain's digital gain: leakage that
    reaches an ADC adds quantization noise no digital combining can remove.
    ``objective_init`` and ``objective`` then refer to this sum.
    """
    feasibility_probe(problem)
    h = problem.h_ti
    init = problem.init_bf
    q = problem.adc_weight
    j_init = _objective(h, init, q)
    if not math.isfinite(j_init):
        raise NumericalError("objective at initialization is not finite")
    if j_init == 0:
        return NullingResult(init.copy(), 0.0, 0.0, 0, True)

    targets = problem.mainlobe_targets
    a_tx, a_rx = init.w_ab_tx.copy(), init.w_ab_rx.copy()
    sol = _restore(h, a_tx, a_rx, _tx_vec(init), problem.tx_array, problem.rx_array, targets, q)
    if sol is None:
        raise InfeasibleError("initial analog beams cannot meet the main-lobe targets")
    d_tx, d_rx = sol
    cur = _pack(a_tx, d_tx, a_rx, d_rx)
    j_cur = _objective(h, cur, q)

    best_bf, best_j = init.copy(), j_init
    if not constraints_hold(init, problem.tx_array, problem.rx_array, targets):
        best_j = math.inf

    def checkpoint(a_tx, a_rx, v):
        nonlocal best_bf, best_j
        bf_q, j_q = _quantized(h, a_tx, a_rx, v, problem)
        if bf_q is not None and j_q < best_j:
            best_bf, best_j = bf_q, j_q

    checkpoint(a_tx, a_rx, _tx_vec(cur))
    warm = _warm_start(h, init, problem)
    if warm is not None:
        sol = _restore(h, warm[0], warm[1], _tx_vec(cur), problem.tx_array, problem.rx_array,
                       targets, q)
        if sol is not None:
            cand = _pack(warm[0], sol[0], warm[1], sol[1])
            checkpoint(warm[0], warm[1], _tx_vec(cand))
            j_warm = _objective(h, cand, q)
            if j_warm < j_cur:
                a_tx, a_rx, (d_tx, d_rx), cur, j_cur = warm[0], warm[1], sol, cand, j_warm
    step = problem.step
    failures = 0
    iters = 0
    converged = False
    for iters in range(1, problem.max_iters + 1):
        if j_cur == 0:
            converged = True
            break
        w, v = _rx_vec(cur), _tx_vec(cur)
        u = np.einsum("rtk,t->rk", h, v)
        cov = u @ u.conj().T
        g_rx = np.outer(_log_grad(cov, w), d_rx.conj())
        if q:
            # gradient of log(w^H C w + q sum_c |d_c|^2 a_c^H C a_c) - log||w||^2
            num = np.vdot(w, cov @ w).real + q * float(np.abs(d_rx) ** 2 @ _chain_leak(h, a_rx, v))
            g_rx = ((cov @ w)[:, None] * d_rx.conj()[None, :] + q * (cov @ a_rx) * np.abs(d_rx) ** 2) \
                / max(num, 1e-300) - np.outer(w, d_rx.conj()) / np.vdot(w, w).real
        g_tx = np.outer(_log_grad(_tx_cov(h, w, a_rx, d_rx, q), v), d_tx.conj())
        new_a_rx = _clip_amplitude(
            a_rx - step * np.linalg.norm(a_rx) * g_rx / max(np.linalg.norm(g_rx), 1e-300)
        )
        new_a_tx = _clip_amplitude(
            a_tx - step * np.linalg.norm(a_tx) * g_tx / max(np.linalg.norm(g_tx), 1e-300)
        )
        sol = _restore(h, new_a_tx, new_a_rx, v, problem.tx_array, problem.rx_array, targets, q)
        if sol is None:
            failures += 1
            step *= 0.5
            if failures >= 10:
                break
            continue
        failures = 0
        cand = _pack(new_a_tx, sol[0], new_a_rx, sol[1])
        j_new = _objective(h, cand, q)
        if not math.isfinite(j_new):
            raise NumericalError("objective became non-finite")
        if j_new >= j_cur:
            step *= 0.5
            if step < 1e-12:
                converged = True
                break
            continue
        rel = (j_cur - j_new) / j_cur
        a_tx, a_rx, (d_tx, d_rx) = new_a_tx, new_a_rx, sol
        cur, j_cur = cand, j_new
        step = min(step * 1.25, 0.5)
        if iters % problem.checkpoint_every == 0:
            checkpoint(a_tx, a_rx, _tx_vec(cur))
        if rel < problem.tolerance:
            converged = True
            break
    checkpoint(a_tx, a_rx, _tx_vec(cur))
    if not math.isfinite(best_j):
        raise InfeasibleError("no quantized realization meets the main-lobe targets")
    if problem.grid_sweeps > 0 and best_j > 0:
        bf_g, j_g = _grid_descent(h, best_bf, problem, problem.grid_sweeps)
        if j_g < best_j and constraints_hold(bf_g, problem.tx_array, problem.rx_array, targets):
            best_bf, best_j = bf_g, j_g
    if best_j >= j_init:
        return NullingResult(init.copy(), j_init, j_init, iters, converged)
    return NullingResult(best_bf, j_init, best_j, iters, converged)


def sensing_beamformers(
    tx_array: PhasedArray,
    rx_array: PhasedArray,
    bearing: float,
    *,
    tx_awv=None,
    n_rx_chains: int = 2,
    n_tx_chains: int = 1,
) -> HybridBeamformers:
    """Initial monostatic beams: every chain steered around `bearing`.

    The first chain carries the (quantized) steering AWV, or `tx_awv` on the
    Tx side; extra chains are steered one null-spacing away so the digital
    stage has independent beams to combine.  Only chain 0 is active.
    """
    def side(array, n, first):
        step = 2.0 / array.element_count  # null spacing in sine space
        cols = [first]
        for c in range(1, n):
            s = math.sin(bearing) + (step if c % 2 else -step) * ((c + 1) // 2)
            s = max(-1.0, min(1.0, s))
            cols.append(quantize_for(steering_vector(array, math.asin(s)), array))
        a = np.column_stack(cols)
        d = np.zeros(n, complex)
        d[0] = 1.0
        return a, d

    first_tx = (
        quantize_for(steering_vector(tx_array, bearing), tx_array) if tx_awv is None
        else np.asarray(tx_awv, complex)
    )
    a_tx, d_tx = side(tx_array, n_tx_chains, first_tx)
    a_rx, d_rx = side(rx_array, n_rx_chains,
                      quantize_for(steering_vector(rx_array, bearing), rx_array))
    return _pack(a_tx, d_tx, a_rx, d_rx)


# ---------------------------------------------------------------------------
# digital cancellation and the pipeline
# ---------------------------------------------------------------------------


def _symbol_block(s, n_streams: int, k: int) -> np.ndarray:
    """Symbols as [N_s, K]; a 1-D input is per-stream (length N_s) or, for a
    single stream, per-subcarrier (length K)."""
    s = np.asarray(s, dtype=complex)
    if s.ndim == 1:
        if s.shape[0] == n_streams:
            return np.repeat(s[:, None], k, axis=1)
        if n_streams == 1 and s.shape[0] == k:
            return s[None, :]
    if s.shape != (n_streams, k):
        raise ValueError(f"symbol block {s.shape} does not fit {n_streams} streams x {k}")
    return s


def predict_leakage(h_hat, bf: HybridBeamformers, s) -> np.ndarray:
    """Noise-free leakage ``W_rx H_hat W_tx s`` per subcarrier, [N_out, K]."""
    h_hat = _as_tensor(h_hat)
    s = _symbol_block(s, bf.w_db_tx.shape[1], h_hat.shape[2])
    x = np.einsum("rtk,tk->rk", h_hat, bf.tx_matrix() @ s)
    return bf.rx_matrix() @ x


def digital_cancel(y, h_ti_hat, bf: HybridBeamformers, s, window=None) -> np.ndarray:
    """Subtract the predicted leakage scaled by a least-squares gain.

    ``beta`` is fitted over `window` (a slice or index array of subcarriers,
    default all).  A zero-energy prediction leaves `y` unchanged and emits a
    :class:`DegenerateEstimateWarning`.
    """
    y = np.asarray(y, dtype=complex)
    y_hat = predict_leakage(h_ti_hat, bf, s)
    if y_hat.shape != y.shape:
        raise ValueError(f"received block {y.shape} does not match prediction {y_hat.shape}")
    sel = slice(None) if window is None else window
    energy = np.vdot(y_hat[..., sel], y_hat[..., sel]).real
    if energy <= 0:
        warnings.warn("predicted leakage has zero energy", DegenerateEstimateWarning, stacklevel=2)
        return y.copy()
    beta = np.vdot(y_hat[..., sel], y[..., sel]) / energy
    return y - beta * y_hat


@dataclass
class CancellationReport:
    power_before: float
    power_after_nulling: float
    power_after_digital: float
    noise_floor: float
    iterations: int = 0
    feasible: bool = True

    @property
    def total_suppression(self) -> float:
        return self.power_before - self.power_after_digital

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def csv_row(self) -> str:
        d = self.to_dict()
        return ",".join(
            str(int(v)) if isinstance(v, bool) else (f"{v:.9g}" if isinstance(v, float) else str(v))
            for v in d.values()
        )

    @staticmethod
    def csv_header() -> str:
        return "power_before,power_after_nulling,power_after_digital,noise_floor,iterations,feasible"


def _referred_db(x, bf: HybridBeamformers) -> float:
    # output power per subcarrier divided by the combiner's noise gain and
    # the precoder norm (unit transmit power)
    gain = float(np.sum(np.abs(bf.rx_matrix()) ** 2) * np.sum(np.abs(bf.tx_matrix()) ** 2))
    p = float(np.mean(np.abs(x) ** 2)) / max(gain, 1e-300)
    return 10 * math.log10(max(p, 1e-300))


@dataclass
class PipelineOutput:
    csi: np.ndarray  # [n_packets, K] sensing CSI estimates
    report: CancellationReport
    bf: HybridBeamformers


def cancel_pipeline(
    snapshots,
    bf_init: HybridBeamformers,
    ti_estimate,
    s,
    cfg: OfdmConfig,
    *,
    tx_array: PhasedArray,
    rx_array: PhasedArray,
    mainlobe_targets=(),
    max_iters: int = 2000,
    rng_seed=0,
    null: bool = True,
    digital: bool = True,
    adc_enob: float | None = None,
) -> PipelineOutput:
    """Beam nulling followed by digital cancellation over a packet train.

    `snapshots` is one :class:`ChannelSnapshot` or a sequence of them sharing
    the same leakage tensor (one probing interval).  Nulling runs once on the
    probed estimate `ti_estimate`; every packet is then received with the
    nulled beams and cleaned digitally.  Powers in the report are averages
    over packets, referred to the combiner noise gain so the noise floor is
    the per-subcarrier thermal noise.  With `adc_enob`, every Rx chain is
    digitized by an AGC-scaled ADC whose quantization noise tracks the
    chain's input power, which is what strong leakage overwhelms; nulling
    then also minimizes the leakage reaching each chain.
    """
    if isinstance(snapshots, ChannelSnapshot):
        snapshots = [snapshots]
    if not snapshots:
        raise ValueError("at least one snapshot required")
    h_hat = _as_tensor(ti_estimate)
    s = _symbol_block(s, bf_init.w_db_tx.shape[1], cfg.n_subcarriers)

    bf = bf_init
    iterations = 0
    feasible = True
    if null:
        q = 0.0 if adc_enob is None else float(adc_noise_var(1.0, adc_enob))
        problem = NullingProblem(h_hat, bf_init, tx_array, rx_array, list(mainlobe_targets),
                                 max_iters=max_iters, adc_weight=q)
        try:
            res = beam_null(problem)
            bf, iterations = res.bf, res.iterations
        except InfeasibleError:
            feasible = False

    rng = np.random.default_rng(rng_seed)
    sigma = math.sqrt(cfg.noise_var / 2)
    p_before, p_null, p_dig, csi = [], [], [], []
    for snap in snapshots:
        ti = snap.h_ti
        p_before.append(_referred_db(predict_leakage(ti, bf_init, s), bf_init))
        leak = predict_leakage(ti, bf, s)
        p_null.append(_referred_db(leak, bf))
        x = np.einsum("rtk,tk->rk", snap.total(), bf.tx_matrix() @ s)
        x = x + sigma * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
        z = bf.w_ab_rx.conj().T @ x
        if adc_enob is not None:
            var = adc_noise_var(np.mean(np.abs(z) ** 2, axis=1, keepdims=True), adc_enob)
            z = z + np.sqrt(var / 2) * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))
        y = bf.w_db_rx @ z
        if digital:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateEstimateWarning)
                r = digital_cancel(y, h_hat, bf, s)
            # leakage share of the residual: same beta applied to the
            # noise-free leakage alone
            resid_leak = leak - (y - r)
        else:
            r, resid_leak = y, leak
        p_dig.append(_referred_db(resid_leak, bf))
        csi.append(r[0] / s[0])

    def mean_db(v):
        return 10 * math.log10(np.mean(10 ** (np.asarray(v) / 10)))

    report = CancellationReport(
        mean_db(p_before), mean_db(p_null), mean_db(p_dig),
        10 * math.log10(cfg.noise_var), iterations, feasible,
    )
    return PipelineOutput(np.array(csi), report, bf)
