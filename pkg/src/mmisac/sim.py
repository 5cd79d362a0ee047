"""Scenario engine: per-slot beam plans for the four schedulers, link and
sensing simulation, baseline comparison and the large-scale sweeps.
"""

from __future__ import annotations

import functools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np
from scipy import stats

from .array import (
    SPEED_OF_LIGHT,
    PhasedArray,
    quantize_for,
    sector_centers,
    sector_codebook,
    steering_vector,
    subarray_beamwidth,
    widen_beam,
)
from .cancellation import cancel_pipeline, normalized_gain_db, sensing_beamformers
from .channel import (
    CirMatrix,
    Motion,
    Node,
    OfdmConfig,
    Scatterer,
    Scene,
    TxInterference,
    compose,
    csi_to_cir,
    dbm_to_mw,
    free_space_loss_db,
    gen_comm_channel,
    gen_sensing_channel,
    radar_amplitude,
)
from .errors import DetectionError
from .fusion import (
    BISTATIC,
    MONOSTATIC,
    GridSpec,
    Measurement,
    grid_fuse,
    respiration_rate,
    s_snr,
    tap_s_snr,
    wrap_angle,
)
from .probing import detect_subjects, ti_probe, trn_sequence
from .scheduling import (
    SUBJECT,
    UE,
    EmulationGrid,
    Entity,
    RangeBearingGrid,
    beam_pattern_coverage,
    build_bc_sets,
    comm_sets_from_grid,
    schedule,
)

SCHEDULERS = ("so", "co", "rr", "bcset")
THROUGHPUT_CAP = 8e9
RESPIRATION_MIN_S = 30.0


def throughput(snr_db, bandwidth: float, efficiency: float = 0.8, cap_bps: float = THROUGHPUT_CAP):
    """Capped Shannon rate ``efficiency * B * log2(1 + snr)``."""
    if not 0 < efficiency <= 1:
        raise ValueError("efficiency must lie in (0, 1]")
    rate = efficiency * bandwidth * np.log2(1 + 10 ** (np.asarray(snr_db, dtype=float) / 10))
    out = np.minimum(rate, cap_bps)
    return float(out) if np.ndim(out) == 0 else out


class ConfigError(ValueError):
    """Scenario configuration violations; ``.problems`` lists all of them."""

    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass
class ScenarioConfig:
    scene: Scene
    ofdm: OfdmConfig = field(default_factory=lambda: OfdmConfig(n_subcarriers=128))
    codebook_size: int = 32
    slot_duration: float = 0.1
    duration: float = 60.0
    scheduler: str = "bcset"
    seed: int = 0
    tx_power_dbm: float = 10.0
    task: str = "respiration"  # respiration | presence
    k_factor: float = 10.0
    efficiency: float = 0.8
    interference_margin_db: float = 50.0
    cancel: bool = True
    nulling_iters: int = 300
    adc_enob: float | None = None
    ue_counts: tuple = (1, 2, 5, 10, 15, 20, 30, 40, 50)
    ap_counts: tuple = (1, 2, 3, 4, 5, 6)
    trials: int = 500

    def problems(self) -> list[str]:
        out = []
        if not self.scene.aps:
            out.append("scene needs at least one AP")
        if self.slot_duration <= 0:
            out.append("slot_duration must be positive")
        if self.duration < self.slot_duration:
            out.append("duration must be >= slot_duration")
        if self.scheduler not in SCHEDULERS:
            out.append(f"scheduler must be one of {SCHEDULERS}")
        if self.task not in ("respiration", "presence"):
            out.append("task must be 'respiration' or 'presence'")
        elif self.task == "respiration" and self.scene.subjects and self.duration < RESPIRATION_MIN_S:
            out.append(f"respiration needs duration >= {RESPIRATION_MIN_S:g} s")
        if self.codebook_size < 1:
            out.append("codebook_size must be >= 1")
        if not 0 < self.efficiency <= 1:
            out.append("efficiency must lie in (0, 1]")
        if self.trials < 1:
            out.append("trials must be >= 1")
        if any(c < 1 for c in self.ue_counts) or any(c < 1 for c in self.ap_counts):
            out.append("sweep counts must be >= 1")
        return out

    def validate(self) -> None:
        probs = self.problems()
        if probs:
            raise ConfigError(probs)

    @property
    def n_slots(self) -> int:
        return int(round(self.duration / self.slot_duration))


@dataclass
class Metrics:
    scheduler: str
    throughput_bps: list
    mean_s_snr_db: float | None
    rate_bpm: float | None = None
    rate_error_bpm: float | None = None
    time_span: int = 1
    cancellation: list = field(default_factory=list)

    @property
    def mean_throughput(self) -> float:
        return float(np.mean(self.throughput_bps)) if self.throughput_bps else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_throughput"] = self.mean_throughput
        return _round_floats(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _round_floats(obj):
    """Round every float to 9 significant digits for stable text output."""
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# beam plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlotBeam:
    center: float
    width: float  # 0 for a plain steered beam
    label: str


@functools.lru_cache(maxsize=32)
def _natural_width(array: PhasedArray) -> float:
    return subarray_beamwidth(array, array.element_count)


def beam_awv(array: PhasedArray, beam: SlotBeam) -> np.ndarray:
    """Quantized AWV for a plan entry, widened only when needed."""
    if beam.width <= _natural_width(array):
        w = steering_vector(array, beam.center)
    else:
        w = widen_beam(array, beam.center, beam.width)
    return quantize_for(w, array)


def _covering_beam(array, bearings, label) -> SlotBeam:
    lo, hi = min(bearings), max(bearings)
    return SlotBeam(0.5 * (lo + hi), hi - lo, label)


def beam_plan(cfg: ScenarioConfig, ap: Node | None = None) -> list[SlotBeam]:
    """Cyclic list of per-slot beams for the configured scheduler."""
    ap = ap or cfg.scene.aps[0]
    ues = [ap.bearing_to(u.position) for u in cfg.scene.ues]
    subj = [ap.bearing_to(s.position) for s in cfg.scene.subjects]
    co = [SlotBeam(b, 0.0, f"ue{i}") for i, b in enumerate(ues)]
    so = [SlotBeam(b, 0.0, f"subject{i}") for i, b in enumerate(subj)]
    if cfg.scheduler == "co":
        return co or so
    if cfg.scheduler == "so":
        return so or co
    if cfg.scheduler == "rr":
        return co + so
    geometry = EmulationGrid()
    ents = [
        Entity(f"ue{i}", UE, min(ap.distance_to(u.position), geometry.max_range), ues[i])
        for i, u in enumerate(cfg.scene.ues)
    ] + [
        Entity(f"subject{i}", SUBJECT, min(ap.distance_to(s.position), geometry.max_range), subj[i])
        for i, s in enumerate(cfg.scene.subjects)
    ]
    grid = RangeBearingGrid(geometry.k_r, geometry.k_d, geometry.max_range, ents)
    sets = build_bc_sets(
        grid,
        comm_sets_from_grid(grid, geometry.ue_tolerance_bins, geometry.max_width_bins, geometry.budget),
        geometry.max_width_bins,
        geometry.budget,
    ).sets
    schedule(sets, 1)
    sets.sort(key=lambda s: s.slot)
    plan = []
    for s in sets:
        members = s.ues + s.subjects
        bearings = [grid.entities[m].bearing for m in members]
        plan.append(_covering_beam(ap.array, bearings, "+".join(members)))
    return plan or co or so


# ---------------------------------------------------------------------------
# one scenario
# ---------------------------------------------------------------------------


def _db(p) -> float:
    return 10 * math.log10(max(float(p), 1e-300))


def _comm_snr_db(cfg: ScenarioConfig, ap: Node, ue: Node, h, beam: SlotBeam) -> float:
    v = beam_awv(ap.array, beam)
    v = v / np.linalg.norm(v)
    w = quantize_for(steering_vector(ue.array, ue.bearing_to(ap.position)), ue.array)
    w = w / np.linalg.norm(w)
    g = np.einsum("r,rtk,t->k", w.conj(), h, v)
    p_sc = dbm_to_mw(cfg.tx_power_dbm) / cfg.ofdm.n_subcarriers
    return _db(p_sc * np.mean(np.abs(g) ** 2) / cfg.ofdm.noise_var)


def subject_tap(cfg: OfdmConfig, ap: Node, subject: Scatterer) -> int:
    """Monostatic CIR tap of a subject's rest position."""
    d = ap.distance_to(subject.position)
    return int(round(2 * d / SPEED_OF_LIGHT / cfg.sample_time))


def _sensing_slots(plan, n_slots) -> list[int]:
    # slots whose beam serves a subject; a plan without any (CO) senses
    # incidentally on every slot
    sensing = [n for n in range(n_slots) if "subject" in plan[n % len(plan)].label]
    return sensing or list(range(n_slots))


def _sense(cfg: ScenarioConfig, ap: Node, plan, slots):
    """Monostatic echo of every sensing slot after cancellation.

    Slots are grouped by beam; each beam is probed and nulled once, then
    its packets run through the cancellation pipeline.  Returns the CSI in
    slot order and one report per beam.
    """
    arr = ap.array
    proc = TxInterference(cfg.ofdm, arr, arr, seed=cfg.seed,
                          margin_db=cfg.interference_margin_db, n_sectors=cfg.codebook_size)
    s = math.sqrt(dbm_to_mw(cfg.tx_power_dbm) / cfg.ofdm.n_subcarriers) * trn_sequence(
        cfg.ofdm.n_subcarriers, [cfg.seed, 4])
    by_beam: dict[SlotBeam, list[int]] = {}
    for n in slots:
        by_beam.setdefault(plan[n % len(plan)], []).append(n)
    csi = {}
    reports = []
    for j, (beam, ns) in enumerate(by_beam.items()):
        v = beam_awv(arr, beam)
        v = v / np.linalg.norm(v)
        h_ti = proc.for_awv(v, 0)
        est = ti_probe([v], [h_ti], cfg.ofdm, tx_power_dbm=cfg.tx_power_dbm,
                       leak_taps=proc.n_taps, rng_seed=[cfg.seed, 5, j]).per_sector[0]
        bf = sensing_beamformers(arr, arr, beam.center, tx_awv=v)
        g = min(normalized_gain_db(v, arr, beam.center),
                normalized_gain_db(bf.w_ab_rx[:, 0], arr, beam.center)) - 3.0
        zero = np.zeros_like(h_ti)
        snaps = [
            compose(h_ti, gen_sensing_channel(ap, ap, cfg.scene.subjects, cfg.ofdm,
                                              t=n * cfg.slot_duration), zero, zero,
                    timestamp=n * cfg.slot_duration)
            for n in ns
        ]
        out = cancel_pipeline(
            snaps, bf, est, s, cfg.ofdm, tx_array=arr, rx_array=arr,
            mainlobe_targets=[(beam.center, g)], max_iters=cfg.nulling_iters,
            rng_seed=[cfg.seed, 6, j], null=cfg.cancel, digital=cfg.cancel, adc_enob=cfg.adc_enob,
        )
        csi.update(zip(ns, out.csi))
        reports.append(out.report)
    return np.array([csi[n] for n in slots]), reports


def run_scenario(cfg: ScenarioConfig) -> Metrics:
    """Simulate `cfg.duration` seconds of slots on the first AP.

    Each slot the AP transmits on the scheduler's beam.  The UEs share the
    slot's airtime and their rate follows the post-beamforming SNR of a
    Rician channel fixed for the run.  Slots whose beam serves a subject
    also record the monostatic echo, which is cancelled and passed to the
    sensing estimators.  Deterministic for a given seed.
    """
    cfg.validate()
    ap = cfg.scene.aps[0]
    plan = beam_plan(cfg, ap)
    n_slots = cfg.n_slots
    tput = []
    for i, ue in enumerate(cfg.scene.ues):
        h = gen_comm_channel(ap, ue, cfg.ofdm, cfg.k_factor, rng_seed=[cfg.seed, 1, i])
        per_beam = {b: throughput(_comm_snr_db(cfg, ap, ue, h, b), cfg.ofdm.bandwidth, cfg.efficiency)
                    for b in dict.fromkeys(plan)}
        share = len(cfg.scene.ues)
        tput.append(float(np.mean([per_beam[plan[n % len(plan)]] for n in range(n_slots)])) / share)

    if not cfg.scene.subjects:
        return Metrics(cfg.scheduler, tput, None, time_span=len(plan))

    slots = _sensing_slots(plan, n_slots)
    csi, reports = _sense(cfg, ap, plan, slots)
    interval = cfg.slot_duration * (slots[1] - slots[0] if len(slots) > 1 else 1)
    cir = CirMatrix.from_csi(csi, cfg.ofdm, interval)
    taps = [subject_tap(cfg.ofdm, ap, s) for s in cfg.scene.subjects]
    snr = float(np.mean([tap_s_snr(cir, t) for t in taps]))
    rate = err = None
    if cfg.task == "respiration":
        subj = cfg.scene.subjects[0]
        try:
            rate = respiration_rate(cir, taps[0])
            err = abs(rate - subj.motion.frequency * 60)
        except DetectionError:
            pass
    return Metrics(cfg.scheduler, tput, snr, rate, err, len(plan), [r.to_dict() for r in reports])


def run_baselines(cfg: ScenarioConfig) -> dict[str, Metrics]:
    """The four schedulers on the same scene and seed."""
    return {name: run_scenario(replace(cfg, scheduler=name)) for name in SCHEDULERS}


def respiration_scene(array: PhasedArray = PhasedArray(16)) -> Scene:
    """One AP, one UE at 3 m and one breathing person at 1.5 m a few degrees
    off the UE's bearing (0.25 Hz, 4 mm chest displacement)."""
    ap = Node("ap", (0.0, 0.0), array)
    ue_b, subj_b = math.radians(5.0), math.radians(12.0)
    ue = Node("ue", (3.0 * math.cos(ue_b), 3.0 * math.sin(ue_b)), array, heading=ue_b + math.pi)
    u = (math.cos(subj_b), math.sin(subj_b))
    chest = Scatterer(
        (1.5 * u[0], 1.5 * u[1]), 0.5,
        Motion("sinusoidal-displacement", amplitude=0.004, frequency=0.25, direction=u),
        "person",
    )
    return Scene([ap], [ue], [chest])


# ---------------------------------------------------------------------------
# bundled gesture trace
# ---------------------------------------------------------------------------

GESTURE_TRACE = "gesture_trace.npz"


def make_gesture_trace(n_packets: int = 200, packet_interval: float = 0.01, seed: int = 0):
    """Slow-time CIR tap of a push-pull hand gesture, unit motion power.

    A hand 0.5 m in front of a 16-element array moves 5 cm back and forth
    at 1 Hz.  The noise-free series at its strongest tap is mean-removed and
    scaled to unit mean power.  Returns ``(trace, packet_interval)``.
    """
    cfg = OfdmConfig(n_subcarriers=128)
    arr = PhasedArray(16)
    ap = Node("ap", (0.0, 0.0), arr)
    hand = Scatterer((0.5, 0.0), 0.01,
                     Motion("sinusoidal-displacement", amplitude=0.05, frequency=1.0,
                            direction=(1.0, 0.0), phase=0.1 * seed))
    w = steering_vector(arr, 0.0) / math.sqrt(arr.element_count)
    csi = np.array([
        np.einsum("r,rtk,t->k", w.conj(), gen_sensing_channel(ap, ap, [hand], cfg, t=n * packet_interval), w)
        for n in range(n_packets)
    ])
    cir = csi_to_cir(csi, axis=1)
    series = cir[:, int(np.argmax(np.mean(np.abs(cir) ** 2, axis=0)))]
    series = series - series.mean()
    return series / math.sqrt(np.mean(np.abs(series) ** 2)), packet_interval


def save_gesture_trace(path) -> None:
    trace, dt = make_gesture_trace()
    np.savez(path, trace=trace, packet_interval=dt)


@functools.lru_cache(maxsize=1)
def load_gesture_trace():
    with resources.as_file(resources.files("mmisac") / "data" / GESTURE_TRACE) as p:
        with np.load(p) as d:
            return d["trace"].copy(), float(d["packet_interval"])


@dataclass
class GestureRecovery:
    """Moving-tap S-SNR and detections without and with cancellation."""

    s_snr_before: float
    s_snr_after: float
    detected_before: int
    detected_after: int
    report: object


def gesture_recovery(seed: int = 0, *, adc_enob: float | None = 3.0, n_packets: int = 200,
                     packet_interval: float = 0.01, margin_db: float = 50.0,
                     tx_power_dbm: float = 10.0, max_iters: int = 2000,
                     n_rx_chains: int = 1, distance: float = 1.0) -> GestureRecovery:
    """Push-pull hand gesture in front of a 16-element AP under Tx leakage.

    The hand (RCS 0.01 m^2, 5 cm at 1 Hz) sits `distance` meters away at
    3 deg.  Leakage for the sector beam is probed with :func:`ti_probe`,
    then the packet train is received twice: raw and through
    :func:`cancel_pipeline`.  Each CIR is scored by the S-SNR of the hand's
    strongest tap (rest tap +-1) and by :func:`detect_subjects`.
    """
    cfg = OfdmConfig()
    arr = PhasedArray(16)
    ap = Node("ap", (0.0, 0.0), arr, n_chains=2)
    b = math.radians(3.0)
    u = (math.cos(b), math.sin(b))
    hand = Scatterer((distance * u[0], distance * u[1]), 0.01,
                     Motion("sinusoidal-displacement", amplitude=0.05, frequency=1.0,
                                     direction=u), "hand")
    codebook, centers = sector_codebook(arr, 32), sector_centers(32)
    sec = int(np.argmin(np.abs(centers - b)))
    proc = TxInterference(cfg, arr, arr, seed=seed, margin_db=margin_db)
    h_ti = proc.for_sector(sec, 0)
    est = ti_probe(codebook, [proc.for_sector(i, 0) for i in range(32)], cfg,
                   leak_taps=proc.n_taps, rng_seed=[seed, 5]).per_sector[sec]
    zero = np.zeros_like(h_ti)
    snaps = [compose(h_ti, gen_sensing_channel(ap, ap, [hand], cfg, t=n * packet_interval), zero, zero)
             for n in range(n_packets)]
    s = math.sqrt(dbm_to_mw(tx_power_dbm) / cfg.n_subcarriers) * trn_sequence(cfg.n_subcarriers, [seed, 4])
    bf = sensing_beamformers(arr, arr, b, tx_awv=codebook[sec], n_rx_chains=n_rx_chains)
    targets = [(b, 10 * math.log10(arr.element_count) - 3.0)]
    tap = subject_tap(cfg, ap, hand)

    def run(active):
        out = cancel_pipeline(snaps, bf, est, s, cfg, tx_array=arr, rx_array=arr,
                              mainlobe_targets=targets, max_iters=max_iters, rng_seed=[seed, 6],
                              null=active, digital=active, adc_enob=adc_enob)
        cir = CirMatrix.from_csi(out.csi, cfg, packet_interval)
        # the 5 cm swing spans neighbouring taps; score the strongest
        score = max(tap_s_snr(cir, k) for k in range(tap - 1, tap + 2))
        return score, len(detect_subjects([cir], cfg, [b])), out.report

    before, det_before, _ = run(False)
    after, det_after, report = run(True)
    return GestureRecovery(before, after, det_before, det_after, report)


# ---------------------------------------------------------------------------
# large-scale sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSetup:
    room: tuple = (16.0, 16.0)
    n_subjects: int = 10
    tx_power_dbm: float = 0.0
    bandwidth: float = 2e9
    n_subcarriers: int = 128
    noise_dbm: float = -98.0
    k_factor_db: float = 10.0
    ue_gain_db: float = 12.04
    subject_rcs: float = 0.5
    efficiency: float = 0.8
    geometry: EmulationGrid = EmulationGrid()


def _ap_layout(n_ap: int, room) -> list[tuple[float, float, float]]:
    """APs on the room perimeter facing its center, (x, y, heading)."""
    w, h = room
    cx, cy = w / 2, h / 2
    out = []
    for i in range(n_ap):
        ang = 2 * math.pi * i / n_ap + math.pi
        x = cx + 0.5 * w * math.cos(ang)
        y = cy + 0.5 * h * math.sin(ang)
        out.append((x, y, math.atan2(cy - y, cx - x)))
    return out


@functools.lru_cache(maxsize=64)
def _width_gain_db(width_bins: int, bin_width: float, m: int = 16) -> float:
    """Array gain of the widest-enough subarray for a beam `width_bins` wide."""
    arr = PhasedArray(m)
    target = width_bins * bin_width
    n = 1
    for k in range(m, 0, -1):
        if subarray_beamwidth(arr, k) >= target:
            n = k
            break
    return 10 * math.log10(n)


def _relative(ap, p):
    dx, dy = p[0] - ap[0], p[1] - ap[1]
    r = math.hypot(dx, dy)
    b = (math.atan2(dy, dx) - ap[2] + math.pi) % (2 * math.pi) - math.pi
    return r, b


def _cnoise(rng, var, n):
    return math.sqrt(var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def _excess_snr(series, reference) -> float:
    """Linear motion-to-noise ratio of one view, the noise share removed,
    so independent views add up (maximal-ratio fusion)."""
    return max(10 ** (s_snr(series - series.mean(), reference) / 10) - 1.0, 0.0)


def _trial(n_ue: int, n_ap: int, setup: SweepSetup, rng) -> tuple[float, float | None]:
    geo = setup.geometry
    w, h = setup.room
    ue_pos = rng.uniform((0, 0), (w, h), size=(n_ue, 2))
    subj_pos = rng.uniform((0, 0), (w, h), size=(setup.n_subjects, 2))
    aps = _ap_layout(n_ap, setup.room)
    noise = dbm_to_mw(setup.noise_dbm)
    p_sc = dbm_to_mw(setup.tx_power_dbm) / setup.n_subcarriers
    trace, _ = load_gesture_trace()
    k_lin = 10 ** (setup.k_factor_db / 10)

    # associate each UE with the nearest AP that sees it
    assoc = {}
    for i, p in enumerate(ue_pos):
        best = None
        for a, ap in enumerate(aps):
            r, b = _relative(ap, p)
            if abs(b) <= math.pi / 2 and 0 < r <= geo.max_range and (best is None or r < best[0]):
                best = (r, a)
        if best is not None:
            assoc[i] = best[1]

    rates = np.zeros(n_ue)
    views = [[] for _ in range(setup.n_subjects)]
    for a, ap in enumerate(aps):
        ents = []
        for i, p in enumerate(ue_pos):
            if assoc.get(i) == a:
                r, b = _relative(ap, p)
                ents.append(Entity(f"u{i}", UE, r, b))
        for j, p in enumerate(subj_pos):
            r, b = _relative(ap, p)
            if abs(b) <= math.pi / 2 and 0 < r <= geo.max_range:
                ents.append(Entity(f"s{j}", SUBJECT, r, b))
        if not ents:
            continue
        grid = RangeBearingGrid(geo.k_r, geo.k_d, geo.max_range, ents)
        res = build_bc_sets(
            grid, comm_sets_from_grid(grid, geo.ue_tolerance_bins, geo.max_width_bins, geo.budget),
            geo.max_width_bins, geo.budget,
        )
        span = schedule(res.sets, 1)
        for s in res.sets:
            g_tx = _width_gain_db(s.beam.width_bins, grid.bin_sizes[1])
            for u in s.ues:
                r = grid.entities[u].range
                fade = abs(math.sqrt(k_lin / (k_lin + 1))
                           + math.sqrt(1 / (2 * (k_lin + 1))) * complex(*rng.standard_normal(2))) ** 2
                snr = (p_sc * 10 ** ((g_tx + setup.ue_gain_db - free_space_loss_db(r, 60e9)) / 10)
                       * fade / noise)
                rates[int(u[1:])] += throughput(_db(snr), setup.bandwidth, setup.efficiency) / span / len(s.ues)
        # every scheduled beam illuminates the subjects inside its coverage:
        # the AP senses them monostatically and each of its UEs bistatically
        members = [int(u[1:]) for u in grid.ids(UE)]
        for s in res.sets:
            g_tx = 10 ** (_width_gain_db(s.beam.width_bins, grid.bin_sizes[1]) / 10)
            sense, _ = beam_pattern_coverage(s.beam, grid, geo.budget)
            for sj in grid.ids(SUBJECT):
                if grid.cells[sj] not in sense:
                    continue
                j = int(sj[1:])
                r = grid.entities[sj].range
                amps = [g_tx * radar_amplitude(r, r, setup.subject_rcs, 60e9)]
                amps += [math.sqrt(g_tx) * radar_amplitude(r, float(np.hypot(*(subj_pos[j] - ue_pos[u]))),
                                                           setup.subject_rcs, 60e9)
                         for u in members]
                for amp in amps:
                    sig = amp * math.sqrt(p_sc * setup.n_subcarriers) * trace + _cnoise(rng, noise, trace.size)
                    views[j].append(_excess_snr(sig, _cnoise(rng, noise, trace.size)))
    fused = [_db(sum(v)) for v in views if sum(v) > 0]
    return float(np.mean(rates)), float(np.mean(fused)) if fused else None


@dataclass
class TrendTable:
    case: int
    setting_name: str
    settings: list
    throughput: list
    s_snr: list

    def spearman(self) -> tuple[float, float]:
        rho_t = stats.spearmanr(self.settings, self.throughput).statistic
        rho_s = stats.spearmanr(self.settings, self.s_snr).statistic
        return float(rho_t), float(rho_s)

    def csv(self) -> str:
        lines = [f"{self.setting_name},mean_throughput_bps,mean_s_snr_db"]
        for s, t, q in zip(self.settings, self.throughput, self.s_snr):
            lines.append(f"{s},{t:.9g},{q:.9g}")
        return "\n".join(lines) + "\n"


def _setting_mean(args):
    case, seed, k, n_ue, n_ap, trials, setup = args
    t_acc, s_acc = [], []
    for i in range(trials):
        t, q = _trial(n_ue, n_ap, setup, np.random.default_rng([seed, case, k, i]))
        t_acc.append(t)
        if q is not None:
            s_acc.append(q)
    return float(np.mean(t_acc)), float(np.mean(s_acc)) if s_acc else float("nan")


def sweep_large_scale(case: int, trials: int = 500, seed: int = 0, setup: SweepSetup = SweepSetup(),
                      ue_counts=(1, 2, 5, 10, 15, 20, 30, 40, 50), ap_counts=(1, 2, 3, 4, 5, 6),
                      n_ue_case2: int = 50, workers: int = 1) -> TrendTable:
    """Mean per-UE throughput and fused subject S-SNR per setting.

    Case 1 varies the UE count with one AP; case 2 varies the AP count with
    `n_ue_case2` UEs.  Trial ``i`` of setting ``k`` uses the seed
    ``[seed, case, k, i]``, so the table does not depend on `workers`
    (0 means one process per core).
    """
    if case not in (1, 2):
        raise ValueError("case must be 1 or 2")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    settings = list(ue_counts) if case == 1 else list(ap_counts)
    jobs = [
        (case, seed, k, *((val, 1) if case == 1 else (n_ue_case2, val)), trials, setup)
        for k, val in enumerate(settings)
    ]
    if workers == 1:
        means = [_setting_mean(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers or None) as pool:
            means = list(pool.map(_setting_mean, jobs))
    return TrendTable(case, "n_ue" if case == 1 else "n_ap", settings,
                      [m[0] for m in means], [m[1] for m in means])


# ---------------------------------------------------------------------------
# tracking scenario
# ---------------------------------------------------------------------------


def rectangle_path(t, center=(3.0, 0.0), size=(2.0, 1.5), speed: float = 0.5) -> np.ndarray:
    """Position and velocity on a rectangle walked counter-clockwise from
    its lower-left corner at constant `speed`: ``[x, y, vx, vy]``."""
    w, h = size
    x0, y0 = center[0] - w / 2, center[1] - h / 2
    legs = [((x0, y0), (1, 0), w), ((x0 + w, y0), (0, 1), h),
            ((x0 + w, y0 + h), (-1, 0), w), ((x0, y0 + h), (0, -1), h)]
    d = (speed * t) % (2 * (w + h))
    for (px, py), (ux, uy), length in legs:
        if d <= length:
            return np.array([px + ux * d, py + uy * d, speed * ux, speed * uy])
        d -= length
    return np.array([x0, y0, speed, 0.0])


def tracking_scenario(seed: int, duration: float = 20.0, dt: float = 0.1,
                      sigma_range: float = 0.05, sigma_bearing: float = math.radians(2.0)):
    """Noisy monostatic range/bearing fixes of a walker on `rectangle_path`
    seen by one AP at the origin.  Returns ``(times, batches, sensors, truth)``."""
    rng = np.random.default_rng(seed)
    times = np.arange(0.0, duration, dt)
    truth = np.array([rectangle_path(t) for t in times])
    batches = []
    for x, y, _, _ in truth:
        r = math.hypot(x, y) + sigma_range * rng.standard_normal()
        b = math.atan2(y, x) + sigma_bearing * rng.standard_normal()
        batches.append([Measurement("ap", MONOSTATIC, b, r, (sigma_range, sigma_bearing))])
    return times, batches, {"ap": (0.0, 0.0, 0.0)}, truth


# ---------------------------------------------------------------------------
# sensing diversity layout
# ---------------------------------------------------------------------------

DIVERSITY_SENSORS = {
    "ap": (0.0, 0.0, 0.0),
    "ue1": (3.0, -3.0, math.pi / 2),
    "ue2": (6.0, 0.0, math.pi),
    "ue3": (0.5, 2.5, -math.pi / 4),
}
DIVERSITY_TARGET = (3.0, 0.2)
DIVERSITY_GRID = GridSpec(2.0, 4.0, -1.0, 1.0, 0.01)


def diversity_measurements(target=DIVERSITY_TARGET, sensors=None,
                           noise=(0.0375, math.radians(3.0))) -> list:
    """Noise-free views of `target`: the AP's range and bearing first, then
    one bearing per UE (the bistatic views) in sensor order."""
    sensors = DIVERSITY_SENSORS if sensors is None else sensors
    out = []
    for name, (x, y, heading) in sensors.items():
        bearing = float(wrap_angle(math.atan2(target[1] - y, target[0] - x) - heading))
        if not out:
            out.append(Measurement(name, MONOSTATIC, bearing, math.hypot(target[0] - x, target[1] - y), noise))
        else:
            out.append(Measurement(name, BISTATIC, bearing, None, noise))
    return out


def diversity_areas(spec: GridSpec = DIVERSITY_GRID) -> list[float]:
    """Half-max likelihood area after fusing 1, 2, ... views of the layout."""
    meas = diversity_measurements()
    return [grid_fuse(meas[: n + 1], DIVERSITY_SENSORS, spec).halfmax_area for n in range(len(meas))]
