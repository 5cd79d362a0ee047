"""Beam-compatible sets (BC-Sets) over a range x bearing grid and the slot
schedulers that serve them.

A beam is a closed interval of bearing bins ``[lo, hi]``.  Its reach
shrinks as it widens: communication range falls as ``width**-1/2`` (one-way
link budget) and sensing range as ``width**-1/4`` (two-way budget), both
anchored at a one-bin beam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import lil_matrix

from .errors import InfeasibleError, InstanceTooLargeError

UE = "ue"
SUBJECT = "subject"

OPT_MAX_ENTITIES = 20


@dataclass(frozen=True)
class Entity:
    id: str
    kind: str  # "ue" or "subject"
    range: float
    bearing: float


@dataclass(frozen=True)
class LinkBudget:
    """Range reach of a one-bin beam; wider beams reach less far."""

    comm_range0: float = 12.0
    sense_range0: float = 8.0

    def max_range(self, width_bins: int, kind: str) -> float:
        if width_bins < 1:
            raise InfeasibleError("beam narrower than one bearing bin")
        if kind == UE:
            return self.comm_range0 * width_bins**-0.5
        return self.sense_range0 * width_bins**-0.25


class RangeBearingGrid:
    """Entities binned on ``k_r`` range bins x ``k_d`` bearing bins."""

    def __init__(self, k_r: int, k_d: int, max_range: float, entities=(), fov: float = math.pi):
        if k_r < 1 or k_d < 1:
            raise ValueError("k_r and k_d must be >= 1")
        if not max_range > 0:
            raise ValueError("max_range must be positive")
        self.k_r, self.k_d = k_r, k_d
        self.max_range, self.fov = max_range, fov
        self.bin_sizes = (max_range / k_r, fov / k_d)
        self.entities: dict[str, Entity] = {}
        self.cells: dict[str, tuple[int, int]] = {}
        self.occupancy: dict[tuple[int, int], list[str]] = {}
        for e in entities:
            self.add(e)

    def cell_of(self, range_m: float, bearing: float) -> tuple[int, int]:
        if not (0 <= range_m <= self.max_range) or abs(bearing) > self.fov / 2 + 1e-12:
            raise ValueError(f"position ({range_m}, {bearing}) outside the grid")
        ri = min(int(range_m / self.bin_sizes[0]), self.k_r - 1)
        di = min(int((bearing + self.fov / 2) / self.bin_sizes[1]), self.k_d - 1)
        return ri, di

    def add(self, e: Entity) -> None:
        if e.id in self.entities:
            raise ValueError(f"duplicate entity id {e.id!r}")
        if e.kind not in (UE, SUBJECT):
            raise ValueError(f"unknown entity kind {e.kind!r}")
        cell = self.cell_of(e.range, e.bearing)
        self.entities[e.id] = e
        self.cells[e.id] = cell
        self.occupancy.setdefault(cell, []).append(e.id)

    def ids(self, kind: str) -> list[str]:
        return sorted(i for i, e in self.entities.items() if e.kind == kind)

    def cell_range(self, ri: int) -> float:
        # a cell is reached when its center is within range
        return (ri + 0.5) * self.bin_sizes[0]

    def bin_center(self, di: int) -> float:
        return -self.fov / 2 + (di + 0.5) * self.bin_sizes[1]

    def __len__(self):
        return len(self.entities)


@dataclass(frozen=True)
class Beam:
    lo: int
    hi: int

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError("empty bearing interval")

    @property
    def width_bins(self) -> int:
        return self.hi - self.lo + 1

    def overlaps(self, other: Beam) -> bool:
        return not (self.hi < other.lo or other.hi < self.lo)

    def spec(self, grid: RangeBearingGrid, budget: LinkBudget) -> tuple[float, float, float]:
        """(center bearing, width, sensing max range)."""
        d = grid.bin_sizes[1]
        center = -grid.fov / 2 + (self.lo + self.hi + 1) / 2 * d
        return center, self.width_bins * d, budget.max_range(self.width_bins, SUBJECT)


@dataclass
class BcSet:
    ues: list
    subjects: list
    beam: Beam
    chain: int | None = None
    slot: int | None = None

    @property
    def size(self) -> int:
        return len(self.ues) + len(self.subjects)


@dataclass
class BcResult:
    sets: list
    uncoverable: list
    operations: int = 0


class _Counter:
    def __init__(self):
        self.n = 0


def _covers(grid, budget, beam: Beam, eid: str) -> bool:
    ri, di = grid.cells[eid]
    if not beam.lo <= di <= beam.hi:
        return False
    return grid.cell_range(ri) <= budget.max_range(beam.width_bins, grid.entities[eid].kind) + 1e-9


def beam_pattern_coverage(beam: Beam, grid: RangeBearingGrid, budget: LinkBudget, counter=None):
    """Cells ``(ri, di)`` reached by `beam`, with the sensing and the
    communication range limits: returns ``(sense_cells, comm_cells)``."""
    if beam.lo < 0 or beam.hi >= grid.k_d:
        raise ValueError("beam outside the grid")
    r_s = budget.max_range(beam.width_bins, SUBJECT)
    r_c = budget.max_range(beam.width_bins, UE)
    sense, comm = set(), set()
    for di in range(beam.lo, beam.hi + 1):
        for ri in range(grid.k_r):
            if counter is not None:
                counter.n += 1
            rc = grid.cell_range(ri)
            if rc > max(r_s, r_c) + 1e-9:
                break
            if rc <= r_s + 1e-9:
                sense.add((ri, di))
            if rc <= r_c + 1e-9:
                comm.add((ri, di))
    return sense, comm


def max_depth_range_search(beam: Beam, grid: RangeBearingGrid, budget: LinkBudget, counter=None):
    """Subjects reachable by `beam`: each bearing column walked from the
    nearest range bin outwards up to the sensing reach."""
    r_s = budget.max_range(beam.width_bins, SUBJECT)
    found = []
    for di in range(beam.lo, beam.hi + 1):
        for ri in range(grid.k_r):
            if counter is not None:
                counter.n += 1
            if grid.cell_range(ri) > r_s + 1e-9:
                break
            ids = grid.occupancy.get((ri, di), ())
            found.extend(sorted(i for i in ids if grid.entities[i].kind == SUBJECT))
    return found


def _hull(grid, ids) -> Beam:
    bins = [grid.cells[i][1] for i in ids]
    return Beam(min(bins), max(bins))


def breadth_bearing_search(
    beam: Beam, ues, subjects, grid: RangeBearingGrid, budget: LinkBudget, r: int,
    counter=None, exclude=frozenset(),
):
    """Widen `beam` (up to `r` bins) where the subjects gained outnumber the
    subjects lost to the shorter reach.

    Every widening of the current interval is scored, so a step that only
    pays off one bin later is still found, and the beam may shift sideways
    to balance coverage.  UEs and the listed `subjects` must stay covered.
    Subjects in `exclude` (already served elsewhere) do not count as gains.
    Returns ``(subjects, beam)`` with the beam shrunk to its members' hull.
    """
    if r < beam.width_bins:
        raise ValueError("maximum width below the current width")
    required = list(ues) + list(subjects)
    exclude = set(exclude)

    def score(b):
        if not all(_covers(grid, budget, b, i) for i in required):
            return None
        reach = set(max_depth_range_search(b, grid, budget, counter)) - exclude
        return reach | set(subjects)

    best_members = score(beam)
    if best_members is None:
        raise InfeasibleError("starting beam does not cover its members")
    best_key = (len(best_members), -beam.width_bins, -beam.lo)
    for width in range(beam.width_bins + 1, r + 1):
        for lo in range(max(0, beam.hi - width + 1), min(beam.lo, grid.k_d - width) + 1):
            cand = Beam(lo, lo + width - 1)
            members = score(cand)
            if members is None:
                continue
            key = (len(members), -width, -lo)
            if key > best_key:
                best_key, best_members = key, members
    ids = list(ues) + sorted(best_members)
    beam = _hull(grid, ids) if ids else beam
    return sorted(best_members), beam


def comm_sets_from_grid(
    grid: RangeBearingGrid,
    tolerance_bins: int = 1,
    max_width: int | None = None,
    budget: LinkBudget = LinkBudget(),
) -> list[list[str]]:
    """Group UEs of similar bearing into correlated communication sets.

    UEs sorted by bearing are chained while consecutive bins differ by at
    most `tolerance_bins`; a group is closed early when its bearing hull
    would exceed `max_width` bins or leave a member out of reach.
    """
    ues = sorted(grid.ids(UE), key=lambda i: (grid.cells[i][1], i))
    sets, cur = [], []
    for u in ues:
        if cur:
            di = grid.cells[u][1]
            hull = _hull(grid, cur + [u])
            close = (
                di - grid.cells[cur[-1]][1] > tolerance_bins
                or (max_width is not None and hull.width_bins > max_width)
                or not all(_covers(grid, budget, hull, m) for m in cur + [u])
            )
            if close:
                sets.append(cur)
                cur = []
        cur.append(u)
    if cur:
        sets.append(cur)
    return sets


def build_bc_sets(
    grid: RangeBearingGrid,
    comm_sets,
    r: int,
    budget: LinkBudget = LinkBudget(),
) -> BcResult:
    """Upgrade each communication set to a BC-Set, then cover the remaining
    subjects with new sensing-only sets seeded at the deepest subject."""
    counter = _Counter()
    sets = []
    covered = set()
    for group in comm_sets:
        group = sorted(group)
        beam = _hull(grid, group)
        if not all(_covers(grid, budget, beam, u) for u in group):
            raise InfeasibleError(f"communication set {group} is out of reach")
        subj, beam = breadth_bearing_search(beam, group, [], grid, budget, max(r, beam.width_bins),
                                            counter)
        sets.append(BcSet(group, subj, beam))
        covered |= set(subj)
    uncoverable = []
    remaining = [s for s in grid.ids(SUBJECT) if s not in covered]
    while remaining:
        seed = max(remaining, key=lambda i: (grid.cells[i][0], grid.entities[i].range, i))
        beam = Beam(grid.cells[seed][1], grid.cells[seed][1])
        if not _covers(grid, budget, beam, seed):
            uncoverable.append(seed)
            remaining.remove(seed)
            continue
        subj, beam = breadth_bearing_search(beam, [], [seed], grid, budget, r, counter,
                                            exclude=covered)
        sets.append(BcSet([], subj, beam))
        covered |= set(subj)
        remaining = [s for s in remaining if s not in covered]
    # drop sensing-only sets made redundant by later ones, smallest first
    for s in sorted((s for s in sets if not s.ues), key=lambda s: (len(s.subjects), s.beam.lo)):
        others = set()
        for o in sets:
            if o is not s:
                others.update(o.subjects)
        if set(s.subjects) <= others:
            sets.remove(s)
    return BcResult(sets, sorted(uncoverable), counter.n)


def schedule(bc_sets, n_chains: int) -> int:
    """Assign (slot, chain) first-fit by descending size; sets sharing a
    slot must have disjoint bearing intervals.  Returns the span in slots."""
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    slots: list[list] = []
    order = sorted(range(len(bc_sets)), key=lambda i: (-bc_sets[i].size, i))
    for i in order:
        s = bc_sets[i]
        for t, members in enumerate(slots):
            if len(members) < n_chains and all(not s.beam.overlaps(o.beam) for o in members):
                s.slot, s.chain = t, len(members)
                members.append(s)
                break
        else:
            s.slot, s.chain = len(slots), 0
            slots.append([s])
    return len(slots)


def round_robin(grid: RangeBearingGrid, n_chains: int) -> int:
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    return math.ceil(len(grid) / n_chains)


def _beam_family(grid, budget, max_width: int):
    """Interval beams up to `max_width` bins with the entities they cover,
    dominated ones removed."""
    ids = sorted(grid.entities)
    beams = []
    for lo in range(grid.k_d):
        for hi in range(lo, min(grid.k_d, lo + max_width)):
            b = Beam(lo, hi)
            cov = frozenset(i for i in ids if _covers(grid, budget, b, i))
            if cov:
                beams.append((b, cov))
    keep = []
    for b, cov in beams:
        # a beam is dominated by a narrower-or-equal one covering a superset
        dominated = any(
            o_cov >= cov and o.lo >= b.lo and o.hi <= b.hi and (o_cov != cov or o != b)
            for o, o_cov in beams
        )
        if not dominated:
            keep.append((b, cov))
    return keep


def optimal_schedule(grid: RangeBearingGrid, n_chains: int, max_width: int,
                     budget: LinkBudget = LinkBudget(), upper_bound: int | None = None):
    """Minimum span over interval beams (at most `max_width` bins wide)
    covering every reachable entity.

    Solved exactly as an integer program: beam ``b`` in slot ``t`` is a
    binary variable; each slot holds at most `n_chains` beams with pairwise
    disjoint bearing intervals (one beam per bearing bin per slot).
    Returns None when nothing is reachable.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    if len(grid) > OPT_MAX_ENTITIES:
        raise InstanceTooLargeError(f"{len(grid)} entities exceed the {OPT_MAX_ENTITIES} limit")
    fam = _beam_family(grid, budget, max_width)
    reachable = sorted(set().union(*[c for _, c in fam])) if fam else []
    if not reachable:
        return 0
    n_b = len(fam)
    t_max = upper_bound or len(reachable)
    n_x = n_b * t_max
    n = n_x + t_max  # x_{b,t} then y_t
    c = np.zeros(n)
    c[n_x:] = 1
    rows = []
    lo_bounds, hi_bounds = [], []

    def x(b, t):
        return t * n_b + b

    a = lil_matrix((len(reachable) + t_max * (1 + grid.k_d) + t_max - 1, n))
    row = 0
    for e in reachable:
        for b, (_, cov) in enumerate(fam):
            if e in cov:
                for t in range(t_max):
                    a[row, x(b, t)] = 1
        lo_bounds.append(1)
        hi_bounds.append(np.inf)
        row += 1
    for t in range(t_max):
        for b in range(n_b):
            a[row, x(b, t)] = 1
        a[row, n_x + t] = -n_chains
        lo_bounds.append(-np.inf)
        hi_bounds.append(0)
        row += 1
        for di in range(grid.k_d):
            for b, (beam, _) in enumerate(fam):
                if beam.lo <= di <= beam.hi:
                    a[row, x(b, t)] = 1
            lo_bounds.append(-np.inf)
            hi_bounds.append(1)
            row += 1
    for t in range(t_max - 1):
        a[row, n_x + t] = 1
        a[row, n_x + t + 1] = -1
        lo_bounds.append(0)
        hi_bounds.append(np.inf)
        row += 1
    del rows
    res = milp(
        c,
        constraints=LinearConstraint(a.tocsr(), lo_bounds, hi_bounds),
        integrality=np.ones(n),
        bounds=Bounds(0, 1),
    )
    if not res.success:
        raise RuntimeError(f"integer program failed: {res.message}")
    return int(round(res.fun))


@dataclass
class EmulationResult:
    rr: float
    bcset: float
    opt: float | None
    rows: list = field(default_factory=list)  # (trial, rr, bcset, opt or None)

    def csv(self, n_chains: int) -> str:
        lines = ["trial,n_chains,rr_span,bcset_span,opt_span"]
        for trial, rr, bc, opt in self.rows:
            lines.append(f"{trial},{n_chains},{rr},{bc},{'' if opt is None else opt}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EmulationGrid:
    """Geometry of the time-span emulation."""

    k_r: int = 8
    # 7.5 deg bins: about the full-aperture width of a 16-element array
    k_d: int = 24
    max_range: float = 8.0
    max_width_bins: int = 3
    ue_tolerance_bins: int = 1
    budget: LinkBudget = LinkBudget()


def random_grid(n_ue: int, n_subj: int, rng, geometry: EmulationGrid = EmulationGrid()):
    """Entities at uniform random (range, bearing) positions."""
    ents = []
    half = math.pi / 2
    for kind, n in ((UE, n_ue), (SUBJECT, n_subj)):
        for i in range(n):
            r = rng.uniform(0, geometry.max_range)
            b = rng.uniform(-half, half)
            ents.append(Entity(f"{kind}{i}", kind, float(r), float(b)))
    return RangeBearingGrid(geometry.k_r, geometry.k_d, geometry.max_range, ents)


def bcset_span(grid, n_chains, geometry: EmulationGrid = EmulationGrid()):
    sets = comm_sets_from_grid(grid, geometry.ue_tolerance_bins, geometry.max_width_bins, geometry.budget)
    res = build_bc_sets(grid, sets, geometry.max_width_bins, geometry.budget)
    return schedule(res.sets, n_chains), res


def emulate_time_span(
    n_ue: int,
    n_subj: int,
    trials: int,
    n_chains: int,
    rng_seed: int,
    geometry: EmulationGrid = EmulationGrid(),
    run_opt: bool = True,
) -> EmulationResult:
    """Mean spans of RR, BC-Set and Opt over random uniform placements.

    Trial ``i`` draws its positions from ``default_rng([rng_seed, i])`` so
    trials are independent of evaluation order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows = []
    for i in range(trials):
        rng = np.random.default_rng([rng_seed, i])
        grid = random_grid(n_ue, n_subj, rng, geometry)
        rr = round_robin(grid, n_chains)
        bc, _ = bcset_span(grid, n_chains, geometry)
        opt = None
        if run_opt and len(grid) <= OPT_MAX_ENTITIES:
            opt = optimal_schedule(grid, n_chains, geometry.max_width_bins, geometry.budget,
                                   upper_bound=bc)
        rows.append((i, rr, bc, opt))
    opts = [r[3] for r in rows if r[3] is not None]
    return EmulationResult(
        float(np.mean([r[1] for r in rows])),
        float(np.mean([r[2] for r in rows])),
        float(np.mean(opts)) if opts else None,
        rows,
    )
