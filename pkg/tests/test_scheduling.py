import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmisac.errors import InfeasibleError, InstanceTooLargeError
from mmisac.scheduling import (
    OPT_MAX_ENTITIES,
    SUBJECT,
    UE,
    BcSet,
    Beam,
    EmulationGrid,
    Entity,
    LinkBudget,
    RangeBearingGrid,
    bcset_span,
    beam_pattern_coverage,
    breadth_bearing_search,
    build_bc_sets,
    comm_sets_from_grid,
    emulate_time_span,
    max_depth_range_search,
    optimal_schedule,
    random_grid,
    round_robin,
    schedule,
)

BUDGET = LinkBudget()


def grid_of(entities, k_r=8, k_d=24, max_range=8.0):
    return RangeBearingGrid(k_r, k_d, max_range, entities)


def at_bin(grid_kd, di, fov=math.pi):
    return -fov / 2 + (di + 0.5) * fov / grid_kd


def test_grid_invariants():
    with pytest.raises(ValueError):
        RangeBearingGrid(0, 4, 8.0)
    g = grid_of([Entity("u", UE, 3.0, 0.1)])
    with pytest.raises(ValueError):
        g.add(Entity("u", UE, 1.0, 0.0))
    with pytest.raises(ValueError):
        g.add(Entity("x", UE, 9.0, 0.0))
    assert g.cell_of(8.0, math.pi / 2) == (7, 23)


def test_coverage_full_fov_limited_by_range():
    g = grid_of([])
    sense, comm = beam_pattern_coverage(Beam(0, 23), g, BUDGET)
    r_s = BUDGET.max_range(24, SUBJECT)
    assert {di for _, di in sense} == set(range(24))
    assert all(g.cell_range(ri) <= r_s + 1e-9 for ri, _ in sense)
    assert len(comm) <= len(sense) or BUDGET.max_range(24, UE) > r_s


def test_doubling_width_shrinks_sensing_reach():
    assert BUDGET.max_range(2, SUBJECT) / BUDGET.max_range(1, SUBJECT) == pytest.approx(2**-0.25)
    assert 2**-0.25 == pytest.approx(0.841, abs=1e-3)
    assert BUDGET.max_range(4, UE) / BUDGET.max_range(2, UE) == pytest.approx(2**-0.5)


def test_sub_minimum_width_infeasible():
    with pytest.raises(InfeasibleError):
        BUDGET.max_range(0, SUBJECT)


def test_boundary_cell_included():
    # one cell exactly at the last bin of the interval
    g = grid_of([Entity("s", SUBJECT, 1.0, at_bin(24, 5))])
    sense, _ = beam_pattern_coverage(Beam(3, 5), g, BUDGET)
    assert g.cells["s"] in sense


def test_depth_search_stacked_subjects():
    b = at_bin(24, 10)
    ents = [Entity(f"s{r}", SUBJECT, float(r), b) for r in (2, 4, 6)]
    g = grid_of(ents)
    budget = LinkBudget(sense_range0=5.0)
    assert max_depth_range_search(Beam(10, 10), g, budget) == ["s2", "s4"]


def test_depth_search_empty_and_order_independent():
    g = grid_of([Entity("u", UE, 2.0, 0.0)])
    assert max_depth_range_search(Beam(0, 23), g, BUDGET) == []
    rng = np.random.default_rng(0)
    ents = [Entity(f"s{i}", SUBJECT, float(rng.uniform(0, 6)), float(rng.uniform(-1.5, 1.5)))
            for i in range(12)]
    a = max_depth_range_search(Beam(0, 23), grid_of(ents), BUDGET)
    b = max_depth_range_search(Beam(0, 23), grid_of(ents[::-1]), BUDGET)
    assert a == b


def test_breadth_search_no_widening_at_r():
    g = grid_of([Entity("u", UE, 2.0, at_bin(24, 10)), Entity("s", SUBJECT, 2.0, at_bin(24, 11))])
    subj, beam = breadth_bearing_search(Beam(10, 10), ["u"], [], g, BUDGET, 1)
    assert beam == Beam(10, 10) and subj == []


def test_breadth_search_adds_neighbour():
    g = grid_of([Entity("u", UE, 2.0, at_bin(24, 10)), Entity("s", SUBJECT, 2.0, at_bin(24, 11))])
    subj, beam = breadth_bearing_search(Beam(10, 10), ["u"], [], g, BUDGET, 3)
    assert subj == ["s"] and beam == Beam(10, 11)


def test_breadth_search_never_evicts_ue():
    # the far UE would fall out of reach if the beam widened
    far = BUDGET.max_range(1, UE) - 0.1
    g = grid_of([Entity("u", UE, min(far, 7.9), at_bin(24, 10)),
                 Entity("s", SUBJECT, 1.0, at_bin(24, 12))])
    _, beam = breadth_bearing_search(Beam(10, 10), ["u"], [], g, LinkBudget(comm_range0=8.0), 3)
    assert beam.lo <= g.cells["u"][1] <= beam.hi


def test_fig8_layout_two_new_sets():
    ents = [
        Entity("ue0", UE, 2.0, at_bin(24, 2)),
        Entity("ue1", UE, 2.0, at_bin(24, 3)),
        Entity("ue2", UE, 2.0, at_bin(24, 10)),
        Entity("ue3", UE, 2.0, at_bin(24, 18)),
        Entity("s0", SUBJECT, 3.0, at_bin(24, 6)),
        Entity("s1", SUBJECT, 3.0, at_bin(24, 7)),
        Entity("s2", SUBJECT, 3.0, at_bin(24, 14)),
    ]
    g = grid_of(ents)
    sets = comm_sets_from_grid(g, 1, 3)
    assert len(sets) == 3
    res = build_bc_sets(g, sets, 3)
    assert len(res.sets) == 5
    assert sum(1 for s in res.sets if not s.ues) == 2


def test_no_subjects_sets_equal_comm_sets():
    ents = [Entity(f"u{i}", UE, 2.0, at_bin(24, d)) for i, d in enumerate((2, 3, 12))]
    g = grid_of(ents)
    sets = comm_sets_from_grid(g)
    res = build_bc_sets(g, sets, 3)
    assert [s.ues for s in res.sets] == sets
    assert [s.beam for s in res.sets] == [Beam(2, 3), Beam(12, 12)]


def test_subject_in_ue_beam_is_merged():
    g = grid_of([Entity("u", UE, 2.0, at_bin(24, 10)), Entity("s", SUBJECT, 1.0, at_bin(24, 10))])
    res = build_bc_sets(g, [["u"]], 3)
    assert len(res.sets) == 1 and res.sets[0].subjects == ["s"]


def test_uncoverable_subject_reported():
    g = grid_of([Entity("s", SUBJECT, 7.9, 0.0)])
    res = build_bc_sets(g, [], 3, LinkBudget(sense_range0=2.0))
    assert res.uncoverable == ["s"] and res.sets == []


def _sets(*intervals):
    return [BcSet([f"u{i}"], [], Beam(lo, hi)) for i, (lo, hi) in enumerate(intervals)]


def test_schedule_examples():
    assert schedule(_sets((0, 1), (5, 6)), 2) == 1
    assert schedule(_sets((0, 3), (2, 5), (3, 4)), 1) == 3
    assert schedule(_sets((0, 3), (2, 5), (3, 4)), 3) == 3


def test_round_robin_examples():
    g = grid_of([Entity(f"s{i}", SUBJECT, 1.0 + 0.1 * i, 0.0) for i in range(20)])
    assert round_robin(g, 1) == 20
    assert round_robin(g, 2) == 10


def test_optimal_examples():
    assert optimal_schedule(grid_of([Entity("u", UE, 2.0, 0.0)]), 1, 3) == 1
    # two pairs, each pair one bin apart: two 2-bin beams
    ents = [Entity("a", SUBJECT, 2.0, at_bin(24, 3)), Entity("b", SUBJECT, 2.0, at_bin(24, 4)),
            Entity("c", SUBJECT, 2.0, at_bin(24, 15)), Entity("d", SUBJECT, 2.0, at_bin(24, 16))]
    assert optimal_schedule(grid_of(ents), 1, 2) == 2
    assert optimal_schedule(grid_of(ents), 2, 2) == 1


def test_optimal_too_large():
    ents = [Entity(f"s{i}", SUBJECT, 1.0, 0.0) for i in range(OPT_MAX_ENTITIES + 1)]
    with pytest.raises(InstanceTooLargeError):
        optimal_schedule(grid_of(ents), 1, 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 4), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_ordering_and_chain_monotonicity(n_ue, n_subj, seed):
    geo = EmulationGrid()
    g = random_grid(n_ue, n_subj, np.random.default_rng(seed), geo)
    bc1, res = bcset_span(g, 1, geo)
    bc2, _ = bcset_span(g, 2, geo)
    assert bc2 <= bc1
    assert bc1 <= round_robin(g, 1)
    assert optimal_schedule(g, 1, geo.max_width_bins, geo.budget) <= bc1
    # cover completeness
    covered = {s for b in res.sets for s in b.subjects}
    assert covered | set(res.uncoverable) == set(g.ids(SUBJECT))
    ues = [u for b in res.sets for u in b.ues]
    assert sorted(ues) == g.ids(UE)


def test_deterministic_sets():
    def run():
        g = random_grid(6, 14, np.random.default_rng(3))
        _, res = bcset_span(g, 1)
        return [(b.ues, b.subjects, b.beam, b.slot, b.chain) for b in res.sets]

    assert run() == run()


@pytest.mark.parametrize("n_ue,n_subj", [(2, 4), (6, 14), (10, 30)])
def test_operation_count_bound(n_ue, n_subj):
    geo = EmulationGrid()
    g = random_grid(n_ue, n_subj, np.random.default_rng(1), geo)
    _, res = bcset_span(g, 1, geo)
    k = max(1, len(res.sets))
    assert res.operations <= k * geo.k_d * geo.k_r


def test_disjoint_ues_one_slot_all_schedulers():
    geo = EmulationGrid()
    ents = [Entity(f"u{i}", UE, 2.0, at_bin(24, d)) for i, d in enumerate((2, 10, 18))]
    g = grid_of(ents)
    assert bcset_span(g, 3, geo)[0] == 1
    assert round_robin(g, 3) == 1
    assert optimal_schedule(g, 3, geo.max_width_bins, geo.budget) == 1


def test_emulation_csv_and_small_run():
    res = emulate_time_span(2, 3, 5, 1, 0)
    lines = res.csv(1).strip().split("\n")
    assert lines[0] == "trial,n_chains,rr_span,bcset_span,opt_span"
    assert len(lines) == 6
    assert res.opt <= res.bcset <= res.rr
    with pytest.raises(ValueError):
        emulate_time_span(1, 1, 0, 1, 0)
