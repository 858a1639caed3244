from __future__ import annotations

import numpy as np
import pytest

from amsp.decomposition import (
    BENDERS, LSHAPED, Cut, DecompositionConfig, DecompositionState, benders_cut, cut_violations,
    heuristic_cuts, lshaped_cut, relative_gap, run, solve_master,
)
from amsp.model import FixedRevisionModel, InconsistencyError, RevisionSchedule, build_ams
from amsp.problems import gen_lotsizing
from amsp.scenario_tree import ScenarioTree

from .conftest import TIGHT_GAP, close, optimum


def _sched(stages, T):
    return RevisionSchedule.from_stages(stages, T)


def test_lshaped_worked_example():
    # mu=1, T=3, revise at stage 2, L=10, Q=14:
    # theta >= 4 * ((r2 - r1 - 1) - (r3 - r2)) + 14
    cut = lshaped_cut(_sched([(2,)], 3), 14.0, 10.0)
    assert cut.kind == LSHAPED
    assert cut.r_coef.tolist() == [[-4.0, 8.0, -4.0]]
    assert cut.constant == pytest.approx(10.0)
    assert cut.rhs(_sched([(2,)], 3)) == pytest.approx(14.0)
    assert cut.rhs(_sched([(3,)], 3)) == pytest.approx(6.0)
    assert cut.rhs(_sched([()], 3)) == pytest.approx(10.0)


def test_lshaped_rejects_value_below_bound():
    with pytest.raises(InconsistencyError):
        lshaped_cut(_sched([()], 3), 9.0, 10.0)
    assert lshaped_cut(_sched([()], 3), 10.0 - 1e-9, 10.0).value == 10.0


@pytest.mark.parametrize("I,T,mu", [(1, 3, 1), (2, 3, 2), (1, 4, 2), (2, 4, 1)])
def test_lshaped_bound_elsewhere(I, T, mu):
    schedules = list(RevisionSchedule.enumerate(I, T, mu, binding=False))
    for s in schedules:
        cut = lshaped_cut(s, 20.0, 10.0)
        for other in schedules:
            expected = 20.0 if other == s else 10.0
            assert cut.rhs(other) <= expected + 1e-9
            if other == s:
                assert cut.rhs(other) == pytest.approx(20.0)


def test_benders_cut_needs_duals(tiny_lotsizing):
    relaxed = FixedRevisionModel(tiny_lotsizing.with_mu(1), relaxed=True)
    with pytest.raises(ValueError):
        benders_cut(_sched([()], 3), 1.0, None, relaxed.nacs, np.ones(1))
    with pytest.raises(ValueError):
        benders_cut(_sched([()], 3), 1.0, np.zeros(1), relaxed.nacs, np.ones(1))


def _all_values(inst):
    I, T = inst.num_states, inst.tree.num_stages
    exact, relaxed = FixedRevisionModel(inst), FixedRevisionModel(inst, relaxed=True)
    q, q_lo, cuts = {}, {}, []
    L = optimum(build_ams(inst.with_mu(T - 1)))
    for s in RevisionSchedule.enumerate(I, T, inst.mu, binding=False):
        q[s] = exact.solve(s, gap_tol=TIGHT_GAP).objective
        out = relaxed.solve(s)
        q_lo[s] = out.objective
        cuts.append(benders_cut(s, out.objective, out.duals[relaxed.nac_rows], relaxed.nacs, inst.xbar))
    return L, q, q_lo, cuts


@pytest.mark.parametrize("T,I,mu,seed", [(3, 1, 1, 0), (3, 2, 1, 1), (4, 1, 2, 2), (4, 2, 1, 3)])
def test_cuts_valid_by_enumeration(T, I, mu, seed):
    inst = gen_lotsizing(ScenarioTree(T, 2), I, seed, mu=mu)
    L, q, q_lo, benders = _all_values(inst)
    lshaped = [lshaped_cut(s, v, L) for s, v in q.items()]
    assert cut_violations(lshaped, q) == []
    assert cut_violations(benders, q_lo) == []
    # the L-shaped cut is exact where it was generated
    for c in lshaped:
        assert c.rhs(c.generator) == pytest.approx(q[c.generator])
    assert all(c.kind == BENDERS for c in benders)


def test_cut_violations_reports_bad_cut():
    s = _sched([()], 2)
    bogus = Cut(LSHAPED, np.zeros((1, 2)), 5.0)
    assert len(cut_violations([bogus], {s: 4.0})) == 1


def test_master_feasible_set_mu1_t3():
    # without cuts the master ranges over {none, revise at 2, revise at 3}
    state = DecompositionState(1, 3, 1, 1e-3, L=0.0)
    seen = set()
    for _ in range(4):
        sched, lb = solve_master(state)
        assert lb == pytest.approx(0.0) or sched in seen
        if sched in seen:
            break
        seen.add(sched)
        state.lshaped.append(lshaped_cut(sched, 1.0, 0.0))
    assert seen == set(RevisionSchedule.enumerate(1, 3, 1, binding=False))
    _, lb = solve_master(state)
    assert lb == pytest.approx(1.0)


def test_relative_gap():
    assert relative_gap(9.0, 10.0) == pytest.approx(0.1)
    assert relative_gap(-np.inf, 10.0) == np.inf


def test_config_validation():
    with pytest.raises(ValueError):
        run(gen_lotsizing(ScenarioTree(3, 2), 1, 0, mu=1), DecompositionConfig(epsilon=0))
    with pytest.raises(ValueError):
        DecompositionConfig(horizon_cut=3).validate(3)
    DecompositionConfig.exact(horizon_cut=9).validate(3)


def test_mu_zero_terminates_at_once(tiny_lotsizing):
    state = run(tiny_lotsizing.with_mu(0), DecompositionConfig.exact())
    assert state.status == "optimal"
    assert len(state.log) == 1
    assert state.incumbent == RevisionSchedule.zeros(1, 3)


@pytest.mark.parametrize("T,I,mu,seed", [(3, 1, 1, 5), (4, 1, 2, 6), (4, 2, 1, 7), (5, 1, 1, 8), (5, 2, 2, 9)])
def test_exact_mode_matches_direct(T, I, mu, seed):
    inst = gen_lotsizing(ScenarioTree(T, 2), I, seed, mu=mu)
    state = run(inst, DecompositionConfig.exact(epsilon=1e-6, subproblem_gap=TIGHT_GAP))
    assert state.status == "optimal"
    direct = optimum(build_ams(inst))
    assert close(state.UB, direct, rel=1e-5)
    lbs = [r.lb for r in state.log]
    ubs = [r.ub for r in state.log]
    assert all(a <= b + 1e-9 for a, b in zip(lbs, lbs[1:]))
    assert all(a >= b - 1e-9 for a, b in zip(ubs, ubs[1:]))
    assert FixedRevisionModel(inst).solve(state.incumbent, gap_tol=TIGHT_GAP).objective == pytest.approx(state.UB)


def test_heuristic_mode_returns_a_feasible_value():
    inst = gen_lotsizing(ScenarioTree(5, 2), 1, 3, mu=2)
    state = run(inst, DecompositionConfig(subproblem_gap=TIGHT_GAP))
    assert state.status in ("optimal", "converged-heuristic")
    # heuristic cuts may cut off the optimum, never produce a value below it
    assert state.UB >= optimum(build_ams(inst)) - 1e-6


def test_heuristic_start_schedule():
    inst = gen_lotsizing(ScenarioTree(4, 2), 1, 0, mu=2)
    cuts, start = heuristic_cuts(inst, 2)
    assert start.matrix.shape == (1, 4)
    assert start.matrix[0, -1] == start.matrix[0, 1]
    assert all(c.theta_coef == 0 for c in cuts)
    with pytest.raises(ValueError):
        heuristic_cuts(inst, 4)


def test_iteration_limit_and_log_csv():
    inst = gen_lotsizing(ScenarioTree(5, 2), 2, 1, mu=3)
    state = run(inst, DecompositionConfig.exact(max_iterations=2))
    assert state.status in ("iteration-limit", "optimal")
    text = state.log_csv()
    assert text.splitlines()[0].startswith("iteration,lb,ub")
    assert len(text.splitlines()) == len(state.log) + 1
