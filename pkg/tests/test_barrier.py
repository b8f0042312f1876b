import io
import math

import numpy as np
import pytest

from urllc_ofdma.barrier import (InnerConfig, STATUS_INFEASIBLE,
                                 STATUS_MAX_ITERATIONS, STATUS_OPTIMAL, solve)
from urllc_ofdma.fbl import UserBitBudget
from urllc_ofdma.model import ChannelGenSpec, generate_instance
from urllc_ofdma.sca import SolverConfig, initialize
from urllc_ofdma.subproblem import (build_power_subproblem, build_subproblem,
                                    default_beta)


def _instance(seed=0, dims=(2, 2, 1), bits=(4, 4), p_max_dbm=33.0, eps=1e-6):
    K, M, N = dims
    qos = tuple(UserBitBudget(b, eps, N) for b in bits)
    rng = np.random.default_rng(seed)
    return generate_instance(ChannelGenSpec(), dims, p_max_dbm, qos, rng)


def _first_subproblem(inst, shannon=False):
    state = initialize(inst, SolverConfig(init_policy="uniform"))
    return build_subproblem(inst, state, default_beta(inst), shannon=shannon)


def test_single_variable_budget_binds():
    # one user, one RE, no bit demand: the log objective decreases in
    # effective power, so the budget must bind at the optimum
    inst = _instance(dims=(1, 1, 1), bits=(0,))
    active = np.ones((1, 1, 1), dtype=bool)
    eff = np.full((1, 1, 1), 0.3 * inst.p_max_w)
    sub = build_power_subproblem(inst, active, eff)
    sol = solve(sub)
    assert sol.status == STATUS_OPTIMAL
    assert sol.point[0] == pytest.approx(inst.p_max_w, rel=1e-6)


def test_impossible_demand_is_certified_infeasible():
    inst = _instance(bits=(4, 4))
    huge = 10 * inst.num_subcarriers * inst.num_slots * math.log2(
        1 + inst.p_max_w * inst.gains.max())
    bad = _instance(bits=(int(huge), int(huge)))
    sol = solve(_first_subproblem(bad))
    assert sol.status == STATUS_INFEASIBLE
    assert sol.phase1_slack is not None and sol.phase1_slack > 0
    assert sol.point is None


def test_matches_reference_convex_solver():
    cp = pytest.importorskip("cvxpy")
    inst = _instance(seed=21, dims=(2, 2, 1), bits=(4, 4), p_max_dbm=36.0)
    sub = _first_subproblem(inst)
    sol = solve(sub)
    assert sol.status == STATUS_OPTIMAL

    x = cp.Variable(sub.num_vars)
    ln2 = math.log(2.0)
    obj = sub.cost @ x + sub.const
    obj -= cp.sum(cp.multiply(
        sub.log_weight,
        cp.log(1 + cp.multiply(sub.log_gain, x[sub.log_idx])))) / ln2
    loc = cp.sum(cp.multiply(
        sub.loc_coef,
        cp.reshape(x[sub.loc_idx.ravel()], sub.loc_idx.shape, order="C")),
        axis=1)
    cons = [loc <= sub.loc_rhs, sub.coup_A @ x <= sub.coup_rhs]
    for row in sub.concave_rows:
        expr = cp.sum(cp.log(1 + cp.multiply(row.gain, x[row.idx]))) / ln2
        if row.aff_idx.size:
            expr -= row.aff_coef @ x[row.aff_idx]
        cons.append(expr >= row.rhs)
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    assert prob.status == "optimal"
    assert sol.objective_value == pytest.approx(
        prob.value, rel=1e-5, abs=1e-5)


def test_deterministic_repeat():
    inst = _instance(seed=22)
    sub = _first_subproblem(inst)
    a = solve(sub)
    b = solve(sub)
    assert a.status == b.status
    assert abs(a.objective_value - b.objective_value) <= 1e-12
    assert np.array_equal(a.point, b.point)


def test_returned_point_satisfies_every_row():
    inst = _instance(seed=23, dims=(2, 3, 2), bits=(6, 6))
    sub = _first_subproblem(inst)
    sol = solve(sub)
    assert sol.status == STATUS_OPTIMAL
    assert sub.max_violation(sol.point_scaled) <= 1e-8
    assert sol.kkt_residual < 1e-4
    assert sol.gap_estimate <= 1e-7 * (1 + abs(sol.objective_value)) * 1.01


def test_warm_start_is_used_and_consistent():
    inst = _instance(seed=24)
    sub = _first_subproblem(inst)
    cold = solve(sub)
    warm = solve(sub, warm_start=cold.point_scaled)
    assert warm.status == STATUS_OPTIMAL
    assert warm.objective_value == pytest.approx(cold.objective_value,
                                                 rel=1e-6)
    assert warm.newton_iterations < cold.newton_iterations


def test_iteration_trace_stream():
    inst = _instance(seed=25, bits=(0, 0))
    active = inst.allowed_mask()
    eff = np.where(active, 0.2 * inst.p_max_w / active.sum(), 0.0)
    sub = build_power_subproblem(inst, active, eff)
    buf = io.StringIO()
    solve(sub, trace=buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines and any("phase2" in ln for ln in lines)
    assert all("t=" in ln and "lambda2=" in ln for ln in lines)


def test_iteration_budget_reports_status():
    inst = _instance(seed=26, dims=(2, 3, 2), bits=(6, 6))
    sub = _first_subproblem(inst)
    sol = solve(sub, InnerConfig(max_newton=5))
    assert sol.status == STATUS_MAX_ITERATIONS


def test_shannon_subproblem_solves():
    inst = _instance(seed=27)
    sub = _first_subproblem(inst, shannon=True)
    sol = solve(sub)
    assert sol.status == STATUS_OPTIMAL
    # without the dispersion tangent the surrogate bound is weaker, so the
    # optimal value can only improve
    full = solve(_first_subproblem(inst, shannon=False))
    assert sol.objective_value <= full.objective_value + 1e-6
