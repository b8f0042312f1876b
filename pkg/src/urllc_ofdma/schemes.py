"""Comparison schemes: the proposed solver, its capacity-based bound,
two benchmarks, and an exhaustive desk-scale oracle.

* ``upper_bound`` runs the identical pipeline with every dispersion term
  zeroed; its allocation is scored with Shannon bit counts, so it bounds
  the achievable average from above.
* ``benchmark1`` reuses the upper bound's allocation but audits and scores
  it with the short-packet bit counts; a violated bit demand scores zero.
* ``benchmark2`` pins every RE's power to budget/(M N) and optimizes the
  assignment alone.
* ``oracle`` enumerates binary assignments and grid-searches powers with a
  convex polish; it is exhaustive up to grid error and only meant for tiny
  instances.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import replace
from enum import Enum

import numpy as np

from .barrier import STATUS_INFEASIBLE, solve
from .model import (AllocationState, ProblemInstance, check_feasible,
                    sum_throughput_metric)
from .sca import (SolveReport, SolverConfig, _single_move_grids,
                  better_report, demand_shortfalls,
                  exact_penalized_objective, grant_re, initialize,
                  rounding_variants, sca_solve)
from .subproblem import (build_assignment_subproblem, build_power_subproblem,
                         default_beta, penalty_terms)


class SchemeId(str, Enum):
    PROPOSED = "proposed"
    UPPER_BOUND = "upper_bound"
    BENCHMARK1 = "benchmark1"
    BENCHMARK2 = "benchmark2"
    ORACLE = "oracle"


def solve_proposed(inst: ProblemInstance,
                   cfg: SolverConfig | None = None) -> SolveReport:
    return sca_solve(inst, cfg, shannon=False)


def solve_upper_bound(inst: ProblemInstance,
                      cfg: SolverConfig | None = None) -> SolveReport:
    """Dispersion-free pipeline; audited and scored with Shannon bits."""
    return sca_solve(inst, cfg, shannon=True)


def solve_benchmark1(inst: ProblemInstance, cfg: SolverConfig | None = None,
                     upper: SolveReport | None = None) -> SolveReport:
    """Score the capacity-designed allocation with short-packet accounting.

    The allocation comes from ``solve_upper_bound`` (passed in when already
    available); it is re-audited against the short-packet bit demands, so a
    design that leaned on Shannon slack can land infeasible and score zero.
    """
    t0 = time.perf_counter()
    if upper is None:
        upper = solve_upper_bound(inst, cfg)
    alloc = upper.final_alloc
    if not upper.feasible:
        return SolveReport(final_alloc=alloc, feasible=False,
                           objective_trace=list(upper.objective_trace),
                           metric=0.0, iterations_used=upper.iterations_used,
                           wall_time=time.perf_counter() - t0,
                           relaxation_gap=upper.relaxation_gap,
                           status="upper_bound_infeasible")
    audit = check_feasible(inst, alloc, shannon=False)
    metric = sum_throughput_metric(inst, alloc, shannon=False)
    return SolveReport(final_alloc=alloc, feasible=audit.feasible,
                       objective_trace=list(upper.objective_trace),
                       metric=metric, iterations_used=upper.iterations_used,
                       wall_time=time.perf_counter() - t0,
                       relaxation_gap=upper.relaxation_gap,
                       status="ok" if audit.feasible else "qos_violated")


def solve_benchmark2(inst: ProblemInstance,
                     cfg: SolverConfig | None = None) -> SolveReport:
    """Equal-power variant: only the assignment is optimized.

    Every RE radiates budget/(M N) when assigned, so the budget row is
    automatic and the outer loop runs on assignment fractions alone.  No
    power restoration is possible; the rounded assignment is audited as is.
    """
    cfg = cfg or SolverConfig()
    if cfg.init_policy == "multi":
        t0 = time.perf_counter()
        best = None
        for policy in ("saturate", "greedy"):
            rep = solve_benchmark2(inst, replace(cfg, init_policy=policy))
            if best is None or better_report(rep, best):
                best = rep
        best.wall_time = time.perf_counter() - t0
        return best
    t0 = time.perf_counter()
    K, M, N = inst.dims
    beta = cfg.beta if cfg.beta is not None else default_beta(inst)
    power_re = inst.p_max_w / (M * N)

    assign = initialize(inst, cfg).assign
    trace: list[float] = []
    warm = None
    j_prev = None
    status = "ok"
    for _ in range(cfg.j_max):
        sub = build_assignment_subproblem(inst, assign, beta, power_re)
        sol = solve(sub, cfg.inner, warm_start=warm)
        if sol.status == STATUS_INFEASIBLE:
            if j_prev is None:
                return SolveReport(
                    final_alloc=AllocationState.zeros(inst.dims),
                    feasible=False, objective_trace=[], metric=0.0,
                    iterations_used=0, wall_time=time.perf_counter() - t0,
                    status="infeasible")
            status = "inner_infeasible"
            break
        if sol.point_scaled is None:
            status = "inner_stalled"
            break
        cand = sub.layout.unpack(sol.point_scaled)
        j_new = exact_penalized_objective(inst, cand, beta)
        if j_prev is not None and j_new > j_prev + 1e-9 * (1.0 + abs(j_prev)):
            break
        assign = cand.assign
        warm = sol.point_scaled
        trace.append(j_new)
        if j_prev is not None and abs(j_new - j_prev) <= cfg.rel_obj_tol * max(1.0, abs(j_prev)):
            j_prev = j_new
            break
        j_prev = j_new

    relaxation_gap = penalty_terms(assign).gap
    winner = np.argmax(assign, axis=0)
    best = np.max(assign, axis=0)
    s_bin = np.zeros((K, M, N))
    take = best > cfg.round_threshold
    mm, nn = np.nonzero(take)
    s_bin[winner[take], mm, nn] = 1.0
    final = None
    for grid in rounding_variants(inst, assign, s_bin):
        for _ in range(2 + M * N):
            cand = AllocationState(power=grid * power_re, assign=grid,
                                   eff_power=grid * power_re)
            audit = check_feasible(inst, cand)
            if final is None:
                final = cand
            if audit.feasible:
                final = cand
                break
            slack = demand_shortfalls(inst, cand)
            k_worst = int(np.argmin(slack))
            if slack[k_worst] >= 0.0:
                break
            regrant = grant_re(inst, grid, k_worst, prefer=assign)
            if regrant is None:
                break
            grid = regrant
        if final is not None and check_feasible(inst, final).feasible:
            break
    audit = check_feasible(inst, final)
    metric = sum_throughput_metric(inst, final)
    if (cfg.polish and audit.feasible
            and K * M * N <= cfg.polish_size_cap):
        for _ in range(4):
            improved = False
            for grid in _single_move_grids(inst, final.assign):
                cand = AllocationState(power=grid * power_re, assign=grid,
                                       eff_power=grid * power_re)
                m_val = sum_throughput_metric(inst, cand)
                if m_val > metric + 1e-9:
                    final, metric = cand, m_val
                    improved = True
            if not improved:
                break
        audit = check_feasible(inst, final)
    return SolveReport(final_alloc=final, feasible=audit.feasible,
                       objective_trace=trace, metric=metric,
                       iterations_used=len(trace),
                       wall_time=time.perf_counter() - t0,
                       relaxation_gap=relaxation_gap, status=status)


ORACLE_ASSIGNMENT_CAP = 200_000


def _project_budget(candidates: np.ndarray, p_max: float) -> np.ndarray:
    """Euclidean projection of each row onto {p >= 0, sum p <= p_max}."""
    p = np.maximum(candidates, 0.0)
    over = np.sum(p, axis=1) > p_max
    if not np.any(over):
        return p
    sub = p[over]
    srt = np.sort(sub, axis=1)[:, ::-1]
    css = np.cumsum(srt, axis=1) - p_max
    j = np.arange(1, sub.shape[1] + 1)
    cond = srt - css / j > 0.0
    rho = np.sum(cond, axis=1)
    tau = css[np.arange(sub.shape[0]), rho - 1] / rho
    p[over] = np.maximum(sub - tau[:, None], 0.0)
    return p


class _AssignmentEvaluator:
    """Bit counts and demand slacks for one binary assignment."""

    def __init__(self, inst: ProblemInstance, owner: np.ndarray):
        # owner: (M*N,) user index per RE, -1 for unassigned.
        self.inst = inst
        K, M, N = inst.dims
        self.active = np.flatnonzero(owner >= 0)
        self.owner = owner[self.active]
        m_idx = self.active // N
        self.g = inst.gains[self.owner, m_idx]
        self.qinv_k = np.array([inst.qos[k].qinv for k in range(K)])
        self.weights = inst.weights
        self.demands = inst.bits_required

    def psi(self, powers: np.ndarray):
        """Per-user net bits for a batch of power rows on the active REs."""
        K = self.inst.num_users
        B = powers.shape[0]
        snr = powers * self.g[None, :]
        bits = np.log2(1.0 + snr)
        disp = (np.log2(np.e) ** 2) * (1.0 - 1.0 / (1.0 + snr) ** 2)
        shannon = np.zeros((B, K))
        dsum = np.zeros((B, K))
        for k in range(K):
            cols = self.owner == k
            if np.any(cols):
                shannon[:, k] = np.sum(bits[:, cols], axis=1)
                dsum[:, k] = np.sum(disp[:, cols], axis=1)
        return shannon - self.qinv_k[None, :] * np.sqrt(dsum)

    def score(self, powers: np.ndarray):
        """(weighted objective, min demand slack) per candidate row."""
        psi = self.psi(powers)
        obj = np.sum(self.weights[None, :] * psi, axis=1)
        slack = np.min(psi - self.demands[None, :], axis=1)
        return obj, slack


def _grid_power_search(ev: _AssignmentEvaluator, p_max: float,
                       grid: int, refinements: int):
    """Coordinate grid search with budget projection.

    Feasible candidates (every demand met) are ranked by objective;
    otherwise the least-violating candidate survives.  Returns the best
    power vector found and its (objective, slack).
    """
    r = ev.active.size
    current = np.full(r, p_max / max(r, 1))
    def better(a, b):
        # a, b: (objective, slack) with feasibility-first ordering
        a_feas, b_feas = a[1] >= 0.0, b[1] >= 0.0
        if a_feas != b_feas:
            return a_feas
        return a[0] > b[0] if a_feas else a[1] > b[1]

    obj, slack = ev.score(current[None, :])
    best_val = (float(obj[0]), float(slack[0]))
    width = p_max
    for _ in range(refinements + 1):
        for i in range(r):
            lo = max(current[i] - width, 0.0)
            hi = min(current[i] + width, p_max)
            cands = np.tile(current, (grid, 1))
            cands[:, i] = np.linspace(lo, hi, grid)
            cands = _project_budget(cands, p_max)
            obj, slack = ev.score(cands)
            feas = slack >= 0.0
            pick = (np.argmax(np.where(feas, obj, -np.inf)) if np.any(feas)
                    else np.argmax(slack))
            val = (float(obj[pick]), float(slack[pick]))
            if better(val, best_val):
                best_val = val
                current = cands[pick]
        width /= 8.0
    return current, best_val


def oracle_solve(inst: ProblemInstance, grid: int = 64,
                 refinements: int = 2, polish: bool = True) -> SolveReport:
    """Exhaustive assignment enumeration with per-assignment power search.

    Every binary assignment honoring exclusivity and the delay rule is
    tried; powers on the active REs come from a coordinate grid search
    (with budget projection) refined by the convex power resolve.  Raises
    when the enumeration would exceed ``ORACLE_ASSIGNMENT_CAP``.
    """
    t0 = time.perf_counter()
    K, M, N = inst.dims
    allowed = inst.allowed_mask()
    choices = []
    for m in range(M):
        for n in range(N):
            users = [k for k in range(K) if allowed[k, m, n]]
            choices.append([-1] + users)
    total = 1
    for c in choices:
        total *= len(c)
        if total > ORACLE_ASSIGNMENT_CAP:
            raise ValueError(
                f"assignment enumeration exceeds cap ({total} > {ORACLE_ASSIGNMENT_CAP})")

    best = None  # (objective, owner, powers, psi)
    demands = inst.bits_required
    for owner_tuple in itertools.product(*choices):
        owner = np.array(owner_tuple)
        ev = _AssignmentEvaluator(inst, owner)
        if ev.active.size == 0:
            if np.all(demands <= 0.0):
                cand = (0.0, owner, np.zeros(0))
                if best is None or cand[0] > best[0]:
                    best = cand
            continue
        served = np.zeros(K, dtype=bool)
        served[np.unique(ev.owner)] = True
        if np.any((demands > 0.0) & ~served):
            continue  # a positive demand with no REs can never be met
        powers, (obj, slack) = _grid_power_search(ev, inst.p_max_w, grid,
                                                  refinements)
        if polish:
            refined = _polish_powers(inst, owner, ev, powers)
            if refined is not None:
                powers2, obj2, slack2 = refined
                if (slack2 >= 0.0 and (slack < 0.0 or obj2 > obj)):
                    powers, obj, slack = powers2, obj2, slack2
        if slack >= 0.0 and (best is None or obj > best[0]):
            best = (obj, owner, powers)

    wall = time.perf_counter() - t0
    if best is None:
        return SolveReport(final_alloc=AllocationState.zeros(inst.dims),
                           feasible=False, objective_trace=[], metric=0.0,
                           iterations_used=total, wall_time=wall,
                           status="infeasible")
    _, owner, powers = best
    alloc = _owner_to_alloc(inst, owner, powers)
    audit = check_feasible(inst, alloc)
    metric = sum_throughput_metric(inst, alloc)
    return SolveReport(final_alloc=alloc, feasible=audit.feasible,
                       objective_trace=[], metric=metric,
                       iterations_used=total, wall_time=wall,
                       status="ok" if audit.feasible else "audit_failed")


def _owner_to_alloc(inst, owner, powers) -> AllocationState:
    K, M, N = inst.dims
    assign = np.zeros((K, M, N))
    eff = np.zeros((K, M, N))
    active = np.flatnonzero(owner >= 0)
    for p_val, re in zip(powers, active):
        k = owner[re]
        m, n = re // N, re % N
        assign[k, m, n] = 1.0
        eff[k, m, n] = p_val
    return AllocationState(power=eff.copy(), assign=assign, eff_power=eff)


def _polish_powers(inst, owner, ev, powers):
    """Convex power resolve on one assignment; None when it finds nothing."""
    K, M, N = inst.dims
    active_grid = np.zeros((K, M, N), dtype=bool)
    active = np.flatnonzero(owner >= 0)
    eff0 = np.zeros((K, M, N))
    floor = 1e-9 * inst.p_max_w
    for p_val, re in zip(powers, active):
        k = owner[re]
        m, n = re // N, re % N
        active_grid[k, m, n] = True
        eff0[k, m, n] = max(p_val, floor)
    scale = inst.p_max_w / max(np.sum(eff0), inst.p_max_w)
    eff0 *= scale  # keep the expansion inside the budget
    best = None
    expansion = eff0
    warm = None
    for _ in range(3):
        sub = build_power_subproblem(inst, active_grid, expansion)
        sol = solve(sub, warm_start=warm)
        if sol.status == STATUS_INFEASIBLE or sol.point_scaled is None:
            return best
        cand_eff = sub.layout.unpack(sol.point_scaled).eff_power
        p_vec = np.array([cand_eff[owner[re], re // N, re % N] for re in active])
        obj, slack = ev.score(p_vec[None, :])
        val = (p_vec, float(obj[0]), float(slack[0]))
        if best is None or (val[2] >= 0.0 and val[1] > best[1]):
            best = val
        expansion = cand_eff
        warm = sol.point_scaled
    return best


def run_scheme(scheme: SchemeId | str, inst: ProblemInstance,
               cfg: SolverConfig | None = None,
               upper: SolveReport | None = None) -> SolveReport:
    scheme = SchemeId(scheme)
    if scheme is SchemeId.PROPOSED:
        return solve_proposed(inst, cfg)
    if scheme is SchemeId.UPPER_BOUND:
        return solve_upper_bound(inst, cfg)
    if scheme is SchemeId.BENCHMARK1:
        return solve_benchmark1(inst, cfg, upper=upper)
    if scheme is SchemeId.BENCHMARK2:
        return solve_benchmark2(inst, cfg)
    if scheme is SchemeId.ORACLE:
        return oracle_solve(inst)
    raise ValueError(f"unknown scheme {scheme!r}")
