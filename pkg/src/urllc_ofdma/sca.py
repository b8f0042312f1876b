"""Successive convex approximation driver.

Each outer iteration linearizes the concave parts at the current point,
solves the resulting convex subproblem with the barrier solver, and
re-expands at the solution.  Tangency plus majorization make the exact
penalized objective nonincreasing across accepted iterations; a step that
fails to improve it (possible only through inner-solver tolerance slop) is
rejected and ends the loop.  After the loop the fractional assignment is
rounded to a binary one and a power-only resolve restores exact
feasibility of the bit demands and the budget.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .barrier import (InnerConfig, InnerSolution, STATUS_INFEASIBLE,
                      STATUS_OPTIMAL, solve)
from .fbl import user_bits
from .model import (AllocationState, ProblemInstance, check_feasible,
                    sum_throughput_metric)
from .subproblem import (build_power_subproblem, build_subproblem,
                         default_beta, penalty_terms)

INIT_POLICIES = ("multi", "saturate", "greedy", "uniform")


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the outer loop; defaults reproduce the reference setup."""

    beta: float | None = None       # penalty weight; None = default_beta(inst)
    j_max: int = 5
    rel_obj_tol: float = 1e-5
    init_policy: str = "multi"
    round_threshold: float = 0.5
    restore: bool = True
    restore_iters: int = 3
    polish: bool = True
    polish_size_cap: int = 64       # skip the move polish on larger grids
    rng_seed: int | None = None
    inner: InnerConfig = field(default_factory=InnerConfig)

    def __post_init__(self):
        if self.j_max < 1:
            raise ValueError("j_max must be at least 1")
        if self.beta is not None and not self.beta > 0.0:
            raise ValueError("penalty weight must be positive")
        if not 0.0 < self.round_threshold < 1.0:
            raise ValueError("round_threshold must lie in (0, 1)")
        if self.init_policy not in INIT_POLICIES:
            raise ValueError(f"unknown init policy {self.init_policy!r}; "
                             f"choose from {INIT_POLICIES}")


@dataclass
class SolveReport:
    """Outcome of one scheme run on one instance."""

    final_alloc: AllocationState
    feasible: bool
    objective_trace: list
    metric: float
    iterations_used: int
    wall_time: float
    relaxation_gap: float = float("nan")
    status: str = "ok"


def _greedy_owner_grid(inst: ProblemInstance) -> np.ndarray:
    """Binary ownership by per-RE best gain, repaired so nobody starves.

    Starved positive-demand users take the RE where the handover costs
    least: candidates are ranked by own-gain over donor-gain (free REs
    first), donors must keep at least one RE.
    """
    K, M, N = inst.dims
    allowed = inst.allowed_mask()
    gains = np.where(allowed, inst.gains[:, :, None], -np.inf)
    grid = np.zeros((K, M, N))
    winner = np.argmax(gains, axis=0)
    has_any = np.any(allowed, axis=0)
    mm, nn = np.nonzero(has_any)
    grid[winner[has_any], mm, nn] = 1.0
    demands = inst.bits_required
    owned = grid.sum(axis=(1, 2))
    for k in range(K):
        if demands[k] <= 0 or owned[k] > 0:
            continue
        cands = []
        for m in range(M):
            for n in range(N):
                if not allowed[k, m, n]:
                    continue
                owner = int(np.argmax(grid[:, m, n])) if grid[:, m, n].max() > 0 else -1
                if owner == k or (owner >= 0 and owned[owner] < 2):
                    continue
                forgone = inst.gains[owner, m] if owner >= 0 else 0.0
                ratio = inst.gains[k, m] / forgone if forgone > 0 else np.inf
                cands.append((-ratio, -inst.gains[k, m], m, n, owner))
        if not cands:
            continue
        cands.sort()
        _, _, m, n, owner = cands[0]
        if owner >= 0:
            grid[owner, m, n] = 0.0
            owned[owner] -= 1
        grid[k, m, n] = 1.0
        owned[k] += 1
    return grid


def initialize(inst: ProblemInstance, cfg: SolverConfig) -> AllocationState:
    """Starting point of the outer loop.

    ``uniform`` splits each admissible RE evenly among the users allowed
    there; ``saturate`` expands from a full assignment, which steers the
    penalty tangents toward per-RE winners instead of extinguishing every
    fraction; ``greedy`` starts from a near-binary best-gain ownership (a
    complementary basin for the outer loop).  Every policy spends the
    exact power budget and keeps assignment and power strictly positive on
    the admissible set, as the dispersion tangents require.
    """
    K, M, N = inst.dims
    allowed = inst.allowed_mask()
    counts = np.sum(allowed, axis=0, keepdims=True)
    if cfg.init_policy == "uniform":
        s = np.where(allowed, 1.0 / np.maximum(counts, 1), 0.0)
    elif cfg.init_policy == "greedy":
        grid = _greedy_owner_grid(inst)
        s = np.where(allowed, np.maximum(grid, 0.01), 0.0)
        # Power is spread over the whole admissible set: dispersion
        # tangents taken at near-zero power are so steep they would
        # strangle the first linearized bit constraint.
        mass = float(np.sum(allowed))
        eff = np.where(allowed, inst.p_max_w / mass, 0.0)
        power = np.divide(eff, s, out=np.zeros_like(eff), where=s > 0.0)
        return AllocationState(power=power, assign=s, eff_power=eff)
    else:
        s = np.where(allowed, 1.0, 0.0)
    mass = float(np.sum(s))
    if mass <= 0.0:
        raise ValueError("no admissible resource elements")
    eff = s * (inst.p_max_w / mass)
    power = np.where(s > 0.0, inst.p_max_w / mass, 0.0)
    return AllocationState(power=power, assign=s, eff_power=eff)


def exact_penalized_objective(inst: ProblemInstance, alloc: AllocationState,
                              beta: float, shannon: bool = False) -> float:
    """Exact relaxed objective: -sum w(F - V) + beta * (sum s - sum s^2)."""
    K, M, N = inst.dims
    total = 0.0
    for k in range(K):
        gains_km = np.broadcast_to(inst.gains[k][:, None], (M, N)).ravel()
        ub = user_bits(gains_km, alloc.eff_power[k].ravel(),
                       inst.qos[k].error_prob,
                       qinv_coeff=0.0 if shannon else None)
        total += inst.qos[k].weight * (-ub.shannon + ub.penalty)
    return total + beta * penalty_terms(alloc.assign).gap


def round_assignment(inst: ProblemInstance, state: AllocationState,
                     threshold: float) -> AllocationState:
    """Per-RE winner-take-all rounding of a relaxed assignment.

    The user with the largest fraction takes the RE and keeps its current
    effective power; an RE stays unassigned when no fraction clears the
    threshold.  Exclusivity and the delay rule hold exactly afterwards.
    """
    K, M, N = inst.dims
    winner = np.argmax(state.assign, axis=0)
    best = np.max(state.assign, axis=0)
    assign = np.zeros((K, M, N))
    eff = np.zeros((K, M, N))
    take = best > threshold
    mm, nn = np.nonzero(take)
    kk = winner[take]
    assign[kk, mm, nn] = 1.0
    eff[kk, mm, nn] = state.eff_power[kk, mm, nn]
    return AllocationState(power=eff.copy(), assign=assign, eff_power=eff)


def rounding_variants(inst: ProblemInstance, relaxed_assign: np.ndarray,
                      rounded_assign: np.ndarray, max_variants: int = 4):
    """Binary assignment grids to try, repairing starved users.

    Threshold rounding can leave a positive-demand user without any RE
    when the relaxation served it through tiny fractions; no power resolve
    can fix that.  Each variant grants every starved user one admissible
    RE -- taken from a donor owning several REs or from the unassigned
    pool, ranked by the user's relaxed fraction (then gain) -- rotating
    the first pick across variants.  Without starvation the rounded grid
    itself is the single variant.
    """
    K, M, N = inst.dims
    demands = inst.bits_required
    allowed = inst.allowed_mask()
    counts = rounded_assign.sum(axis=(1, 2))
    starved = [k for k in range(K) if demands[k] > 0 and counts[k] == 0]
    if not starved:
        return [rounded_assign]

    variants = []
    seen = set()
    for offset in range(max_variants):
        grid = rounded_assign.copy()
        owned = grid.sum(axis=(1, 2))
        ok = True
        for k in starved:
            cands = []
            for m in range(M):
                for n in range(N):
                    if not allowed[k, m, n]:
                        continue
                    owner = int(np.argmax(grid[:, m, n])) if grid[:, m, n].max() > 0 else -1
                    if owner == k:
                        continue
                    if owner >= 0 and owned[owner] < 2:
                        continue  # do not starve the donor in turn
                    forgone = inst.gains[owner, m] if owner >= 0 else 0.0
                    ratio = inst.gains[k, m] / forgone if forgone > 0 else np.inf
                    cands.append((-ratio, -relaxed_assign[k, m, n],
                                  -inst.gains[k, m], m, n, owner))
            if not cands:
                ok = False
                break
            cands.sort()
            _, _, _, m, n, owner = cands[min(offset, len(cands) - 1)]
            if owner >= 0:
                grid[owner, m, n] = 0.0
                owned[owner] -= 1
            grid[k, m, n] = 1.0
            owned[k] += 1
        if not ok:
            continue
        key = grid.tobytes()
        if key not in seen:
            seen.add(key)
            variants.append(grid)
    return variants or [rounded_assign]


def grant_re(inst: ProblemInstance, grid: np.ndarray, k: int,
             prefer: np.ndarray | None = None) -> np.ndarray | None:
    """Hand user ``k`` one more admissible RE, minimizing the donor's loss.

    Candidates are ranked by the ratio of k's gain to the current owner's
    (free REs first, then by ``prefer`` such as relaxed fractions); donors
    keep at least one RE.  Returns None when no RE can move.
    """
    K, M, N = inst.dims
    allowed = inst.allowed_mask()
    owned = grid.sum(axis=(1, 2))
    cands = []
    for m in range(M):
        for n in range(N):
            if not allowed[k, m, n] or grid[k, m, n] > 0:
                continue
            owner = int(np.argmax(grid[:, m, n])) if grid[:, m, n].max() > 0 else -1
            if owner >= 0 and owned[owner] < 2:
                continue
            forgone = inst.gains[owner, m] if owner >= 0 else 0.0
            ratio = inst.gains[k, m] / forgone if forgone > 0 else np.inf
            pref = prefer[k, m, n] if prefer is not None else 0.0
            cands.append((-ratio, -pref, -inst.gains[k, m], m, n, owner))
    if not cands:
        return None
    cands.sort()
    _, _, _, m, n, owner = cands[0]
    out = grid.copy()
    if owner >= 0:
        out[owner, m, n] = 0.0
    out[k, m, n] = 1.0
    return out


def demand_shortfalls(inst: ProblemInstance, alloc: AllocationState,
                      shannon: bool = False) -> np.ndarray:
    """Per-user delivered-minus-demanded bits for a binary allocation."""
    K, M, N = inst.dims
    out = np.empty(K)
    for k in range(K):
        gains_km = np.broadcast_to(inst.gains[k][:, None], (M, N)).ravel()
        ub = user_bits(gains_km, alloc.power[k].ravel(),
                       inst.qos[k].error_prob, mask=alloc.assign[k].ravel(),
                       qinv_coeff=0.0 if shannon else None)
        out[k] = max(ub.net, 0.0) - inst.qos[k].bits_required
    return out


def equal_power_shortfalls(inst: ProblemInstance, grid: np.ndarray,
                           shannon: bool = False) -> np.ndarray:
    """Demand shortfalls when the budget is split evenly over active REs."""
    active = float(np.sum(grid > 0.0))
    if active == 0.0:
        return -inst.bits_required.astype(float)
    p_equal = inst.p_max_w / active
    alloc = AllocationState(power=np.where(grid > 0.0, p_equal, 0.0),
                            assign=grid.copy(),
                            eff_power=np.where(grid > 0.0, p_equal, 0.0))
    return demand_shortfalls(inst, alloc, shannon)


def bulk_grant(inst: ProblemInstance, grid: np.ndarray,
               prefer: np.ndarray | None = None,
               shannon: bool = False) -> np.ndarray:
    """Move REs toward under-served users until estimated demands clear.

    The estimate splits the budget evenly over active REs; rounding can
    leave a user holding far too few REs for its bit demand (the
    relaxation served it through fractional slivers), and one-at-a-time
    repair would crawl.  Donor-loss-aware grants repeat until the estimate
    clears every demand or no RE can move.
    """
    K, M, N = inst.dims
    grid = grid.copy()
    for _ in range(K * M * N):
        short = equal_power_shortfalls(inst, grid, shannon)
        k = int(np.argmin(short))
        if short[k] >= 0.0:
            break
        regrant = grant_re(inst, grid, k, prefer=prefer)
        if regrant is None:
            break
        grid = regrant
    return grid


def _restore_power(inst: ProblemInstance, rounded: AllocationState,
                   cfg: SolverConfig, beta: float, shannon: bool):
    """Re-optimize power on the rounded assignment; None when infeasible."""
    active = rounded.assign > 0.0
    expansion = rounded.eff_power
    best = None
    j_prev = None
    warm = None
    for _ in range(max(1, cfg.restore_iters)):
        sub = build_power_subproblem(inst, active, expansion, shannon=shannon)
        sol = solve(sub, cfg.inner, warm_start=warm)
        if sol.status == STATUS_INFEASIBLE or sol.point_scaled is None:
            break
        cand = sub.layout.unpack(sol.point_scaled)
        j_new = exact_penalized_objective(inst, cand, beta, shannon)
        if j_prev is not None and j_new > j_prev + 1e-9 * (1.0 + abs(j_prev)):
            break
        best = cand
        warm = sol.point_scaled
        if j_prev is not None and abs(j_new - j_prev) <= cfg.rel_obj_tol * max(1.0, abs(j_prev)):
            break
        expansion = cand.eff_power
        j_prev = j_new
    return best


def better_report(a: SolveReport, b: SolveReport) -> bool:
    """Feasibility first, then metric."""
    if a.feasible != b.feasible:
        return a.feasible
    return a.metric > b.metric


def _single_move_grids(inst: ProblemInstance, grid: np.ndarray):
    """All one-RE reassignments that keep every positive demand served."""
    K, M, N = inst.dims
    allowed = inst.allowed_mask()
    demands = inst.bits_required
    owned = grid.sum(axis=(1, 2))
    for m in range(M):
        for n in range(N):
            col = grid[:, m, n]
            owner = int(np.argmax(col)) if col.max() > 0 else -1
            if owner >= 0 and demands[owner] > 0 and owned[owner] < 2:
                continue  # cannot take the owner's only RE
            for k in list(range(K)) + [-1]:
                if k == owner:
                    continue
                if k >= 0 and not allowed[k, m, n]:
                    continue
                out = grid.copy()
                if owner >= 0:
                    out[owner, m, n] = 0.0
                if k >= 0:
                    out[k, m, n] = 1.0
                yield out


def _move_polish(inst: ProblemInstance, final: AllocationState,
                 cfg: SolverConfig, beta: float, shannon: bool,
                 metric: float):
    """Best-improvement local search over single-RE moves (small grids).

    Each candidate move re-runs the power resolve; the pass repeats while
    it finds an improvement, within a fixed pass budget.
    """
    best_state, best_metric = final, metric
    for _ in range(4):
        improved = False
        base = best_state
        for grid in _single_move_grids(inst, base.assign):
            if not np.any(grid > 0.0):
                continue
            seed_eff = np.where(
                grid > 0.0,
                np.maximum(np.sum(base.eff_power, axis=0, keepdims=True)
                           * grid, 1e-12 * inst.p_max_w),
                0.0)
            cand0 = AllocationState(power=seed_eff.copy(), assign=grid,
                                    eff_power=seed_eff)
            cand = _restore_power(inst, cand0, cfg, beta, shannon)
            if cand is None:
                continue
            m_val = sum_throughput_metric(inst, cand, shannon=shannon)
            if m_val > best_metric + 1e-9:
                best_state, best_metric = cand, m_val
                improved = True
        if not improved:
            break
    return best_state, best_metric


def sca_solve(inst: ProblemInstance, cfg: SolverConfig | None = None,
              shannon: bool = False) -> SolveReport:
    """Full pipeline: outer loop, rounding, restoration, audit.

    ``shannon=True`` drops every dispersion term, turning the run into the
    capacity-based variant (audited and scored with Shannon bit counts).
    The ``multi`` policy (default) runs the pipeline from the saturate and
    greedy starting points and keeps the better result.  Infeasibility at
    the first subproblem, or of the restoration solve, yields
    ``feasible=False`` and a zero metric.
    """
    cfg = cfg or SolverConfig()
    if cfg.init_policy == "multi":
        t0 = time.perf_counter()
        best = None
        for policy in ("saturate", "greedy"):
            rep = sca_solve(inst, replace(cfg, init_policy=policy), shannon)
            if best is None or better_report(rep, best):
                best = rep
        best.wall_time = time.perf_counter() - t0
        return best
    t0 = time.perf_counter()
    beta = cfg.beta if cfg.beta is not None else default_beta(inst)

    state = initialize(inst, cfg)
    trace: list[float] = []
    warm = None
    j_prev = None
    status = "ok"
    for _ in range(cfg.j_max):
        sub = build_subproblem(inst, state, beta, shannon=shannon)
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
        j_new = exact_penalized_objective(inst, cand, beta, shannon)
        if j_prev is not None and j_new > j_prev + 1e-9 * (1.0 + abs(j_prev)):
            break  # inner tolerance slop; keep the previous iterate
        state = cand
        warm = sol.point_scaled
        trace.append(j_new)
        if j_prev is not None and abs(j_new - j_prev) <= cfg.rel_obj_tol * max(1.0, abs(j_prev)):
            j_prev = j_new
            break
        j_prev = j_new

    relaxation_gap = penalty_terms(state.assign).gap
    rounded = round_assignment(inst, state, cfg.round_threshold)
    variants = rounding_variants(inst, state.assign, rounded.assign)

    eff_floor = 1e-12 * inst.p_max_w

    def as_state(grid):
        eff = np.where(grid > 0.0, np.maximum(state.eff_power, eff_floor), 0.0)
        return AllocationState(power=eff.copy(), assign=grid, eff_power=eff)

    final = None
    for grid in variants:
        if not np.any(grid > 0.0):
            break
        if not cfg.restore:
            final = as_state(grid)
            break
        # Restoration ladder: rounding can strand a user on too few REs for
        # its bit demand, so grants are sized from an equal-power estimate
        # first; if the power resolve still certifies infeasibility the
        # worst-shortfall user takes one more RE and the resolve retries.
        grid = bulk_grant(inst, grid, prefer=state.assign, shannon=shannon)
        for _ in range(6):
            cand = as_state(grid)
            restored = _restore_power(inst, cand, cfg, beta, shannon)
            if restored is not None:
                final = restored
                break
            slack = demand_shortfalls(inst, cand, shannon)
            k_worst = int(np.argmin(slack))
            if slack[k_worst] >= 0.0:
                break
            regrant = grant_re(inst, grid, k_worst, prefer=state.assign)
            if regrant is None:
                break
            grid = regrant
        if final is not None:
            break
    if final is None:
        final = rounded
        if cfg.restore and np.any(rounded.assign > 0.0):
            status = "restore_infeasible"

    audit = check_feasible(inst, final, shannon=shannon)
    metric = sum_throughput_metric(inst, final, shannon=shannon)
    K, M, N = inst.dims
    if (cfg.polish and cfg.restore and audit.feasible
            and K * M * N <= cfg.polish_size_cap):
        final, metric = _move_polish(inst, final, cfg, beta, shannon, metric)
        audit = check_feasible(inst, final, shannon=shannon)
    return SolveReport(final_alloc=final, feasible=audit.feasible,
                       objective_trace=trace, metric=metric,
                       iterations_used=len(trace),
                       wall_time=time.perf_counter() - t0,
                       relaxation_gap=relaxation_gap, status=status)
