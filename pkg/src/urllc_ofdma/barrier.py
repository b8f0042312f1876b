"""Log-barrier interior-point solver for the allocation subproblems.

A primal barrier method with damped Newton steps: the barrier parameter t
grows geometrically from 1 until the gap estimate (row count over t)
clears the configured tolerance.  The Newton systems exploit the
subproblem structure -- the Hessian is block diagonal (one small block per
resource-element triple) plus one rank-one term per coupling row -- so a
step costs a batched closed-form block inverse and a dense factorization
of a small capacitance matrix instead of a full Cholesky.

Feasibility is established by a single-slack phase-1 run on the same
machinery: the builders hand over a point that strictly satisfies every
affine row, so only the bit-demand rows need slacking.  A positive
phase-1 optimum certifies infeasibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .fbl import LN2
from .subproblem import ConcaveRow, ConvexSubproblem

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class InnerConfig:
    """Tolerances and iteration limits of the barrier solver."""

    gap_tol: float = 1e-7          # relative duality-gap target
    feas_tol: float = 1e-8         # violation bound asserted on the result
    t_init: float = 1.0
    t_scale: float = 10.0
    newton_tol: float = 1e-9       # stage stop: squared Newton decrement / 2
    max_newton: int = 600          # total Newton iterations across stages
    max_stage_newton: int = 60
    reg: float = 1e-10             # diagonal regularization of the blocks
    armijo: float = 0.25
    backtrack: float = 0.5
    interior_margin: float = 1e-9  # strictness demanded of a phase-1 point


@dataclass
class InnerSolution:
    """Result of one subproblem solve.

    ``point`` is in原 problem units (scaling undone); ``point_scaled`` is
    kept for warm starts.  ``gap_estimate`` bounds the suboptimality of
    ``objective_value`` when the status is optimal; ``phase1_slack`` is the
    remaining constraint slack that certified infeasibility.
    """

    point: np.ndarray | None
    point_scaled: np.ndarray | None
    objective_value: float
    status: str
    kkt_residual: float
    gap_estimate: float
    newton_iterations: int
    phase1_slack: float | None = None


class _IterationBudget(Exception):
    def __init__(self, x):
        super().__init__("Newton iteration budget exhausted")
        self.x = x


def _inv3(blocks: np.ndarray) -> np.ndarray:
    """Stable inverse of a stack of symmetric positive definite 3x3 blocks.

    Near-active big-M rows contribute rank-one terms many orders above the
    rest of a block, so the blocks are equilibrated to unit diagonal and
    lightly regularized before the closed-form adjugate inverse; blocks
    whose determinant still drowns in rounding noise fall back to a
    pseudoinverse.
    """
    diag = np.einsum("bii->bi", blocks)
    scale = np.sqrt(np.maximum(diag, 1e-300))
    outer = scale[:, :, None] * scale[:, None, :]
    eq = blocks / outer
    ii = np.arange(3)
    eq[:, ii, ii] += 1e-9
    a, b, c = eq[:, 0, 0], eq[:, 0, 1], eq[:, 0, 2]
    d, e, f = eq[:, 1, 0], eq[:, 1, 1], eq[:, 1, 2]
    g, h, i = eq[:, 2, 0], eq[:, 2, 1], eq[:, 2, 2]
    ca = e * i - f * h
    cb = c * h - b * i
    cc = b * f - c * e
    cd = f * g - d * i
    ce = a * i - c * g
    cf = c * d - a * f
    cg = d * h - e * g
    ch = b * g - a * h
    ci = a * e - b * d
    det = a * ca + b * cd + c * cg
    bad = ~(det > 1e-13)
    det = np.where(bad, 1.0, det)
    out = np.empty_like(eq)
    out[:, 0, 0], out[:, 0, 1], out[:, 0, 2] = ca, cb, cc
    out[:, 1, 0], out[:, 1, 1], out[:, 1, 2] = cd, ce, cf
    out[:, 2, 0], out[:, 2, 1], out[:, 2, 2] = cg, ch, ci
    out /= det[:, None, None]
    if np.any(bad):
        out[bad] = np.linalg.pinv(eq[bad], hermitian=True)
    return out / outer


class _Kernel:
    """Precomputed index machinery for one subproblem."""

    def __init__(self, sub: ConvexSubproblem):
        self.sub = sub
        n = sub.num_vars
        vb = sub.var_block
        nb = int(vb.max()) + 1 if n else 1
        sizes = np.bincount(vb, minlength=nb)
        bs = int(sizes.max())
        starts = np.concatenate([[0], np.cumsum(sizes)])
        pos = np.arange(n) - starts[vb]
        self.n, self.nb, self.bs = n, nb, bs
        self.pad_index = vb * bs + pos
        self.diag_flat = vb * (bs * bs) + pos * (bs + 1)
        # Diagonal slots of padding positions, fixed to one so the block
        # inverses stay well defined.
        occupied = np.zeros(nb * bs, dtype=bool)
        occupied[self.pad_index] = True
        pad_slots = np.flatnonzero(~occupied)
        self.pad_diag_flat = ((pad_slots // bs) * bs * bs
                              + (pad_slots % bs) * (bs + 1))
        li = sub.loc_idx
        kc = li.shape[1]
        pp = pos[li]
        base = (vb[li[:, 0]] * bs * bs)[:, None, None]
        self.loc_outer_flat = (base + pp[:, :, None] * bs
                               + pp[:, None, :]).reshape(li.shape[0], kc * kc)
        self.coup_AT = np.ascontiguousarray(sub.coup_A.T)
        self.qa = sub.coup_A.shape[0]
        self.qc = len(sub.concave_rows)
        self.m_rows = len(sub.loc_rhs) + self.qa + self.qc

    # -- feasibility / values ------------------------------------------------

    def concave_parts(self, x):
        """Per-row (log-arg arrays, slack value) for the concave rows."""
        parts = []
        for row in self.sub.concave_rows:
            targs = 1.0 + row.gain * x[row.idx]
            if np.any(targs <= 0.0):
                parts.append((targs, -np.inf))
                continue
            h = float(np.sum(np.log2(targs))) - row.rhs
            if row.aff_idx.size:
                h -= float(np.sum(row.aff_coef * x[row.aff_idx]))
            parts.append((targs, h))
        return parts

    def barrier_value(self, x, t):
        """(psi, f0) with psi = +inf outside the strict interior."""
        sub = self.sub
        loc_r, coup_r = sub.affine_residuals(x)
        if (loc_r.size and np.max(loc_r) >= 0.0) or (coup_r.size and np.max(coup_r) >= 0.0):
            return np.inf, np.nan
        tobj = 1.0 + sub.log_gain * x[sub.log_idx]
        if tobj.size and np.min(tobj) <= 0.0:
            return np.inf, np.nan
        hs = []
        for targs, h in self.concave_parts(x):
            if h <= 0.0:
                return np.inf, np.nan
            hs.append(h)
        f0 = float(sub.cost @ x) + sub.const
        if tobj.size:
            f0 -= float(np.sum(sub.log_weight * np.log2(tobj)))
        psi = t * f0 - float(np.sum(np.log(-loc_r))) - float(np.sum(np.log(-coup_r)))
        for h in hs:
            psi -= math.log(h)
        return psi, f0

    def strictly_feasible(self, x) -> bool:
        loc_r, coup_r = self.sub.affine_residuals(x)
        if loc_r.size and np.max(loc_r) >= 0.0:
            return False
        if coup_r.size and np.max(coup_r) >= 0.0:
            return False
        return all(h > 0.0 for _, h in self.concave_parts(x))

    # -- Newton machinery ----------------------------------------------------

    def assemble(self, x, t, reg):
        """Gradient, block Hessian (flat), and coupling columns at x."""
        sub = self.sub
        n, nb, bs = self.n, self.nb, self.bs
        loc_r, coup_r = sub.affine_residuals(x)
        # Inverse residuals are clipped so squared barrier terms stay finite
        # even when an iterate hugs a constraint boundary.
        inv_loc = np.minimum(-1.0 / loc_r, 1e30)
        inv_coup = np.minimum(-1.0 / coup_r, 1e30) if coup_r.size else coup_r

        grad = t * sub.cost.copy()
        tobj = 1.0 + sub.log_gain * x[sub.log_idx]
        slope = sub.log_weight * sub.log_gain / (tobj * LN2)
        grad[sub.log_idx] -= t * slope
        grad += np.bincount(sub.loc_idx.ravel(),
                            weights=(sub.loc_coef * inv_loc[:, None]).ravel(),
                            minlength=n)
        if self.qa:
            grad += self.coup_AT @ inv_coup

        flat = np.zeros(nb * bs * bs)
        flat[self.pad_diag_flat] = 1.0
        curv = t * sub.log_weight * sub.log_gain**2 / (tobj**2 * LN2)
        flat += np.bincount(self.diag_flat[sub.log_idx], weights=curv,
                            minlength=nb * bs * bs)
        outer = (sub.loc_coef[:, :, None] * sub.loc_coef[:, None, :]
                 ).reshape(self.loc_outer_flat.shape) * (inv_loc**2)[:, None]
        flat += np.bincount(self.loc_outer_flat.ravel(), weights=outer.ravel(),
                            minlength=nb * bs * bs)
        flat[self.diag_flat] += reg

        q = self.qa + self.qc
        U = np.empty((n, q))
        if self.qa:
            U[:, : self.qa] = self.coup_AT * inv_coup[None, :]
        for j, row in enumerate(sub.concave_rows):
            targs = 1.0 + row.gain * x[row.idx]
            h = float(np.sum(np.log2(targs))) - row.rhs
            if row.aff_idx.size:
                h -= float(np.sum(row.aff_coef * x[row.aff_idx]))
            h = max(h, 1e-30)
            gradh = np.zeros(n)
            gradh[row.idx] = row.gain / (targs * LN2)
            if row.aff_idx.size:
                gradh[row.aff_idx] -= row.aff_coef
            grad -= gradh / h
            U[:, self.qa + j] = gradh / h
            flat[self.diag_flat[row.idx]] += row.gain**2 / (targs**2 * LN2) / h
        return grad, flat, U

    def newton_direction(self, grad, flat, U):
        nb, bs, n = self.nb, self.bs, self.n
        blocks = flat.reshape(nb, bs, bs)
        if bs == 3:
            binv = _inv3(blocks)
        elif bs == 1:
            binv = 1.0 / blocks
        else:
            binv = np.linalg.inv(blocks)
        rhs_p = np.zeros(nb * bs)
        rhs_p[self.pad_index] = -grad
        z = (binv @ rhs_p.reshape(nb, bs, 1)).reshape(nb * bs)[self.pad_index]
        q = U.shape[1]
        if q == 0:
            delta = z
        else:
            up = np.zeros((nb * bs, q))
            up[self.pad_index] = U
            y = (binv @ up.reshape(nb, bs, q)).reshape(nb * bs, q)[self.pad_index]
            cap = U.T @ y
            cap[np.diag_indices_from(cap)] += 1.0
            try:
                factor = cho_factor(cap, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                cap[np.diag_indices_from(cap)] += 1e-10
                factor = cho_factor(cap, lower=True, check_finite=False)
            w = cho_solve(factor, U.T @ z, check_finite=False)
            delta = z - y @ w
        lam2 = float(-grad @ delta)
        return delta, max(lam2, 0.0)

    def max_affine_step(self, x, delta):
        sub = self.sub
        loc_r, coup_r = sub.affine_residuals(x)
        d_loc = np.einsum("ij,ij->i", sub.loc_coef, delta[sub.loc_idx])
        alpha = np.inf
        pos = d_loc > 0.0
        if np.any(pos):
            alpha = float(np.min(-loc_r[pos] / d_loc[pos]))
        if coup_r.size:
            d_coup = sub.coup_A @ delta
            pos = d_coup > 0.0
            if np.any(pos):
                alpha = min(alpha, float(np.min(-coup_r[pos] / d_coup[pos])))
        return alpha


def _centering(kernel: _Kernel, x, t, cfg: InnerConfig, budget, trace, tag):
    """Damped Newton until the decrement clears the stage tolerance."""
    psi, _ = kernel.barrier_value(x, t)
    for _ in range(cfg.max_stage_newton):
        grad, flat, U = kernel.assemble(x, t, cfg.reg)
        delta, lam2 = kernel.newton_direction(grad, flat, U)
        if trace is not None:
            trace.write(f"{tag} t={t:.3e} it={budget[0]} "
                        f"lambda2={lam2:.3e} psi={psi:.6e}\n")
        if 0.5 * lam2 <= cfg.newton_tol:
            return x, psi
        budget[0] += 1
        if budget[0] > cfg.max_newton:
            raise _IterationBudget(x)
        slope = float(grad @ delta)
        alpha = min(1.0, 0.99 * kernel.max_affine_step(x, delta))
        accepted = False
        while alpha > 1e-18:
            trial = x + alpha * delta
            psi_t, _ = kernel.barrier_value(trial, t)
            if psi_t <= psi + cfg.armijo * alpha * slope:
                x, psi = trial, psi_t
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted:
            # Numerical floor: no usable step remains at this stage.
            return x, psi
    return x, psi


def _estimate_t(kernel: _Kernel, x) -> float:
    """Barrier parameter whose central path passes closest to x.

    Least-squares fit of t * grad(f0) = -grad(barrier); used to start the
    outer loop near a warm point's position on the path instead of
    re-walking it from t = 1.
    """
    grad1, _, _ = kernel.assemble(x, 1.0, 0.0)
    grad0, _, _ = kernel.assemble(x, 0.0, 0.0)
    gf = grad1 - grad0
    denom = float(gf @ gf)
    if denom <= 0.0:
        return 0.0
    return float(-(gf @ grad0) / denom)


def _barrier_loop(kernel: _Kernel, x, cfg: InnerConfig, budget, trace, tag,
                  stop_check=None, gap_target=None, t_start=None):
    """Outer loop over t; ``stop_check(x, gap)`` may end a stage early."""
    t = cfg.t_init if t_start is None else max(cfg.t_init, t_start)
    m = kernel.m_rows
    while True:
        x, _ = _centering(kernel, x, t, cfg, budget, trace, tag)
        if stop_check is not None:
            hit = stop_check(x, m / t)
            if hit is not None:
                return hit, t
        _, f0 = kernel.barrier_value(x, t)
        target = gap_target if gap_target is not None else cfg.gap_tol * (1.0 + abs(f0))
        if m / t <= target:
            return x, t
        t *= cfg.t_scale


def _phase1_subproblem(sub: ConvexSubproblem, kernel: _Kernel):
    """Augment with one slack on the concave rows: minimize the slack."""
    n = sub.num_vars
    x0 = sub.easy_point.copy()
    h0 = np.array([h for _, h in kernel.concave_parts(x0)])
    u0 = float(max(np.max(-h0) if h0.size else 0.0, 0.0) + 1.0)
    u_lo = -2.0 - 0.1 * abs(u0)
    u_hi = u0 + 1.0
    u_ix = n

    loc_idx = np.vstack([
        sub.loc_idx,
        np.full((2, sub.loc_idx.shape[1]), u_ix),
    ])
    extra_coef = np.zeros((2, sub.loc_coef.shape[1]))
    extra_coef[0, 0] = -1.0  # -u <= -u_lo
    extra_coef[1, 0] = 1.0   # u <= u_hi
    loc_coef = np.vstack([sub.loc_coef, extra_coef])
    loc_rhs = np.concatenate([sub.loc_rhs, [-u_lo, u_hi]])
    loc_label = sub.loc_label + ("slack>=lo", "slack<=hi")

    coup_A = np.hstack([sub.coup_A, np.zeros((sub.coup_A.shape[0], 1))])

    rows = tuple(
        ConcaveRow(idx=row.idx, gain=row.gain,
                   aff_idx=np.concatenate([row.aff_idx, [u_ix]]),
                   aff_coef=np.concatenate([row.aff_coef, [-1.0]]),
                   rhs=row.rhs, label=row.label)
        for row in sub.concave_rows
    )

    cost = np.zeros(n + 1)
    cost[u_ix] = 1.0
    aug = ConvexSubproblem(
        num_vars=n + 1,
        log_idx=np.zeros(0, dtype=int), log_gain=np.zeros(0),
        log_weight=np.zeros(0), cost=cost, const=0.0,
        loc_idx=loc_idx, loc_coef=loc_coef, loc_rhs=loc_rhs,
        loc_label=loc_label,
        coup_A=coup_A, coup_rhs=sub.coup_rhs.copy(), coup_label=sub.coup_label,
        concave_rows=rows,
        var_block=np.concatenate([sub.var_block,
                                  [int(sub.var_block.max()) + 1 if n else 0]]),
        var_scale=np.concatenate([sub.var_scale, [1.0]]),
        easy_point=np.concatenate([x0, [u0]]),
        layout=None)
    return aug


def _phase1(sub: ConvexSubproblem, kernel: _Kernel, cfg: InnerConfig,
            budget, trace):
    """Find a strictly feasible point or certify that none exists.

    Returns (point or None, final slack value).
    """
    margins = np.array([cfg.interior_margin * (1.0 + abs(row.rhs))
                        for row in sub.concave_rows])
    x0 = sub.easy_point
    h0 = np.array([h for _, h in kernel.concave_parts(x0)])
    if h0.size == 0 or np.all(h0 >= 2.0 * margins):
        return x0.copy(), -float(np.min(h0)) if h0.size else -1.0

    aug = _phase1_subproblem(sub, kernel)
    aug_kernel = _Kernel(aug)

    def stop_check(xu, gap):
        h = np.array([h for _, h in kernel.concave_parts(xu[:-1])])
        if np.all(h >= 2.0 * margins):
            return xu
        if float(xu[-1]) - gap > 0.0:
            return xu  # certified: the slack optimum stays positive
        return None

    gap_target = max(float(np.min(margins)) / 4.0, 1e-13)
    xu, _ = _barrier_loop(aug_kernel, aug.easy_point.copy(), cfg, budget,
                          trace, "phase1", stop_check=stop_check,
                          gap_target=gap_target)
    x, u = xu[:-1], float(xu[-1])
    h = np.array([h for _, h in kernel.concave_parts(x)])
    if np.all(h >= 2.0 * margins):
        return x, u
    return None, u


def solve(sub: ConvexSubproblem, cfg: InnerConfig | None = None,
          warm_start: np.ndarray | None = None, trace=None) -> InnerSolution:
    """Solve one convex subproblem to the configured duality gap.

    ``warm_start`` is a scaled point; it is used when strictly feasible
    and silently discarded otherwise.  Infeasible subproblems yield a
    solution object with status ``infeasible`` rather than an exception.
    The solve is deterministic for identical inputs.
    """
    cfg = cfg or InnerConfig()
    kernel = _Kernel(sub)
    budget = [0]
    phase1_slack = None

    x = None
    t_start = None
    if warm_start is not None and warm_start.shape == (sub.num_vars,):
        if kernel.strictly_feasible(warm_start):
            x = np.asarray(warm_start, dtype=float).copy()
            # Resume roughly where the warm point sits on the central path.
            t_start = min(_estimate_t(kernel, x),
                          0.01 * kernel.m_rows / max(cfg.gap_tol, 1e-12))
    if x is None:
        try:
            x, phase1_slack = _phase1(sub, kernel, cfg, budget, trace)
        except _IterationBudget:
            return InnerSolution(None, None, math.nan, STATUS_MAX_ITERATIONS,
                                 math.inf, math.inf, budget[0])
        if x is None:
            return InnerSolution(None, None, math.nan, STATUS_INFEASIBLE,
                                 math.inf, math.inf, budget[0],
                                 phase1_slack=phase1_slack)

    status = STATUS_OPTIMAL
    try:
        x, t_final = _barrier_loop(kernel, x, cfg, budget, trace, "phase2",
                                   t_start=t_start)
    except _IterationBudget as stop:
        x = stop.x
        status = STATUS_MAX_ITERATIONS
        t_final = cfg.t_init

    _, f0 = kernel.barrier_value(x, 1.0)
    kkt = _kkt_residual(kernel, x, t_final)
    return InnerSolution(point=x * sub.var_scale, point_scaled=x,
                         objective_value=f0, status=status,
                         kkt_residual=kkt,
                         gap_estimate=kernel.m_rows / t_final,
                         newton_iterations=budget[0],
                         phase1_slack=phase1_slack)


def _kkt_residual(kernel: _Kernel, x, t) -> float:
    """Stationarity norm with the barrier's implicit multipliers."""
    grad_t, _, _ = kernel.assemble(x, t, 0.0)
    return float(np.max(np.abs(grad_t)) / t)
