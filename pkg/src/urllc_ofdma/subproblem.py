"""Convex surrogate subproblems for the allocation solver.

The mixed-integer allocation problem is relaxed and convexified in three
standard moves: the assignment-power product is replaced by an effective
power variable tied down by big-M rows, the binary assignment constraint
becomes a box plus a penalty ``beta * (sum s - sum s^2)``, and the two
concave troublemakers (the dispersion penalty in the objective / bit
constraints, and the squared-sum part of the penalty) are replaced by
their tangents at an expansion point.  One ``ConvexSubproblem`` is the
resulting convex program, expressed in scaled variables (powers divided by
the budget) for conditioning.

Variable layout of the full subproblem: one block of three consecutive
scalars per admissible (user, subcarrier, slot) triple, ordered user-major
-- effective power, per-assignment power, assignment fraction.  Slots a
user's delay budget rules out are eliminated rather than constrained.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fbl import LN2, dispersion_penalty_grad, q_inv, user_bits
from .model import AllocationState, ProblemInstance


def default_beta(inst: ProblemInstance) -> float:
    """Default penalty weight: 10 log2(1 + P_max / noise power)."""
    return 10.0 * math.log2(1.0 + inst.p_max_w / inst.noise_w)


@dataclass(frozen=True)
class PenaltyTerms:
    linear_sum: float
    square_sum: float

    @property
    def gap(self) -> float:
        """Distance from binariness; zero iff every entry is 0 or 1."""
        return self.linear_sum - self.square_sum


def penalty_terms(s) -> PenaltyTerms:
    """Sum and squared sum of assignment fractions (entries in [0, 1])."""
    arr = np.asarray(s, dtype=float)
    if arr.size and (np.min(arr) < 0.0 or np.max(arr) > 1.0):
        raise ValueError("assignment fractions must lie in [0, 1]")
    return PenaltyTerms(float(np.sum(arr)), float(np.sum(arr * arr)))


@dataclass(frozen=True)
class SquareSumTangent:
    """Affine minorant of sum(s^2) expanded at a reference point."""

    coef: np.ndarray
    constant: float

    def __call__(self, s) -> float:
        arr = np.asarray(s, dtype=float)
        return float(np.sum(self.coef * arr) + self.constant)


def linearize_square_sum(s_ref) -> SquareSumTangent:
    """Tangent of the convex map s -> sum(s^2) at ``s_ref``.

    Underestimates the squared sum everywhere and is exact at the
    expansion point.
    """
    ref = np.asarray(s_ref, dtype=float)
    return SquareSumTangent(coef=2.0 * ref, constant=float(-np.sum(ref * ref)))


@dataclass(frozen=True)
class ConcaveRow:
    """Constraint sum_i log2(1 + gain_i x[idx_i]) - aff.x >= rhs."""

    idx: np.ndarray
    gain: np.ndarray
    aff_idx: np.ndarray
    aff_coef: np.ndarray
    rhs: float
    label: str = ""

    def value(self, x: np.ndarray) -> float:
        v = float(np.sum(np.log2(1.0 + self.gain * x[self.idx])))
        if self.aff_idx.size:
            v -= float(np.sum(self.aff_coef * x[self.aff_idx]))
        return v - self.rhs


@dataclass(frozen=True)
class ConvexSubproblem:
    """One convex program in scaled variables.

    Objective (to minimize):
        -sum_j log_weight[j] * log2(1 + log_gain[j] * x[log_idx[j]])
        + cost . x + const

    Constraints: local affine rows (at most three variables, all inside
    one block), dense coupling affine rows, and concave bit-demand rows;
    affine rows read ``sum coef * x[idx] <= rhs``.
    """

    num_vars: int
    log_idx: np.ndarray
    log_gain: np.ndarray
    log_weight: np.ndarray
    cost: np.ndarray
    const: float
    loc_idx: np.ndarray     # (m_local, <=3), padded with index 0 / coef 0
    loc_coef: np.ndarray
    loc_rhs: np.ndarray
    loc_label: tuple
    coup_A: np.ndarray      # (m_coupling, num_vars) dense
    coup_rhs: np.ndarray
    coup_label: tuple
    concave_rows: tuple
    var_block: np.ndarray
    var_scale: np.ndarray
    easy_point: np.ndarray  # strictly feasible for every affine row
    layout: object = field(default=None, compare=False)

    @property
    def num_rows(self) -> int:
        return len(self.loc_rhs) + len(self.coup_rhs) + len(self.concave_rows)

    def objective_at(self, x: np.ndarray) -> float:
        obj = float(self.cost @ x) + self.const
        if self.log_idx.size:
            obj -= float(np.sum(self.log_weight
                                * np.log2(1.0 + self.log_gain * x[self.log_idx])))
        return obj

    def affine_residuals(self, x: np.ndarray):
        """(local, coupling) residuals; nonpositive means satisfied."""
        loc = np.einsum("ij,ij->i", self.loc_coef, x[self.loc_idx]) - self.loc_rhs
        coup = self.coup_A @ x - self.coup_rhs
        return loc, coup

    def concave_values(self, x: np.ndarray) -> np.ndarray:
        """Concave-row slacks; nonnegative means satisfied."""
        return np.array([row.value(x) for row in self.concave_rows])

    def max_violation(self, x: np.ndarray) -> float:
        loc, coup = self.affine_residuals(x)
        worst = 0.0
        if loc.size:
            worst = max(worst, float(np.max(loc)))
        if coup.size:
            worst = max(worst, float(np.max(coup)))
        conc = self.concave_values(x)
        if conc.size:
            worst = max(worst, float(np.max(-conc)))
        return worst

    def dump(self, stream) -> None:
        """Write a human-readable description for external cross-checking."""
        doc = {
            "num_vars": self.num_vars,
            "var_scale": self.var_scale.tolist(),
            "objective": {
                "log_terms": [
                    {"var": int(i), "gain": float(g), "weight": float(w)}
                    for i, g, w in zip(self.log_idx, self.log_gain, self.log_weight)
                ],
                "cost": self.cost.tolist(),
                "const": self.const,
            },
            "affine_rows": [
                {
                    "label": self.loc_label[r],
                    "terms": {int(i): float(c)
                              for i, c in zip(self.loc_idx[r], self.loc_coef[r])
                              if c != 0.0},
                    "rhs": float(self.loc_rhs[r]),
                }
                for r in range(len(self.loc_rhs))
            ] + [
                {
                    "label": self.coup_label[r],
                    "terms": {int(i): float(c)
                              for i, c in enumerate(self.coup_A[r]) if c != 0.0},
                    "rhs": float(self.coup_rhs[r]),
                }
                for r in range(len(self.coup_rhs))
            ],
            "concave_rows": [
                {
                    "label": row.label,
                    "log_terms": {int(i): float(g)
                                  for i, g in zip(row.idx, row.gain)},
                    "affine_terms": {int(i): float(c)
                                     for i, c in zip(row.aff_idx, row.aff_coef)},
                    "rhs": float(row.rhs),
                }
                for row in self.concave_rows
            ],
        }
        json.dump(doc, stream, indent=1)


def _freeze(sub: ConvexSubproblem) -> ConvexSubproblem:
    for name in ("log_idx", "log_gain", "log_weight", "cost", "loc_idx",
                 "loc_coef", "loc_rhs", "coup_A", "coup_rhs", "var_block",
                 "var_scale", "easy_point"):
        getattr(sub, name).setflags(write=False)
    return sub


class TripleIndex:
    """Flat ordering of admissible (user, subcarrier, slot) triples."""

    def __init__(self, inst: ProblemInstance, active: np.ndarray | None = None):
        allowed = inst.allowed_mask()
        if active is not None:
            if np.any(active & ~allowed):
                raise ValueError("active set reaches outside the delay-admissible grid")
            allowed = allowed & active
        ks, ms, ns = [], [], []
        for k in range(inst.num_users):
            m_idx, n_idx = np.nonzero(allowed[k])
            ks.append(np.full(m_idx.size, k))
            ms.append(m_idx)
            ns.append(n_idx)
        self.k_of = np.concatenate(ks) if ks else np.zeros(0, dtype=int)
        self.m_of = np.concatenate(ms) if ms else np.zeros(0, dtype=int)
        self.n_of = np.concatenate(ns) if ns else np.zeros(0, dtype=int)
        self.count = self.k_of.size
        counts = np.bincount(self.k_of, minlength=inst.num_users)
        starts = np.concatenate([[0], np.cumsum(counts)])
        self.user_slice = [slice(starts[k], starts[k + 1])
                           for k in range(inst.num_users)]
        self.dims = inst.dims

    def gather(self, grid: np.ndarray) -> np.ndarray:
        return grid[self.k_of, self.m_of, self.n_of]

    def scatter(self, values: np.ndarray) -> np.ndarray:
        grid = np.zeros(self.dims)
        grid[self.k_of, self.m_of, self.n_of] = values
        return grid


class FullLayout:
    """Variable layout with (eff power, power, assignment) per triple."""

    def __init__(self, inst: ProblemInstance):
        self.triples = TripleIndex(inst)
        self.p_scale = inst.p_max_w
        r = self.triples.count
        base = 3 * np.arange(r)
        self.pbar_ix = base
        self.p_ix = base + 1
        self.s_ix = base + 2
        self.num_vars = 3 * r

    def pack(self, alloc: AllocationState) -> np.ndarray:
        x = np.empty(self.num_vars)
        x[self.pbar_ix] = self.triples.gather(alloc.eff_power) / self.p_scale
        x[self.p_ix] = self.triples.gather(alloc.power) / self.p_scale
        x[self.s_ix] = self.triples.gather(alloc.assign)
        return x

    def unpack(self, x: np.ndarray) -> AllocationState:
        eff = self.triples.scatter(x[self.pbar_ix] * self.p_scale)
        power = self.triples.scatter(x[self.p_ix] * self.p_scale)
        assign = self.triples.scatter(x[self.s_ix])
        return AllocationState(power=power, assign=assign, eff_power=eff)


class AssignLayout:
    """Variable layout with one assignment fraction per triple."""

    def __init__(self, inst: ProblemInstance, power_per_re: float):
        self.triples = TripleIndex(inst)
        self.power_per_re = power_per_re
        self.num_vars = self.triples.count
        self.s_ix = np.arange(self.num_vars)

    def pack(self, assign_grid: np.ndarray) -> np.ndarray:
        return self.triples.gather(assign_grid)

    def unpack(self, x: np.ndarray) -> AllocationState:
        assign = self.triples.scatter(x)
        power = np.where(assign > 0.0, self.power_per_re, 0.0)
        return AllocationState(power=power, assign=assign,
                               eff_power=assign * self.power_per_re)


class PowerLayout:
    """Variable layout with effective power on a fixed binary assignment."""

    def __init__(self, inst: ProblemInstance, active: np.ndarray):
        self.triples = TripleIndex(inst, active=active.astype(bool))
        self.p_scale = inst.p_max_w
        self.num_vars = self.triples.count
        self.pbar_ix = np.arange(self.num_vars)

    def pack(self, eff_grid: np.ndarray) -> np.ndarray:
        return self.triples.gather(eff_grid) / self.p_scale

    def unpack(self, x: np.ndarray) -> AllocationState:
        eff = self.triples.scatter(x * self.p_scale)
        assign = self.triples.scatter(np.ones(self.num_vars))
        return AllocationState(power=eff.copy(), assign=assign, eff_power=eff)


def _user_linearization(inst, tri: TripleIndex, gains_scaled, x_exp, shannon):
    """Per-user dispersion tangent: gradient array, value, offset of rhs."""
    K = inst.num_users
    grad = np.zeros(tri.count)
    vbar = np.zeros(K)
    if shannon:
        return grad, vbar
    for k in range(K):
        sl = tri.user_slice[k]
        if sl.stop == sl.start:
            continue
        eps = inst.qos[k].error_prob
        grad[sl] = dispersion_penalty_grad(gains_scaled[sl], x_exp[sl], eps)
        vbar[k] = user_bits(gains_scaled[sl], x_exp[sl], eps).penalty
    return grad, vbar


def _exclusivity_rows(inst, tri: TripleIndex, s_var_ix, num_vars):
    """One row per resource element shared by several admissible users."""
    rows, rhs, labels = [], [], []
    M, N = inst.num_subcarriers, inst.num_slots
    re_key = tri.m_of * N + tri.n_of
    order = np.argsort(re_key, kind="stable")
    sorted_key = re_key[order]
    boundaries = np.flatnonzero(np.diff(sorted_key)) + 1
    groups = np.split(order, boundaries)
    for grp in groups:
        if grp.size == 0:
            continue
        a = np.zeros(num_vars)
        a[s_var_ix[grp]] = 1.0
        rows.append(a)
        rhs.append(1.0)
        m, n = tri.m_of[grp[0]], tri.n_of[grp[0]]
        labels.append(f"share[m={m},n={n}]")
    if rows:
        return np.array(rows), np.array(rhs), tuple(labels)
    return np.zeros((0, num_vars)), np.zeros(0), ()


def _check_expansion_support(name, values, positive=True):
    if positive and values.size and np.min(values) <= 0.0:
        raise ValueError(
            f"expansion {name} must be strictly positive on every admissible RE")


def build_subproblem(inst: ProblemInstance, expansion: AllocationState,
                     beta: float, shannon: bool = False) -> ConvexSubproblem:
    """Assemble the full linearized subproblem at an expansion point.

    The expansion must carry strictly positive effective power and
    assignment fractions on every admissible RE (the dispersion tangent
    needs an interior point) and zero outside the admissible set.  With
    ``shannon=True`` every dispersion term is dropped, which turns the
    surrogate into the capacity-based program of the upper bound.
    """
    if not beta > 0.0:
        raise ValueError(f"penalty weight must be positive, got {beta}")
    layout = FullLayout(inst)
    tri = layout.triples
    r = tri.count
    n = layout.num_vars
    p_max = inst.p_max_w

    allowed = inst.allowed_mask()
    outside = ~allowed
    if (np.any(expansion.eff_power[outside] != 0.0)
            or np.any(expansion.assign[outside] != 0.0)):
        raise ValueError("expansion carries mass on delay-forbidden REs")

    x_exp = tri.gather(expansion.eff_power) / p_max
    s_exp = tri.gather(expansion.assign)
    _check_expansion_support("effective power", x_exp)
    _check_expansion_support("assignment", s_exp)

    gains_scaled = inst.gains[tri.k_of, tri.m_of] * p_max
    w_of = inst.weights[tri.k_of]
    grad, vbar = _user_linearization(inst, tri, gains_scaled, x_exp, shannon)

    cost = np.zeros(n)
    cost[layout.pbar_ix] = w_of * grad
    cost[layout.s_ix] = beta * (1.0 - 2.0 * s_exp)
    const = float(inst.weights @ vbar - np.sum(w_of * grad * x_exp)
                  + beta * np.sum(s_exp * s_exp))

    # Local big-M / box rows, one batch of each family per triple.
    zeros = np.zeros(r)
    ones = np.ones(r)
    fams = [
        ("power>=0", np.stack([layout.p_ix, layout.p_ix, layout.p_ix], axis=1),
         np.stack([-ones, zeros, zeros], axis=1), zeros),
        ("assign>=0", np.stack([layout.s_ix] * 3, axis=1),
         np.stack([-ones, zeros, zeros], axis=1), zeros),
        ("assign<=1", np.stack([layout.s_ix] * 3, axis=1),
         np.stack([ones, zeros, zeros], axis=1), ones),
        ("eff<=Pmax*s", np.stack([layout.pbar_ix, layout.s_ix, layout.s_ix], axis=1),
         np.stack([ones, -ones, zeros], axis=1), zeros),
        ("eff<=power", np.stack([layout.pbar_ix, layout.p_ix, layout.p_ix], axis=1),
         np.stack([ones, -ones, zeros], axis=1), zeros),
        ("eff>=power-(1-s)Pmax", np.stack([layout.p_ix, layout.pbar_ix, layout.s_ix], axis=1),
         np.stack([ones, -ones, ones], axis=1), ones),
        ("eff>=0", np.stack([layout.pbar_ix] * 3, axis=1),
         np.stack([-ones, zeros, zeros], axis=1), zeros),
    ]
    loc_idx = np.concatenate([f[1] for f in fams])
    loc_coef = np.concatenate([f[2] for f in fams])
    loc_rhs = np.concatenate([f[3] for f in fams])
    loc_label = tuple(
        f"{name}[k={tri.k_of[i]},m={tri.m_of[i]},n={tri.n_of[i]}]"
        for name, *_ in fams for i in range(r))

    budget = np.zeros(n)
    budget[layout.pbar_ix] = 1.0
    coup_A, coup_rhs, coup_label = _exclusivity_rows(inst, tri, layout.s_ix, n)
    coup_A = np.vstack([budget[None, :], coup_A])
    coup_rhs = np.concatenate([[1.0], coup_rhs])
    coup_label = ("budget",) + coup_label

    concave = []
    for k in range(inst.num_users):
        bits = inst.qos[k].bits_required
        if bits <= 0:
            continue
        sl = tri.user_slice[k]
        idx = layout.pbar_ix[sl.start:sl.stop]
        g_k = gains_scaled[sl]
        if shannon:
            aff_idx = np.zeros(0, dtype=int)
            aff_coef = np.zeros(0)
            rhs = float(bits)
        else:
            aff_idx = idx
            aff_coef = grad[sl].copy()
            rhs = float(bits + vbar[k] - np.sum(grad[sl] * x_exp[sl]))
        concave.append(ConcaveRow(idx=idx, gain=g_k, aff_idx=aff_idx,
                                  aff_coef=aff_coef, rhs=rhs,
                                  label=f"bits[k={k}]"))

    # Strictly interior point for the affine rows: modest assignment
    # fractions, effective power well under both the budget and the big-M
    # caps, per-assignment power strictly between its big-M pinches.
    share = np.bincount(tri.m_of * inst.num_slots + tri.n_of)
    count_of = share[tri.m_of * inst.num_slots + tri.n_of]
    s_easy = 0.9 / count_of
    theta = min(0.5 / float(np.sum(s_easy)), 0.5)
    easy = np.zeros(n)
    easy[layout.s_ix] = s_easy
    easy[layout.pbar_ix] = theta * s_easy
    easy[layout.p_ix] = theta * s_easy + 0.25 * (1.0 - s_easy)

    var_block = np.repeat(np.arange(r), 3)
    var_scale = np.empty(n)
    var_scale[layout.pbar_ix] = p_max
    var_scale[layout.p_ix] = p_max
    var_scale[layout.s_ix] = 1.0

    sub = ConvexSubproblem(
        num_vars=n,
        log_idx=layout.pbar_ix.copy(), log_gain=gains_scaled.copy(),
        log_weight=w_of.copy(), cost=cost, const=const,
        loc_idx=loc_idx, loc_coef=loc_coef, loc_rhs=loc_rhs,
        loc_label=loc_label,
        coup_A=coup_A, coup_rhs=coup_rhs, coup_label=coup_label,
        concave_rows=tuple(concave),
        var_block=var_block, var_scale=var_scale, easy_point=easy,
        layout=layout)
    return _freeze(sub)


def build_assignment_subproblem(inst: ProblemInstance, expansion_assign: np.ndarray,
                                beta: float, power_per_re: float,
                                shannon: bool = False) -> ConvexSubproblem:
    """Subproblem with powers pinned to a common per-RE value.

    Only assignment fractions remain; the budget row disappears because
    exclusivity already caps total spent power at the budget.
    """
    if not beta > 0.0:
        raise ValueError(f"penalty weight must be positive, got {beta}")
    if not power_per_re > 0.0:
        raise ValueError(f"per-RE power must be positive, got {power_per_re}")
    layout = AssignLayout(inst, power_per_re)
    tri = layout.triples
    r = layout.num_vars

    allowed = inst.allowed_mask()
    expansion_assign = np.asarray(expansion_assign, dtype=float)
    if np.any(expansion_assign[~allowed] != 0.0):
        raise ValueError("expansion carries mass on delay-forbidden REs")
    s_exp = tri.gather(expansion_assign)
    _check_expansion_support("assignment", s_exp)

    gains_eff = inst.gains[tri.k_of, tri.m_of] * power_per_re
    w_of = inst.weights[tri.k_of]
    grad, vbar = _user_linearization(inst, tri, gains_eff, s_exp, shannon)

    cost = w_of * grad + beta * (1.0 - 2.0 * s_exp)
    const = float(inst.weights @ vbar - np.sum(w_of * grad * s_exp)
                  + beta * np.sum(s_exp * s_exp))

    zeros = np.zeros(r)
    ones = np.ones(r)
    loc_idx = np.concatenate([layout.s_ix, layout.s_ix])[:, None]
    loc_coef = np.concatenate([-ones, ones])[:, None]
    loc_rhs = np.concatenate([zeros, ones])
    loc_label = tuple(
        f"{name}[k={tri.k_of[i]},m={tri.m_of[i]},n={tri.n_of[i]}]"
        for name in ("assign>=0", "assign<=1") for i in range(r))

    coup_A, coup_rhs, coup_label = _exclusivity_rows(inst, tri, layout.s_ix, r)

    concave = []
    for k in range(inst.num_users):
        bits = inst.qos[k].bits_required
        if bits <= 0:
            continue
        sl = tri.user_slice[k]
        idx = layout.s_ix[sl.start:sl.stop]
        if shannon:
            aff_idx, aff_coef, rhs = np.zeros(0, dtype=int), np.zeros(0), float(bits)
        else:
            aff_idx = idx
            aff_coef = grad[sl].copy()
            rhs = float(bits + vbar[k] - np.sum(grad[sl] * s_exp[sl]))
        concave.append(ConcaveRow(idx=idx, gain=gains_eff[sl], aff_idx=aff_idx,
                                  aff_coef=aff_coef, rhs=rhs,
                                  label=f"bits[k={k}]"))

    share = np.bincount(tri.m_of * inst.num_slots + tri.n_of)
    count_of = share[tri.m_of * inst.num_slots + tri.n_of]
    easy = 0.9 / count_of.astype(float)

    sub = ConvexSubproblem(
        num_vars=r,
        log_idx=layout.s_ix.copy(), log_gain=gains_eff.copy(),
        log_weight=w_of.copy(), cost=cost, const=const,
        loc_idx=loc_idx, loc_coef=loc_coef, loc_rhs=loc_rhs,
        loc_label=loc_label,
        coup_A=coup_A, coup_rhs=coup_rhs, coup_label=coup_label,
        concave_rows=tuple(concave),
        var_block=np.arange(r), var_scale=np.ones(r), easy_point=easy,
        layout=layout)
    return _freeze(sub)


def build_power_subproblem(inst: ProblemInstance, active: np.ndarray,
                           expansion_eff: np.ndarray,
                           shannon: bool = False) -> ConvexSubproblem:
    """Power-only subproblem on a fixed binary assignment.

    Used to restore exact bit-demand and budget feasibility after
    rounding, and as the per-assignment refiner of the exhaustive solver.
    A user left without REs but with a positive bit demand yields a
    constant infeasible row, which the inner solver certifies.
    """
    layout = PowerLayout(inst, active)
    tri = layout.triples
    r = layout.num_vars
    if r == 0:
        raise ValueError("power subproblem needs at least one active RE")
    p_max = inst.p_max_w

    x_exp = tri.gather(np.asarray(expansion_eff, dtype=float)) / p_max
    _check_expansion_support("effective power", x_exp)

    gains_scaled = inst.gains[tri.k_of, tri.m_of] * p_max
    w_of = inst.weights[tri.k_of]
    grad, vbar = _user_linearization(inst, tri, gains_scaled, x_exp, shannon)

    cost = w_of * grad
    const = float(inst.weights @ vbar - np.sum(w_of * grad * x_exp))

    loc_idx = layout.pbar_ix[:, None]
    loc_coef = -np.ones((r, 1))
    loc_rhs = np.zeros(r)
    loc_label = tuple(
        f"eff>=0[k={tri.k_of[i]},m={tri.m_of[i]},n={tri.n_of[i]}]"
        for i in range(r))

    coup_A = np.ones((1, r))
    coup_rhs = np.array([1.0])
    coup_label = ("budget",)

    concave = []
    for k in range(inst.num_users):
        bits = inst.qos[k].bits_required
        if bits <= 0:
            continue
        sl = tri.user_slice[k]
        idx = layout.pbar_ix[sl.start:sl.stop]
        if shannon:
            aff_idx, aff_coef, rhs = np.zeros(0, dtype=int), np.zeros(0), float(bits)
        else:
            aff_idx = idx
            aff_coef = grad[sl].copy()
            rhs = float(bits + vbar[k] - np.sum(grad[sl] * x_exp[sl]))
        concave.append(ConcaveRow(idx=idx, gain=gains_scaled[sl],
                                  aff_idx=aff_idx, aff_coef=aff_coef,
                                  rhs=rhs, label=f"bits[k={k}]"))

    easy = np.full(r, 0.5 / r)

    sub = ConvexSubproblem(
        num_vars=r,
        log_idx=layout.pbar_ix.copy(), log_gain=gains_scaled.copy(),
        log_weight=w_of.copy(), cost=cost, const=const,
        loc_idx=loc_idx, loc_coef=loc_coef, loc_rhs=loc_rhs,
        loc_label=loc_label,
        coup_A=coup_A, coup_rhs=coup_rhs, coup_label=coup_label,
        concave_rows=tuple(concave),
        var_block=np.arange(r), var_scale=np.full(r, p_max), easy_point=easy,
        layout=layout)
    return _freeze(sub)
