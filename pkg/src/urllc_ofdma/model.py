"""Problem instances, channel generation, and the feasibility/metric audit.

An instance is a downlink OFDMA frame: ``num_subcarriers`` subcarriers by
``num_slots`` time slots, shared by ``num_users`` short-packet users.  The
frame sits inside the channel coherence time, so a user's normalized gain
``g[k, m] = |h[k, m]|^2 / noise_power`` is constant across slots.  All
power values are Watts internally; dBm appears only at interfaces.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fbl import UserBitBudget, user_bits

PATHLOSS_OFFSET_DB = 35.3
PATHLOSS_SLOPE_DB = 37.6


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    if watt <= 0.0:
        raise ValueError(f"power must be positive to express in dBm, got {watt}")
    return 10.0 * math.log10(watt) + 30.0


def pathloss_db(distance_m: float) -> float:
    """Distance-dependent path loss in dB: 35.3 + 37.6 log10(d)."""
    if distance_m <= 0.0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    return PATHLOSS_OFFSET_DB + PATHLOSS_SLOPE_DB * math.log10(distance_m)


@dataclass(frozen=True)
class ChannelGenSpec:
    """Cell geometry and noise figures for random channel draws."""

    cell_radius_m: float = 250.0
    user_distances_m: tuple | None = None  # default: every user at the cell edge
    noise_density_dbm_hz: float = -174.0
    subcarrier_bandwidth_hz: float = 15e3
    rng_seed: int = 0

    def __post_init__(self):
        if self.cell_radius_m <= 0.0:
            raise ValueError("cell radius must be positive")
        if self.subcarrier_bandwidth_hz <= 0.0:
            raise ValueError("subcarrier bandwidth must be positive")
        if self.user_distances_m is not None:
            d = tuple(float(x) for x in self.user_distances_m)
            if any(x <= 0.0 or x > self.cell_radius_m for x in d):
                raise ValueError("user distances must lie in (0, cell_radius]")
            object.__setattr__(self, "user_distances_m", d)

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watt(self.noise_density_dbm_hz) * self.subcarrier_bandwidth_hz

    def distances(self, num_users: int) -> np.ndarray:
        if self.user_distances_m is None:
            return np.full(num_users, self.cell_radius_m)
        if len(self.user_distances_m) < num_users:
            raise ValueError(
                f"need {num_users} user distances, have {len(self.user_distances_m)}")
        return np.asarray(self.user_distances_m[:num_users], dtype=float)


@dataclass(frozen=True)
class ProblemInstance:
    """Immutable allocation problem: dimensions, budget, gains, QoS."""

    num_users: int
    num_subcarriers: int
    num_slots: int
    p_max_w: float
    noise_w: float
    gains: np.ndarray  # (K, M) normalized gains |h|^2 / noise, 1/Watt
    qos: tuple
    seed: int | None = None

    def __post_init__(self):
        K, M, N = self.num_users, self.num_subcarriers, self.num_slots
        if min(K, M, N) < 1:
            raise ValueError(f"dimensions must be positive, got K={K}, M={M}, N={N}")
        if not self.p_max_w > 0.0:
            raise ValueError("power budget must be positive")
        if not self.noise_w > 0.0:
            raise ValueError("noise power must be positive")
        g = np.asarray(self.gains, dtype=float)
        if g.shape != (K, M):
            raise ValueError(f"gains must have shape ({K}, {M}), got {g.shape}")
        if not np.all(np.isfinite(g)) or np.any(g <= 0.0):
            raise ValueError("gains must be strictly positive and finite")
        g = g.copy()
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)
        qos = tuple(self.qos)
        if len(qos) != K:
            raise ValueError(f"need {K} QoS entries, got {len(qos)}")
        for q in qos:
            if not isinstance(q, UserBitBudget):
                raise TypeError(f"QoS entries must be UserBitBudget, got {type(q)}")
            if q.delay_slots > N:
                raise ValueError(
                    f"delay {q.delay_slots} exceeds the {N}-slot frame")
        object.__setattr__(self, "qos", qos)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.num_users, self.num_subcarriers, self.num_slots)

    @property
    def weights(self) -> np.ndarray:
        return np.array([q.weight for q in self.qos])

    @property
    def bits_required(self) -> np.ndarray:
        return np.array([q.bits_required for q in self.qos], dtype=float)

    @property
    def delays(self) -> np.ndarray:
        return np.array([q.delay_slots for q in self.qos], dtype=int)

    def allowed_mask(self) -> np.ndarray:
        """(K, M, N) boolean mask of REs each user may occupy (delay rule)."""
        K, M, N = self.dims
        mask = np.zeros((K, M, N), dtype=bool)
        for k, q in enumerate(self.qos):
            mask[k, :, : q.delay_slots] = True
        return mask

    def with_p_max_w(self, p_max_w: float) -> "ProblemInstance":
        return ProblemInstance(self.num_users, self.num_subcarriers,
                               self.num_slots, p_max_w, self.noise_w,
                               self.gains, self.qos, self.seed)

    def subset_users(self, num_users: int) -> "ProblemInstance":
        """Restrict to the first ``num_users`` users (paired-channel sweeps)."""
        if not 1 <= num_users <= self.num_users:
            raise ValueError(f"cannot keep {num_users} of {self.num_users} users")
        return ProblemInstance(num_users, self.num_subcarriers, self.num_slots,
                               self.p_max_w, self.noise_w,
                               self.gains[:num_users], self.qos[:num_users],
                               self.seed)

    def to_json(self) -> str:
        payload = {
            "num_users": self.num_users,
            "num_subcarriers": self.num_subcarriers,
            "num_slots": self.num_slots,
            "p_max_dbm": watt_to_dbm(self.p_max_w),
            "p_max_w": self.p_max_w,
            "noise_dbm": watt_to_dbm(self.noise_w),
            "noise_w": self.noise_w,
            "gains": np.asarray(self.gains).tolist(),
            "qos": [
                {
                    "bits_required": q.bits_required,
                    "error_prob": q.error_prob,
                    "delay_slots": q.delay_slots,
                    "weight": q.weight,
                }
                for q in self.qos
            ],
            "seed": self.seed,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ProblemInstance":
        d = json.loads(text)
        p_max_w = d.get("p_max_w", None)
        if p_max_w is None:
            p_max_w = dbm_to_watt(d["p_max_dbm"])
        noise_w = d.get("noise_w", None)
        if noise_w is None:
            noise_w = dbm_to_watt(d["noise_dbm"])
        qos = tuple(
            UserBitBudget(q["bits_required"], q["error_prob"],
                          q["delay_slots"], q.get("weight", 1.0))
            for q in d["qos"]
        )
        return cls(d["num_users"], d["num_subcarriers"], d["num_slots"],
                   p_max_w, noise_w, np.asarray(d["gains"], dtype=float),
                   qos, d.get("seed"))


def generate_instance(chspec: ChannelGenSpec, dims: tuple[int, int, int],
                      p_max_dbm: float, qos: Sequence[UserBitBudget],
                      rng: np.random.Generator | None = None,
                      seed: int | None = None) -> ProblemInstance:
    """Draw one channel realization.

    Per-subcarrier channel power is pathloss(d_k) times a unit-mean
    exponential (squared Rayleigh amplitude); gains are normalized by the
    per-subcarrier noise power.  Deterministic for a fixed generator state.
    """
    K, M, N = dims
    if rng is None:
        rng = np.random.default_rng(chspec.rng_seed if seed is None else seed)
    distances = chspec.distances(K)
    pl_lin = 10.0 ** (-np.array([pathloss_db(d) for d in distances]) / 10.0)
    fading = rng.exponential(1.0, size=(K, M))
    noise_w = chspec.noise_power_w
    gains = pl_lin[:, None] * fading / noise_w
    return ProblemInstance(K, M, N, dbm_to_watt(p_max_dbm), noise_w,
                           gains, tuple(qos), seed)


@dataclass
class AllocationState:
    """Candidate allocation over the (user, subcarrier, slot) grid.

    ``assign`` holds the (possibly fractional) assignment indicator,
    ``power`` the per-assignment transmit power, and ``eff_power`` the
    effective radiated power.  In a consistent binary state
    ``eff_power == assign * power`` elementwise.
    """

    power: np.ndarray
    assign: np.ndarray
    eff_power: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.power, dtype=float)
        s = np.asarray(self.assign, dtype=float)
        e = np.asarray(self.eff_power, dtype=float)
        if not (p.shape == s.shape == e.shape) or p.ndim != 3:
            raise ValueError("power/assign/eff_power must share a (K, M, N) shape")
        if np.any(p < 0.0) or np.any(s < 0.0) or np.any(e < 0.0):
            raise ValueError("allocation entries must be nonnegative")
        self.power, self.assign, self.eff_power = p, s, e

    @classmethod
    def zeros(cls, dims: tuple[int, int, int]) -> "AllocationState":
        z = np.zeros(dims)
        return cls(z.copy(), z.copy(), z.copy())

    def is_binary(self) -> bool:
        s = self.assign
        return bool(np.all((s == 0.0) | (s == 1.0)))

    def is_consistent(self, rtol: float = 1e-9) -> bool:
        return bool(np.allclose(self.eff_power, self.assign * self.power,
                                rtol=rtol, atol=1e-15))

    def copy(self) -> "AllocationState":
        return AllocationState(self.power.copy(), self.assign.copy(),
                               self.eff_power.copy())


@dataclass(frozen=True)
class FeasibilityReport:
    """Audit verdict plus the worst slack of each constraint family.

    Slacks are oriented so nonnegative means satisfied: the bit-demand
    slack is min_k(delivered_k - B_k), the budget slack is
    P_max - total power, exclusivity is 1 - max RE occupancy, and so on.
    """

    feasible: bool
    bit_slack: float
    power_nonneg_slack: float
    budget_slack: float
    binary_slack: float
    exclusivity_slack: float
    delay_slack: float
    per_user_bits: np.ndarray = field(repr=False, default=None)

    def worst(self) -> float:
        return min(self.bit_slack, self.power_nonneg_slack, self.budget_slack,
                   self.binary_slack, self.exclusivity_slack, self.delay_slack)


DEFAULT_AUDIT_TOL = 1e-6


def check_feasible(inst: ProblemInstance, alloc: AllocationState,
                   tol: float = DEFAULT_AUDIT_TOL,
                   shannon: bool = False) -> FeasibilityReport:
    """Audit a binary, consistent allocation against the full constraint set.

    Bit demands and the power budget are checked with relative tolerance
    ``tol``; assignment binariness, exclusivity and the delay rule are
    exact.  ``shannon=True`` audits against dispersion-free bit counts
    (used by the capacity-based bound).  Delivered bits are clamped at zero
    before comparison, so a zero-demand user never fails on a negative
    normal-approximation value.
    """
    K, M, N = inst.dims
    if alloc.power.shape != (K, M, N):
        raise ValueError(f"allocation shape {alloc.power.shape} does not match instance {inst.dims}")
    if not alloc.is_binary():
        raise ValueError("check_feasible requires an exactly binary assignment")
    if not alloc.is_consistent():
        raise ValueError("allocation is inconsistent: eff_power != assign * power")

    s = alloc.assign
    p = alloc.power

    per_user = np.empty(K)
    for k in range(K):
        gains_km = np.broadcast_to(inst.gains[k][:, None], (M, N))
        ub = user_bits(gains_km.ravel(), p[k].ravel(), inst.qos[k].error_prob,
                       mask=s[k].ravel(),
                       qinv_coeff=0.0 if shannon else None)
        per_user[k] = ub.net
    delivered = np.maximum(per_user, 0.0)
    demands = inst.bits_required
    bit_slack = float(np.min(delivered - demands + tol * np.maximum(1.0, demands)))

    power_nonneg = float(np.min(p))
    total = float(np.sum(s * p))
    budget_slack = float(inst.p_max_w * (1.0 + tol) - total)
    binary_slack = 0.0 if alloc.is_binary() else -1.0
    occupancy = np.sum(s, axis=0)
    exclusivity_slack = float(1.0 - np.max(occupancy))
    allowed = inst.allowed_mask()
    delay_violation = float(np.max(np.where(allowed, 0.0, s)))
    delay_slack = -delay_violation

    feasible = (bit_slack >= 0.0 and power_nonneg >= 0.0 and budget_slack >= 0.0
                and binary_slack >= 0.0 and exclusivity_slack >= 0.0
                and delay_slack >= 0.0)
    return FeasibilityReport(feasible, bit_slack, power_nonneg, budget_slack,
                             binary_slack, exclusivity_slack, delay_slack,
                             per_user_bits=per_user)


def sum_throughput_metric(inst: ProblemInstance, alloc: AllocationState,
                          tol: float = DEFAULT_AUDIT_TOL,
                          shannon: bool = False) -> float:
    """Per-RE sum throughput in bits/s/Hz; exactly 0 for infeasible input.

    Feasible allocations score ``sum_k max(bits_k, 0) / (M N)``; negative
    normal-approximation values count as zero deliverable bits.
    """
    report = check_feasible(inst, alloc, tol=tol, shannon=shannon)
    if not report.feasible:
        return 0.0
    M, N = inst.num_subcarriers, inst.num_slots
    return float(np.sum(np.maximum(report.per_user_bits, 0.0)) / (M * N))
