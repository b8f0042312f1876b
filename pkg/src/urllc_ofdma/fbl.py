"""Finite-blocklength rate kernel.

Short-packet transmission over parallel complex AWGN subchannels is
modelled with the second-order normal approximation: a packet spread over
symbols with linear SNRs ``gamma_i`` delivers about

    bits = sum_i log2(1 + gamma_i) - Qinv(eps) * sqrt(sum_i V(gamma_i))

where ``eps`` is the target decoding error probability and
``V(gamma) = (log2 e)^2 * (1 - 1/(1+gamma)^2)`` is the per-symbol channel
dispersion.  Everything here is a pure function of its arguments; rates are
in bits (log base 2) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import erfcinv

LOG2E = math.log2(math.e)
LN2 = math.log(2.0)
# Upper bound of the dispersion: V(gamma) -> LOG2E**2 as gamma -> inf.
DISPERSION_SUP = LOG2E * LOG2E


def q_inv(eps):
    """Inverse of the Gaussian tail function Q(x) = P(N(0,1) > x).

    Accepts a scalar or array in the open interval (0, 1).  Antisymmetric
    around 0.5: q_inv(1 - eps) == -q_inv(eps).
    """
    e = np.asarray(eps, dtype=float)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise ValueError(f"error probability must lie in (0, 1), got {eps!r}")
    # Q(x) = erfc(x / sqrt 2) / 2, hence Qinv(e) = sqrt 2 * erfcinv(2 e).
    out = math.sqrt(2.0) * erfcinv(2.0 * e)
    if np.isscalar(eps) or np.ndim(eps) == 0:
        return float(out)
    return out


def dispersion(snr):
    """Channel dispersion V(gamma) = (log2 e)^2 (1 - (1+gamma)^-2).

    Strictly increasing in gamma, zero at gamma = 0, bounded by
    ``DISPERSION_SUP``.  Scalar or elementwise on arrays.
    """
    g = np.asarray(snr, dtype=float)
    if np.any(g < 0.0):
        raise ValueError(f"SNR must be nonnegative, got {snr!r}")
    out = DISPERSION_SUP * (1.0 - 1.0 / (1.0 + g) ** 2)
    if np.isscalar(snr) or np.ndim(snr) == 0:
        return float(out)
    return out


def normal_approx_bits(snrs, eps) -> float:
    """Deliverable bits over symbols with the given linear SNRs.

    Returns ``sum log2(1+g) - q_inv(eps) * sqrt(sum V(g))``.  The result may
    be negative for very short / weak packets; callers that need physical
    bit counts clamp at zero.  An empty SNR list carries zero bits.
    """
    g = np.asarray(snrs, dtype=float)
    if g.size == 0:
        return 0.0
    if np.any(g < 0.0):
        raise ValueError("SNR entries must be nonnegative")
    coeff = q_inv(eps)
    return float(np.sum(np.log2(1.0 + g)) - coeff * math.sqrt(np.sum(dispersion(g))))


class UserBits(NamedTuple):
    """Per-user bit bookkeeping: Shannon part, dispersion penalty, net."""

    shannon: float
    penalty: float
    net: float


def user_bits(gains, power, eps, mask=None, qinv_coeff=None) -> UserBits:
    """Bits delivered to one user over its resource elements.

    ``gains`` and ``power`` are elementwise per-RE arrays; the SNR on RE i
    is ``power[i] * gains[i]``.  With ``mask`` (entries in [0, 1]) the
    Shannon and dispersion sums are mask-weighted, matching a fractional
    assignment with per-assignment power.  Without a mask the power array
    is interpreted as effective radiated power (mask already absorbed).

    ``qinv_coeff`` overrides q_inv(eps); passing 0.0 yields pure Shannon
    accounting (used by the dispersion-free bound).
    """
    g = np.asarray(gains, dtype=float)
    p = np.asarray(power, dtype=float)
    if g.shape != p.shape:
        raise ValueError(f"gains/power shape mismatch: {g.shape} vs {p.shape}")
    if np.any(g <= 0.0):
        raise ValueError("gains must be strictly positive")
    if np.any(p < 0.0):
        raise ValueError("power must be nonnegative")
    if mask is not None:
        s = np.asarray(mask, dtype=float)
        if s.shape != g.shape:
            raise ValueError(f"mask shape mismatch: {s.shape} vs {g.shape}")
        if np.any(s < 0.0) or np.any(s > 1.0):
            raise ValueError("mask entries must lie in [0, 1]")
    else:
        s = None
    coeff = float(qinv_coeff) if qinv_coeff is not None else q_inv(eps)
    snr = p * g
    per_re_bits = np.log2(1.0 + snr)
    per_re_disp = DISPERSION_SUP * (1.0 - 1.0 / (1.0 + snr) ** 2)
    if s is not None:
        shannon = float(np.sum(s * per_re_bits))
        disp_sum = float(np.sum(s * per_re_disp))
    else:
        shannon = float(np.sum(per_re_bits))
        disp_sum = float(np.sum(per_re_disp))
    penalty = coeff * math.sqrt(disp_sum)
    return UserBits(shannon, penalty, shannon - penalty)


DENOM_FLOOR = 1e-12


def dispersion_penalty_grad(gains, power, eps, qinv_coeff=None, floor=DENOM_FLOOR):
    """Gradient of the dispersion penalty q_inv(eps)*sqrt(sum V) in power.

    Entry i equals ``a^2 q_inv(eps) g_i / (1 + p_i g_i)^3 / sqrt(sum V)``
    with a = log2(e).  The square root is floored at ``floor`` to guard the
    singular point where every power is zero; passing ``floor=0`` there
    raises instead.
    """
    g = np.asarray(gains, dtype=float)
    p = np.asarray(power, dtype=float)
    if g.shape != p.shape:
        raise ValueError(f"gains/power shape mismatch: {g.shape} vs {p.shape}")
    coeff = float(qinv_coeff) if qinv_coeff is not None else q_inv(eps)
    if coeff == 0.0:
        return np.zeros_like(g)
    snr = p * g
    disp_sum = float(np.sum(DISPERSION_SUP * (1.0 - 1.0 / (1.0 + snr) ** 2)))
    denom = math.sqrt(disp_sum)
    if denom <= 0.0 and (floor is None or floor <= 0.0):
        raise ValueError("dispersion penalty gradient is singular at zero power")
    denom = max(denom, floor)
    return DISPERSION_SUP * coeff * g / (1.0 + snr) ** 3 / denom


def dispersion_slope(gains, power):
    """d/dp of the per-RE dispersion V(p*g): 2 a^2 g / (1 + p g)^3."""
    g = np.asarray(gains, dtype=float)
    p = np.asarray(power, dtype=float)
    return 2.0 * DISPERSION_SUP * g / (1.0 + p * g) ** 3


def dispersion_curvature(gains, power):
    """d^2/dp^2 of the per-RE dispersion: -6 a^2 g^2 / (1 + p g)^4 (< 0)."""
    g = np.asarray(gains, dtype=float)
    p = np.asarray(power, dtype=float)
    return -6.0 * DISPERSION_SUP * g**2 / (1.0 + p * g) ** 4


@dataclass(frozen=True)
class RatePoint:
    """Consistent (SNR, Shannon bits, dispersion) triple for one symbol."""

    snr: float
    bits_shannon: float
    dispersion: float

    def __post_init__(self):
        if self.snr < 0.0:
            raise ValueError(f"SNR must be nonnegative, got {self.snr}")
        if not math.isclose(self.bits_shannon, math.log2(1.0 + self.snr),
                            rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("bits_shannon inconsistent with log2(1 + snr)")
        if not math.isclose(self.dispersion, dispersion(self.snr),
                            rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("dispersion inconsistent with its SNR")

    @classmethod
    def from_snr(cls, snr: float) -> "RatePoint":
        snr = float(snr)
        return cls(snr=snr, bits_shannon=math.log2(1.0 + snr),
                   dispersion=dispersion(snr))


@dataclass(frozen=True)
class UserBitBudget:
    """QoS target of one user: payload bits, error probability, delay, weight.

    ``delay_slots`` is the number of leading time slots the user's packet
    must fit into.  ``error_prob`` must be strictly inside (0, 0.5) so the
    dispersion penalty coefficient q_inv is strictly positive.
    """

    bits_required: int
    error_prob: float
    delay_slots: int
    weight: float = 1.0

    def __post_init__(self):
        if self.bits_required < 0 or self.bits_required != int(self.bits_required):
            raise ValueError(f"bits_required must be a nonnegative integer, got {self.bits_required}")
        if not 0.0 < self.error_prob < 0.5:
            raise ValueError(f"error_prob must lie strictly in (0, 0.5), got {self.error_prob}")
        if self.delay_slots < 1 or self.delay_slots != int(self.delay_slots):
            raise ValueError(f"delay_slots must be a positive integer, got {self.delay_slots}")
        if not self.weight > 0.0:
            raise ValueError(f"weight must be positive, got {self.weight}")

    @property
    def qinv(self) -> float:
        return q_inv(self.error_prob)
