"""High-precision reference implementations used only by the tests.

Everything here is computed with mpmath at >= 30 significant digits and is
deliberately independent of the package code paths it checks.
"""

import mpmath as mp

mp.mp.dps = 40


def q_of(x):
    """Gaussian tail probability via the complementary error function."""
    return mp.mpf("0.5") * mp.erfc(mp.mpf(x) / mp.sqrt(2))


def q_of_quadrature(x):
    """Gaussian tail probability by direct numerical integration."""
    x = mp.mpf(x)
    density = lambda t: mp.exp(-t * t / 2) / mp.sqrt(2 * mp.pi)
    return mp.quad(density, [x, mp.inf])


def q_inv_ref(eps):
    """Inverse tail probability by bisection on q_of."""
    eps = mp.mpf(eps)
    lo, hi = mp.mpf(-15), mp.mpf(15)
    for _ in range(200):
        mid = (lo + hi) / 2
        if q_of(mid) > eps:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


LOG2E_REF = mp.log(mp.e, 2)


def dispersion_ref(snr):
    g = mp.mpf(snr)
    return LOG2E_REF**2 * (1 - 1 / (1 + g) ** 2)


def normal_approx_bits_ref(snrs, eps):
    total = sum(mp.log(1 + mp.mpf(g), 2) for g in snrs)
    disp = sum(dispersion_ref(g) for g in snrs)
    return total - q_inv_ref(eps) * mp.sqrt(disp)


def user_bits_ref(gains, power, eps, mask=None):
    """(shannon, penalty, net) with mask-weighted sums."""
    if mask is None:
        mask = [1.0] * len(gains)
    shannon = mp.mpf(0)
    disp = mp.mpf(0)
    for g, p, s in zip(gains, power, mask):
        snr = mp.mpf(p) * mp.mpf(g)
        shannon += mp.mpf(s) * mp.log(1 + snr, 2)
        disp += mp.mpf(s) * dispersion_ref(snr)
    penalty = q_inv_ref(eps) * mp.sqrt(disp)
    return shannon, penalty, shannon - penalty
