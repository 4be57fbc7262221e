"""Independent reference computations used to freeze expected values.

None of these share code with the package: the chi-squared tail is a
numerical integral of the density, the normal quantile is bisection on an
erf-based CDF, and the statistics are transcribed term by term.
"""

import math

import numpy as np
from scipy import integrate


def chi2_density(x, k):
    if x <= 0:
        return 0.0 if k > 2 else (0.5 if k == 2 else math.inf)
    return math.exp((k / 2 - 1) * math.log(x) - x / 2 - (k / 2) * math.log(2) - math.lgamma(k / 2))


def chi2_tail_quad(t, k):
    """P(chi2_k > t) by adaptive quadrature.

    Integrates whichever side is smaller in probability so the absolute
    error stays near machine precision.
    """
    mode = max(k - 2.0, 0.0)
    if t >= mode:
        val, _ = integrate.quad(chi2_density, t, np.inf, args=(k,), epsabs=1e-14, epsrel=1e-12, limit=200)
        return val
    # lower part on [0, t]; split off the integrable singularity for k = 1
    val, _ = integrate.quad(chi2_density, 0.0, t, args=(k,), epsabs=1e-14, epsrel=1e-12, limit=200)
    return 1.0 - val


def phi_erf(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))) if z < 0 else 1.0 - 0.5 * math.erfc(z / math.sqrt(2.0))


def normal_quantile_bisect(p, lo=-40.0, hi=40.0):
    """Bisection on Phi; compares in the smaller tail to keep precision."""
    upper = p > 0.5
    target = 1.0 - p if upper else p

    def f(z):
        tail = 0.5 * math.erfc(z / math.sqrt(2.0)) if upper else 0.5 * math.erfc(-z / math.sqrt(2.0))
        return tail - target

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        # lower-tail mass increases in z; upper-tail mass decreases
        if (fm < 0) != upper:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def naive_statistics(y, a, tau_hat, groups, K):
    """T and M written exactly as the display formulas, no z shortcut."""
    y = [float(v) for v in y]
    T = 0.0
    terms = []
    for k in range(K):
        idx = [i for i in range(len(y)) if groups[i] == k]
        t1 = [y[i] for i in idx if a[i] == 1]
        t0 = [y[i] for i in idx if a[i] == 0]
        m1 = sum(t1) / len(t1)
        m0 = sum(t0) / len(t0)
        s1 = sum((v - m1) ** 2 for v in t1) / (len(t1) - 1)
        s0 = sum((v - m0) ** 2 for v in t0) / (len(t0) - 1)
        sigma2 = s1 / len(t1) + s0 / len(t0)
        tau_r = m1 - m0
        num = sum(tau_r - tau_hat[i] for i in idx)
        term = num / (len(idx) * math.sqrt(sigma2))
        terms.append(term)
        T += term ** 2
    return T, max(abs(t) for t in terms)
