"""Special functions used to calibrate the test statistics.

Everything here is scalar and pure Python (``math`` only) so the results do
not depend on which array library happens to be installed.
"""

import math

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000

# Acklam's rational approximation to the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def check_probability(p, name="p"):
    """Validate that ``p`` is a real number in [0, 1] and return it as float."""
    p = float(p)
    if math.isnan(p) or p < 0.0 or p > 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
    return p


def _lower_series(a, x):
    # P(a, x) by the power series; converges quickly for x < a + 1.
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_fraction(a, x):
    # Q(a, x) by the Legendre continued fraction (modified Lentz).
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_upper_regularized(a, x):
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError(f"shape a must be positive, got {a!r}")
    if x < 0:
        raise ValueError(f"x must be non-negative, got {x!r}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_series(a, x))
    return _upper_fraction(a, x)


def chi2_survival(t, k):
    """P(chi2_k > t).

    >>> chi2_survival(0.0, 5)
    1.0
    """
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {k!r}")
    t = float(t)
    if math.isnan(t) or t < 0:
        raise ValueError(f"statistic must be non-negative, got {t!r}")
    return gamma_upper_regularized(0.5 * int(k), 0.5 * t)


def normal_cdf(z):
    """Standard normal CDF through ``erfc`` (accurate in both tails)."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _acklam(p):
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log1p(-p))
        return -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                 / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))


def normal_quantile(p):
    """Inverse of the standard normal CDF.

    Starts from a rational approximation (relative error ~1e-9) and applies
    one Halley correction, which brings the error to a few ulps on
    [1e-12, 1 - 1e-12].
    """
    p = check_probability(p)
    if p == 0.0 or p == 1.0:
        raise ValueError("normal_quantile is undefined at p = 0 and p = 1")
    if p == 0.5:
        return 0.0
    x = _acklam(p)
    # Halley step; work in the smaller tail to avoid cancellation.
    if p < 0.5:
        e = normal_cdf(x) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def gumbel_survival(g):
    """P(G > g) for a standard Gumbel variable, 1 - exp(-exp(-g))."""
    g = float(g)
    if not math.isfinite(g):
        raise ValueError(f"g must be finite, got {g!r}")
    if g < -700.0:
        return 1.0
    return -math.expm1(-math.exp(-g))


def gumbel_quantile(p):
    """Inverse of :func:`gumbel_survival`."""
    p = check_probability(p)
    if p == 0.0 or p == 1.0:
        raise ValueError("gumbel_quantile is undefined at p = 0 and p = 1")
    return -math.log(-math.log1p(-p))


def gumbel_constants(k):
    """Location and scale (a_K, b_K) normalising the max of K |N(0,1)|."""
    if isinstance(k, bool) or int(k) != k or k < 2:
        raise ValueError(f"the max-type calibration needs K >= 2, got {k!r}")
    a = normal_quantile(1.0 - 1.0 / (2.0 * k))
    return a, 1.0 / a


def clamp_probability(p, floor=1e-300):
    """Clamp into [floor, 1] for reporting; never use inside computations."""
    return min(1.0, max(floor, p))
