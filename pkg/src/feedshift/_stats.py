"""Internal statistical kernels shared across modules.

Everything here is deterministic, pure, and summation-order stable:
means and variances run through ``math.fsum`` so results do not depend
on how callers batched or parallelised the per-user work upstream.
"""

from __future__ import annotations

import math
from typing import Sequence

_FPMIN = 1e-300
_BETA_TOL = 1e-14
_BETA_MAXITER = 500

# Below this argument the Kolmogorov survival function equals 1 to well
# under 1e-12, and the alternating series needs thousands of terms.
_KOLMOGOROV_SMALL = 0.18


def fmean(values: Sequence[float]) -> float:
    """Compensated mean (exact summation via fsum)."""
    n = len(values)
    if n == 0:
        raise ValueError("mean of empty sequence")
    return math.fsum(values) / n


def fvar(values: Sequence[float], mean: float | None = None) -> float:
    """Sample variance (ddof=1) with compensated summation.

    Returns 0.0 for a single observation so degenerate-arm handling can
    happen at the caller instead of propagating NaN.
    """
    n = len(values)
    if n == 0:
        raise ValueError("variance of empty sequence")
    if n == 1:
        return 0.0
    m = fmean(values) if mean is None else mean
    return math.fsum((v - m) ** 2 for v in values) / (n - 1)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_TOL:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), accurate to ~1e-12."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t with ``df`` degrees.

    Uses the incomplete-beta identity p = I_{df/(df+t^2)}(df/2, 1/2).
    """
    if df <= 0.0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    p = betainc_reg(0.5 * df, 0.5, x)
    return min(1.0, max(0.0, p))


def t_cdf(t: float, df: float) -> float:
    """Student's t cumulative distribution function."""
    p = t_two_sided_p(t, df)
    return 1.0 - 0.5 * p if t >= 0.0 else 0.5 * p


def kolmogorov_sf(lam: float, term_tol: float = 1e-10) -> float:
    """Asymptotic Kolmogorov survival: 2 * sum (-1)^{k-1} exp(-2 k^2 lam^2).

    The series is truncated once terms fall below ``term_tol`` and the
    result is clamped to [0, 1].  For lam below ~0.18 the true value is
    1 to within 1e-12, so 1.0 is returned directly rather than summing
    thousands of near-cancelling terms.
    """
    if lam <= _KOLMOGOROV_SMALL:
        return 1.0
    total = 0.0
    sign = 1.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        if term < term_tol:
            break
        total += sign * term
        sign = -sign
        k += 1
    p = 2.0 * total
    return min(1.0, max(0.0, p))


def welch_t(
    mean1: float, var1: float, n1: int, mean2: float, var2: float, n2: int
) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom.

    A zero standard error with equal means yields (0, n1+n2-2) so that
    identical degenerate arms report t=0, p=1; with differing means the
    statistic is signed infinity.
    """
    if n1 < 2 or n2 < 2:
        raise ValueError("Welch's t requires at least 2 observations per arm")
    se2 = var1 / n1 + var2 / n2
    diff = mean1 - mean2
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, float(n1 + n2 - 2)
        return math.copysign(math.inf, diff), float(n1 + n2 - 2)
    a = var1 / n1
    b = var2 / n2
    df = se2 * se2 / (a * a / (n1 - 1) + b * b / (n2 - 1))
    return diff / math.sqrt(se2), df


def cohens_d(
    mean1: float, var1: float, n1: int, mean2: float, var2: float, n2: int
) -> float:
    """Cohen's d with the pooled (n-1)-weighted standard deviation."""
    if n1 < 2 or n2 < 2:
        raise ValueError("Cohen's d requires at least 2 observations per arm")
    pooled = ((n1 - 1) * var1 + (n2 - 1) * var2) / (n1 + n2 - 2)
    diff = mean1 - mean2
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0
        return math.copysign(math.inf, diff)
    return diff / math.sqrt(pooled)
