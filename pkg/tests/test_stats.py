"""Numeric kernel checks against independent high-precision oracles."""

from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from scipy import integrate

from feedshift._stats import (
    betainc_reg,
    cohens_d,
    fmean,
    fvar,
    kolmogorov_sf,
    t_cdf,
    t_two_sided_p,
    welch_t,
)


def _t_pdf(x: float, df: float) -> float:
    log_c = (
        math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    )
    return math.exp(log_c) * (1 + x * x / df) ** (-(df + 1) / 2)


def _p_by_quadrature(t: float, df: float) -> float:
    tail, _ = integrate.quad(_t_pdf, abs(t), np.inf, args=(df,), limit=200)
    return 2.0 * tail


def test_fmean_fvar_match_hand_values():
    assert fmean([1.0, 2.0, 3.0, 4.0]) == pytest.approx(2.5, abs=0)
    assert fvar([1.0, 2.0, 3.0, 4.0]) == pytest.approx(5.0 / 3.0, abs=1e-15)
    assert fvar([7.0]) == 0.0


def test_betainc_against_mpmath():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = float(rng.uniform(0.3, 40.0))
        b = float(rng.uniform(0.3, 40.0))
        x = float(rng.uniform(0.0, 1.0))
        want = float(mpmath.betainc(a, b, 0, x, regularized=True))
        assert betainc_reg(a, b, x) == pytest.approx(want, abs=1e-12)


def test_t_two_sided_p_matches_quadrature_oracle():
    rng = np.random.default_rng(99)
    for _ in range(100):
        t = float(rng.uniform(-6.0, 6.0))
        df = float(rng.uniform(1.5, 400.0))
        assert t_two_sided_p(t, df) == pytest.approx(
            _p_by_quadrature(t, df), abs=1e-6
        )


def test_t_cdf_limits():
    assert t_cdf(0.0, 5.0) == pytest.approx(0.5, abs=1e-15)
    assert t_cdf(50.0, 5.0) == pytest.approx(1.0, abs=1e-6)
    assert t_cdf(-50.0, 5.0) == pytest.approx(0.0, abs=1e-6)


def _kolmogorov_mp(lam: float) -> float:
    if lam <= 0:
        return 1.0
    with mpmath.workdps(40):
        total = mpmath.mpf(0)
        k = 1
        while True:
            term = mpmath.exp(-2 * k * k * mpmath.mpf(lam) ** 2)
            if term < mpmath.mpf("1e-40"):
                break
            total += (-1) ** (k - 1) * term
            k += 1
        return float(min(1, max(0, 2 * total)))


def test_kolmogorov_sf_matches_high_precision_series():
    for lam in [0.0, 0.05, 0.17, 0.19, 0.3, 0.5, 0.8, 1.0, 1.36, 2.0, 3.5]:
        assert kolmogorov_sf(lam) == pytest.approx(_kolmogorov_mp(lam), abs=1e-8)


def test_welch_identical_arms_is_zero():
    t, df = welch_t(1.0, 2.0, 10, 1.0, 2.0, 10)
    assert t == 0.0
    assert df == pytest.approx(18.0)


def test_welch_degenerate_zero_variance():
    t, _ = welch_t(1.0, 0.0, 5, 1.0, 0.0, 5)
    assert t == 0.0
    t2, _ = welch_t(2.0, 0.0, 5, 1.0, 0.0, 5)
    assert t2 == math.inf


def test_cohens_d_hand_fixture():
    # t = {1,2,3,4}, c = {2,3,4,5}: pooled s = sqrt(5/3), d = -0.7746
    d = cohens_d(2.5, 5 / 3, 4, 3.5, 5 / 3, 4)
    assert d == pytest.approx(-1.0 / math.sqrt(5 / 3), abs=1e-12)
