import math

import mpmath
import numpy as np
import pytest

from masterop.fields import constant, random_source
from masterop.geometry import Cylinder
from masterop.greens import (
    DivergenceError,
    RestrictedSource,
    convolve_green,
    green_constant,
    green_field,
    lemma41_bound,
    verify_representation,
)
from masterop.kernel import FracParams, SpaceTimePoint

BALL = Cylinder((0.0, 0.0), 2.0, 0.0, 3.0)


def _ball_oracle(s, t, radius):
    # P_r of the ball indicator at its centre is 1 - exp(-R^2 / 4r)
    val = mpmath.quad(lambda r: r ** (s - 1) * (1 - mpmath.exp(-(radius**2) / (4 * r))), [0, t])
    return float(val / mpmath.gamma(s))


def test_indicator_of_cylinder_matches_quadrature():
    p = FracParams(2, 0.5)
    got = convolve_green(p, RestrictedSource(constant(2), BALL), SpaceTimePoint((0.0, 0.0), 1.5))
    assert got == pytest.approx(_ball_oracle(0.5, 1.5, 2.0), rel=1e-8)


def test_unrestricted_constant_diverges():
    with pytest.raises(DivergenceError):
        convolve_green(FracParams(2, 0.5), constant(2), SpaceTimePoint((0.0, 0.0), 0.0))


@pytest.mark.parametrize("s", [0.3, 0.5, 0.8])
def test_normalizations(s):
    p = FracParams(2, s)
    assert green_constant(p) == pytest.approx(1 / math.gamma(s), rel=1e-14)
    ratio = green_constant(p, "kernel") / green_constant(p)
    assert ratio == pytest.approx(math.gamma(1 + s) / math.gamma(1 - s), rel=1e-12)
    f = RestrictedSource(constant(2), BALL)
    at = SpaceTimePoint((0.5, 0.0), 2.0)
    a = convolve_green(p, f, at)
    b = convolve_green(p, f, at, normalization="kernel")
    assert b / a == pytest.approx(ratio, rel=1e-12)
    with pytest.raises(ValueError):
        green_constant(p, "other")


def test_time_slab_source_closed_form():
    # f = 1 on all of space for t > 0 gives t^s / Gamma(1 + s)
    s = 0.4
    p = FracParams(1, s)
    f = RestrictedSource(constant(1), Cylinder((0.0,), 1e6, 0.0, 10.0))
    got = convolve_green(p, f, SpaceTimePoint((0.0,), 2.0))
    assert got == pytest.approx(2.0**s / math.gamma(1 + s), rel=1e-8)


def _points(n, k=6):
    rng = np.random.default_rng(3)
    return [SpaceTimePoint(tuple(rng.uniform(-0.5, 0.5, n)), float(rng.uniform(0.5, 2.0))) for _ in range(k)]


def test_representation_recovers_constant():
    p = FracParams(1, 0.5)
    f = random_source(1, 7, window=(-1.0, 3.0)).handle()
    w = green_field(p, f)
    u = w + constant(1, 5.0)
    rep = verify_representation(p, u, f, _points(1))
    assert rep.holds
    assert rep.c_star == pytest.approx(5.0, rel=1e-7)

    wrong = w.scaled(1.1) + constant(1, 5.0)
    assert not verify_representation(p, wrong, f, _points(1)).holds


def test_comparison_principle():
    p = FracParams(1, 0.6)
    small = random_source(1, 2, window=(-1.0, 2.0)).handle()
    big = small + constant(1, 0.5)
    Q = Cylinder((0.0,), 1.5, -1.0, 2.0)
    for pt in _points(1, 4):
        a = convolve_green(p, RestrictedSource(small, Q), pt)
        b = convolve_green(p, RestrictedSource(big, Q), pt)
        assert 0 <= a <= b


@pytest.mark.parametrize("s", [0.2, 0.5, 0.9])
def test_lemma_constant(s):
    numeric, closed = lemma41_bound(FracParams(2, s), BALL)
    assert numeric == pytest.approx(closed, rel=1e-10)
    assert closed == pytest.approx(3.0**s / (s * math.gamma(s)), rel=1e-14)


def test_lemma_constant_bounds_solution():
    p = FracParams(2, 0.5)
    _, C3 = lemma41_bound(p, BALL)
    w = convolve_green(p, RestrictedSource(constant(2), BALL), SpaceTimePoint((0.0, 0.0), 3.0))
    assert 0 < w <= C3
