import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masterop.fields import (
    FieldHandle,
    Growth,
    affine,
    constant,
    exp_cos,
    power,
    spatial_gaussian_growth,
    time_lift,
    time_linear,
)
from masterop.kernel import FracParams, SpaceTimePoint
from masterop.operator import (
    AdmissibilityError,
    GrowthError,
    apply_frac_laplacian,
    apply_marchaud,
    apply_master,
    check_admissible,
)


@pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("lam,k", [(0.0, (1.0, 0.0)), (1.0, (0.0, 0.0)), (0.5, (0.6, -0.8))])
def test_symbol(s, lam, k):
    p = FracParams(2, s)
    u = exp_cos(k, lam)
    at = SpaceTimePoint((0.0, 0.0), 0.0)
    res = apply_master(p, u, at)
    assert res.value == pytest.approx((lam + float(np.dot(k, k))) ** s, rel=1e-6)
    assert res.error < 1e-5


def test_constant_and_affine_vanish():
    # affine growth needs degree 1 < 2s
    p = FracParams(2, 0.7)
    at = SpaceTimePoint((0.3, -1.0), 0.5)
    for u in (constant(2, 3.0), affine([1.0, -2.0], 0.5)):
        assert abs(apply_master(p, u, at).value) < 1e-8


@settings(max_examples=15, deadline=None)
@given(
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
    x=st.floats(-2, 2),
    t=st.floats(-1, 1),
)
def test_linearity(a, b, x, t):
    p = FracParams(1, 0.5)
    u, v = exp_cos([1.0], 0.0), exp_cos([2.0], 0.3)
    at = SpaceTimePoint((x,), t)
    lhs = apply_master(p, u.scaled(a) + v.scaled(b), at, estimate_error=False).value
    rhs = a * apply_master(p, u, at, estimate_error=False).value + b * apply_master(p, v, at, estimate_error=False).value
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(a) + abs(b)))


@settings(max_examples=10, deadline=None)
@given(dx=st.floats(-2, 2), dt=st.floats(-2, 2))
def test_translation_invariance(dx, dt):
    p = FracParams(1, 0.3)
    u = exp_cos([1.3], 0.2, phase=0.4)
    base = apply_master(p, u, SpaceTimePoint((0.1,), 0.2), estimate_error=False).value
    moved = apply_master(p, u.shifted([dx], dt), SpaceTimePoint((0.1 + dx,), 0.2 + dt), estimate_error=False).value
    assert moved == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_admissibility_polynomial_threshold():
    p = FracParams(1, 0.5)
    assert check_admissible(p, power(1, 0.9), 0.0)
    bad = check_admissible(p, power(1, 1.1), 0.0)
    assert not bad and "space direction" in bad.diagnostic
    with pytest.raises(AdmissibilityError):
        apply_master(p, power(1, 1.1), SpaceTimePoint((0.5,), 0.0))


def test_admissibility_time_direction():
    p = FracParams(1, 0.5)
    assert check_admissible(p, exp_cos([0.0], 1.0), 0.0)
    neg = check_admissible(p, exp_cos([0.0], -1.0), 0.0)
    assert not neg and "time direction" in neg.diagnostic
    lin = check_admissible(p, time_linear(1), 0.0)
    assert not lin and "time direction" in lin.diagnostic


def test_admissibility_gaussian_growth():
    res = check_admissible(FracParams(2, 0.5), spatial_gaussian_growth(2, 0.1), 0.0)
    assert not res and "space direction" in res.diagnostic


def test_admissibility_sampled_custom_field():
    p = FracParams(1, 0.5)
    assert check_admissible(p, time_lift(1, lambda t: np.cos(t)), 0.0)
    assert not check_admissible(p, time_lift(1, lambda t: t**2), 0.0)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_marchaud_exponential(s):
    # e^{lam t} has Marchaud derivative lam^s e^{lam t}
    lam, t = 0.7, 0.3
    got = apply_marchaud(s, lambda tt: np.exp(lam * tt), t)
    assert got == pytest.approx(lam**s * math.exp(lam * t), rel=1e-7)


def test_marchaud_rejects_fast_growth():
    with pytest.raises(GrowthError):
        apply_marchaud(0.5, lambda tt: tt**2, 0.0)


@pytest.mark.parametrize("s", [0.3, 0.6])
def test_frac_laplacian_cosine_closed_form_mean(s):
    k = 1.7
    p = FracParams(1, s)
    res = apply_frac_laplacian(p, exp_cos([k]), [0.4])
    assert res.value == pytest.approx(k ** (2 * s) * math.cos(k * 0.4), rel=1e-7)


@pytest.mark.parametrize("s", [0.3, 0.6])
def test_frac_laplacian_plain_callable_is_flagged(s):
    # node-only means cannot resolve cos(k x) at large lags; the error bar must say so
    k = 1.7
    p = FracParams(1, s)
    res = apply_frac_laplacian(p, lambda x: np.cos(k * x[..., 0]), [0.4])
    exact = k ** (2 * s) * math.cos(k * 0.4)
    assert res.low_confidence
    assert abs(res.value - exact) <= 1.5 * res.error
    assert abs(res.value - exact) < 0.05 * exact


def test_causality():
    p = FracParams(1, 0.5)
    past = lambda t: np.exp(0.5 * np.minimum(t, 0.0))  # noqa: E731
    u1 = time_lift(1, past, Growth("bounded"))
    u2 = time_lift(1, lambda t: past(t) + np.where(t > 0, 5 * t**2, 0.0), Growth("bounded"))
    at = SpaceTimePoint((0.0,), 0.0)
    v1 = apply_master(p, u1, at, check=False).value
    v2 = apply_master(p, u2, at, check=False).value
    assert v1 == v2
