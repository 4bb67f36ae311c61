import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masterop.fields import FieldHandle
from masterop.kernel import FracParams
from masterop.quadrature import (
    LagBreak,
    QuadratureSpec,
    gaussian_mean,
    gaussian_probe,
    inner_asymptotic,
    lag_rule,
    time_lag_panels,
)


def _plain(fn, n):
    # handle without a closed-form mean, so Gauss-Hermite nodes are used
    return FieldHandle(fn, n=n)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_probe_weights_normalized(n):
    assert gaussian_probe(n, 0.7).weights.sum() == pytest.approx(1.0, rel=1e-10)


def test_mean_of_constant_and_affine():
    one = _plain(lambda x, t: np.ones(np.shape(x)[:-1]), 2)
    lin = _plain(lambda x, t: x[..., 1] * 1.0, 2)
    for r in (1e-3, 1.0, 50.0):
        assert gaussian_mean(one, [0.2, 0.1], 0.0, r) == pytest.approx(1.0, rel=1e-10)
        assert gaussian_mean(lin, [0.2, 0.1], 0.0, r) == pytest.approx(0.1, abs=1e-10)


def test_second_moment():
    sq = _plain(lambda x, t: x[..., 0] ** 2, 1)
    assert gaussian_mean(sq, [0.0], 0.0, 1.0) == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_panel_mass(s):
    spec = QuadratureSpec()
    panels = time_lag_panels(spec, s)
    total = sum(w.sum() for *_, w in panels)
    exact = (spec.r_cut**-s - spec.r_max**-s) / s
    assert total == pytest.approx(exact, rel=1e-10)
    for a, b in zip(panels[:-1], panels[1:]):
        assert a[1] == b[0]


def test_self_convergence_on_smooth_integrand():
    spec = QuadratureSpec()
    g = lambda r: 1 - np.exp(-0.7 * r)  # noqa: E731
    vals = []
    for ppd in (8, 16):
        R = lag_rule(spec.r_cut, spec.r_max, -1.5, ppd, spec.rel_tol)
        vals.append(R.apply(g(R.nodes)))
    assert abs(vals[0] - vals[1]) < spec.rel_tol * abs(vals[1])


@settings(max_examples=40, deadline=None)
@given(T=st.floats(1.2e-3, 9e3), ppd=st.sampled_from([4, 8, 16]))
def test_singular_break_anywhere(T, ppd):
    # (T - r)^{-1/2} against r^{-3/2}: the break may fall next to any decade edge
    R = lag_rule(1e-3, 1e4, -1.5, ppd, 1e-6, [LagBreak(T, -0.5)])
    r = R.nodes
    with np.errstate(divide="ignore"):
        got = R.apply(np.where(r < T, np.abs(T - r) ** -0.5, 0.0))
    exact = float(mpmath.quad(lambda x: x**-1.5 * (T - x) ** -0.5, [1e-3, T / 2, T]))
    assert got == pytest.approx(exact, rel=1e-8)


def test_graded_break_holder_kink():
    T = 3.0
    R = lag_rule(1e-3, 1e4, -1.5, 8, 1e-6, [LagBreak(T, graded=True)])
    g = np.sqrt(np.abs(R.nodes - T))
    exact = float(mpmath.quad(lambda x: x**-1.5 * mpmath.sqrt(abs(x - T)), [1e-3, 1, T, 100, 1e4]))
    assert R.apply(g) == pytest.approx(exact, rel=1e-8)


def test_inner_term_of_quadratic():
    # u = |x|^2: the inner term is -2n r_cut^{1-s}/(1-s)
    n, s = 2, 0.4
    spec = QuadratureSpec()
    u = _plain(lambda x, t: np.sum(np.asarray(x) ** 2, axis=-1), n)
    term = inner_asymptotic(u, np.array([0.3, -0.2]), 0.0, spec, FracParams(n, s))
    assert term.value == pytest.approx(-2 * n * spec.r_cut ** (1 - s) / (1 - s), rel=1e-6)


def test_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(r_cut=1.0, r_max=0.5)
    with pytest.raises(ValueError):
        QuadratureSpec(gh_order=3)
    with pytest.raises(ValueError):
        QuadratureSpec(rel_tol=0.0)
