import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masterop.kernel import (
    DomainError,
    FracParams,
    check_key_inequality,
    cosine_gap,
    eval_kernel,
    eval_kernel_dt,
    eval_kernel_grad_x,
    eval_kernel_hess_x,
    gamma_abs_neg_s,
    make_frame,
    spatial_mass,
)


@pytest.mark.parametrize("s", [0.1, 0.25, 0.5, 0.75, 0.9])
def test_gamma_abs_neg_s_matches_mpmath(s):
    assert gamma_abs_neg_s(s) == pytest.approx(abs(float(mpmath.gamma(-s))), rel=1e-13)


@pytest.mark.parametrize("s", [0.0, 1.0, 1.5, -0.2])
def test_gamma_rejects_out_of_range(s):
    with pytest.raises(DomainError):
        gamma_abs_neg_s(s)


def test_constant_closed_form():
    p = FracParams(2, 0.5)
    assert p.c_ns == pytest.approx(1 / (4 * math.pi * abs(float(mpmath.gamma(-0.5)))), rel=1e-14)


def test_kernel_vanishes_for_nonpositive_time():
    p = FracParams(1, 0.5)
    assert eval_kernel(p, np.array([0.3]), 0.0) == 0.0
    assert eval_kernel(p, np.array([0.3]), -1.0) == 0.0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_spatial_mass_by_quadrature(n):
    p = FracParams(n, 0.4)
    tau = 0.7
    # radial integral of G against the sphere area
    area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    val = area * mpmath.quad(lambda r: r ** (n - 1) * eval_kernel(p, np.array([float(r)] + [0.0] * (n - 1)), tau),
                             [0, 2, mpmath.inf])
    assert float(val) == pytest.approx(spatial_mass(p, tau), rel=1e-10)


def test_derivatives_against_finite_differences():
    p = FracParams(2, 0.3)
    x, t, h = np.array([0.4, -0.7]), 0.9, 1e-5
    g = eval_kernel_grad_x(p, x, t)
    H = eval_kernel_hess_x(p, x, t)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (eval_kernel(p, x + e, t) - eval_kernel(p, x - e, t)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-7)
        fdH = (eval_kernel_grad_x(p, x + e, t) - eval_kernel_grad_x(p, x - e, t)) / (2 * h)
        np.testing.assert_allclose(H[:, i], fdH, rtol=1e-6)
    fdt = (eval_kernel(p, x, t + h) - eval_kernel(p, x, t - h)) / (2 * h)
    assert eval_kernel_dt(p, x, t) == pytest.approx(fdt, rel=1e-7)


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(1, 3),
    radius=st.floats(1.0 + 1e-9, 100.0),
    seed=st.integers(0, 2**31 - 1),
)
def test_cosine_gap_nonnegative(n, radius, seed):
    p = FracParams(n, 0.5)
    d = np.random.default_rng(seed).normal(size=n)
    y = radius * d / np.linalg.norm(d)
    assert cosine_gap(make_frame(p), y) >= -1e-12 * radius**2


def test_cosine_gap_precondition():
    p = FracParams(2, 0.5)
    with pytest.raises(DomainError):
        cosine_gap(make_frame(p), np.array([0.3, 0.2]))


def test_key_inequality_monte_carlo_rate_quarter_n():
    rng = np.random.default_rng(7)
    for n in (1, 2, 3):
        p = FracParams(n, 0.6)
        d = rng.normal(size=(20000, n))
        y = d / np.linalg.norm(d, axis=1, keepdims=True) * 10 ** rng.uniform(0, 2, (20000, 1))
        tau = 10 ** rng.uniform(-4, 3, 20000)
        chk = check_key_inequality(p, make_frame(p), y, tau, rng.choice([1.0, 2.0], 20000))
        assert chk.violations == 0


def test_diagonal_sweep():
    # the diagonal sweep over tau at radii 1, 2, 10
    p = FracParams(2, 0.5)
    tau = np.logspace(-4, 3, 2000)
    for r in (1.0, 2.0, 10.0):
        y = np.tile(r * (1 + 1e-12) * np.ones(2) / math.sqrt(2), (tau.size, 1))
        assert check_key_inequality(p, make_frame(p), y, tau, 2.0).violations == 0


def test_rate_one_over_n_has_a_counterexample():
    # in one dimension G(d)/G(d - eta) = exp(-(2|d| - 1)/(4 tau)), which cannot beat exp(-|d|/tau)
    p = FracParams(1, 0.5)
    chk = check_key_inequality(p, make_frame(p), np.array([2.0]), 1.0, 1.0, lemma_rate=1.0)
    assert chk.violations == 1
    assert check_key_inequality(p, make_frame(p), np.array([2.0]), 1.0, 1.0).violations == 0
