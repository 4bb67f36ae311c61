import math

import numpy as np
import pytest

from masterop.grid import Axis, GridField
from masterop.kernel import SpaceTimePoint
from masterop.operator import apply_marchaud
from masterop.quadrature import QuadratureSpec
from masterop.rescale import (
    BlowupProblem,
    check_rescaled_equation,
    rescale,
    scaling_exponent_table,
    select_blowup_point,
    self_similar_solution,
    synthetic_blowup_grid,
)

ORIGIN = SpaceTimePoint((0.0,), 0.0)
PROB = BlowupProblem(1.25, 0.5)


def _grid(f, steps=41):
    return GridField.sample(f, [Axis(-1.0, 1.0, steps)], Axis(-1.0, 1.0, steps))


def test_radially_decreasing_field_selects_centre():
    u = _grid(lambda x, t: 5 * np.exp(-(x[..., 0] ** 2) - t**2))
    res = select_blowup_point(u, ORIGIN, 0.5, PROB)
    assert res.A_k == ORIGIN
    assert res.m_k == pytest.approx(5.0)


def test_constant_field_scale():
    u = _grid(lambda x, t: 3.0 + 0 * t)
    res = select_blowup_point(u, ORIGIN, 0.5, PROB)
    assert res.A_k == ORIGIN
    assert res.lambda_k == pytest.approx(3.0 ** (-(PROB.p - 1) / (2 * PROB.s)), rel=1e-12)


def test_off_centre_spike_wins():
    h = 1e2
    u = synthetic_blowup_grid(h, PROB)
    res = select_blowup_point(u, ORIGIN, 1.0, PROB)
    spike = 0.2 / h ** ((PROB.p - 1) / (2 * PROB.s))
    assert 0 < res.A_k.x[0] <= spike + 1e-12
    assert res.checks["eq56_defect"] == 0.0
    assert res.checks["chain_defect"] == 0.0


@pytest.mark.parametrize("h", [1e2, 1e3])
def test_normalization_and_ceiling(h):
    res = rescale(synthetic_blowup_grid(h, PROB), ORIGIN, 1.0, PROB)
    v = res.v_k
    assert v.values[v.shape[0] // 2, v.shape[1] // 2] == 1.0
    assert res.bound == pytest.approx(2 ** PROB.gamma)
    assert v.values.max() <= res.bound + 1e-3


def test_exponent_table_examples():
    t = scaling_exponent_table(BlowupProblem(2.0, 0.5, q=0.6))
    assert t["q_critical"] == pytest.approx(1.0)
    assert t["height_exponent"] == pytest.approx(1.0)
    assert t["gradient_term_exponent"] == pytest.approx(0.8)
    assert t["gradient_term_vanishes"] and not t["critical_q"]
    assert scaling_exponent_table(BlowupProblem(2.0, 0.5, q=1.0))["critical_q"]
    wide = scaling_exponent_table(BlowupProblem(3.0, 0.75), n=2)
    assert wide["p_upper"] == pytest.approx(1.6)
    assert not wide["p_in_range"]


def test_hypotheses_named():
    with pytest.raises(ValueError, match="n\\+2"):
        BlowupProblem(3.0, 0.75).validate(2)
    with pytest.raises(ValueError, match="s > 1/2"):
        BlowupProblem(1.5, 0.4, q=0.5).validate(1, "height-plus-gradient")
    with pytest.raises(ValueError, match="q"):
        BlowupProblem(1.5, 0.75, q=2.0).validate(1, "height-plus-gradient")
    with pytest.raises(ValueError):
        BlowupProblem(1.0, 0.5)


@pytest.mark.parametrize("s,p", [(0.5, 1.25), (0.3, 2.0), (0.7, 1.5)])
def test_self_similar_profile_solves_equation(s, p):
    # D^s of c (T - t)^(-beta) is c^p (T - t)^(-beta p)
    u = self_similar_solution(1, s, p, T=1.0)
    beta = s / (p - 1)
    c = (math.gamma(beta + s) / math.gamma(beta)) ** (1 / (p - 1))
    assert u.value([0.0], 0.0) == pytest.approx(c)
    g = lambda t: c * (1.0 - np.asarray(t)) ** (-beta)  # noqa: E731
    # slow decay into the past needs a long lag window
    val = apply_marchaud(s, g, 0.2, QuadratureSpec(r_max=1e8))
    assert val == pytest.approx(u.value([0.0], 0.2) ** p, rel=1e-4)


def test_rescaled_equation_on_self_similar_solution():
    u = self_similar_solution(1, PROB.s, PROB.p, T=1.0)
    grid = GridField.sample(u, [Axis(-1.0, 1.0, 81)], Axis(-1.0, 0.5, 61))
    res = rescale(grid, ORIGIN, 0.3, PROB)
    out = check_rescaled_equation(PROB, u, res)
    assert out["v00"] == 1.0
    assert out["rel_error"] < 1e-6


def test_gradient_variant_normalized():
    prob = BlowupProblem(1.5, 0.75, q=0.5)
    prob.validate(1, "height-plus-gradient")
    u = synthetic_blowup_grid(1e2, prob)
    res = rescale(u, ORIGIN, 1.0, prob, variant="height-plus-gradient")
    assert res.bound == 2.0
    assert res.checks["eq56_defect"] == 0.0
