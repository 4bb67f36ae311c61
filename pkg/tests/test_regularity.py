import math

import numpy as np
import pytest

from masterop.geometry import Cylinder
from masterop.grid import Axis, GridField
from masterop.regularity import (
    CaseDispatchError,
    HolderSpec,
    UnderResolvedError,
    check_estimate_theorem,
    estimate_log_lipschitz,
    estimate_parabolic_holder,
    recheck_witness,
)

AX = [Axis(-1.0, 1.0, 81)]
TA = Axis(0.0, 1.0, 21)


def _grid(f):
    return GridField.sample(f, AX, TA)


@pytest.mark.parametrize("beta", [0.3, 0.6, 0.9])
def test_power_exponent_recovered(beta):
    g = _grid(lambda x, t: np.abs(x[..., 0]) ** beta + 0 * t)
    rep = estimate_parabolic_holder(g, None, HolderSpec(beta / 2))
    assert rep.effective_exponent == pytest.approx(beta, abs=1e-6)
    # sup of |x|^beta - |y|^beta over |x - y|^beta is 1, attained at 0
    assert rep.seminorm == pytest.approx(1.0, rel=1e-9)


def test_constant_has_zero_seminorm():
    rep = estimate_parabolic_holder(_grid(lambda x, t: 2.0 + 0 * t), None, HolderSpec(0.5))
    assert rep.seminorm == 0.0
    assert rep.norm == 2.0


def test_linear_log_lipschitz_constant():
    # d / (d |log d|) peaks at d = 1/2
    rep = estimate_log_lipschitz(_grid(lambda x, t: x[..., 0] + 0 * t), None, HolderSpec(0.5, "log-lipschitz"))
    assert rep.components["x-loglip"] == pytest.approx(1 / math.log(2), rel=1e-12)


def test_witness_recheck_is_bit_identical():
    g = _grid(lambda x, t: np.sin(3 * x[..., 0]) * np.sqrt(t + 0.1))
    spec = HolderSpec(0.4)
    rep = estimate_parabolic_holder(g, None, spec)
    for w in rep.witnesses:
        assert recheck_witness(g, w, spec) == w.ratio


def test_under_resolved_grid():
    g = GridField.sample(lambda x, t: x[..., 0] + t, [Axis(0.0, 1.0, 3)], Axis(0.0, 1.0, 3))
    with pytest.raises(UnderResolvedError):
        estimate_parabolic_holder(g, None, HolderSpec(0.5))


def test_case_dispatch_outside_table():
    g = _grid(lambda x, t: x[..., 0] + t)
    with pytest.raises(CaseDispatchError):
        check_estimate_theorem(g, g, 0.9, alpha=1.2, which="schauder")


def test_smaller_region_smaller_seminorm():
    g = _grid(lambda x, t: np.abs(x[..., 0] - 0.8) ** 0.5 + t)
    spec = HolderSpec(0.25)
    big = estimate_parabolic_holder(g, None, spec).seminorm
    small = estimate_parabolic_holder(g, Cylinder((0.0,), 0.5, 0.0, 1.0), spec).seminorm
    assert small <= big


def test_theorem_ratio_reported():
    u = _grid(lambda x, t: np.abs(x[..., 0]) ** 0.6 + 0 * t)
    f = _grid(lambda x, t: 1.0 + 0 * t)
    rep = check_estimate_theorem(u, f, 0.3)
    assert rep.theorem_ratio == pytest.approx(rep.norm / (1.0 + 1.0), rel=1e-12)


def test_supercritical_time_exponent_detected():
    # |t|^(1/4) has parabolic increments d^(1/2): alpha = 1/4 is critical, 0.3 is not attainable
    f = lambda x, t: np.abs(t - 0.5) ** 0.25 + 0 * x[..., 0]  # noqa: E731
    semi = {}
    for steps in (21, 81, 321):
        g = GridField.sample(f, [Axis(-1.0, 1.0, 5)], Axis(0.0, 1.0, steps))
        semi[steps] = [estimate_parabolic_holder(g, None, HolderSpec(a)).seminorm for a in (0.25, 0.3)]
    assert semi[321][0] == pytest.approx(semi[21][0], rel=0.05)
    # 4x finer time steps halve the smallest parabolic distance: growth 2^0.1 per level
    assert semi[21][1] < semi[81][1] < semi[321][1]
    assert semi[321][1] / semi[81][1] == pytest.approx(2**0.1, rel=0.02)
