"""One test per acceptance criterion; every tolerance is pinned here."""

import math

import pytest

from masterop import acceptance as acc


def test_criterion_1_symbol_oracle_suite():
    r = acc.symbol_suite()
    assert len(r.details["cases"]) == 36
    assert r.details["identity_rel_error"] <= 1e-10
    assert r.metric <= 1e-3
    assert r.runtime <= 60.0
    assert r.passed


def test_criterion_2_kernel_inequality_suite():
    r = acc.kernel_suite(samples=100_000, seed=0)
    assert r.details["samples"] == 100_000
    assert r.metric == 0
    assert r.runtime <= 10.0
    assert r.passed


@pytest.mark.slow
def test_criterion_3_representation_round_trip():
    r = acc.round_trip()
    assert len(r.details["cases"]) == 5 * 2 * 3
    assert r.metric <= 1e-2
    assert r.runtime <= 600.0
    assert r.passed


def test_criterion_4_caloric_check():
    r = acc.caloric_check(points=50)
    assert len(r.details["points"]) == 50
    assert r.metric <= 1e-4
    assert r.passed


def test_criterion_5_theorem_ratio_uniformity():
    r = acc.theorem_ratio()
    assert len(r.details["family"]) == 5
    assert r.metric < 10.0
    assert r.details["max_refinement_change"] <= 0.30
    assert r.details["log_lipschitz_mode"] == "log-lipschitz"
    assert math.isfinite(r.details["log_lipschitz_norm"])
    assert r.passed


def test_criterion_6_homogeneous_estimate():
    r = acc.homogeneous_estimate()
    assert len(r.details["family"]) == 5
    assert r.metric < 10.0
    assert r.passed


def test_criterion_7_rescaling_invariants():
    r = acc.rescale_invariants(heights=(1e2, 1e3, 1e4))
    for m in r.details["members"]:
        assert m["v00"] == 1.0
        assert m["v_max"] <= m["bound"] + 1e-3
        assert m["eq56_defect"] == 0.0
    assert r.metric <= 0.05
    assert r.passed


def test_criterion_8_marchaud_reduction():
    r = acc.marchaud_reduction(points=10)
    assert len(r.details["points"]) == 10
    assert r.metric <= 1e-4
    assert r.details["max_lift_gap"] <= 1e-6
    assert r.passed
