import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kleinwave.potential import (
    Potential,
    ScanParams,
    critical_exponent,
    eval_W,
    eval_Wprime,
    verify_hypotheses,
)


def test_eval_W_examples(pot):
    assert eval_W(Potential(a=0.0, b=0.0), 2.0) == 2.0
    assert eval_W(pot, 0.0) == 0.0
    # 1/2*4 - 1/4*16 + 1/32*64
    assert eval_W(pot, 2.0) == pytest.approx(0.0, abs=1e-15)


def test_eval_Wprime_examples(pot):
    assert eval_Wprime(pot, 0.0) == 0.0
    assert eval_Wprime(Potential(a=0.0, b=0.0), 3.0) == 3.0
    assert eval_Wprime(pot, 1.0) == pytest.approx(0.1875, abs=1e-15)
    h = 1e-6
    fd = (eval_W(pot, 1.0 + h) - eval_W(pot, 1.0 - h)) / (2 * h)
    assert fd == pytest.approx(0.1875, abs=1e-8)


def test_default_factorisation(pot):
    s = np.linspace(-3, 3, 101)
    np.testing.assert_allclose(pot.W(s), s**2 * (s**2 - 4) ** 2 / 32, atol=1e-13)


def test_nonlinearity_vanishes_to_second_order(pot):
    # N(0) = N'(0) = N''(0) = 0: N(s)/s^2 -> 0
    for s in (1e-2, 1e-3, 1e-4):
        assert abs(pot.N(s)) / s**2 <= s
    assert pot.Nprime(0.0) == 0.0


def test_derivative_consistency_on_scan(pot):
    h = 1e-4
    s = np.linspace(0, 3, 2001)
    fd = (pot.W(s + h) - pot.W(s - h)) / (2 * h)
    bound = 10 * h**2 * pot.third_derivative_bound(3 + h)
    assert np.max(np.abs(pot.Wprime(s) - fd)) <= bound


@given(st.floats(-5, 5, allow_nan=False))
def test_parity(s):
    pot = Potential()
    assert pot.W(s) == pot.W(-s)
    assert pot.Wprime(-s) == -pot.Wprime(s)


@given(st.floats(-3, 3), st.floats(-1, 1))
def test_increment_matches_difference(s, t):
    pot = Potential()
    assert pot.W_increment(s, t) == pytest.approx(pot.W(s + t) - pot.W(s), abs=1e-10)


def test_increment_small_steps_are_accurate(pot):
    s, t = 1.7, 1e-9
    exact = pot.Wprime(s) * t  # second-order term is ~1e-18
    assert pot.W_increment(s, t) == pytest.approx(exact, rel=1e-8)


def test_verify_default_dim2(pot):
    rep = verify_hypotheses(pot, 2, ScanParams(10.0, 100_000))
    assert rep.w1_ok and rep.w2_ok and rep.np_ok and rep.subcritical_ok and rep.all_ok
    assert rep.w2_value == pytest.approx(-7 / 32)
    assert rep.quad_bound[1] == 0.25
    # W(s) >= s^2/4 iff (s^2 - 4)^2 >= 8, first failure at s^2 = 4 - 2 sqrt 2
    assert rep.quad_bound[0] == pytest.approx(math.sqrt(4 - 2 * math.sqrt(2)), abs=2e-4)
    # argmin of W on [0, 10] is one of the two roots 0 and 2
    assert min(abs(rep.w1_argmin), abs(rep.w1_argmin - 2.0)) < 1e-3


def test_verify_detects_unbounded_below():
    rep = verify_hypotheses(Potential(a=1.0, b=0.0, c1=4.0), 2)
    assert not rep.w1_ok
    assert rep.w1_min_value < 0


def test_verify_dim3_is_critical(pot):
    rep = verify_hypotheses(pot, 3)
    assert critical_exponent(3) == 6.0
    assert not rep.subcritical_ok
    assert rep.w1_ok and rep.w2_ok


def test_verify_growth_violation_reported():
    # c2 too small for the sextic term
    rep = verify_hypotheses(Potential(c2=0.1), 2)
    assert not rep.np_ok
    assert rep.np_margin < 0


def test_verify_rejects_empty_scan(pot):
    with pytest.raises(ValueError):
        verify_hypotheses(pot, 2, ScanParams(0.0, 10))
    with pytest.raises(ValueError):
        verify_hypotheses(pot, 2, ScanParams(0.5, 10))  # s_max <= s0


def test_w1_pass_implies_pointwise_nonnegative(pot):
    rep = verify_hypotheses(pot, 2)
    assert rep.w1_ok
    s = np.linspace(-10, 10, 100_000)
    assert pot.W(s).min() >= -1e-12


def test_strong_growth_check():
    # N(s) = -s^4/4 + s^6/32 <= -|s|^(2+g) near 0 holds for g = 2.5 (N ~ -s^4/4)
    rep = verify_hypotheses(Potential(growth_exp=2.5), 2)
    assert rep.growth_ok is True
    # s^4/4 >= s^4.5 exactly for s <= 1/16
    assert rep.growth_radius == pytest.approx(1 / 16, abs=2e-4)
    # and fails for g = 1: -s^4/4 is not below -s^3 near 0
    assert verify_hypotheses(Potential(growth_exp=1.0), 2).growth_ok is False


def test_invalid_potential_parameters():
    with pytest.raises(ValueError):
        Potential(a=-1.0)
    with pytest.raises(ValueError):
        Potential(q=2.0)
    with pytest.raises(ValueError):
        Potential(c1=0.0)


def test_report_serialises(pot):
    import json

    d = verify_hypotheses(pot, 2).to_dict()
    assert d["critical_exponent"] is None
    json.dumps(d)
