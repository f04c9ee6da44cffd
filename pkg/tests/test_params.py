import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsrkit import params as P


def cfg(**kw):
    base = dict(a=4, b=2, beta=0.01, alpha=1e-3, zeta=0.01, s=0.1, t0=0.5, eps=1.0)
    base.update(kw)
    return P.ParameterConfig.from_mapping(base)


def test_lambda_zero_level():
    s = P.schedule(cfg(), 0)
    assert s.lambda_q == pytest.approx(2 * math.pi * 4, rel=1e-15)
    assert s.lambda_q == pytest.approx(25.1327, abs=1e-4)


def test_delta_one():
    # lambda_1 = 2 pi a^b; the tabulated 2 pi 4^4 corresponds to b = 4
    s = P.schedule(cfg(b=2), 0)
    assert s.lambda_q1 == pytest.approx(2 * math.pi * 16, rel=1e-15)
    s = P.schedule(cfg(b=4), 0)
    assert s.lambda_q1 == pytest.approx(2 * math.pi * 4**4, rel=1e-15)
    assert s.lambda_q1 == pytest.approx(1608.5, abs=0.05)
    assert s.delta_1 == pytest.approx(s.lambda_q1**-0.02, rel=1e-14)
    assert s.delta_1 == pytest.approx(0.8629, abs=3e-4)


def test_intervals_level_zero():
    s = P.schedule(cfg(), 0)
    assert s.S_q == pytest.approx(0.05)
    assert s.I_q.center - s.I_q.half == Fraction(45, 100)
    assert s.I_q.center + s.I_q.half == Fraction(55, 100)
    assert s.I_q1.contains(s.Itilde_q) and s.Itilde_q.contains(s.I_q)
    assert s.window.contains(s.I_q1)


def test_desk_schedule_frozen(desk_schedule):
    s = desk_schedule
    assert s.lambda_q == pytest.approx(31.4159, abs=1e-4)
    assert s.lambda_q1 == pytest.approx(157.0796, abs=1e-4)
    assert s.delta_q == pytest.approx(0.7084, abs=1e-4)
    assert s.delta_q1 == pytest.approx(0.6031, abs=1e-4)
    assert s.delta_q2 == pytest.approx(0.4371, abs=1e-4)
    assert s.r_perp == pytest.approx(0.01008, abs=1e-5)
    assert s.r_par == pytest.approx(0.0556, abs=1e-4)
    assert s.mu == pytest.approx(866.18, abs=0.01)
    assert (s.s_q, s.S_q, s.s_q1) == pytest.approx((0.1, 0.1, 0.01))
    assert (s.I_q.lo, s.I_q.hi) == pytest.approx((0.4, 0.6))
    assert (s.window.lo, s.window.hi) == pytest.approx((0.1, 0.9))
    assert s.eps1 == pytest.approx(1.61, abs=0.01)
    assert s.zeta == 0.01


def test_epsilon_one_arithmetic():
    c = cfg(eps=1.0)
    e1 = P.epsilon_one(c, {"sup_gamma_c0": 1.0, "cardinality": 6, "c0": 1.0})
    assert e1 == pytest.approx((4 * 6 * (2 * math.pi) ** 3) ** -2, rel=1e-14)
    assert e1 == pytest.approx(2.83e-8, rel=1e-2)
    assert P.epsilon_one(cfg(eps=0.0), {"sup_gamma_c0": 1.0, "cardinality": 6, "c0": 1.0}) == 0.0


@given(st.floats(min_value=1e-3, max_value=1e3))
def test_epsilon_one_quadratic_in_eps(eps):
    gc = {"sup_gamma_c0": 0.8, "cardinality": 6, "c0": 2.0}
    assert P.epsilon_one(cfg(eps=2 * eps), gc) == pytest.approx(4 * P.epsilon_one(cfg(eps=eps), gc), rel=1e-12)


def test_epsilon_one_rejects_nonpositive():
    with pytest.raises(P.InvalidConstant):
        P.epsilon_one(cfg(), {"sup_gamma_c0": 0.0, "cardinality": 6})


def test_alpha_b_margin():
    rep = P.check_constraints(cfg(b=2, alpha=1e-3))
    (r,) = [x for x in rep.by_name("alpha*b > 4")]
    assert not r.satisfied
    assert r.margin == pytest.approx(-3.998, abs=1e-12)


def test_small_b_point_fails_listed_inequalities():
    rep = P.check_constraints(cfg(a=10**6 * 5, b=8, beta=1e-4, alpha=1e-3, zeta=1e-5))
    failed = {r.name for r in rep.failures()}
    assert {"alpha*b > 4", "4*zeta + 2*beta*b < alpha"} <= failed
    assert rep.hard_ok


def test_admissible_preset_satisfies_everything():
    rep = P.check_constraints(P.ParameterConfig.from_mapping(P.PRESETS["admissible"]))
    assert rep.all_ok, [r.name for r in rep.failures()]


def test_alpha_boundary_is_strict():
    rep = P.check_constraints(cfg(alpha=1 / (7 * 74)))
    names = [r.name for r in rep.failures()]
    assert any("7*74" in n or "518" in n for n in names)


def test_overflow_reports_level():
    c = cfg(a=10**6, b=8)
    with pytest.raises(P.ScheduleOverflow) as exc:
        P.schedule(c, 5)
    assert "2" in str(exc.value) or exc.value.args


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=4))
def test_intervals_nested(q):
    s = P.schedule(cfg(), q)
    assert s.I_q.contains(s.I_q) and s.Itilde_q.contains(s.I_q) and s.I_q1.contains(s.Itilde_q)
    assert s.window.contains(s.I_q1)
    assert s.s_q1 == pytest.approx(s.s_q / 20)


def test_config_text_roundtrip():
    data = P.load_config_text("[params]\npreset = desk\nzeta = 0.02\n")
    c = P.parameter_config_from(data["params"])
    assert c.zeta == 0.02 and c.a == 5


def test_config_errors():
    with pytest.raises(P.ConfigError):
        P.load_config_text("[params\n")
    with pytest.raises(P.ConfigError):
        P.parameter_config_from({"a": 4})
    with pytest.raises(P.ConfigError):
        P.parameter_config_from({"preset": "nope"})
