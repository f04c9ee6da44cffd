import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsrkit import field as F
from nsrkit import iterate as I


@pytest.fixture(scope="module")
def shear32(desk_schedule):
    return I.shear_flow_state(desk_schedule, 32, 9)


@pytest.fixture(scope="module")
def small_step(shear32, desk, dset, profiles):
    energy = I.energy_profile(shear32, 1.61)
    return I.step(shear32, energy, dset, profiles, desk, sigma=2)


def test_time_grid_requires_multiple_of_eight(desk_schedule):
    t = I.time_grid(desk_schedule, 17)
    assert t[0] == pytest.approx(0.1) and t[-1] == pytest.approx(0.9)
    for bad in (5, 10, 16):
        with pytest.raises(I.StageError):
            I.time_grid(desk_schedule, bad)


def test_fd_derivative_exact_on_quartics():
    t = np.linspace(0.0, 1.0, 11)
    f = [np.array([3 * s**4 - s**2 + 2]) for s in t]
    d = I.fd_derivative(f, t[1] - t[0])
    ref = [12 * s**3 - 2 * s for s in t]
    assert np.allclose(np.concatenate(d), ref, atol=1e-11)
    assert I.fd_derivative([None] * 6, 0.1) == [None] * 6


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.5, 1.5))
def test_smooth_step_monotone_and_bounded(tau):
    s = float(I.smooth_step(tau))
    assert 0.0 <= s <= 1.0
    assert float(I.smooth_step(tau + 1e-3)) >= s
    assert float(I.smooth_step_prime(tau)) >= 0.0


def test_smooth_step_derivative_matches_difference():
    tau = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    fd = (I.smooth_step(tau + h) - I.smooth_step(tau - h)) / (2 * h)
    assert np.allclose(I.smooth_step_prime(tau), fd, rtol=1e-6, atol=1e-9)


def test_cutoffs_nested_and_centered(desk_schedule):
    cut = I.build_cutoffs(desk_schedule)
    assert all(cut.invariants(desk_schedule).values())
    lo, hi = cut.eta_tilde.support
    assert desk_schedule.I_q1.lo < lo and hi < desk_schedule.I_q1.hi
    assert float(cut.eta(desk_schedule.I_q.lo)) == 1.0
    assert float(cut.eta_tilde(hi + 1e-9)) == 0.0


def test_chi_properties():
    assert all(I.chi_check().values())
    z = np.linspace(0.5, 2.5, 41)
    h = 1e-6
    assert np.allclose(I.chi_prime(z), (I.chi(z + h) - I.chi(z - h)) / (2 * h), atol=1e-6)


def test_mollifier_normalized(g32):
    m = I.build_mollifier(g32, 0.05, 0.4)
    assert m.space[0, 0, 0] == pytest.approx(1.0, abs=1e-14)
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(m.weights > 0)
    with pytest.raises(I.StageError, match="under-resolved"):
        I.build_mollifier(g32, 0.05, 0.01)


def test_q_sym_is_pointwise_for_low_band(g32, rng):
    u = F.random_field(g32, ncomp=3, band=4, rng=rng)
    Q = I.q_sym(g32, u)
    direct = np.stack([u[i] * u[j] for i, j in ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))])
    assert np.max(np.abs(Q - direct)) <= 1e-13


def test_shear_flow_is_exact_solution(shear32):
    res = I.residual_check(shear32.grid, shear32.v, shear32.p, shear32.R, shear32.dt, dv_dt=shear32.dv_dt)
    assert res.residual_linf <= 1e-13
    wrong = [2 * d for d in shear32.dv_dt]
    assert I.residual_check(shear32.grid, shear32.v, shear32.p, shear32.R, shear32.dt, dv_dt=wrong).residual_linf > 0.1


def test_glue_rejects_stress_outside_plateau(desk_schedule):
    st0 = I.zero_state(desk_schedule, 16, 9)
    st0.R[0] = np.ones((6,) + st0.grid.shape)
    cut = I.build_cutoffs(desk_schedule)
    moll = I.build_mollifier(st0.grid, st0.dt, 0.8)
    with pytest.raises(I.StageError) as exc:
        I.glue(st0, I.mollify(st0, moll, [4]), cut, [4])
    assert exc.value.stage == "glue"


def test_amplitudes_need_energy_room(shear32, desk, dset, profiles):
    energy = I.energy_profile(shear32, 1e-9)
    with pytest.raises(I.StageError) as exc:
        I.step(shear32, energy, dset, profiles, desk, sigma=2)
    assert exc.value.stage == "amplitudes"


def test_small_step_hard_checks(small_step):
    rep = small_step.report
    assert rep.hard_ok, [c.name for c in rep.failures(hard_only=True)]
    assert small_step.active == [3, 4, 5]
    assert rep.get("residual_linf").measured <= 1e-10
    assert rep.get("energy_decomposition").measured <= 1e-10


def test_small_step_residual_recomputed(small_step, shear32):
    s = small_step.state
    res = I.residual_check(s.grid, s.v, s.p, s.R, s.dt, dv_dt=s.dv_dt)
    assert res.residual_linf <= 1e-10
    for k in range(s.nt):
        if k not in small_step.active:
            assert s.v[k] is shear32.v[k]
            assert s.R[k] is None


def test_small_step_new_stress_traceless_symmetric(small_step):
    for k in small_step.active:
        R = small_step.state.R[k]
        assert np.max(np.abs(I.ptrace(R))) <= 1e-12 * np.max(I.pnorm(R))
        assert abs(float(np.mean(small_step.state.p[k]))) <= 1e-14
        v = small_step.state.v[k]
        assert F.sup_norm(F.div(small_step.state.grid, v)) <= 1e-10 * F.sup_norm(F.grad(small_step.state.grid, v))


def test_report_serializes_deterministically(small_step):
    rep = small_step.report
    assert rep.to_json() == rep.to_json()
    names = [c.name for c in rep.checks]
    assert len(names) == len(set(names))
    assert rep.checks_csv().splitlines()[0].startswith("name,")
