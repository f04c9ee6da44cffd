import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsrkit import field as F

VOL = (2 * math.pi) ** 3


def test_grid_requires_power_of_two():
    with pytest.raises(F.GridError):
        F.Grid(24)


def test_grid_mismatch(g16, g32):
    with pytest.raises(F.GridError):
        F.grad(g16, np.zeros(g32.shape))


def test_laplacian_of_sine(g16):
    x, _, _ = g16.coords()
    assert np.max(np.abs(F.laplacian(g16, np.sin(x)) + np.sin(x))) < 1e-13


def test_grad_constant_is_zero(g16):
    assert np.max(np.abs(F.grad(g16, np.full(g16.shape, 3.0)))) == 0.0


def test_div_curl(g32, rng):
    v = F.random_field(g32, ncomp=3, rng=rng)
    assert F.sup_norm(F.div(g32, F.curl(g32, v))) <= 1e-12 * F.sup_norm(F.grad(g32, v))


def test_helmholtz_cases(g32, rng):
    phi = F.random_field(g32, rng=rng)
    assert F.sup_norm(F.helmholtz(g32, F.grad(g32, phi))) < 1e-12 * F.sup_norm(F.grad(g32, phi))
    u = F.curl(g32, F.random_field(g32, ncomp=3, rng=rng))
    assert F.sup_norm(F.helmholtz(g32, u) - u) < 1e-13 * F.sup_norm(u)
    v = F.random_field(g32, ncomp=3, rng=rng) + 0.3
    assert F.sup_norm(F.div(g32, F.helmholtz(g32, v))) / F.sup_norm(v) < 1e-10
    assert np.allclose(F.mean(g32, F.helmholtz(g32, v)), F.mean(g32, v), atol=1e-14)


def test_project_nonzero(g16):
    x, _, _ = g16.coords()
    assert np.max(np.abs(F.project_nonzero(g16, 1 + np.cos(x)) - np.cos(x))) < 1e-14
    assert np.max(np.abs(F.project_nonzero(g16, np.full(g16.shape, 2.0)))) < 1e-15


def test_inv_laplacian(g32, rng):
    x, _, _ = g32.coords()
    assert np.max(np.abs(F.inv_laplacian(g32, -np.sin(x)) - np.sin(x))) < 1e-13
    f = F.project_nonzero(g32, F.random_field(g32, rng=rng))
    assert np.max(np.abs(F.laplacian(g32, F.inv_laplacian(g32, f)) - f)) < 1e-12 * np.max(np.abs(f))
    with pytest.raises(F.HypothesisError):
        F.inv_laplacian(g32, f + 1.0)


def test_reynolds_zero_and_constant(g16):
    assert np.max(np.abs(F.reynolds(g16, np.zeros((3,) + g16.shape)))) == 0.0
    assert np.max(np.abs(F.reynolds(g16, np.ones((3,) + g16.shape)))) < 1e-15


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_reynolds_inverts_divergence(seed):
    g = F.Grid(16)
    v = F.random_field(g, ncomp=3, rng=seed) + 0.1
    R = F.reynolds(g, v)
    err = F.div_tensor(g, R) - F.project_nonzero(g, v)
    assert F.sup_norm(err) <= 1e-10 * F.sup_norm(v)
    assert np.max(np.abs(F.trace(R))) <= 1e-11 * F.sup_norm(R)
    assert np.max(np.abs(R - np.swapaxes(R, 0, 1))) == 0.0


def test_pressure(g32, rng):
    x, _, z = g32.coords()
    shear = np.stack([np.sin(z), 0 * z, 0 * z])
    assert np.max(np.abs(F.pressure_from_velocity(g32, shear))) < 1e-13
    assert np.max(np.abs(F.pressure_from_velocity(g32, np.ones((3,) + g32.shape)))) < 1e-14
    v = F.random_field(g32, ncomp=3, rng=rng, band=6)
    p = F.pressure_from_velocity(g32, v)
    vv = F.outer(g32, v, v)
    res = F.laplacian(g32, p) + F.div(g32, F.div_tensor(g32, vv))
    assert F.sup_norm(res) < 1e-10 * F.sup_norm(F.div(g32, F.div_tensor(g32, vv)))


def test_lp_norms(g16):
    x, _, _ = g16.coords()
    one = np.ones(g16.shape)
    for p in (1, 2, 3.5):
        assert F.lp_norm(g16, one, p) == pytest.approx(VOL ** (1 / p), rel=1e-14)
    assert F.lp_norm(g16, np.sin(x), 2) == pytest.approx(math.sqrt(VOL / 2), rel=1e-14)
    assert F.lp_norm(g16, np.sin(x), 2) == pytest.approx(11.14, abs=5e-3)
    assert F.lp_norm(g16, 0 * one, 2) == 0.0
    with pytest.raises(ValueError):
        F.lp_norm(g16, one, 0.5)


def test_product_is_exact_truncation(g16, rng):
    a = F.random_field(g16, rng=rng, band=8)
    b = F.random_field(g16, rng=rng, band=8)
    A, B = g16.pad(a, 64), g16.pad(b, 64)
    exact = F.truncate(g16, g16.unpad(A * B))
    assert np.max(np.abs(F.product(g16, a, b) - exact)) < 1e-13


def test_decorrelation_examples():
    g = F.Grid(128)
    x, _, _ = g.coords()
    gs = np.sin(32 * x)
    one = np.ones(g.shape)
    r = F.decorrelation_check(g, one, gs, 32, 2, c_f=1.0)
    assert r.ratio == pytest.approx(1.0, rel=1e-12)
    r = F.decorrelation_check(g, 1 + 0.5 * np.sin(x), gs, 32, 2, c0=2.0, c_f=1.5)
    assert r.bound_ok and r.ratio <= 2.0
    bad = F.decorrelation_check(g, one, np.sin(x), 1, 2, c_f=1.0)
    assert not bad.hypothesis_ok and bad.message.startswith("hypothesis-failure")


def test_decorrelation_p1():
    g = F.Grid(64)
    x, y, _ = g.coords()
    f = 1 + 0.5 * np.sin(x) * np.cos(y)
    for sigma in (8, 16):
        r = F.decorrelation_check(g, f, np.sin(sigma * x), sigma, 1, freq_bound=2.0)
        assert r.hypothesis_ok and r.ratio <= 2.0


def test_mean_smallness_examples(g32):
    x, _, _ = g32.coords()
    g = np.sin(x)
    assert F.mean_smallness_check(g32, np.ones(g32.shape), g, 4).lhs < 1e-12
    for sigma in (2, 4, 8):
        assert F.mean_smallness_check(g32, np.sin(x), g, sigma).lhs < 1e-12
    with pytest.raises(F.HypothesisError):
        F.mean_smallness_check(g32, np.sin(x), g + 1, 2)


def test_inv_grad_product(g32):
    x, y, _ = g32.coords()
    kappa = 8
    f = np.cos(kappa * y)
    r = F.inv_grad_product_check(g32, np.full(g32.shape, 2.0), f, kappa, 2)
    assert r.lhs <= 2 * F.lp_norm(g32, f, 2) / kappa * (1 + 1e-12)
    zero = F.inv_grad_product_check(g32, 1 + 0.5 * np.cos(x), 0 * f, kappa, 1.5)
    assert zero.lhs == 0.0


def test_field_roundtrip(tmp_path, g16, rng):
    v = F.random_field(g16, ncomp=3, rng=rng)
    path = tmp_path / "v.nsrf"
    F.write_field(path, v, time_index=7)
    back = F.read_field(path)
    arr = back[0] if isinstance(back, tuple) else back
    assert np.array_equal(arr, v)


def test_sublattice_leak(g32):
    x, _, _ = g32.coords()
    assert F.sublattice_leak(g32, np.sin(4 * x), 4) < 1e-14
    assert F.sublattice_leak(g32, np.sin(3 * x), 4) > 0.5
