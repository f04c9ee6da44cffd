import math

import numpy as np
import pytest

from nsrkit import field as F
from nsrkit import jets as J


@pytest.fixture(scope="module")
def fam64(dset, profiles):
    return J.build_family(J.JetScales.from_lambda(2 * math.pi * 2**7), dset, profiles, F.Grid(64), sigma=2)


def test_profile_normalization(profiles):
    ints = J.profile_integrals(profiles)
    assert abs(ints["int_phi"]) < 1e-10
    assert abs(ints["int_psi"]) < 1e-12
    assert ints["phi_sq_avg"] == pytest.approx(1.0, abs=1e-12)
    assert ints["psi_sq_avg"] == pytest.approx(1.0, abs=1e-12)


def test_profiles_compactly_supported(profiles):
    x = np.array([-1.5, -1.0, 1.0, 1.2])
    for name in ("Phi", "phi", "psi"):
        assert np.all(getattr(profiles, name)(x) == 0.0)
    with pytest.raises(AttributeError):
        profiles.nonexistent


def test_scales_from_lambda():
    sc = J.JetScales.from_lambda(2 * math.pi * 4**7)
    assert sc.lam * sc.r_perp == pytest.approx(4.0, rel=1e-12)
    assert sc.r_perp < sc.r_par < 1


def test_identities_on_small_grid(fam64):
    res = J.verify_family(fam64)
    for d in res["directions"]:
        assert d["mean_ww_error"] <= 1e-12
        assert abs(d["l2_avg"] - 1.0) <= 1e-12
        assert d["div_w_plus_wc"] <= 1e-12
        assert d["flux_identity"] <= 1e-12
        assert d["curl_curl"] <= 1e-12
        assert d["div_wt"] <= 1e-12
        assert d["sublattice_leak"] <= 1e-14
    assert all(p["support_overlap_points"] == 0 for p in res["pairs"])
    assert fam64.placement_margin >= 1.0


def test_time_derivative_matches_difference(fam64):
    h = 1e-6 / fam64.mu
    fd = (fam64.w(0, h) - fam64.w(0, -h)) / (2 * h)
    ref = fam64.dw_dt(0, 0.0)
    assert np.max(np.abs(fd - ref)) <= 1e-5 * np.max(np.abs(ref))


def test_under_resolution_raises(dset, profiles):
    with pytest.raises(J.UnderResolved, match="under-resolution"):
        J.build_family(J.JetScales.from_lambda(2 * math.pi * 8**7), dset, profiles, F.Grid(32), sigma=8)


def test_snap_sigma_floor():
    assert J.snap_sigma(100.0, 0.001) == 2
    assert J.snap_sigma(1000.0, 0.0041) == 4


@pytest.mark.parametrize(
    "name,N,M,p,expected",
    [("W", 0, 0, 2, 0.0), ("phi", 0, 0, 2, 0.0), ("W", 1, 0, 2, 1.0), ("V", 0, 0, 2, -2.0), ("W", 0, 0, 1, -8.0 / 7.0)],
)
def test_predicted_exponents(name, N, M, p, expected):
    assert J.predicted_exponent(name, N, M, p) == pytest.approx(expected, abs=1e-14)


def test_exponent_ok_tolerances():
    assert J.exponent_ok(1.04, 1.0)
    assert not J.exponent_ok(1.06, 1.0)
    assert J.exponent_ok(0.01, 0.0)
    assert not J.exponent_ok(0.03, 0.0)


def test_scaling_rejects_degenerate_sweep(dset, profiles):
    with pytest.raises(ValueError, match="degenerate"):
        J.scaling_report(profiles, dset, [0.5, 1.0, 1e4])
