"""Invariant suites shared by the command line and the acceptance tests."""

from __future__ import annotations

import math

import numpy as np

from . import field as F
from . import geometry as G
from . import jets as J
from .diagnostics import DiagnosticsReport

SUITES = ("field", "geometry", "jets", "appendix")


def _rel(num, den):
    return float(num / den) if den > 0 else float(num)


def field_suite(n=64, count=100, seed=0, tolerance_scale=1.0):
    """Projection, inverse divergence and trace identities on random band-limited fields."""
    g = F.Grid(n)
    rng = np.random.default_rng(seed)
    worst = {"div_leray": 0.0, "div_reynolds": 0.0, "trace_reynolds": 0.0, "sym_reynolds": 0.0}
    for _ in range(count):
        v = F.random_field(g, ncomp=3, rng=rng)
        nv = math.sqrt(F.lp_norm(g, v, 2) ** 2)
        worst["div_leray"] = max(worst["div_leray"], _rel(F.lp_norm(g, F.div(g, F.helmholtz(g, v)), 2), nv))
        R = F.reynolds(g, v)
        err = F.div_tensor(g, R) - F.project_nonzero(g, v)
        worst["div_reynolds"] = max(worst["div_reynolds"], _rel(F.lp_norm(g, err, 2), nv))
        nR = F.lp_norm(g, R, 2)
        worst["trace_reynolds"] = max(worst["trace_reynolds"], _rel(F.lp_norm(g, F.trace(R), 2), nR))
        # |R - R^T|^2 = 2 sum_{i<j} (R_ij - R_ji)^2
        skew = np.stack([R[i, j] - R[j, i] for i, j in ((0, 1), (0, 2), (1, 2))])
        worst["sym_reynolds"] = max(worst["sym_reynolds"], _rel(math.sqrt(2.0) * F.lp_norm(g, skew, 2), nR))
    rep = DiagnosticsReport(meta={"suite": "field", "n": n, "count": count, "seed": seed})
    ts = tolerance_scale
    rep.add("div_leray_projection", worst["div_leray"], 1e-10 * ts, "identity", "field")
    rep.add("div_reynolds_equals_nonzero_projection", worst["div_reynolds"], 1e-10 * ts, "identity", "field")
    rep.add("reynolds_trace", worst["trace_reynolds"], 1e-11 * ts, "identity", "field")
    rep.add("reynolds_symmetry", worst["sym_reynolds"], 1e-11 * ts, "identity", "field")
    return rep


def geometry_suite(samples=10_000, seed=0, tolerance_scale=1.0, dset=None):
    """Reconstruction of symmetric matrices from the direction set, and gamma at the identity."""
    dset = dset or G.build_direction_set()
    ts = tolerance_scale
    R = G.ball_sample(samples, seed, radius=G.BALL_RADIUS)
    c = G.coordinates(dset, R)
    xis = dset.xi_floats()
    outer = np.einsum("ki,kj->kij", xis, xis)
    lin = np.einsum("...k,kij->...ij", c, outer)
    lin_err = float(np.max(np.sqrt(np.sum((lin - R) ** 2, axis=(-2, -1)))))
    inner = G.ball_sample(samples, seed + 1, radius=dset.domain_radius)
    rec = G.reconstruct(dset, G.gamma_all(dset, inner))
    gam_err = float(np.max(np.sqrt(np.sum((rec - inner) ** 2, axis=(-2, -1)))))
    gid = G.gamma_all(dset, np.eye(3))
    rep = DiagnosticsReport(meta={"suite": "geometry", "samples": samples, "seed": seed, "domain_radius": dset.domain_radius, "valid_radius": dset.valid_radius})
    rep.add("reconstruction_linear_half_ball", lin_err, 1e-12 * ts, "identity", "geometry")
    rep.add("reconstruction_gamma_domain_ball", gam_err, 1e-12 * ts, "identity", "geometry")
    rep.add("gamma_identity_deviation", float(np.max(np.abs(gid - 1 / math.sqrt(2)))), 1e-12 * ts, "identity", "geometry")
    rep.add("gamma_real_fraction_half_ball", float(np.mean(np.all(c > 0, axis=-1))), 1.0, "lemma", "geometry", relation=">=")
    rep.add("valid_radius", dset.valid_radius, G.BALL_RADIUS, "lemma", "geometry", relation=">=")
    return rep


def jets_suite(n=128, sigmas=(4, 8), tolerance_scale=1.0, dset=None, profiles=None, t=0.0):
    """Jet identities at lambda = 2 pi sigma^7 (so sigma = lambda r_perp without snapping)."""
    dset = dset or G.build_direction_set()
    profiles = profiles or J.make_profiles()
    g = F.Grid(n)
    ts = tolerance_scale
    rep = DiagnosticsReport(meta={"suite": "jets", "n": n, "sigmas": list(sigmas)})
    for sigma in sigmas:
        tag = f"sigma{sigma}"
        lam = 2 * math.pi * sigma**7
        try:
            fam = J.build_family(J.JetScales.from_lambda(lam), dset, profiles, g, sigma=sigma)
        except J.UnderResolved as exc:
            rep.add(f"{tag}_resolution", 1.0, 0.0, "identity", "jets", note=str(exc))
            continue
        res = J.verify_family(fam, t=t)
        d = res["directions"]
        rep.add(f"{tag}_mean_ww", max(x["mean_ww_error"] for x in d), 1e-6 * ts, "identity", "jets")
        rep.add(f"{tag}_l2_norm_deviation", max(abs(x["l2_avg"] - 1.0) for x in d), 2e-3 * ts, "identity", "jets")
        rep.add(f"{tag}_div_w_plus_wc", max(x["div_w_plus_wc"] for x in d), 1e-8 * ts, "identity", "jets")
        rep.add(f"{tag}_flux_identity", max(x["flux_identity"] for x in d), 1e-8 * ts, "identity", "jets")
        rep.add(f"{tag}_curl_curl", max(x["curl_curl"] for x in d), 1e-8 * ts, "identity", "jets")
        rep.add(f"{tag}_div_wt", max(x["div_wt"] for x in d), 1e-8 * ts, "identity", "jets")
        rep.add(f"{tag}_sublattice_leak", max(x["sublattice_leak"] for x in d), 1e-12 * ts, "identity", "jets")
        rep.add(f"{tag}_fubini", max(max(x["fubini_l1"], x["fubini_l2"]) for x in d), 1e-10 * ts, "identity", "jets")
        rep.add(f"{tag}_support_overlap_points", sum(p["support_overlap_points"] for p in res["pairs"]), 0, "support", "jets")
        rep.add(f"{tag}_placement_margin", fam.placement_margin, 1.0, "support", "jets", relation=">=")
        rep.add(f"{tag}_truncated_overlap", max(p["truncated_overlap"] for p in res["pairs"]), float("inf"), "info", "jets")
        rep.meta[tag] = {"truncation": [fam.m_psi, fam.m_phi], "support_points": res["support_points"]}
    return rep


def sawtooth_family(grid, seed=0, low_band=4):
    """f = sum_k sin(k x1)/k (k < n/2) plus a random part of band < low_band.

    Against g = sin(x1) composed at sigma >= low_band only the sawtooth mode
    sigma survives, so |int g_sigma f| = (2 pi)^3 / (2 sigma) exactly.
    """
    x, _, _ = grid.coords()
    f = sum(np.sin(k * x) / k for k in range(1, grid.n // 2))
    f = f + F.random_field(grid, band=low_band, rng=seed)
    g = np.sin(x)
    return f, g


def appendix_suite(n=128, sigmas=(8, 16, 32), pairs=20, seed=0, c0=2.0, p=2, tolerance_scale=1.0):
    """Decorrelation ratios on random pairs and the 1/sigma decay of the mean-smallness integral."""
    g = F.Grid(n)
    coarse = F.Grid(16)
    rng = np.random.default_rng(seed)
    ratios = []
    hyp = True
    for _ in range(pairs):
        fc = F.random_field(coarse, band=3, rng=rng)
        fc = 1.0 + 0.5 * fc / max(float(np.max(np.abs(fc))), 1e-300)
        c_f = F.f_constant(coarse, fc, p, freq_bound=3.0)
        f = coarse.pad(fc, n)
        base = F.random_field(coarse, band=2, rng=rng)
        base = base - float(np.mean(base))
        base = coarse.pad(base, n)
        for sigma in sigmas:
            gs = F.compose_sigma(g, base, sigma)
            r = F.decorrelation_check(g, f, gs, sigma, p, freq_bound=3.0, c0=c0, c_f=c_f)
            ratios.append(r.ratio)
            hyp = hyp and r.hypothesis_ok
    rep = DiagnosticsReport(meta={"suite": "appendix", "n": n, "sigmas": list(sigmas), "pairs": pairs, "seed": seed, "p": p})
    rep.add("decorrelation_max_ratio", max(ratios), c0, "lemma", "appendix", note="bound-checked against C0")
    rep.add("decorrelation_hypothesis", float(hyp), 1.0, "identity", "appendix", relation="==")
    f, gg = sawtooth_family(g, seed=seed)
    lhs = []
    grad_sup = max(F.lp_norm(g, F.partial(g, f, j), math.inf) for j in range(3))
    for sigma in sigmas:
        ms = F.mean_smallness_check(g, f, gg, sigma, grad_sup=grad_sup)
        lhs.append(ms.lhs)
        rep.add(f"mean_smallness_sigma{sigma}", ms.lhs, ms.rhs, "lemma", "appendix")
    slope = float(np.polyfit(np.log(np.asarray(sigmas, float)), np.log(lhs), 1)[0])
    rep.add("mean_smallness_decay_fit_error", abs(slope + 1.0), 0.2 * tolerance_scale, "lemma", "appendix", note=f"fitted exponent {slope:.6f}, expected -1")
    rep.meta["mean_smallness_exponent"] = slope
    rep.meta["decorrelation_ratios"] = [float(f"{r:.12g}") for r in ratios]
    return rep


def scaling_suite(lambda_sweep=(1e6, 1e8, 1e10), p_list=(1, 2), dset=None, profiles=None):
    if len(lambda_sweep) < 3:
        raise ValueError("scaling needs at least 3 sweep points")
    dset = dset or G.build_direction_set()
    profiles = profiles or J.make_profiles()
    return J.scaling_report(profiles, dset, list(lambda_sweep), p_list=p_list)


def run_suite(name, **kw):
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return {"field": field_suite, "geometry": geometry_suite, "jets": jets_suite, "appendix": appendix_suite}[name](**kw)
