"""Acceptance criteria, one test each, at the stated tolerances and runtime limits."""

import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from nsrkit import cli
from nsrkit import field as F
from nsrkit import geometry as G
from nsrkit import iterate as I
from nsrkit import suites


def record(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


def test_criterion_1_spectral_operators():
    rep, secs = timed(suites.field_suite, n=64, count=100, seed=0)
    m = {c.name: c.measured for c in rep.checks}
    ok = (
        m["div_leray_projection"] <= 1e-10
        and m["div_reynolds_equals_nonzero_projection"] <= 1e-10
        and m["reynolds_trace"] <= 1e-11
        and secs <= 30
    )
    record(1, "spectral operator suite", ok, f"leray {m['div_leray_projection']:.2e}, div R {m['div_reynolds_equals_nonzero_projection']:.2e}, trace {m['reynolds_trace']:.2e}, {secs:.1f} s")
    assert ok


def test_criterion_2_geometric_lemma():
    t = time.perf_counter()
    dset = G.build_direction_set()
    R = G.ball_sample(10_000, 0, radius=0.5)
    c = G.coordinates(dset, R)
    xis = dset.xi_floats()
    rec = np.einsum("...k,ki,kj->...ij", c, xis, xis)
    err = float(np.max(np.sqrt(np.sum((rec - R) ** 2, axis=(-2, -1)))))
    gid = float(np.max(np.abs(G.gamma_all(dset, np.eye(3)) - 1 / math.sqrt(2))))
    secs = time.perf_counter() - t
    real = float(np.mean(np.all(c > 0, axis=-1)))
    ok = err <= 1e-12 and gid <= 1e-12 and secs <= 5
    record(2, "geometric lemma", ok, f"reconstruction {err:.2e}, gamma(Id) dev {gid:.2e}, real-gamma fraction {real:.4f}, {secs:.2f} s")
    assert ok


def test_criterion_3_jet_identities():
    rep, secs = timed(suites.jets_suite, n=128, sigmas=(4, 8))
    bounds = {"mean_ww": 1e-6, "l2_norm_deviation": 2e-3, "div_w_plus_wc": 1e-8, "flux_identity": 1e-8, "support_overlap_points": 0}
    worst = {}
    ok = secs <= 120
    for sigma in (4, 8):
        for key, b in bounds.items():
            c = rep.get(f"sigma{sigma}_{key}")
            worst[key] = max(worst.get(key, 0.0), c.measured)
            ok = ok and c.measured <= b
    record(3, "jet identities n=128", ok, ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + f", {secs:.1f} s")
    assert ok


def test_criterion_4_scaling_exponents():
    fit, secs = timed(suites.scaling_suite, (1e6, 1e8, 1e10), p_list=(1, 2))
    rows = [f for f in fit.fits if f["field"] in ("W", "Wc", "V") and f["N"] in (0, 1) and f["M"] in (0, 1) and f["p"] in (1, 2)]
    names = {(f["field"], f["N"], f["M"], f["p"]) for f in rows}
    complete = len(names) == 3 * 2 * 2 * 2
    worst = max(abs(f["fitted_exponent"] - f["predicted_exponent"]) / max(abs(f["predicted_exponent"]), 1e-300) for f in rows if f["predicted_exponent"])
    ok = complete and all(f["ok"] for f in rows) and secs <= 300
    record(4, "jet norm scaling", ok, f"{len(rows)} fits, worst relative exponent error {worst:.2e}, {secs:.1f} s")
    assert ok


def test_criterion_5_appendix():
    rep, secs = timed(suites.appendix_suite, n=128, sigmas=(8, 16, 32), pairs=20, seed=0, c0=2.0)
    dec = rep.get("decorrelation_max_ratio")
    fit = rep.get("mean_smallness_decay_fit_error")
    hyp = rep.get("decorrelation_hypothesis")
    ok = dec.measured <= 2.0 and hyp.passed and fit.measured <= 0.2 and secs <= 60
    record(5, "decorrelation and mean smallness", ok, f"max ratio {dec.measured:.4f} <= C0=2, exponent {rep.meta['mean_smallness_exponent']:.4f}, {secs:.1f} s")
    assert ok


@pytest.fixture(scope="module")
def shear_step(desk, desk_schedule, dset, profiles):
    t = time.perf_counter()
    state = I.shear_flow_state(desk_schedule, 64, 33)
    energy = I.energy_profile(state, desk_schedule.eps1)
    res = I.step(state, energy, dset, profiles, desk)
    return res, time.perf_counter() - t


def test_criterion_6_full_step(shear_step):
    res, secs = shear_step
    rep = res.report
    s = res.state
    g = s.grid
    trace = sym = div = 0.0
    for k in res.active:
        R = s.R[k]
        nR = float(np.max(I.pnorm(R)))
        trace = max(trace, float(np.max(np.abs(I.ptrace(R)))) / nR)
        full = F.sym_unpack(R)
        sym = max(sym, float(np.max(np.abs(full - np.swapaxes(full, 0, 1)))) / nR)
        div = max(div, F.sup_norm(F.div(g, s.v[k])) / F.sup_norm(F.grad(g, s.v[k])))
    resid = I.residual_check(g, s.v, s.p, s.R, s.dt, dv_dt=s.dv_dt).residual_linf
    supports = [c for c in rep.checks if c.kind == "support"]
    m = lambda name: rep.get(name).measured  # noqa: E731
    ok = (
        resid <= 1e-6
        and m("residual_linf") <= 1e-6
        and max(trace, m("R_q1_traceless")) <= 1e-9
        and max(sym, m("R_q1_symmetric")) <= 1e-9
        and max(div, m("div_v_q1")) <= 1e-9
        and all(c.passed for c in supports)
        and m("amplitude_identity_pointwise") <= 1e-9
        and m("energy_decomposition") <= 1e-8
        and secs <= 600
    )
    record(
        6,
        "full step, shear flow n=64 nt=33",
        ok,
        f"residual {resid:.2e}, trace {trace:.2e}, sym {sym:.2e}, div {div:.2e}, {len(supports)} support checks, "
        f"pointwise {m('amplitude_identity_pointwise'):.2e}, energy {m('energy_decomposition'):.2e}, {secs:.0f} s",
    )
    assert ok


INDUCTIVE = ("v_L2_bound", "R_L1_bound", "v_C1_bound", "energy_gap_upper", "energy_gap_lower")


def test_criterion_7_diagnostics_honesty(shear_step):
    rep = shear_step[0].report
    expected = [f"{n}_q{lvl}" for n in INDUCTIVE for lvl in (0, 1)] + ["v_difference_L2"]
    present = all(rep.get(n).kind == "inductive" and math.isfinite(rep.get(n).measured) and math.isfinite(rep.get(n).bound) for n in expected)
    soft = [c for c in rep.checks if c.kind in ("inductive", "lemma")]
    independent = not any(c.hard for c in soft) and rep.hard_ok == all(c.passed for c in rep.checks if c.hard)
    failing = sum(1 for c in soft if not c.passed)
    ok = present and independent and rep.hard_ok
    record(7, "diagnostics honesty", ok, f"{len(expected)} inductive entries present, {failing} soft failures reported, hard_ok {rep.hard_ok}")
    assert ok


STEP32 = "[params]\npreset = desk\n[grid]\nn = 32\nnt = 9\n[scenario]\nname = shear-flow\n[energy]\nprofile = logistic\n[run]\nseed = 7\n"


def test_criterion_8_determinism(tmp_path, shear_step):
    cfg = tmp_path / "run.ini"
    cfg.write_text(STEP32)
    runs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        codes = [
            cli.main(["step", "--config", str(cfg), "--out", str(out), "-q"]),
            cli.main(["verify", "--suite", "appendix", "--config", str(cfg), "--out", str(out), "-q"]),
            cli.main(["verify", "--suite", "field", "--config", str(cfg), "--out", str(out), "-q"]),
        ]
        files = sorted(p.name for p in out.iterdir() if p.suffix in (".json", ".csv") and p.name != "manifest.json")
        runs.append((codes, {name: (out / name).read_bytes() for name in files}))
    (c0, a), (c1, b) = runs
    same = list(a) == list(b) and all(a[k] == b[k] for k in a)
    rep = shear_step[0].report
    same_big = rep.to_json() == rep.to_json() and rep.checks_csv() == rep.checks_csv()
    ok = c0 == c1 == [0, 0, 0] and same and same_big and len(a) >= 6
    record(8, "determinism", ok, f"{len(a)} JSON/CSV reports byte-identical across two runs (manifest timestamps excluded)")
    assert ok
