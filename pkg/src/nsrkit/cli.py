"""Command line driver: check-params, verify, step, scaling.

Exit codes: 0 when every hard identity holds (margin failures only warn),
1 on a hard failure or a failed stage precondition, 2 on bad input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import field as F
from . import geometry as G
from . import iterate as IT
from . import jets as J
from . import params as P
from . import suites

log = logging.getLogger("nsrkit")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SCENARIOS = ("shear-flow", "zero", "from-file")
DEFAULT_SWEEP = (1e6, 1e8, 1e10)


class UsageError(Exception):
    pass


# -- configuration ----------------------------------------------------------------------


@dataclass
class RunConfig:
    params: P.ParameterConfig
    n: int = 64
    nt: int = 33
    scenario: str = "shear-flow"
    scenario_file: str | None = None
    amplitude: float = 1.0
    energy: dict | None = None
    sweep: tuple = DEFAULT_SWEEP
    p_list: tuple = (1.0, 2.0)
    out: str = "out"
    tolerance_scale: float = 1.0
    seed: int = 0
    raw_text: str = ""
    extra: dict = field(default_factory=dict)

    def digest(self):
        return hashlib.sha256(self.raw_text.encode()).hexdigest()


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).replace(",", " ").split())


def read_run_config(path):
    """Parse an INI (or JSON) run configuration; any problem raises ConfigError."""
    if path is None:
        text = "[params]\npreset = desk\n[energy]\nprofile = logistic\n"
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise P.ConfigError(f"cannot read config {path}: {exc}") from exc
    data = P.load_config_text(text)
    if "params" not in data:
        raise P.ConfigError("config needs a [params] section")
    cfg = RunConfig(params=P.parameter_config_from(data["params"]), raw_text=text)
    grid = data.get("grid", {})
    scen = data.get("scenario", {})
    try:
        cfg.n = int(grid.get("n", cfg.n))
        cfg.nt = int(grid.get("nt", cfg.nt))
        cfg.scenario = str(scen.get("name", cfg.scenario))
        cfg.scenario_file = scen.get("file")
        cfg.amplitude = float(scen.get("amplitude", cfg.amplitude))
        sweep = data.get("sweep", {})
        if "lambdas" in sweep:
            cfg.sweep = _floats(sweep["lambdas"])
        if "p" in sweep:
            cfg.p_list = _floats(sweep["p"])
        tol = data.get("tolerances", {})
        cfg.tolerance_scale = float(tol.get("scale", 1.0))
        run = data.get("run", {})
        cfg.seed = int(run.get("seed", 0))
        if "out" in run:
            cfg.out = str(run["out"])
    except (TypeError, ValueError) as exc:
        raise P.ConfigError(f"bad value in config: {exc}") from exc
    if "energy" in data:
        cfg.energy = dict(data["energy"])
    if cfg.scenario not in SCENARIOS:
        raise P.ConfigError(f"unknown scenario {cfg.scenario!r}; choose from {', '.join(SCENARIOS)}")
    if cfg.scenario == "from-file":
        if not cfg.scenario_file or not os.path.exists(cfg.scenario_file):
            raise P.ConfigError(f"scenario file {cfg.scenario_file!r} does not exist")
    if not cfg.tolerance_scale > 0:
        raise P.ConfigError("tolerance scale must be positive")
    return cfg


# -- output and manifest --------------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Writer:
    """Single writer for one run directory; tracks every emitted file."""

    def __init__(self, out):
        self.out = out
        os.makedirs(out, exist_ok=True)
        self.files = []

    def path(self, name):
        p = os.path.join(self.out, name)
        self.files.append(name)
        return p

    def text(self, name, content):
        with open(self.path(name), "w", newline="\n") as fh:
            fh.write(content)

    def json(self, name, obj):
        self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def manifest(self, cfg, command, started, summary):
        inv = [{"path": f, "sha256": sha256_file(os.path.join(self.out, f)), "bytes": os.path.getsize(os.path.join(self.out, f))} for f in sorted(set(self.files))]
        man = {
            "toolkit_version": __version__,
            "command": command,
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "started": started,
            "finished": _now(),
            "summary": summary,
            "files": inv,
        }
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            fh.write(json.dumps(man, indent=2, sort_keys=True) + "\n")
        return man


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def verify_manifest(out):
    """Compare the files of a run directory against its manifest; returns mismatching paths."""
    with open(os.path.join(out, "manifest.json")) as fh:
        man = json.load(fh)
    bad = []
    for entry in man["files"]:
        p = os.path.join(out, entry["path"])
        if not os.path.exists(p) or sha256_file(p) != entry["sha256"]:
            bad.append(entry["path"])
    return man, bad


def _summary(report):
    return {
        "hard_ok": report.hard_ok,
        "passed": sum(1 for c in report.checks if c.passed),
        "failed": sum(1 for c in report.checks if not c.passed),
        "hard_failed": [c.name for c in report.checks if c.hard and not c.passed],
    }


def _emit_report(w, stem, report, figure=True):
    from . import plotting

    w.text(f"{stem}.json", report.to_json())
    w.text(f"{stem}_checks.csv", report.checks_csv())
    w.text(f"{stem}.txt", report.to_table())
    if figure:
        plotting.plot_checks(report, w.path(f"{stem}_checks.png"))


def _warn_margins(report):
    for c in report.checks:
        if not c.passed and not c.hard:
            log.warning("margin: %s measured %.6g %s bound %.6g", c.name, c.measured, c.relation, c.bound)


# -- commands ------------------------------------------------------------------------------


def cmd_check_params(cfg, w):
    rep = P.check_constraints(cfg.params)
    w.json("constraints.json", rep.to_json())
    w.text("constraints.txt", rep.to_table())
    sched = P.schedule(cfg.params, 0)
    w.json("schedule_q0.json", {k: (str(v) if isinstance(v, float) and not math.isfinite(v) else v) for k, v in sched.to_json().items()})
    for r in rep.failures():
        if r.kind != "hard":
            log.warning("margin: %s (%s) lhs %.6g rhs %.6g", r.name, r.kind, r.lhs, r.rhs)
    summary = {"hard_ok": rep.hard_ok, "failed": [r.name for r in rep.failures()]}
    return (EXIT_OK if rep.hard_ok else EXIT_FAIL), summary


def cmd_verify(cfg, w, suite):
    kw = {"tolerance_scale": cfg.tolerance_scale}
    if suite == "field":
        kw.update(seed=cfg.seed)
    elif suite == "appendix":
        kw.update(seed=cfg.seed, c0=cfg.params.c0)
    elif suite == "jets":
        kw.update(n=cfg.extra.get("jets_n", 128))
    rep = suites.run_suite(suite, **kw)
    _emit_report(w, f"verify_{suite}", rep)
    _warn_margins(rep)
    return (EXIT_OK if rep.hard_ok else EXIT_FAIL), _summary(rep)


def _load_state(cfg, sched):
    if cfg.scenario == "shear-flow":
        return IT.shear_flow_state(sched, cfg.n, cfg.nt, amplitude=cfg.amplitude)
    if cfg.scenario == "zero":
        return IT.zero_state(sched, cfg.n, cfg.nt)
    data = np.load(cfg.scenario_file)
    v = [np.asarray(x, dtype=float) for x in data["v"]]
    nt = len(v)
    g = F.Grid(v[0].shape[-1])
    times = IT.time_grid(sched, nt)
    pick = lambda key: [np.asarray(x, dtype=float) for x in data[key]] if key in data else None  # noqa: E731
    p = pick("p") or [None] * nt
    R = pick("R") or [None] * nt
    st = IT.NSRState(g, times, v, p, R, sched, q=sched.q, dv_dt=pick("dv_dt"), dR_dt=pick("dR_dt"))
    st.v0_l2 = max(math.sqrt(IT.l2_sq(u)) for u in v)
    return st


def cmd_step(cfg, w):
    from . import plotting

    if cfg.energy is None:
        raise P.ConfigError("step needs an [energy] section (e.g. profile = logistic)")
    if cfg.energy.get("profile", "logistic") != "logistic":
        raise P.ConfigError(f"unknown energy profile {cfg.energy.get('profile')!r}")
    sched = P.schedule(cfg.params, 0)
    eps1 = float(cfg.energy.get("eps1", sched.eps1))
    state = _load_state(cfg, sched)
    energy = IT.energy_profile(state, eps1)
    dset = G.build_direction_set()
    profiles = J.make_profiles()
    res = IT.step(state, energy, dset, profiles, cfg.params)
    rep = res.report
    _emit_report(w, "step", rep)
    w.text("step_traces.csv", rep.traces_csv())
    plotting.plot_step_traces(rep.traces, w.path("step_traces.png"))
    k0 = int(np.argmin(np.abs(state.times - energy.t0)))
    F.write_field(w.path("v_q1_t0.nsrf"), res.state.v[k0], time_index=k0)
    if res.state.R[k0] is not None:
        F.write_field(w.path("R_q1_t0.nsrf"), res.state.R[k0], time_index=k0)
    F.write_slice_csv(w.path("v_q1_t0_slice.csv"), state.grid, res.state.v[k0], axis=2, index=0)
    _warn_margins(rep)
    return (EXIT_OK if rep.hard_ok else EXIT_FAIL), _summary(rep)


def cmd_scaling(cfg, w):
    from . import plotting

    if len(cfg.sweep) < 3:
        raise UsageError(f"scaling needs at least 3 sweep points, got {len(cfg.sweep)}")
    fit = suites.scaling_suite(cfg.sweep, p_list=cfg.p_list)
    for lam in fit.skipped:
        log.warning("skipped lambda %.6g: jet radii not resolvable", lam)
    w.text("scaling.csv", "\n".join(fit.csv_lines()) + "\n")
    ok = all(f["ok"] for f in fit.fits)
    w.json("scaling.json", {**fit.to_json(), "skipped": fit.skipped, "all_ok": ok})
    plotting.plot_scaling(fit, w.path("scaling.png"))
    return (EXIT_OK if ok else EXIT_FAIL), {"all_ok": ok, "fits": len(fit.fits), "skipped": fit.skipped}


# -- entry point --------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="nsrkit", description="Convex-integration step toolkit for the Navier-Stokes-Reynolds system.")
    ap.add_argument("--version", action="version", version=f"nsrkit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI or JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed for randomized suites")
        p.add_argument("--tolerance-scale", type=float, help="multiply every identity tolerance")
        p.add_argument("--verify-manifest", action="store_true", help="re-run and compare checksums with the existing manifest")
        p.add_argument("-q", "--quiet", action="store_true")

    common(sub.add_parser("check-params", help="evaluate the parameter constraints"))
    pv = sub.add_parser("verify", help="run an invariant suite")
    common(pv)
    pv.add_argument("--suite", required=True, choices=suites.SUITES)
    pv.add_argument("--jets-n", type=int, default=128, help="grid size for the jets suite")
    common(sub.add_parser("step", help="one iteration on the configured scenario"))
    common(sub.add_parser("scaling", help="fit jet norm exponents over the lambda sweep"))
    return ap


DETERMINISTIC_SUFFIXES = (".json", ".csv", ".txt", ".nsrf")


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = read_run_config(args.config)
    except P.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (P.InvalidConstant, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.tolerance_scale is not None:
        if not args.tolerance_scale > 0:
            print("config error: tolerance scale must be positive", file=sys.stderr)
            return EXIT_USAGE
        cfg.tolerance_scale = args.tolerance_scale
    if getattr(args, "jets_n", None):
        cfg.extra["jets_n"] = args.jets_n

    previous = None
    if args.verify_manifest:
        try:
            previous, bad = verify_manifest(cfg.out)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            print(f"manifest error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if bad:
            print(f"manifest mismatch before re-run: {', '.join(bad)}", file=sys.stderr)
            return EXIT_FAIL

    started = _now()
    w = Writer(cfg.out)
    try:
        if args.command == "check-params":
            code, summary = cmd_check_params(cfg, w)
        elif args.command == "verify":
            code, summary = cmd_verify(cfg, w, args.suite)
        elif args.command == "step":
            code, summary = cmd_step(cfg, w)
        else:
            code, summary = cmd_scaling(cfg, w)
    except P.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IT.StageError as exc:
        print(f"stage failure [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (F.GridError, F.HypothesisError, P.ScheduleOverflow) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    man = w.manifest(cfg, args.command, started, summary)

    if previous is not None:
        old = {e["path"]: e["sha256"] for e in previous["files"]}
        new = {e["path"]: e["sha256"] for e in man["files"]}
        diff = [p for p in sorted(old) if p.endswith(DETERMINISTIC_SUFFIXES) and old.get(p) != new.get(p)]
        if diff:
            print(f"re-run differs from manifest: {', '.join(diff)}", file=sys.stderr)
            return EXIT_FAIL
        if not args.quiet:
            print("manifest verified: re-run reproduces every deterministic file")
    if not args.quiet:
        print(json.dumps({"command": args.command, "exit": code, **summary}, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
