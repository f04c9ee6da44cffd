import json

import numpy as np
import pytest

from nsrkit import cli
from nsrkit import iterate as I


def run(*argv):
    return cli.main(list(argv))


def write(path, text):
    path.write_text(text)
    return str(path)


SMALL_STEP = "[params]\npreset = desk\n[grid]\nn = 32\nnt = 9\n[scenario]\nname = {name}\n[energy]\nprofile = logistic\n"


def test_check_params_writes_schedule(tmp_path):
    out = tmp_path / "cp"
    assert run("check-params", "--out", str(out), "-q") == 0
    sched = json.loads((out / "schedule_q0.json").read_text())
    assert sched
    man = json.loads((out / "manifest.json").read_text())
    assert {e["path"] for e in man["files"]} >= {"constraints.json", "schedule_q0.json"}


def test_verify_geometry_and_manifest_roundtrip(tmp_path, capsys):
    out = str(tmp_path / "geo")
    assert run("verify", "--suite", "geometry", "--out", out, "-q") == 0
    assert json.loads(open(f"{out}/verify_geometry.json").read())["hard_ok"] is True
    assert run("verify", "--suite", "geometry", "--out", out, "--verify-manifest") == 0
    assert "manifest verified" in capsys.readouterr().out


def test_tampered_output_detected(tmp_path):
    out = tmp_path / "geo"
    assert run("verify", "--suite", "geometry", "--out", str(out), "-q") == 0
    with open(out / "verify_geometry.txt", "a") as fh:
        fh.write("x")
    assert run("verify", "--suite", "geometry", "--out", str(out), "--verify-manifest", "-q") == 1


def test_jets_suite_reports_under_resolution(tmp_path):
    out = tmp_path / "jets"
    assert run("verify", "--suite", "jets", "--jets-n", "32", "--out", str(out), "-q") == 1
    rep = json.loads((out / "verify_jets.json").read_text())
    notes = [c["note"] for c in rep["checks"] if c["name"].endswith("_resolution")]
    assert notes and all("under-resolution" in n for n in notes)


def test_malformed_config_is_usage_error(tmp_path):
    cfg = write(tmp_path / "bad.ini", "[params\npreset = desk\n")
    assert run("check-params", "--config", cfg, "--out", str(tmp_path / "o"), "-q") == 2


def test_unknown_preset_and_scenario(tmp_path):
    assert run("check-params", "--config", write(tmp_path / "a.ini", "[params]\npreset = nope\n"), "--out", str(tmp_path / "o")) == 2
    text = "[params]\npreset = desk\n[scenario]\nname = vortex\n"
    assert run("step", "--config", write(tmp_path / "b.ini", text), "--out", str(tmp_path / "o")) == 2


def test_step_without_energy_section(tmp_path):
    cfg = write(tmp_path / "s.ini", "[params]\npreset = desk\n")
    assert run("step", "--config", cfg, "--out", str(tmp_path / "o"), "-q") == 2


def test_missing_suite_argument():
    with pytest.raises(SystemExit) as exc:
        run("verify")
    assert exc.value.code == 2


def test_scaling_needs_three_points(tmp_path):
    cfg = write(tmp_path / "sc.ini", "[params]\npreset = desk\n[sweep]\nlambdas = 1e4, 1e6\n")
    assert run("scaling", "--config", cfg, "--out", str(tmp_path / "o"), "-q") == 2


def test_bad_tolerance_scale(tmp_path):
    assert run("verify", "--suite", "geometry", "--tolerance-scale", "0", "--out", str(tmp_path / "o")) == 2


def test_step_outputs_and_from_file(tmp_path, desk_schedule):
    out = tmp_path / "step"
    cfg = write(tmp_path / "shear.ini", SMALL_STEP.format(name="shear-flow"))
    assert run("step", "--config", cfg, "--out", str(out), "-q") == 0
    for name in ("step.json", "step_checks.csv", "step_traces.csv", "step_traces.png", "step_checks.png", "v_q1_t0.nsrf", "v_q1_t0_slice.csv"):
        assert (out / name).stat().st_size > 0
    st = I.shear_flow_state(desk_schedule, 32, 9)
    npz = tmp_path / "shear.npz"
    np.savez(npz, v=np.stack(st.v), dv_dt=np.stack(st.dv_dt))
    cfg2 = write(tmp_path / "file.ini", SMALL_STEP.format(name="from-file").replace("[energy]", f"file = {npz}\n[energy]"))
    out2 = tmp_path / "file"
    assert run("step", "--config", cfg2, "--out", str(out2), "-q") == 0
    assert (out2 / "step_checks.csv").read_bytes() == (out / "step_checks.csv").read_bytes()
