import csv
import hashlib
import io
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import CONFIGS, ROOT
from schedsgd.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, SEED_ENV, main
from schedsgd.config import load_config, parse_config
from schedsgd.errors import ConfigError


def cfg(name):
    return os.path.join(CONFIGS, name)


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_json(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2))
    return str(p)


def base_doc(**plan):
    doc = json.loads(open(cfg("casei.json")).read())
    doc["plan"].update(plan)
    doc["run"]["seeds"] = 5
    return doc


# -- schedule ---------------------------------------------------------------


def test_schedule_warmup_shape(capsys):
    code, out, _ = run_cli(capsys, "schedule", "--config", cfg("warmup.json"), "--format", "csv")
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    eta = np.array([float(r["eta"]) for r in rows])
    peak = int(np.argmax(eta))
    assert 0 < peak < len(eta) - 1
    assert np.all(np.diff(eta[: peak + 1]) >= 0)
    assert np.all(np.diff(eta[peak:]) <= 0)
    b = np.array([int(r["b"]) for r in rows])
    assert np.all(np.diff(b) >= 0)


def test_schedule_json_and_every(capsys, tmp_path):
    out_dir = str(tmp_path / "o")
    code, _, _ = run_cli(
        capsys, "schedule", "--config", cfg("caseiii.json"), "--format", "json", "--every", "10", "--out", out_dir
    )
    assert code == EXIT_OK
    doc = json.loads(open(os.path.join(out_dir, "schedule.json")).read())
    assert doc["case"] == "CaseIII" and doc["t"][:3] == [0, 10, 20]
    assert doc["validation"]["ok"]
    man = json.loads(open(os.path.join(out_dir, "manifest.json")).read())
    data = open(os.path.join(out_dir, "schedule.json"), "rb").read()
    assert man["files"] == [
        {"file": "schedule.json", "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}
    ]


# -- bounds / constants / enumerate -----------------------------------------


def test_bounds_cosine_pass(capsys):
    code, out, _ = run_cli(capsys, "bounds", "--config", cfg("cosine.json"))
    assert code == EXIT_OK
    row = next(line for line in out.splitlines() if line.startswith("B_T"))
    assert row.split()[-1] == "pass"


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIGS)))
def test_bounds_every_config(capsys, name):
    code, _, _ = run_cli(capsys, "bounds", "--config", cfg(name), "--format", "json")
    assert code == EXIT_OK


def test_bounds_json_fields(capsys, tmp_path):
    out_dir = str(tmp_path)
    code, _, _ = run_cli(capsys, "bounds", "--config", cfg("caseii.json"), "--format", "json", "--out", out_dir)
    assert code == EXIT_OK
    rep = json.loads(open(os.path.join(out_dir, "bounds_caseii.json")).read())
    assert rep["B_exact"] <= rep["B_bound"] and rep["V_exact"] <= rep["V_bound"]
    assert rep["dominated"]["B"] and rep["dominated"]["V"]


def test_bounds_control_has_no_closed_form(capsys):
    code, out, _ = run_cli(capsys, "bounds", "--config", cfg("control.json"))
    assert code == EXIT_OK
    assert "note:" in out


@pytest.mark.parametrize("cmd", ["constants", "dump-constants"])
def test_constants(capsys, cmd):
    code, out, _ = run_cli(capsys, cmd, "--config", cfg("toy4.json"), "--format", "json")
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["certificate"]["sigma2"] == 1.25
    assert doc["certificate"]["sigma2_flag"] == "exact"
    assert doc["run_constants"]["L_bar"] == 1.0


def test_enumerate(capsys):
    code, out, _ = run_cli(capsys, "enumerate", "--config", cfg("toy4.json"), "--b", "2", "--format", "json")
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["batches"] == 16
    assert doc["variance"] == pytest.approx(0.625, rel=1e-12)
    assert doc["unbiased"] and doc["variance_within_bound"]


def test_enumerate_too_large(capsys):
    code, _, err = run_cli(capsys, "enumerate", "--config", cfg("caseii.json"), "--b", "4")
    assert code == EXIT_USAGE and "exceeds" in err


# -- run / verify / sweep ---------------------------------------------------


def test_run_writes_trace(capsys, tmp_path):
    code, _, _ = run_cli(capsys, "run", "--config", cfg("caseii.json"), "--seed", "3", "--stream", "1", "--out", str(tmp_path))
    assert code == EXIT_OK
    names = set(os.listdir(tmp_path))
    assert names == {"trace_CaseII_s3_r1.csv", "manifest.json"}
    head = open(tmp_path / "trace_CaseII_s3_r1.csv").readline().strip()
    assert head == "t,eta,b,grad_norm2,loss,subopt"


def test_seed_resolution(capsys, monkeypatch, tmp_path):
    doc = base_doc()
    del doc["run"]["seed"]
    path = write_json(tmp_path, doc)
    monkeypatch.setenv(SEED_ENV, "17")
    code, out_env, _ = run_cli(capsys, "run", "--config", path, "--format", "json")
    assert code == EXIT_OK and json.loads(out_env)["seed"] == 17
    code, out_flag, _ = run_cli(capsys, "run", "--config", path, "--format", "json", "--seed", "4")
    assert json.loads(out_flag)["seed"] == 4
    monkeypatch.delenv(SEED_ENV)
    code, out_default, _ = run_cli(capsys, "run", "--config", path, "--format", "json")
    assert json.loads(out_default)["seed"] == 0
    monkeypatch.setenv(SEED_ENV, "seventeen")
    code, _, err = run_cli(capsys, "run", "--config", path)
    assert code == EXIT_USAGE and SEED_ENV in err


def test_verify_caseii(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "verify", "--config", cfg("caseii.json"), "--seeds", "100", "--out", str(tmp_path))
    assert code == EXIT_OK
    reps = json.loads(open(tmp_path / "verdicts.json").read())
    assert len(reps) == 1 and reps[0]["verdict"] == "pass" and reps[0]["seeds"] == 100
    assert "verdict" in out


def test_verify_exit_one_on_failure(capsys, tmp_path):
    # eta = 3 on a unit-curvature quadratic diverges, which fails the check
    doc = base_doc(lr={"family": "constant", "eta_max": 3.0})
    code, out, _ = run_cli(capsys, "verify", "--config", write_json(tmp_path, doc))
    assert code == EXIT_FAIL
    assert "fail" in out


def test_verify_control_vacuous(capsys, tmp_path):
    doc = json.loads(open(cfg("control.json")).read())
    doc["plan"]["epochs_per_block"] = [20]
    code, out, _ = run_cli(capsys, "verify", "--config", write_json(tmp_path, doc), "--seeds", "5")
    assert code == EXIT_OK
    assert "vacuous-pass" in out and "divergent bound" in out


def test_sweep_jobs_identical(capsys, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli(capsys, "sweep", "--config", cfg("sweep.json"), "--jobs", "1", "--out", a)[0] == EXIT_OK
    assert run_cli(capsys, "sweep", "--config", cfg("sweep.json"), "--jobs", "3", "--out", b)[0] == EXIT_OK
    for f in ("aggregate.csv", "verdicts.json", "manifest.json"):
        assert open(os.path.join(a, f), "rb").read() == open(os.path.join(b, f), "rb").read()


# -- usage and config errors ------------------------------------------------


def test_usage_errors(capsys):
    assert run_cli(capsys)[0] == EXIT_USAGE
    assert run_cli(capsys, "bounds")[0] == EXIT_USAGE
    assert run_cli(capsys, "frobnicate", "--config", cfg("casei.json"))[0] == EXIT_USAGE
    assert run_cli(capsys, "verify", "--config", cfg("casei.json"), "--seeds", "0")[0] == EXIT_USAGE
    assert run_cli(capsys, "verify", "--config", cfg("casei.json"), "--jobs", "0")[0] == EXIT_USAGE
    assert run_cli(capsys, "bounds", "--config", "/no/such/file.json")[0] == EXIT_USAGE


def test_malformed_json_is_line_anchored(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "spec_version": 1,\n  "name": "x",\n  "problem": {,\n}\n')
    code, _, err = run_cli(capsys, "bounds", "--config", str(p))
    assert code == EXIT_USAGE
    assert f"{p}:4:" in err


def test_semantic_error_is_line_anchored(capsys, tmp_path):
    doc = base_doc()
    doc["plan"]["bs"]["b0"] = -3
    path = write_json(tmp_path, doc)
    code, _, err = run_cli(capsys, "schedule", "--config", path)
    assert code == EXIT_USAGE
    line = next(i for i, l in enumerate(open(path).read().splitlines(), 1) if '"b0"' in l)
    assert f"{path}:{line}:" in err


def test_unknown_key_is_line_anchored(capsys, tmp_path):
    doc = base_doc()
    doc["problem"]["lamda"] = 2.0
    path = write_json(tmp_path, doc)
    code, _, err = run_cli(capsys, "bounds", "--config", path)
    assert code == EXIT_USAGE and "lamda" in err
    line = next(i for i, l in enumerate(open(path).read().splitlines(), 1) if '"lamda"' in l)
    assert f":{line}:" in err


def test_spec_version_required(tmp_path):
    doc = base_doc()
    doc["spec_version"] = 2
    with pytest.raises(ConfigError):
        load_config(write_json(tmp_path, doc))
    del doc["spec_version"]
    with pytest.raises(ConfigError):
        load_config(write_json(tmp_path, doc))


def test_rejected_plan_is_usage_error(capsys, tmp_path):
    doc = base_doc(
        lr={"family": "exponential_growth", "eta0": 0.1, "gamma": 1.5},
        bs={"family": "exponential_growth", "b0": 1, "delta": 2},
        epochs_per_block=[1, 1],
    )
    code, _, err = run_cli(capsys, "bounds", "--config", write_json(tmp_path, doc))
    assert code == EXIT_USAGE and "gamma" in err.lower()


def test_parse_config_string():
    text = open(cfg("toy4.json")).read()
    c = parse_config(text, source="toy4.json")
    assert c.problem.n == 4 and c.plan_names == ["toy4"]


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "schedsgd", "constants", "--config", cfg("toy4.json"), "--format", "json"],
        capture_output=True,
        text=True,
        cwd=ROOT,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["certificate"]["sigma2"] == 1.25
