import csv
import json

import numpy as np
import pytest

from capflow.cli import main
from capflow.storage import DIAGNOSTIC_COLUMNS


def _write(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return str(path)


@pytest.fixture()
def run_config(tmp_path):
    return _write(tmp_path / "run.json", {
        "flow_kind": "unnormalized_lp",
        "p": 5.0,
        "theta": np.pi / 3,
        "dim": 1,
        "resolution": [65],
        "density": {"kind": "power_of_ell", "q": -4.0},
        "dt_init": 1e-4,
        "max_steps": 500,
        "tol_stationary": 1e-5,
        "initial": {"scale": 1.0, "bump": 0.0},
    })


def test_run_stationary_cap(tmp_path, run_config, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", run_config, "--out", str(out)])
    assert code == 0
    assert "converged" in capsys.readouterr().out
    for name in ("diagnostics.csv", "embedding.csv", "mesh.json",
                 "manifest.json", "final_field.json", "final_field.bin"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outcome"] == "converged"
    assert manifest["origin_in_flat_face"] is True
    assert len(manifest["mesh_fingerprint"]) == 64
    with open(out / "diagnostics.csv") as fh:
        header = next(csv.reader(fh))
    assert header == DIAGNOSTIC_COLUMNS


def test_run_rejects_bad_theta(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.json", {
        "flow_kind": "unnormalized_lp", "p": 5.0, "theta": 1.6, "dim": 1,
        "resolution": [65], "density": {"kind": "constant"},
    })
    code = main(["run", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 64
    assert "(0, pi/2)" in capsys.readouterr().err


def test_run_rejects_bad_json(tmp_path, capsys):
    cfg = tmp_path / "broken.json"
    cfg.write_text('{"flow_kind": "normalized",}')
    code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 64
    assert "line" in capsys.readouterr().err


def test_run_max_steps_exit_code(tmp_path):
    cfg = _write(tmp_path / "short.json", {
        "flow_kind": "normalized", "p": 2.0, "theta": np.pi / 4, "dim": 1,
        "resolution": [49], "density": {"kind": "even_trig", "eps": 0.1},
        "enforce_even": True, "max_steps": 5, "tol_stationary": 1e-12,
        "initial": {"bump": 0.05},
    })
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_solve_and_export_roundtrip(tmp_path):
    cfg = _write(tmp_path / "solve.json", {
        "p": 5.0, "theta": np.pi / 3, "dim": 1, "resolution": [65],
        "density": {"kind": "power_of_ell", "q": -4.0},
        "mode": "unnormalized",
    })
    out = tmp_path / "solved"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outcome"] == "converged"
    assert manifest["final_residuals"]["stationary"] < 1e-5

    exported = tmp_path / "exported"
    assert main(["export", "--checkpoint", str(out / "final_field"),
                 "--format", "csv", "--out", str(exported)]) == 0
    assert (exported / "embedding.csv").exists()
    # checkpoint -> export -> checkpoint is lossless on the payload
    original = (out / "final_field.bin").read_bytes()
    reemitted = (exported / "final_field.bin").read_bytes()
    assert original == reemitted


def test_export_json_format(tmp_path):
    cfg = _write(tmp_path / "solve.json", {
        "p": 5.0, "theta": np.pi / 3, "dim": 1, "resolution": [65],
        "density": {"kind": "power_of_ell", "q": -4.0},
        "mode": "unnormalized",
    })
    out = tmp_path / "s2"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    exported = tmp_path / "e2"
    assert main(["export", "--checkpoint", str(out / "final_field"),
                 "--format", "json", "--out", str(exported)]) == 0
    doc = json.loads((exported / "export.json").read_text())
    assert doc["diagnostics"]["columns"] == DIAGNOSTIC_COLUMNS
    assert len(doc["embedding"]) == 65


def test_export_n1_closed_polyline(tmp_path, run_config):
    out = tmp_path / "o"
    main(["run", "--config", run_config, "--out", str(out)])
    with open(out / "embedding.csv") as fh:
        rows = list(csv.DictReader(fh))
    rho = np.array([float(r["rho"]) for r in rows])
    assert rho[0] == pytest.approx(-np.pi / 3)
    assert rho[-1] == pytest.approx(np.pi / 3)
    assert np.all(np.diff(rho) > 0)
    # both endpoints lie on the support hyperplane: the polyline closes
    # through the flat side
    assert abs(float(rows[0]["X2"])) < 1e-7
    assert abs(float(rows[-1]["X2"])) < 1e-7


def test_verify_unknown_suite(capsys):
    assert main(["verify", "--suite", "nonsense"]) == 64
    assert "unknown suite" in capsys.readouterr().err


def test_random_density_recorded_in_manifest(tmp_path):
    cfg = _write(tmp_path / "rand.json", {
        "flow_kind": "unnormalized_lp", "p": 5.0, "theta": np.pi / 3, "dim": 1,
        "resolution": [65],
        "density": {"kind": "random", "seed": 11, "amplitude": 0.05},
        "max_steps": 200, "tol_stationary": 5e-4,
        "initial": {"bump": 0.0},
    })
    out = tmp_path / "o"
    code = main(["run", "--config", cfg, "--out", str(out)])
    assert code in (0, 2)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["density_seed"] == 11


def test_checkpoint_header_versioned(tmp_path, run_config):
    out = tmp_path / "o"
    main(["run", "--config", run_config, "--out", str(out)])
    header = json.loads((out / "final_field.json").read_text())
    assert header["format_version"] == 1
    assert header["dtype"] == "<f8"
    assert header["meta"]["outcome"] == "converged"


def test_run_resume_from_checkpoint(tmp_path, run_config):
    first = tmp_path / "first"
    assert main(["run", "--config", run_config, "--out", str(first)]) == 0
    resumed = _write(tmp_path / "resume.json", {
        "flow_kind": "unnormalized_lp", "p": 5.0, "theta": np.pi / 3, "dim": 1,
        "resolution": [65], "density": {"kind": "power_of_ell", "q": -4.0},
        "max_steps": 100, "tol_stationary": 1e-5,
        "initial": {"checkpoint": str(first / "final_field")},
    })
    out2 = tmp_path / "second"
    assert main(["run", "--config", resumed, "--out", str(out2)]) == 0
    manifest = json.loads((out2 / "manifest.json").read_text())
    assert manifest["outcome"] == "converged"
    assert manifest["steps"] <= 2  # resumed at the stationary state
