from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from vortexpatch.cli import fhex, main, sample_rows, unhex
from vortexpatch.fourier import FourierEvenSeries
from vortexpatch.solver import BranchState, make_problem

SMALL = {"J": 12, "N_q": 96, "n_max": 20}


def write_cfg(tmp_path: Path, name: str, **fields) -> Path:
    cfg = {"schema_version": 1, **SMALL, **fields}
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def error_of(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def branch_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("two")
    cfg = write_cfg(d, "c.json", family="two_layer", m=2, b=0.3, solver={"ds": 0.01, "max_steps": 3})
    assert main(["bifurcate", "--config", str(cfg), "--out", str(d / "out")]) == 0
    assert main(["continue", "--config", str(cfg), "--out", str(d / "out")]) == 0
    return d


def test_hex_roundtrip():
    for x in (0.1, -1e-300, np.pi, 8.391550328269203):
        assert unhex(fhex(x)) == x


def test_bifurcate_two_layer(branch_dir):
    cert = json.loads((branch_dir / "out" / "certificate.json").read_text())
    assert cert["parameters"]["theta_plus"] == pytest.approx(0.493625, abs=1e-6)
    assert cert["parameters"]["theta_minus"] == pytest.approx(0.182325, abs=1e-6)
    assert cert["config_hash"] and cert["tool_version"] == "0.1.0"


def test_bifurcate_rejects_large_b(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "c.json", family="two_layer", m=2, b=0.5)
    assert main(["bifurcate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert error_of(capsys)["error"] == "B_TOO_LARGE"
    assert not (tmp_path / "certificate.json").exists()


def test_bifurcate_three_layer(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "c.json", family="three_layer", m=2, b2=0.5, theta2=-5)
    assert main(["bifurcate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["parameters"]["b3"] == pytest.approx(0.172607, rel=1e-4)
    assert cert["theta_star"] == pytest.approx(8.3912, rel=1e-4)
    assert main(["bifurcate", "--config", str(cfg), "--out", str(tmp_path), "--set", "theta2=-3"]) == 2
    assert error_of(capsys)["error"] == "PARAM_WINDOW"


def test_continue_verify_and_corruption(branch_dir, tmp_path, capsys):
    out = branch_dir / "out"
    rec = json.loads((out / "branch.json").read_text())
    assert rec["summary"]["n_states"] == 3
    assert rec["summary"]["stop_reason"] == "max_steps"
    assert main(["verify", str(out / "branch.json")]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and report["config_hash"] == rec["config_hash"]
    csv_text = (out / "branch.csv").read_text()
    assert rec["config_hash"] in csv_text.splitlines()[0]
    # corrupt one coefficient
    rec["states"][1]["coefficients"][0][1] = fhex(unhex(rec["states"][1]["coefficients"][0][1]) + 1e-3)
    bad = tmp_path / "branch.json"
    bad.write_text(json.dumps(rec))
    capsys.readouterr()
    assert main(["verify", str(bad)]) == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["states"][1]["failures"] == ["residual"]
    assert report["states"][0]["passed"]
    assert "FAIL residual" in capsys.readouterr().out


def test_verify_strict(branch_dir, tmp_path):
    assert main(["verify", str(branch_dir / "out" / "branch.json"), "--strict", "4", "--out", str(tmp_path)]) == 0
    r4 = json.loads((tmp_path / "report.json").read_text())
    r2 = json.loads((branch_dir / "out" / "report.json").read_text())
    for a, b in zip(r2["states"], r4["states"]):
        assert abs(a["metrics"]["residual"] - b["metrics"]["residual"]) < 1e-10


def test_io_errors(tmp_path, capsys):
    assert main(["verify", str(tmp_path / "missing.json")]) == 3
    assert error_of(capsys)["error"] == "IO_ERROR"
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    assert main(["verify", str(junk)]) == 3
    assert main(["bifurcate", "--config", str(junk)]) == 3


def test_certificate_mismatch(branch_dir, tmp_path, capsys):
    cfg = write_cfg(tmp_path, "c.json", family="two_layer", m=2, b=0.25, solver={"ds": 0.01, "max_steps": 1})
    code = main(["continue", "--config", str(cfg), "--out", str(tmp_path),
                 "--certificate", str(branch_dir / "out" / "certificate.json")])
    assert code == 2
    assert error_of(capsys)["error"] == "CONFIG_MISMATCH"


def test_determinism(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", family="two_layer", m=2, b=0.3, solver={"ds": 0.01, "max_steps": 2})
    for d in ("a", "b"):
        assert main(["bifurcate", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
        assert main(["continue", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
        assert main(["sample", str(tmp_path / d / "branch.json"), "--grid=-1,1,5,-1,1,5"]) == 0
    for name in ("certificate.json", "branch.json", "branch.csv", "fields.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sample_and_spectrum(branch_dir, tmp_path):
    out = branch_dir / "out"
    assert main(["sample", str(out / "branch.json"), "--state", "0", "--grid=-1.2,1.2,7,-1.2,1.2,7",
                 "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "fields.csv").read_text().splitlines()
    assert lines[0].startswith("# tool_version=")
    assert lines[1] == "kind,x,y,u,v,psi,flagged"
    cfg = write_cfg(tmp_path, "c.json", family="three_layer", m=2, b2=0.5, theta2=-5)
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path), "--n-max", "6"]) == 0
    spec = json.loads((tmp_path / "spectrum.json").read_text())
    assert len(spec["blocks"]) == 6 and abs(spec["blocks"][0]["det"]) < 1e-12


def _radial_state(problem, theta):
    zero = tuple(FourierEvenSeries.zeros(problem.fold, problem.truncation) for _ in range(problem.n_layers))
    return BranchState(0.0, theta, zero, 0.0, {})


def _grid_values(rows):
    pts = np.array([[float(r[1]), float(r[2])] for r in rows if r[0] == "grid" and not r[-1]])
    u = np.array([[float(r[3]), float(r[4])] for r in rows if r[0] == "grid" and not r[-1]])
    return pts, u


def test_sample_physics():
    two = make_problem("two_layer", 2, truncation=8, nodes=128, b=0.3)
    xs = np.linspace(-1.5, 1.5, 13)
    pts, u = _grid_values(sample_rows(two, _radial_state(two, 0.45), xs, xs))
    r = np.round(np.hypot(pts[:, 0], pts[:, 1]), 12)
    speed = np.hypot(u[:, 0], u[:, 1])
    for radius in np.unique(r):
        assert np.ptp(speed[r == radius]) < 1e-12
    three = make_problem("three_layer", 2, truncation=8, nodes=128, b2=0.5, theta2=-5.0)
    pt = three.bifurcation()
    pts, u = _grid_values(sample_rows(three, _radial_state(three, pt.theta_star), xs, xs))
    # trapezoid quadrature is spectrally accurate away from the outer curve
    outside = np.hypot(pts[:, 0], pts[:, 1]) > 1.2
    assert np.max(np.abs(u[outside])) < 1e-12
    # m-fold state: rotation by pi maps u(p) to -u(-p)
    R = (FourierEvenSeries(2, [0.02, 0.004]), FourierEvenSeries(2, [0.01, -0.002]))
    st = BranchState(0.0, 0.45, R, 0.0, {})
    pts, u = _grid_values(sample_rows(two, st, xs, xs))
    idx = {tuple(np.round(p, 12)): k for k, p in enumerate(pts)}
    for k, p in enumerate(pts):
        j = idx[tuple(np.round(-p, 12))]
        np.testing.assert_allclose(u[j], -u[k], atol=1e-10)


def test_nash_moser_mode_cli(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", family="three_layer", m=2, b2=0.5, theta2=-5, J=8, N_q=64,
                    solver={"ds": 0.001, "max_steps": 1})
    assert main(["bifurcate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert main(["continue", "--config", str(cfg), "--out", str(tmp_path), "--mode", "nash-moser"]) == 0
    rec = json.loads((tmp_path / "branch.json").read_text())
    assert rec["mode"] == "nash_moser" and len(rec["nash_moser_traces"]) == 1
    assert main(["verify", str(tmp_path / "branch.json")]) == 0
