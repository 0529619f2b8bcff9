import hashlib
import json
import math

import pytest

from ermakov.cli import main
from ermakov.invariants import spiral_radius

SPIRAL_DOC = {
    "system": {"kind": "pseudo_potential", "g": "0", "potential": "1/(2*rbar^2)"},
    "initial_state": {"r": 1.0, "theta": 0.0, "u": 0.0, "v": 1.0},
    "time_span": [0.0, 1.4],
    "integrator": {"method": "dp45", "rtol": 1e-10, "atol": 1e-12},
    "floors": {"r_min": 0.01, "v_min": 0.001},
    "verify": {"samples": 150, "branch": "fixed"},
    "orbit": {"theta_span": [0.0, 1.0]},
}

CLASS2_DOC = {
    "system": {"kind": "class2", "g": "cos(theta)", "psi": "1"},
    "initial_state": {"r": 1.0, "theta": 0.0, "u": 0.2, "v": 1.0},
    "time_span": [0.0, 1.0],
    "verify": {"samples": 100, "casimir_potential": "1/(2*rbar^2)"},
}


def write_config(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=1))
    return path


def run(tmp_path, *argv):
    out = tmp_path / "out"
    return main([*argv, "--out", str(out)]), out


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [[float(x) for x in line.split(",")] for line in lines[1:]]
    return header, rows


def test_simulate_circular_system(tmp_path):
    doc = {
        "system": {"kind": "class1", "g": "0", "phi": "0"},
        "initial_state": {"r": 2.0, "theta": 0.0, "u": 0.0, "v": 1.0},
        "time_span": [0.0, 8.0],
    }
    cfg = write_config(tmp_path, doc)
    code, out = run(tmp_path, "simulate", "--config", str(cfg))
    assert code == 0
    header, rows = read_csv(out / "trajectory.csv")
    assert header == ["t", "r", "theta", "u", "v", "I"]
    assert rows[-1][0] == 8.0
    assert rows[-1][2] == pytest.approx(2.0, abs=1e-10)
    report = json.loads((out / "drift.json").read_text())
    assert report["status"] == "completed"
    assert report["stop_reason"] is None
    assert report["drift"]["I"]["drift"] < 1e-12
    assert report["config_sha256"] == hashlib.sha256(cfg.read_bytes()).hexdigest()
    assert report["conventions"]["I"] == {"lambda_lower_limit": 0.0}


def test_simulate_spiral_matches_the_orbit_formula(tmp_path):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code, out = run(tmp_path, "simulate", "--config", str(cfg))
    assert code == 0
    header, rows = read_csv(out / "trajectory.csv")
    assert header == ["t", "r", "theta", "u", "v", "I", "C1", "C2"]
    for row in rows:
        _, r, theta, _, _, i_val, c1, c2 = row
        assert i_val == pytest.approx(0.5, abs=1e-9)
        assert c1 == pytest.approx(0.5, abs=1e-9)
        assert c2 == pytest.approx(0.0, abs=1e-7)
        assert r == pytest.approx(spiral_radius(0.5, 0.0, theta), abs=1e-6)
    report = json.loads((out / "drift.json").read_text())
    assert report["drift"]["C1"]["drift"] < 1e-8


def test_csv_is_lf_terminated_at_full_precision(tmp_path):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code, out = run(tmp_path, "simulate", "--config", str(cfg))
    assert code == 0
    raw = (out / "trajectory.csv").read_bytes()
    assert b"\r" not in raw
    assert raw.endswith(b"\n")
    # every value must round-trip through its own text
    for line in raw.decode().splitlines()[1:]:
        for text in line.split(","):
            assert "%.17g" % float(text) == text


def test_simulate_reports_a_singular_stop(tmp_path):
    doc = dict(SPIRAL_DOC, time_span=[0.0, 5.0])
    cfg = write_config(tmp_path, doc)
    code, out = run(tmp_path, "simulate", "--config", str(cfg))
    assert code == 0
    report = json.loads((out / "drift.json").read_text())
    assert report["status"] == "singular_stop"
    assert "r_min" in report["stop_reason"]
    assert 1.55 < report["t_final"] < math.pi / 2.0


def test_identical_runs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code_a, out_a = run(tmp_path / "a", "simulate", "--config", str(cfg))
    code_b, out_b = run(tmp_path / "b", "simulate", "--config", str(cfg))
    assert code_a == code_b == 0
    assert (out_a / "trajectory.csv").read_bytes() == (
        out_b / "trajectory.csv"
    ).read_bytes()
    assert (out_a / "drift.json").read_bytes() == (out_b / "drift.json").read_bytes()
    code_c, out_c = run(tmp_path / "c", "verify", "--config", str(cfg), "--which", "jacobi")
    code_d, out_d = run(tmp_path / "d", "verify", "--config", str(cfg), "--which", "jacobi")
    assert code_c == code_d == 0
    assert (out_c / "verify_jacobi.json").read_bytes() == (
        out_d / "verify_jacobi.json"
    ).read_bytes()


def test_verify_jacobi_and_the_tamper_control(tmp_path, capsys):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code, out = run(tmp_path, "verify", "--config", str(cfg), "--which", "jacobi")
    assert code == 0
    assert "PASS" in capsys.readouterr().out
    report = json.loads((out / "verify_jacobi.json").read_text())
    assert report["pass"] is True
    assert report["max_residual"] < 1e-6
    assert report["tampered"] is False
    assert len(report["per_state"]) == 150

    code2, out2 = run(
        tmp_path / "t", "verify", "--config", str(cfg), "--which", "jacobi", "--tamper-j34"
    )
    assert code2 == 1
    assert "FAIL" in capsys.readouterr().out
    report2 = json.loads((out2 / "verify_jacobi.json").read_text())
    assert report2["pass"] is False
    assert report2["max_residual"] > 1e-3


@pytest.mark.parametrize("doc", [SPIRAL_DOC, CLASS2_DOC], ids=("pseudo", "class2"))
def test_verify_flow_reconstruction(tmp_path, doc):
    cfg = write_config(tmp_path, doc)
    code, out = run(tmp_path, "verify", "--config", str(cfg), "--which", "flow")
    assert code == 0
    report = json.loads((out / f"verify_flow.json").read_text())
    assert report["max_residual"] < 1e-10


def test_verify_casimir_depends_on_the_matrix_kind(tmp_path):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code, out = run(tmp_path, "verify", "--config", str(cfg), "--which", "casimir")
    assert code == 0
    report = json.loads((out / "verify_casimir.json").read_text())
    assert report["matrix_kind"] == "class1"
    assert report["max_residual"] < 1e-7

    # same gradients against the nondegenerate class-2 matrix: no Casimirs
    cfg2 = write_config(tmp_path, CLASS2_DOC, "c2.json")
    code2, out2 = run(tmp_path / "x", "verify", "--config", str(cfg2), "--which", "casimir")
    assert code2 == 1
    report2 = json.loads((out2 / "verify_casimir.json").read_text())
    assert report2["matrix_kind"] == "class2"
    assert report2["max_residual"] > 1.0


def test_verify_consistency_and_the_zero_phi_control(tmp_path):
    cfg = write_config(tmp_path, CLASS2_DOC)
    code, _ = run(tmp_path, "verify", "--config", str(cfg), "--which", "consistency")
    assert code == 0

    broken = dict(CLASS2_DOC, verify=dict(CLASS2_DOC["verify"], phi_override="0"))
    cfg2 = write_config(tmp_path, broken, "broken.json")
    code2, out2 = run(tmp_path / "x", "verify", "--config", str(cfg2), "--which", "consistency")
    assert code2 == 1
    report = json.loads((out2 / "verify_consistency.json").read_text())
    assert report["phi_overridden"] is True
    # psi = 1, phi = 0 leaves the full 2/r mismatch, r in [0.5, 3]
    assert report["max_residual"] == pytest.approx(4.0, rel=0.1)


def test_verify_consistency_needs_class2(tmp_path):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code, _ = run(tmp_path, "verify", "--config", str(cfg), "--which", "consistency")
    assert code == 2


def test_verify_determinant_degenerate_case_passes(tmp_path):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code, out = run(tmp_path, "verify", "--config", str(cfg), "--which", "determinant")
    assert code == 0
    report = json.loads((out / "verify_determinant.json").read_text())
    assert report["mode"] == "degenerate"
    assert report["max_residual"] < 1e-10


def test_verify_determinant_quoted_form_disagrees(tmp_path):
    # the quoted class-2 closed form does not match the cofactor
    # determinant, so this sweep fails; the Pfaffian identity holds
    cfg = write_config(tmp_path, CLASS2_DOC)
    code, out = run(tmp_path, "verify", "--config", str(cfg), "--which", "determinant")
    assert code == 1
    report = json.loads((out / "verify_determinant.json").read_text())
    assert report["mode"] == "closed_form"
    assert report["pass"] is False
    assert report["max_residual"] > 1.0
    assert report["pfaffian_identity_max"] < 1e-8


def test_orbit_command_on_the_spiral(tmp_path):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code, out = run(tmp_path, "orbit", "--config", str(cfg))
    assert code == 0
    report = json.loads((out / "orbit.json").read_text())
    assert report["pass"] is True
    assert report["C1"] == pytest.approx(0.5, abs=1e-12)
    assert report["C2"] == pytest.approx(0.0, abs=1e-12)
    assert report["max_orbit_error"] < 1e-6
    assert report["max_time_quadrature_error"] < 1e-5
    assert report["elapsed_quadrature"] == pytest.approx(math.pi / 4.0, abs=1e-5)
    assert report["conventions"]["C2"]["form"] == "closed"


def test_orbit_command_off_the_turning_point(tmp_path):
    doc = dict(
        SPIRAL_DOC,
        initial_state={"r": 1.0, "theta": 0.0, "u": -1.0, "v": 1.0},
        time_span=[0.0, 0.7],
        floors={"r_min": 0.01, "v_min": 0.001},
    )
    cfg = write_config(tmp_path, doc)
    code, out = run(tmp_path, "orbit", "--config", str(cfg))
    assert code == 0
    report = json.loads((out / "orbit.json").read_text())
    assert report["C1"] == pytest.approx(1.0, abs=1e-12)
    assert report["C2"] == pytest.approx(-0.5, abs=1e-12)
    assert report["pass"] is True


def test_orbit_requires_the_singular_oscillator(tmp_path):
    cfg = write_config(tmp_path, CLASS2_DOC)
    code, _ = run(tmp_path, "orbit", "--config", str(cfg))
    assert code == 2


def test_linearize_spiral_curve(tmp_path):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code, out = run(tmp_path, "linearize", "--config", str(cfg))
    assert code == 0
    report = json.loads((out / "linearize.json").read_text())
    assert report["pass"] is True
    assert report["orbit_match"] < 1e-6
    assert report["affinity"]["affine"] is False
    assert report["affinity"]["residual"] > 0.01
    header, rows = read_csv(out / "curve.csv")
    assert header == ["theta", "rbar", "abar"]
    assert rows[0][1] == pytest.approx(1.0)


def test_linearize_detects_a_linear_orbit_equation(tmp_path):
    doc = {
        "system": {"kind": "class1", "g": "0", "phi": "-1/(alpha*r^3)"},
        "initial_state": {"r": 1.0, "theta": 0.0, "u": -0.5, "v": 1.0},
        "time_span": [0.0, 0.4],
    }
    cfg = write_config(tmp_path, doc)
    code, out = run(tmp_path, "linearize", "--config", str(cfg))
    assert code == 0
    report = json.loads((out / "linearize.json").read_text())
    assert report["affinity"]["affine"] is True
    assert report["affinity"]["B"] == pytest.approx(1.0, abs=1e-9)
    assert report["orbit_match"] < 1e-6


def test_linearize_fails_when_theta_turns_back(tmp_path, capsys):
    doc = {
        "system": {"kind": "class1", "g": "1"},
        "initial_state": {"r": 3.0, "theta": 0.0, "u": 0.0, "v": 1.0},
        "time_span": [0.0, 10.0],
        "integrator": {"method": "rk4", "dt": 5.0},
    }
    cfg = write_config(tmp_path, doc)
    code, _ = run(tmp_path, "linearize", "--config", str(cfg))
    assert code == 1
    assert "changes sign" in capsys.readouterr().err


def test_seed_override_is_recorded(tmp_path):
    cfg = write_config(tmp_path, SPIRAL_DOC)
    code, out = run(
        tmp_path, "verify", "--config", str(cfg), "--which", "flow", "--seed", "7"
    )
    assert code == 0
    report = json.loads((out / "verify_flow.json").read_text())
    assert report["seed"] == 7


def test_config_errors_exit_2(tmp_path, capsys):
    bad_expr = dict(SPIRAL_DOC, system={"kind": "pseudo_potential", "g": "cos(", "potential": "rbar"})
    cfg = write_config(tmp_path, bad_expr)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err

    unknown = dict(SPIRAL_DOC, wat=1)
    cfg2 = write_config(tmp_path, unknown, "unknown.json")
    assert main(["simulate", "--config", str(cfg2), "--out", str(tmp_path)]) == 2

    headless = {k: v for k, v in SPIRAL_DOC.items() if k != "initial_state"}
    cfg3 = write_config(tmp_path, headless, "headless.json")
    assert main(["simulate", "--config", str(cfg3), "--out", str(tmp_path)]) == 2

    assert main(["simulate", "--config", str(tmp_path / "absent.json")]) == 2
