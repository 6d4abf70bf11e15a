import json
import textwrap
from pathlib import Path

import pytest

from orbitlimit.cli import EXIT_CERTIFICATE, EXIT_ERROR, EXIT_OK, main

CONFIGS = Path(__file__).parents[1] / "configs"


def run(name, out):
    code = main(["run", str(CONFIGS / f"{name}.yaml"), "--output-dir", str(out)])
    return code, json.loads((out / f"{name}.json").read_text())


@pytest.mark.parametrize("name", ["harmonic_orbit", "sphere_stability", "sphere_action", "mane_torus",
                                  "mane_magnetic"])
def test_quick_configs_pass(tmp_path, name):
    code, report = run(name, tmp_path)
    assert code == EXIT_OK and report["pass"]
    assert (tmp_path / f"{name}.meta.json").exists()


def test_mane_values(tmp_path):
    _, torus = run("mane_torus", tmp_path)
    _, mag = run("mane_magnetic", tmp_path)
    assert torus["c"] == pytest.approx(1.5, abs=1e-6)
    assert mag["c"] == pytest.approx(0.5, abs=1e-3)


def test_synthetic_violation_exits_with_certificate_failure(tmp_path, capsys):
    code, report = run("synthetic_violation", tmp_path)
    assert code == EXIT_CERTIFICATE
    assert not report["pass"] and report["failure"]
    assert "certificate failure" in capsys.readouterr().out


def test_continue_config(tmp_path):
    code, report = run("anisotropic_continue", tmp_path)
    assert code == EXIT_OK and report["pass"]
    assert report["kappa"]["kappa"] == pytest.approx(2.5, rel=1e-6)
    csv = (tmp_path / "anisotropic_continue.csv").read_text().splitlines()
    assert csv[0].startswith("sigma,tau")


def test_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("harmonic_orbit", a)
    run("harmonic_orbit", b)
    assert (a / "harmonic_orbit.json").read_bytes() == (b / "harmonic_orbit.json").read_bytes()


def test_schema_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(textwrap.dedent("""
        system: {n: 1, hamiltonian: "q1^2 + p1^2 - 1", sigma_range: [0, 2]}
        task: {kind: find-orbit, seed_point: [1, 0], tau_guess: 3}
    """))
    assert main(["run", str(p)]) == EXIT_ERROR
    assert "system.sigma_range" in capsys.readouterr().err
    assert main(["validate", str(p)]) == EXIT_ERROR


def test_degenerate_stabilizer_fails_stability(tmp_path, capsys):
    # X along the Hamiltonian vector field is tangent to the level: dH(X) = 0
    p = tmp_path / "tangent.yaml"
    p.write_text(textwrap.dedent("""
        system: {n: 1, hamiltonian: "0.5*(q1^2 + p1^2) - 0.5", stabilizer: ["p1", "-q1"]}
        task: {kind: check-stability, seed_point: [1, 0], tau_guess: 6}
    """))
    code = main(["run", str(p), "--output-dir", str(tmp_path)])
    assert code == EXIT_CERTIFICATE
    assert not json.loads((tmp_path / "tangent.json").read_text())["pass"]


def test_validate_prints_ok(capsys):
    assert main(["validate", str(CONFIGS / "harmonic_orbit.yaml")]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("ok\n") and "find-orbit" in out


def test_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_ERROR
