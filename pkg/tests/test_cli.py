from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from dynkinlab import cli
from dynkinlab.config import (
    DEFAULT_TOLERANCES,
    Pipeline,
    list_examples,
    parse_config,
    scenario_from_dict,
)
from dynkinlab.errors import NoConvergence, ParseError, ValidationError
from dynkinlab.runner import COLUMNS, emit_report, run_scenario

GOLDEN = Path(__file__).parent / "golden"
EXAMPLES = [p.stem for p in list_examples()]

MINIMAL = """\
name: minimal
pipeline: Game
lattice: {T: 1, N: 3, mode: FullTree}
generator: {family: KappaAbs, kappa: 0.5}
barriers:
  lower: {form: affine, a0: 1.0, a1: 0.2}
  upper: {form: affine, a0: 2.0, a1: 0.2}
"""


def write(tmp_path, text, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_minimal_config_defaults(tmp_path):
    sc = parse_config(write(tmp_path, MINIMAL))
    assert sc.pipeline is Pipeline.GAME
    assert sc.lattice.steps == 3 and sc.lattice.horizon == 1.0
    assert sc.tolerances == DEFAULT_TOLERANCES
    assert sc.schedule == [1.0, 2.0, 4.0, 8.0]
    assert sc.seed == 0
    again = scenario_from_dict(sc.echo())
    assert again.echo() == sc.echo()


def test_lower_above_upper(tmp_path):
    text = MINIMAL.replace("a0: 2.0", "a0: 0.5")
    with pytest.raises(ValidationError) as exc:
        parse_config(write(tmp_path, text))
    assert exc.value.key == "barriers"
    assert exc.value.rule == "L <= U"


def test_enumeration_cap(tmp_path):
    text = MINIMAL.replace("pipeline: Game", "pipeline: GameVerify").replace("N: 3", "N: 6")
    with pytest.raises(ValidationError) as exc:
        parse_config(write(tmp_path, text))
    assert exc.value.key == "lattice" and "enumeration cap" in exc.value.rule


def test_parse_error_reports_line(tmp_path):
    with pytest.raises(ParseError) as exc:
        parse_config(write(tmp_path, "name: x\nlattice: {T: 1\npipeline: Game\n"))
    assert exc.value.line is not None


@pytest.mark.parametrize("edit, key", [
    (("family: KappaAbs", "family: Quadratic"), "generator.family"),
    (("kappa: 0.5", "kappa: -1"), "generator.kappa"),
    (("mode: FullTree", "mode: Trinomial"), "lattice.mode"),
    (("T: 1", "T: 0"), "lattice.T"),
    (("N: 3", "N: 13"), "lattice"),
    (("name: minimal", "name: ''"), "name"),
    (("pipeline: Game", "pipeline: Game\nextra: 1"), "extra"),
    (("form: affine, a0: 1.0", "form: cubic, a0: 1.0"), "barriers.lower.form"),
])
def test_validation_names_key(tmp_path, edit, key):
    with pytest.raises(ValidationError) as exc:
        parse_config(write(tmp_path, MINIMAL.replace(*edit)))
    assert exc.value.key == key


def test_pipeline_requirements(tmp_path):
    bsde = MINIMAL.replace("pipeline: Game", "pipeline: Bsde")
    with pytest.raises(ValidationError, match="terminal"):
        parse_config(write(tmp_path, bsde))
    yz = MINIMAL.replace("family: KappaAbs, kappa: 0.5", "family: LinearYZ, a: 0.3, b: 0.1")
    with pytest.raises(ValidationError) as exc:
        parse_config(write(tmp_path, yz))
    assert exc.value.key == "generator"
    constrained = MINIMAL.replace("pipeline: Game", "pipeline: Constrained")
    with pytest.raises(ValidationError) as exc:
        parse_config(write(tmp_path, constrained))
    assert exc.value.key == "barriers.bound"


def test_step_condition_is_a_config_error(tmp_path):
    text = MINIMAL.replace("kappa: 0.5", "kappa: 4")
    with pytest.raises(ValidationError) as exc:
        parse_config(write(tmp_path, text))
    assert exc.value.key == "lattice" and "N >=" in exc.value.rule


def test_overrides(tmp_path):
    path = write(tmp_path, MINIMAL)
    sc = parse_config(path, ["lattice.N=4", "tolerances.saddle=1e-9", "seed=11"])
    assert sc.lattice.steps == 4
    assert sc.tolerances["saddle"] == 1e-9
    assert sc.seed == 11
    with pytest.raises(ValidationError):
        parse_config(path, ["lattice.N"])


def test_shipped_examples_validate():
    assert "annotated_example" in EXAMPLES
    for name in EXAMPLES:
        assert parse_config(name).name == name


def test_annotated_example_mentions_every_key():
    text = (list_examples()[0].parent / "annotated_example.yaml").read_text()
    for key in ["name:", "pipeline:", "seed:", "lattice:", "generator:", "constraint:", "barriers:", "bound:",
                "increasing_lower:", "terminal:", "schedule:", "penalties:", "sequence:", "tolerances:", "sweeps:"]:
        assert key in text
    for tol in DEFAULT_TOLERANCES:
        assert f"{tol}:" in text


def test_cli_run_writes_reports(tmp_path, capsys):
    out = tmp_path / "rep"
    code = cli.main(["run", "trivial_constant_game", "--out", str(out)])
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == ["summary.json", "values.csv"]
    header = (out / "values.csv").read_text().splitlines()[0]
    assert header == ",".join(COLUMNS)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["outputs"]["value_root"] == 1.0
    assert all(c["passed"] for c in summary["checks"])
    assert "PASS" in capsys.readouterr().out


def test_cli_failing_check_still_writes(tmp_path):
    out = tmp_path / "rep"
    assert cli.main(["run", "continuity_harmonic", "--out", str(out)]) == 1
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "fail"
    assert (out / "values.csv").exists()


def test_cli_config_error(tmp_path):
    path = write(tmp_path, MINIMAL.replace("N: 3", "N: -2"))
    assert cli.main(["run", str(path), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["validate", str(path)]) == 2
    assert cli.main(["validate", str(tmp_path / "missing.yaml")]) == 2
    assert not (tmp_path / "x").exists()


def test_cli_numerical_error(tmp_path, monkeypatch):
    def boom(sc):
        raise NoConvergence("forced")
    monkeypatch.setattr(cli, "run_scenario", boom)
    assert cli.main(["run", "trivial_constant_game", "--out", str(tmp_path)]) == 3


def test_cli_validate_and_list(capsys):
    assert cli.main(["validate", "kappa_game_verify"]) == 0
    assert cli.main(["list-examples"]) == 0
    assert capsys.readouterr().out.split()[-len(EXAMPLES):] == EXAMPLES


def test_cli_seed_override(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["run", "bsde_kappa", "--out", str(a), "--seed", "99"])
    cli.main(["run", "bsde_kappa", "--out", str(b), "--override", "seed=99"])
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    assert json.loads((a / "summary.json").read_text())["scenario"]["seed"] == 99


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dynkinlab", "validate", "bsde_kappa"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr


def test_exit_code_tracks_checks(tmp_path):
    report = run_scenario(parse_config("kappa_game_verify"))
    assert emit_report(report, tmp_path / "ok") == 0
    report.checks[0].passed = False
    assert emit_report(report, tmp_path / "bad") == 1


def test_zero_constraint_pipeline_matches_game():
    constrained = run_scenario(parse_config("constrained_zero_phi"))
    game = run_scenario(parse_config("constrained_zero_phi", ["pipeline=Game"]))
    assert constrained.outputs["value_estimate"] == game.outputs["value_root"]


@pytest.mark.parametrize("name", EXAMPLES)
def test_golden_reports(name, tmp_path):
    code = cli.main(["run", name, "--out", str(tmp_path)])
    for fname in ("values.csv", "summary.json"):
        assert (tmp_path / fname).read_bytes() == (GOLDEN / name / fname).read_bytes(), fname
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert code == (0 if summary["status"] == "pass" else 1)
