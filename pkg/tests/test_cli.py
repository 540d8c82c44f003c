import json

import pytest

from igabem.cli import ConfigError, build_parser, main, parse_config, parse_levels


class TestConfig:
    def test_grammar(self):
        cfg = parse_config("""
            # benchmark
            degree = 2
            levels = 0..3   # inclusive
            solver.tol = 1e-8
            deterministic = yes
            material = saturation
            material.nu_min = 0.6
        """)
        assert cfg == {"degree": 2, "levels": "0..3", "solver.tol": 1e-8, "deterministic": True,
                       "material": "saturation", "material.nu_min": 0.6}

    @pytest.mark.parametrize("text", ["degree 2", "colour = red", "deterministic = maybe", "degree = two"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_config(text)

    def test_unknown_key_is_config_error(self):
        with pytest.raises(ConfigError):
            parse_config("colour = red")

    @pytest.mark.parametrize("text,expect", [("0..3", (0, 1, 2, 3)), ("1,2,4", (1, 2, 4)), ("2", (2,))])
    def test_levels(self, text, expect):
        assert parse_levels(text) == expect


class TestParser:
    def test_requires_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_bad_gauge(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["solve", "--gauge", "lorenz"])


def test_solve_summary(tmp_path, capsys):
    out = tmp_path / "s.json"
    log = tmp_path / "it.csv"
    assert main(["solve", "--degree", "1", "--level", "0", "--out", str(out), "--log-iterations", str(log)]) == 0
    summary = json.loads(out.read_text())
    assert summary == json.loads(capsys.readouterr().out)
    assert summary["level"] == 0 and summary["max_exterior_error"] < 0.05
    assert log.read_text().startswith("kind,index,value")


def test_solve_from_config_with_override(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("degree = 1\nlevel = 0\nsolver.gauge = epsilon-regularization\nnpoints = 4\n")
    assert main(["solve", "--config", str(cfg), "--npoints", "6"]) == 0
    assert json.loads(capsys.readouterr().out)["dofs_bem"] == 7


def test_solve_nonlinear(capsys):
    assert main(["solve", "--degree", "1", "--level", "0", "--material", "saturation"]) == 0
    assert json.loads(capsys.readouterr().out)["picard_iterations"] >= 2


def test_study_requires_out(capsys):
    assert main(["study", "--degree", "1", "--levels", "0"]) == 2
    assert "--out" in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("radius = far\n")
    assert main(["solve", "--config", str(cfg)]) == 2


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_study_deterministic(tmp_path, fmt):
    # same invocation twice; the JSON echo contains the output path
    path = tmp_path / f"r.{fmt}"
    runs = []
    for _ in range(2):
        assert main(["study", "--degree", "1", "--levels", "0..1", "--format", fmt, "--out", str(path)]) == 0
        runs.append(path.read_bytes())
    assert runs[0] == runs[1]


def test_study_dump_operators(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["study", "--degree", "1", "--levels", "0", "--out", str(out),
                 "--dump-operators", str(tmp_path / "ops")]) == 0
    assert any((tmp_path / "ops").rglob("*"))


def test_verify_suite(capsys):
    assert main(["verify", "--suite", "potential"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and all(line.startswith("PASS") for line in lines)
