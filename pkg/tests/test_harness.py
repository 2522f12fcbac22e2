import csv
import json
import re
import subprocess
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvbsde import cli, harness
from mvbsde import monotone_ops as mo
from mvbsde.config import ExperimentConfig, set_path
from mvbsde.errors import ConfigError
from mvbsde.presets import EXPERIMENTS

DOCS = Path(__file__).resolve().parents[1] / "docs" / "config.md"


def small(preset, *extra):
    return ExperimentConfig.resolve(preset, overrides=["particles=2000", "grid.n_steps=20", *extra])


def test_hash_is_git_blob_sha1(tmp_path):
    cfg = ExperimentConfig.resolve("heat-moment")
    path = tmp_path / "c.toml"
    path.write_text(cfg.to_toml(), encoding="utf-8")
    git = subprocess.run(["git", "hash-object", str(path)], capture_output=True, text=True, check=True)
    assert git.stdout.strip() == cfg.hash


def test_round_trip_every_preset():
    for name in EXPERIMENTS:
        cfg = ExperimentConfig.resolve(name)
        again = ExperimentConfig.from_toml(cfg.to_toml())
        assert again == cfg and again.hash == cfg.hash and again.data == cfg.data


@settings(max_examples=50, deadline=None)
@given(eps=st.floats(1e-4, 1.0), n=st.integers(2, 10**6), seed=st.integers(0, 2**63 - 1),
       name=st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=12))
def test_round_trip_with_overrides(eps, n, seed, name):
    cfg = ExperimentConfig.resolve("constrained-sweep", overrides=[f"penalty.eps={eps!r}", f"particles={n}",
                                                                  f"seed={seed}"])
    cfg.data["outputs"]["dir"] = name
    cfg = ExperimentConfig(cfg.data)
    assert ExperimentConfig.from_toml(cfg.to_toml()) == cfg


def test_hash_changes_with_content():
    a = ExperimentConfig.resolve("heat-moment")
    b = ExperimentConfig.resolve("heat-moment", overrides=["seed=1"])
    assert a.hash != b.hash


def test_override_parsing():
    d = set_path({}, "a.b=3")
    assert d == {"a": {"b": 3}}
    assert set_path({}, "x=[1.0, 2.5]")["x"] == [1.0, 2.5]
    assert set_path({}, "x=bump")["x"] == "bump"
    assert set_path({}, 'x="inf"')["x"] == "inf"
    assert set_path({}, "x={kind=\"zero\"}")["x"] == {"kind": "zero"}
    with pytest.raises(ConfigError):
        set_path({}, "novalue")


def test_invalid_configs():
    with pytest.raises(ConfigError):
        ExperimentConfig.resolve(overrides=["bogus=1"])
    with pytest.raises(ConfigError):
        ExperimentConfig.resolve(text="task = [")
    with pytest.raises(ConfigError):
        ExperimentConfig.resolve(overrides=["task=\"fly\""])
    with pytest.raises(ConfigError):
        ExperimentConfig.resolve(overrides=["seed=-1"])
    with pytest.raises(ConfigError):
        ExperimentConfig.resolve("nope")


def test_docs_examples_resolve():
    text = DOCS.read_text(encoding="utf-8")
    blocks = re.findall(r"```toml\n(.*?)```", text, flags=re.S)
    assert blocks
    for block in blocks:
        ExperimentConfig.resolve(text=block)


def test_heat_moment_run(tmp_path):
    code, summary = harness.run(ExperimentConfig.resolve("heat-moment"), tmp_path)
    assert code == 0
    assert abs(summary["u0"] - 1.0) <= max(3 * summary["u0_stderr"], 5e-2)
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk["config_hash"] == ExperimentConfig.load(tmp_path / "config.toml").hash
    for name in ("paths.csv", "solution.csv", "summary.json", "config.toml"):
        assert (tmp_path / name).exists()


def test_sweep_run_reports_rate(tmp_path):
    code, summary = harness.run(small("constrained-sweep"), tmp_path)
    assert code == 0 and summary["eps_rate"] is not None and summary["eps_rate"] > 0
    with open(tmp_path / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["eps"]) for r in rows] == [0.2, 0.1, 0.05, 0.025]


def test_degenerate_operator_exit_2(tmp_path):
    cfg = ExperimentConfig.resolve("heat-moment", overrides=['operator={kind="normal_cone_interval", lo=1, hi=1}'])
    code, err = harness.run(cfg, tmp_path)
    assert code == 2 and err["error"] == "DegenerateDomain"
    assert json.loads((tmp_path / "error.json").read_text())["error"] == "DegenerateDomain"
    assert not (tmp_path / "summary.json").exists()


def test_terminal_outside_domain_exit_2(tmp_path):
    cfg = small("constrained-sweep", 'terminal={preset="identity"}')
    code, err = harness.run(cfg, tmp_path)
    assert code == 2 and err["error"] == "ValidationError"


def test_numerical_failure_exit_3(tmp_path):
    cfg = ExperimentConfig.resolve("mean-field-ode", overrides=["driver.kappa=40.0", "grid.n_steps=200"])
    code, err = harness.run(cfg, tmp_path)
    assert code == 3 and err["error"] == "PicardDiverged"


def test_csv_is_rfc4180(tmp_path):
    harness.run(small("heat-moment"), tmp_path)
    raw = (tmp_path / "solution.csv").read_bytes()
    assert raw.count(b"\r\n") == raw.count(b"\n")
    with open(tmp_path / "solution.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["step", "t"] and len(rows) == 22
    float(rows[1][3])


def test_compare_artifacts_are_deterministic(tmp_path):
    cfg = small("constrained-compare", "compare.x=[-1.0, 0.0, 1.0]", "compare.n_x=201")
    for sub in ("a", "b"):
        assert harness.run(cfg, tmp_path / sub)[0] == 0
    for name in ("compare.csv", "plot.svg", "summary.json", "paths.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    svg = (tmp_path / "a" / "plot.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg and "href=\"http" not in svg


def test_validate_operators_passes_and_is_deterministic():
    a = harness.validate_operators(2000, seed=5)
    b = harness.validate_operators(2000, seed=5)
    assert a["passed"] and a == b
    assert set(a["kinds"]) == set(mo.shipped_operators())


class WrongResolvent(mo.NormalConeInterval):
    """Returns the clipped point scaled by 1.5: neither nonexpansive nor in the graph."""

    def resolvent(self, eps, x):
        return 1.5 * super().resolvent(eps, x)


def test_broken_operator_is_named():
    report = harness.validate_operators(500, operators={"broken": WrongResolvent(-1.0, 1.0)})
    assert not report["passed"]
    failed = report["kinds"]["broken"]["failed"]
    assert "nonexpansive" in failed and "graph_membership" in failed
    assert {f["invariant"] for f in report["failures"]} == set(failed)


def test_cli_validate_operators(tmp_path, capsys):
    assert cli.main(["validate-operators", "--samples", "1e3", "--out", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["passed"]
    assert "subdiff_abs" in capsys.readouterr().out


def test_cli_flags_reach_the_config(tmp_path):
    code = cli.main(["sweep-epsilon", "--preset", "constrained-sweep", "--set", "particles=1000",
                     "--set", "grid.n_steps=10", "--eps-sweep", "0.4,0.2,0.1", "--basis", "poly:3",
                     "--seed", "9", "--picard-tol", "1e-8", "--out", str(tmp_path)])
    assert code == 0
    cfg = ExperimentConfig.load(tmp_path / "config.toml")
    assert cfg["penalty"]["schedule"] == [0.4, 0.2, 0.1]
    assert cfg["basis"]["degree"] == 3 and cfg["seed"] == 9 and cfg["picard"]["tol"] == 1e-8
    assert cfg["task"] == "sweep"


def test_cli_config_file_and_errors(tmp_path, capsys):
    path = tmp_path / "exp.toml"
    path.write_text('particles = 500\n[operator]\nkind = "normal_cone_interval"\nlo = 2.0\nhi = 2.0\n')
    assert cli.main(["run", "--preset", "heat-moment", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "DegenerateDomain" and err["exit_code"] == 2
    assert cli.main(["run", "--set", "bogus=1", "--out", str(tmp_path / "p")]) == 2


def test_probe_continuity_cli(tmp_path):
    code = cli.main(["probe-continuity", "--preset", "mean-field-continuity", "--set", "particles=1000",
                     "--set", "grid.n_steps=10", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "continuity.csv", newline="")))
    assert len(rows) == 3 and all(np.isfinite(float(r["ratio"])) for r in rows)


def test_solve_shortcut_matches_value_query(tmp_path):
    """The reused solution and an explicit value query agree bit for bit."""
    from mvbsde.pvi import evaluate_u

    cfg = small("heat-moment", 'driver={preset="linear", c=0.2, ay=-0.3}')
    code, summary = harness.run(cfg, tmp_path)
    est = evaluate_u(harness.build_model(cfg), 0.0, 0.0)
    assert code == 0 and summary["u0"] == float(est.value[0]) and summary["u0_stderr"] == float(est.std_error[0])
