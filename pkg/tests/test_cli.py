import json
import subprocess
import sys
import textwrap

import pytest

from reachloop.cli import main
from reachloop.config import shipped_configs
from reachloop.controllers import LinearController
from reachloop.experiments import write_controller

# x1 is pushed straight by the input; the goal lies to the right of X0
SLIDE = textwrap.dedent(
    """\
    name: slide
    system:
      kind: lti
      A: [[0.0, 0.0], [0.0, 0.0]]
      B: [[1.0], [0.0]]
      delta: 0.1
    sets:
      X0: [[0.0, 0.1], [0.0, 1.0]]
      unsafe: [[-10.0, -5.0], [-1.0, 2.0]]
      goal: [[0.9, 5.0], [-1.0, 2.0]]
    controller:
      type: linear
      gain: [0.0, 0.0]
      bias: 0.0
      train_bias: true
    learner:
      metric: wasserstein
      alpha: 0.1
      beta: 0.1
      scale: 0.1
      max_iter: 50
      seed: 0
    reach:
      T: 20
    initset:
      max_depth: 2
    simulate:
      samples: 50
    """
)

# nothing moves and X0 already sits in the goal
STILL = textwrap.dedent(
    """\
    name: still
    system:
      kind: lti
      A: [[0.0, 0.0], [0.0, 0.0]]
      B: [[0.0], [0.0]]
      delta: 0.1
    sets:
      X0: [[0.2, 0.4], [0.2, 0.4]]
      unsafe: [[5.0, 6.0], [5.0, 6.0]]
      goal: [[0.0, 1.0], [0.0, 1.0]]
    controller:
      type: linear
      gain: [0.0, 0.0]
    reach:
      T: 5
    """
)


@pytest.fixture
def slide(tmp_path):
    p = tmp_path / "slide.yaml"
    p.write_text(SLIDE)
    return p


def _run(*argv):
    return main([str(a) for a in argv])


def test_verify_trivial_goal_exits_zero_at_step_zero(tmp_path, capsys):
    cfg = tmp_path / "still.yaml"
    cfg.write_text(STILL)
    out = tmp_path / "v"
    assert _run("verify", "--config", cfg, "--out", out) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["verdict"] == "reach-avoid" and rep["step"] == 0
    for name in ("flowpipe.csv", "plot.svg", "report.json"):
        assert (out / name).stat().st_size > 0
    assert (out / "plot.svg").read_text().lstrip().startswith("<?xml")


def test_verify_lqr_baseline_is_unsafe(tmp_path, capsys):
    assert _run("verify", "--config", "acc_lqr_baseline", "--out", tmp_path / "lqr") == 1
    assert "unsafe" in capsys.readouterr().out


def test_verify_with_controller_file(tmp_path):
    ctrl = tmp_path / "c.txt"
    # hard acceleration closes the gap into the unsafe half-plane
    write_controller(ctrl, LinearController([0.0, 0.0], 50.0))
    assert _run("verify", "--config", "acc_geometric", "--controller", ctrl, "--out", tmp_path / "o") == 1


def test_parse_error_exits_64_with_position(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(SLIDE.replace("  alpha: 0.1", "  alpah: 0.1"))
    assert _run("learn", "--config", bad, "--check") == 64
    err = capsys.readouterr().err
    assert f"{bad}:18:3" in err and "alpah" in err


def test_malformed_controller_exits_64(tmp_path, slide):
    ctrl = tmp_path / "c.txt"
    ctrl.write_text("{not json")
    assert _run("verify", "--config", slide, "--controller", ctrl) == 64


def test_missing_config_exits_64(tmp_path):
    assert _run("verify", "--config", tmp_path / "nope.yaml") == 64


@pytest.mark.parametrize("name", shipped_configs())
def test_shipped_configs_pass_dry_run(name, tmp_path, capsys):
    assert _run("learn", "--config", name, "--check", "--out", tmp_path / "x") == 0
    assert capsys.readouterr().out.strip() == f"ok: {name}"
    # a dry run computes and writes nothing
    assert not (tmp_path / "x").exists()


def test_simulate_is_reproducible(tmp_path):
    ctrl = tmp_path / "c.txt"
    write_controller(ctrl, LinearController([0.3162, -0.6789], -12.3))
    a, b = tmp_path / "a", tmp_path / "b"
    code = _run("simulate", "--config", "acc_lqr_baseline", "--controller", ctrl, "--samples", 200, "--seed", 4, "--out", a)
    _run("simulate", "--config", "acc_lqr_baseline", "--controller", ctrl, "--samples", 200, "--seed", 4, "--out", b)
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    rep = json.loads((a / "report.json").read_text())
    assert code == 1 and rep["safe_rate"] < 1
    assert len(rep["failures"]) == round(200 * (1 - min(rep["safe_rate"], rep["goal_rate"])))


def test_simulate_lqr_rate_matches_published_range(tmp_path):
    assert _run("simulate", "--config", "acc_lqr_baseline", "--samples", 500, "--out", tmp_path) == 1
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["samples"] == 500
    assert rep["safe_rate"] <= 0.9


def test_simulate_huge_gain_is_never_safe(tmp_path):
    ctrl = tmp_path / "c.txt"
    write_controller(ctrl, LinearController([0.0, 0.0], 1e3))
    assert _run("simulate", "--config", "acc_geometric", "--controller", ctrl, "--samples", 50, "--out", tmp_path / "o") == 1
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["safe_rate"] == 0.0 and len(rep["failures"]) == 50


def test_simulate_rejects_zero_samples(tmp_path):
    assert _run("simulate", "--config", "acc_lqr_baseline", "--samples", 0, "--out", tmp_path) == 64


def test_learn_then_verify_round_trip_and_report(tmp_path, slide, capsys):
    runs = tmp_path / "runs"
    out = runs / "seed0"
    assert _run("learn", "--config", slide, "--out", out) == 0
    for name in ("iterations.jsonl", "controller.txt", "xinit.csv", "report.json", "plot.svg", "flowpipe.csv"):
        assert (out / name).exists(), name
    rep = json.loads((out / "report.json").read_text())
    lines = (out / "iterations.jsonl").read_text().splitlines()
    assert len(lines) == rep["iterations"]
    assert {"iter", "d_u", "d_g", "W_goal", "W_unsafe", "grad_u_norm", "verdict", "elapsed_ms"} <= set(json.loads(lines[0]))
    assert rep["empirical"]["safe_rate"] == 1.0 and rep["empirical"]["goal_rate"] == 1.0
    assert _run("verify", "--config", slide, "--controller", out / "controller.txt", "--out", tmp_path / "v") == 0

    capsys.readouterr()
    assert _run("report", runs) == 0
    text = capsys.readouterr().out
    assert "slide (wasserstein)" in text and "± 0.0" in text
    for name in ("summary.txt", "summary.csv", "summary.svg"):
        assert (runs / name).stat().st_size > 0


def test_learn_zero_budget_on_feasible_start(tmp_path):
    cfg = tmp_path / "fast.yaml"
    cfg.write_text(SLIDE.replace("  bias: 0.0\n", "  bias: 1.0\n"))
    assert _run("learn", "--config", cfg, "--max-iter", 0, "--out", tmp_path / "o") == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())["iterations"] == 0


def test_learn_non_convergence_exits_2_with_artifacts(tmp_path, slide):
    assert _run("learn", "--config", slide, "--max-iter", 1, "--out", tmp_path / "o") == 2
    assert (tmp_path / "o" / "controller.txt").exists()
    assert json.loads((tmp_path / "o" / "report.json").read_text())["success"] is False


def test_report_on_empty_directory_lists_expected_files(tmp_path, capsys):
    assert _run("report", tmp_path) == 66
    err = capsys.readouterr().err
    for name in ("report.json", "iterations.jsonl", "controller.txt", "xinit.csv"):
        assert name in err


def test_report_names_missing_artifact(tmp_path, slide, capsys):
    out = tmp_path / "runs" / "r"
    _run("learn", "--config", slide, "--out", out)
    (out / "xinit.csv").unlink()
    assert _run("report", tmp_path / "runs") == 66
    assert "xinit.csv" in capsys.readouterr().err


def test_console_script_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "reachloop.cli", "learn", "--config", "acc_hybrid", "--check"],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert res.returncode == 0 and res.stdout.strip() == "ok: acc_hybrid"
