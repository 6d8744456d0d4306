import xml.etree.ElementTree as ET

import numpy as np

from reachloop.controllers import LinearController
from reachloop.dynamics import acc_system
from reachloop.geometry import IntervalBox
from reachloop.learner import ReachAvoidSets
from reachloop.plotting import plot_convergence, plot_flowpipe, plot_summary
from reachloop.reach import Flowpipe, compute_flowpipe

SETS = ReachAvoidSets(IntervalBox([122, 48], [124, 52]), IntervalBox([0, -100], [120, 200]), IntervalBox([145, 39.5], [155, 40.5]))


def _svg(path):
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")
    return root


def test_flowpipe_plot_is_valid_svg(tmp_path):
    fp = compute_flowpipe(acc_system(), LinearController([0.659, -2.377]), SETS.X0, 20)
    out = plot_flowpipe(tmp_path / "fp.svg", fp, SETS, "title", X_I=[SETS.X0], extra=fp)
    root = _svg(out)
    assert len(list(root.iter())) > 50


def test_box_flowpipe_and_png(tmp_path):
    fp = Flowpipe(((IntervalBox([0, 0], [1, 1]),), (IntervalBox([1, 1], [2, 3]), IntervalBox([2, 1], [3, 2]))), 1)
    sets = ReachAvoidSets(IntervalBox([0, 0], [1, 1]), IntervalBox([5, 5], [6, 6]), IntervalBox([2, 2], [3, 3]))
    out = plot_flowpipe(tmp_path / "fp.png", fp, sets)
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_convergence_plot_tolerates_missing_scores(tmp_path):
    hist = [
        {"iter": 1, "d_u": -1.0, "d_g": -3.0, "W_goal": 4.0, "W_unsafe": 1.0},
        {"iter": 2, "d_u": None, "d_g": None, "W_goal": None, "W_unsafe": None},
        {"iter": 3, "d_u": 0.5, "d_g": 0.1, "W_goal": 0.3, "W_unsafe": 2.0},
    ]
    _svg(plot_convergence(tmp_path / "c.svg", hist, "run"))
    _svg(plot_convergence(tmp_path / "empty.svg", []))


def test_summary_plot(tmp_path):
    rows = [
        {"method": "a (geometric)", "runs": 5, "converged": 4, "iterations_mean": 60.0, "iterations_sd": 6.0},
        {"method": "b (wasserstein)", "runs": 5, "converged": 0, "iterations_mean": None, "iterations_sd": None},
    ]
    root = _svg(plot_summary(tmp_path / "s.svg", rows))
    assert len(list(root.iter())) > 20
