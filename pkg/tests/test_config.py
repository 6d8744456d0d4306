import textwrap

import numpy as np
import pytest

from reachloop.config import ConfigError, load_config, parse_config, shipped_config_path, shipped_configs
from reachloop.controllers import LinearController, NeuralController
from reachloop.dynamics import LtiSystem, NonlinearSystem

BASE = textwrap.dedent(
    """\
    name: tiny
    system:
      kind: lti
      A: [[0.0, 1.0], [0.0, 0.0]]
      B: [[0.0], [1.0]]
      delta: 0.1
    sets:
      X0: [[0.0, 1.0], [0.0, 1.0]]
      unsafe: [[5.0, 6.0], [5.0, 6.0]]
      goal: [[-1.0, 2.0], [-1.0, 2.0]]
    controller:
      type: linear
      gain: [0.5, -1.0]
    learner:
      metric: geometric
      alpha: 0.01
      beta: 0.01
    reach:
      T: 10
    """
)


def _err(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "cfg.yaml")
    return info.value


def test_minimal_config_parses():
    cfg = parse_config(BASE, "cfg.yaml")
    assert cfg.name == "tiny" and cfg.horizon == 10
    assert isinstance(cfg.system, LtiSystem)
    assert isinstance(cfg.template, LinearController)
    assert np.array_equal(cfg.template.gain, [0.5, -1.0])
    assert cfg.learn.alpha == 0.01 and cfg.learn.horizon == 10
    assert cfg.sets.goal.bounds() == [[-1.0, 2.0], [-1.0, 2.0]]


def test_unknown_key_reports_line_and_column():
    e = _err(BASE.replace("  alpha: 0.01", "  alpah: 0.01"))
    assert e.line == 16 and e.column == 3
    assert "alpah" in str(e) and "cfg.yaml:16:3" in str(e)


def test_unknown_top_level_key():
    e = _err(BASE + "extra: 1\n")
    assert e.line is not None and "extra" in e.message


def test_yaml_syntax_error_has_position():
    e = _err(BASE.replace("T: 10", "T: [10"))
    assert e.line is not None and e.column is not None


@pytest.mark.parametrize(
    "old, new, words",
    [
        ("T: 10", "T: 0", "T"),
        ("T: 10", "T: 2.5", "T"),
        ("alpha: 0.01", "alpha: -1", "alpha"),
        ("metric: geometric", "metric: hausdorff", "metric"),
        ("gain: [0.5, -1.0]", "gain: [0.5]", "gain"),
        ("X0: [[0.0, 1.0], [0.0, 1.0]]", "X0: [[1.0, 0.0], [0.0, 1.0]]", "X0"),
        ("X0: [[0.0, 1.0], [0.0, 1.0]]", "X0: [[0.0, 1.0]]", "X0"),
        ("unsafe: [[5.0, 6.0], [5.0, 6.0]]", "unsafe: [[0.5, 6.0], [0.5, 6.0]]", "unsafe"),
        ("kind: lti", "kind: pendulum", "kind"),
        ("type: linear", "type: quadratic", "type"),
    ],
)
def test_bad_values_are_rejected_with_position(old, new, words):
    assert old in BASE
    e = _err(BASE.replace(old, new))
    assert e.line is not None
    assert words in str(e)


def test_missing_required_block():
    e = _err(BASE.replace("reach:\n  T: 10\n", ""))
    assert "reach" in str(e)


def test_precondition_must_be_boolean():
    text = BASE.replace("  beta: 0.01\n", "  beta: 0.01\n  precondition: true\n")
    assert parse_config(text, "c").learn.precondition is True
    e = _err(BASE.replace("  beta: 0.01\n", "  beta: 0.01\n  precondition: 3\n"))
    assert "precondition" in str(e)


def test_random_network_init_follows_seed():
    text = BASE.replace(
        "  type: linear\n  gain: [0.5, -1.0]\n",
        "  type: neural\n  layers: [2, 3, 1]\n  activation: tanh\n  init: {low: 0.0, high: 1.0}\n",
    )
    cfg = parse_config(text, "c")
    assert isinstance(cfg.template, NeuralController)
    a = cfg.with_seed(1).template.params()
    b = cfg.with_seed(1).template.params()
    c = cfg.with_seed(2).template.params()
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.all((a >= 0) & (a <= 1))
    assert cfg.with_seed(4).learn.seed == 4


def test_empty_config():
    e = _err("")
    assert e.line == 1


@pytest.mark.parametrize("name", shipped_configs())
def test_every_shipped_config_loads(name):
    cfg = load_config(name)
    assert cfg.name == name
    assert shipped_config_path(name).exists()
    assert not cfg.sets.X0.intersects_box(cfg.sets.unsafe)


def test_shipped_set_is_complete():
    assert set(shipped_configs()) >= {
        "acc_geometric",
        "acc_wasserstein",
        "acc_hybrid",
        "acc_lqr_baseline",
        "oscillator_geometric",
        "oscillator_wasserstein",
    }


def test_benchmark_constants():
    acc = load_config("acc_geometric")
    assert acc.sets.X0.bounds() == [[122.0, 124.0], [48.0, 52.0]]
    assert acc.sets.goal.bounds() == [[145.0, 155.0], [39.5, 40.5]]
    assert acc.horizon == 50 and acc.learn.alpha == acc.learn.beta == 1e-4
    osc = load_config("oscillator_wasserstein")
    assert isinstance(osc.system, NonlinearSystem) and osc.system.gamma == 1.0
    assert osc.sets.X0.bounds() == [[-0.51, -0.49], [0.49, 0.51]]
    assert osc.sets.unsafe.bounds() == [[-0.3, -0.25], [0.2, 0.35]]
    assert osc.sets.goal.bounds() == [[-0.05, 0.05], [-0.05, 0.05]]
    assert osc.horizon == 15 and osc.template.layer_sizes == [2, 2, 1]
    lqr = load_config("acc_lqr_baseline")
    assert np.allclose(lqr.template.gain, [0.3162, -0.6789]) and lqr.template.bias == -12.3


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/dir/cfg.yaml")
