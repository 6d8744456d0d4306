"""Experiment configuration files.

A config is a YAML document with the blocks ``system``, ``sets``,
``controller``, ``learner``, ``reach`` and optional ``initset``, ``simulate``,
``hybrid`` and ``output``. Unknown keys and ill-typed values are rejected with
the line and column of the offending node.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .controllers import LinearController, NeuralController
from .dynamics import LtiSystem, NonlinearSystem
from .geometry import IntervalBox
from .learner import LearnConfig, ReachAvoidSets
from .reach import ReachConfig

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "StageConfig",
    "load_config",
    "parse_config",
    "shipped_configs",
    "shipped_config_path",
]


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None, source: str = ""):
        self.message = message
        self.line = line
        self.column = column
        self.source = source
        super().__init__(str(self))

    def __str__(self):
        where = self.source or "<config>"
        if self.line is not None:
            where += f":{self.line}:{self.column}"
        return f"{where}: {self.message}"


@dataclass
class StageConfig:
    """Controller template plus learner settings for one learning stage."""

    template: Any
    learn: LearnConfig


@dataclass
class ExperimentConfig:
    name: str
    system: Any
    sets: ReachAvoidSets
    template: Any
    learn: LearnConfig
    reach: ReachConfig
    horizon: int
    initset_depth: int = 6
    samples: int = 500
    sim_micro: int = 10
    hybrid: Optional[dict] = None
    output: Optional[str] = None
    source: str = ""

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment with a new learner seed (and network init seed)."""
        cfg = replace(self, learn=replace(self.learn, seed=seed))
        if self._random_init is not None:
            cfg.template = _build_controller(self._random_init, seed)
        if self.hybrid is not None:
            hy = dict(self.hybrid)
            for stage in ("avoid", "goal"):
                st = hy[stage]
                tmpl = _build_controller(st["_spec"], seed) if st["_spec"].get("init") else st["cfg"].template
                hy[stage] = {**st, "cfg": StageConfig(tmpl, replace(st["cfg"].learn, seed=seed))}
            cfg.hybrid = hy
        return cfg

    _random_init: Optional[dict] = field(default=None, repr=False)


# ---------------------------------------------------------------- node helpers


def _err(node, message, source):
    m = node.start_mark
    return ConfigError(message, m.line + 1, m.column + 1, source)


def _plain(node):
    return yaml.safe_load(yaml.serialize(node))


def _mapping(node, source, what):
    if not isinstance(node, yaml.MappingNode):
        raise _err(node, f"{what} must be a mapping", source)
    out = {}
    for k, v in node.value:
        key = _plain(k)
        if key in out:
            raise _err(k, f"duplicate key {key!r} in {what}", source)
        out[key] = (k, v)
    return out


def _check_keys(mapping, allowed, required, source, what, node):
    for key, (knode, _) in mapping.items():
        if key not in allowed:
            raise _err(knode, f"unknown key {key!r} in {what}; allowed: {', '.join(sorted(allowed))}", source)
    for key in required:
        if key not in mapping:
            raise _err(node, f"missing key {key!r} in {what}", source)


def _number(node, source, what, positive=False, integer=False, nonneg=False):
    val = _plain(node)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise _err(node, f"{what} must be a number", source)
    if integer and not float(val).is_integer():
        raise _err(node, f"{what} must be an integer", source)
    if positive and not val > 0:
        raise _err(node, f"{what} must be positive", source)
    if nonneg and val < 0:
        raise _err(node, f"{what} must be >= 0", source)
    if not np.isfinite(val):
        raise _err(node, f"{what} must be finite", source)
    return int(val) if integer else float(val)


def _array(node, source, what, ndim):
    val = _plain(node)
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise _err(node, f"{what} must be a numeric array", source) from None
    if arr.ndim != ndim or not np.all(np.isfinite(arr)):
        raise _err(node, f"{what} must be a finite {ndim}-D numeric array", source)
    return arr


def _box(node, source, what):
    arr = _array(node, source, what, 2)
    if arr.shape[1] != 2:
        raise _err(node, f"{what} must list one [lo, hi] pair per axis", source)
    if np.any(arr[:, 0] > arr[:, 1]):
        raise _err(node, f"{what} has lo > hi", source)
    return IntervalBox(arr[:, 0], arr[:, 1])


# ---------------------------------------------------------------- blocks


_SYSTEM_KEYS = {"kind", "A", "B", "c", "delta", "params"}


def _parse_system(node, source):
    m = _mapping(node, source, "system")
    _check_keys(m, _SYSTEM_KEYS, ["kind", "delta"], source, "system", node)
    kind = _plain(m["kind"][1])
    delta = _number(m["delta"][1], source, "system.delta", positive=True)
    if kind == "lti":
        for key in ("A", "B"):
            if key not in m:
                raise _err(node, f"missing key {key!r} in system (kind lti)", source)
        A = _array(m["A"][1], source, "system.A", 2)
        B = _array(m["B"][1], source, "system.B", 2)
        c = _array(m["c"][1], source, "system.c", 1) if "c" in m else None
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0] or (c is not None and c.size != A.shape[0]):
            raise _err(node, f"inconsistent system dimensions A{A.shape} B{B.shape}", source)
        return LtiSystem(A, B, c, delta)
    if kind in ("vanderpol", "zero"):
        params = {}
        if "params" in m:
            pm = _mapping(m["params"][1], source, "system.params")
            _check_keys(pm, {"gamma"}, [], source, "system.params", m["params"][1])
            params = {k: _number(v, source, f"system.params.{k}") for k, (_, v) in pm.items()}
        return NonlinearSystem(kind, params, delta)
    raise _err(m["kind"][1], f"unknown system kind {kind!r}; expected lti, vanderpol or zero", source)


def _parse_sets(node, source, dim):
    m = _mapping(node, source, "sets")
    _check_keys(m, {"X0", "unsafe", "goal"}, ["X0", "unsafe", "goal"], source, "sets", node)
    boxes = {k: _box(v, source, f"sets.{k}") for k, (_, v) in m.items()}
    for k, b in boxes.items():
        if b.dim != dim:
            raise _err(m[k][1], f"sets.{k} has dimension {b.dim}, system has {dim}", source)
    return ReachAvoidSets(boxes["X0"], boxes["unsafe"], boxes["goal"])


_CONTROLLER_KEYS = {"type", "gain", "bias", "train_bias", "layers", "activation", "init", "weights", "biases"}


def _parse_controller(node, source, dim, what="controller"):
    """Validated controller spec (plain dict) for :func:`_build_controller`."""
    m = _mapping(node, source, what)
    _check_keys(m, _CONTROLLER_KEYS, ["type"], source, what, node)
    kind = _plain(m["type"][1])
    spec: dict = {"type": kind}
    if "init" in m:
        im = _mapping(m["init"][1], source, f"{what}.init")
        _check_keys(im, {"low", "high"}, [], source, f"{what}.init", m["init"][1])
        spec["init"] = {k: _number(v, source, f"{what}.init.{k}") for k, (_, v) in im.items()}
    if kind == "linear":
        if "gain" in m:
            gain = _array(m["gain"][1], source, f"{what}.gain", 1)
            if gain.size != dim:
                raise _err(m["gain"][1], f"{what}.gain has {gain.size} entries, state has {dim}", source)
            spec["gain"] = gain.tolist()
        elif "init" not in m:
            raise _err(node, f"{what} needs either gain or init", source)
        spec["bias"] = _number(m["bias"][1], source, f"{what}.bias") if "bias" in m else 0.0
        spec["train_bias"] = bool(_plain(m["train_bias"][1])) if "train_bias" in m else False
        spec["dim"] = dim
        return spec
    if kind == "neural":
        if "layers" not in m:
            raise _err(node, f"missing key 'layers' in {what}", source)
        layers = [int(x) for x in _array(m["layers"][1], source, f"{what}.layers", 1)]
        if len(layers) < 2 or layers[0] != dim or layers[-1] != 1 or min(layers) < 1:
            raise _err(m["layers"][1], f"{what}.layers must run from {dim} inputs to 1 output", source)
        spec["layers"] = layers
        spec["activation"] = _plain(m["activation"][1]) if "activation" in m else "tanh"
        if spec["activation"] not in ("tanh", "identity"):
            raise _err(m["activation"][1], "activation must be tanh or identity", source)
        if "weights" in m or "biases" in m:
            if not ("weights" in m and "biases" in m):
                raise _err(node, f"{what} needs both weights and biases", source)
            W = _plain(m["weights"][1])
            b = _plain(m["biases"][1])
            try:
                NeuralController(
                    tuple(np.array(w, dtype=float) for w in W),
                    tuple(np.array(v, dtype=float) for v in b),
                    (spec["activation"],) * (len(W) - 1),
                )
            except (TypeError, ValueError) as exc:
                raise _err(m["weights"][1], f"invalid network parameters: {exc}", source) from None
            spec["weights"], spec["biases"] = W, b
        elif "init" not in m:
            raise _err(node, f"{what} needs either weights/biases or init", source)
        return spec
    raise _err(m["type"][1], f"unknown controller type {kind!r}; expected linear or neural", source)


def _build_controller(spec: dict, seed: int):
    init = spec.get("init")
    low = init.get("low", 0.0) if init else 0.0
    high = init.get("high", 1.0) if init else 1.0
    if spec["type"] == "linear":
        if "gain" in spec:
            gain = np.array(spec["gain"], dtype=float)
        else:
            gain = np.random.default_rng(seed).uniform(low, high, spec["dim"])
        return LinearController(gain, spec["bias"], spec["train_bias"])
    if "weights" in spec:
        W = tuple(np.array(w, dtype=float) for w in spec["weights"])
        b = tuple(np.array(v, dtype=float) for v in spec["biases"])
        return NeuralController(W, b, (spec["activation"],) * (len(W) - 1))
    return NeuralController.random(spec["layers"], seed, low, high, spec["activation"])


_LEARNER_KEYS = {
    "metric", "alpha", "beta", "lam", "scale", "scale_goal", "max_iter", "seed",
    "n_cloud", "pairs", "max_step", "min_coverage", "precondition",
}


def _parse_learner(node, source, what="learner"):
    m = _mapping(node, source, what)
    _check_keys(m, _LEARNER_KEYS, [], source, what, node)
    kw = {}
    for key, (_, v) in m.items():
        name = f"{what}.{key}"
        if key == "metric":
            kw[key] = _plain(v)
            if kw[key] not in ("geometric", "wasserstein"):
                raise _err(v, f"{name} must be geometric or wasserstein", source)
        elif key in ("alpha", "beta", "max_step"):
            kw[key] = _number(v, source, name, positive=True)
        elif key in ("max_iter",):
            kw[key] = _number(v, source, name, integer=True, nonneg=True)
        elif key in ("seed",):
            kw[key] = _number(v, source, name, integer=True, nonneg=True)
        elif key in ("n_cloud", "pairs"):
            kw[key] = _number(v, source, name, integer=True, positive=True)
        elif key in ("scale", "scale_goal"):
            val = _plain(v)
            if isinstance(val, list):
                arr = _array(v, source, name, 1)
                if np.any(arr <= 0):
                    raise _err(v, f"{name} must be positive", source)
                kw[key] = tuple(arr.tolist())
            else:
                kw[key] = _number(v, source, name, positive=True)
        elif key == "precondition":
            kw[key] = _plain(v)
            if not isinstance(kw[key], bool):
                raise _err(v, f"{name} must be true or false", source)
        elif key == "min_coverage":
            kw[key] = _number(v, source, name, positive=True)
            if kw[key] > 1:
                raise _err(v, f"{name} must lie in (0, 1]", source)
        else:
            kw[key] = _number(v, source, name)
    return kw


_REACH_KEYS = {"T", "subdiv", "micro", "degree", "blowup_width", "method"}


def _parse_reach(node, source, what="reach"):
    m = _mapping(node, source, what)
    _check_keys(m, _REACH_KEYS, ["T"], source, what, node)
    kw = {}
    T = _number(m["T"][1], source, f"{what}.T", integer=True, positive=True)
    for key, (_, v) in m.items():
        name = f"{what}.{key}"
        if key in ("subdiv", "micro"):
            kw[key] = _number(v, source, name, integer=True, positive=True)
        elif key == "degree":
            deg = _array(v, source, name, 1)
            if deg.size != 2 or np.any(deg < 1) or np.any(deg != np.round(deg)):
                raise _err(v, f"{name} must be two integers >= 1", source)
            kw[key] = tuple(int(d) for d in deg)
        elif key == "blowup_width":
            kw[key] = _number(v, source, name, positive=True)
        elif key == "method":
            kw[key] = _plain(v)
            if kw[key] not in ("mean-value", "interval"):
                raise _err(v, f"{name} must be mean-value or interval", source)
    return T, ReachConfig(**kw)


def _parse_stage(node, source, dim, what):
    m = _mapping(node, source, what)
    _check_keys(m, {"controller", "learner", "reach"}, ["controller", "learner", "reach"], source, what, node)
    spec = _parse_controller(m["controller"][1], source, dim, f"{what}.controller")
    lkw = _parse_learner(m["learner"][1], source, f"{what}.learner")
    T, rc = _parse_reach(m["reach"][1], source, f"{what}.reach")
    return spec, lkw, T, rc


_TOP_KEYS = {"name", "system", "sets", "controller", "learner", "reach", "initset", "simulate", "hybrid", "output"}


def parse_config(text: str, source: str = "") -> ExperimentConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem or exc}", line, col, source) from None
    if root is None:
        raise ConfigError("empty config", 1, 1, source)
    m = _mapping(root, source, "config")
    required = ["system", "sets", "reach"]
    _check_keys(m, _TOP_KEYS, required, source, "config", root)
    name = str(_plain(m["name"][1])) if "name" in m else Path(source).stem or "experiment"
    system = _parse_system(m["system"][1], source)
    dim = system.state_dim
    sets = _parse_sets(m["sets"][1], source, dim)
    if sets.X0.intersects_box(sets.unsafe):
        raise _err(m["sets"][1], "X0 intersects the unsafe set", source)
    T, reach = _parse_reach(m["reach"][1], source)

    spec = None
    template = None
    if "controller" in m:
        spec = _parse_controller(m["controller"][1], source, dim)
    lkw = _parse_learner(m["learner"][1], source) if "learner" in m else {}
    seed = lkw.get("seed", 0)
    if spec is not None:
        template = _build_controller(spec, seed)
    try:
        learn = LearnConfig(horizon=T, reach=reach, **lkw)
    except ValueError as exc:
        raise _err(m.get("learner", (None, root))[1], str(exc), source) from None

    depth, samples, sim_micro = 6, 500, 10
    if "initset" in m:
        im = _mapping(m["initset"][1], source, "initset")
        _check_keys(im, {"max_depth"}, [], source, "initset", m["initset"][1])
        if "max_depth" in im:
            depth = _number(im["max_depth"][1], source, "initset.max_depth", integer=True, nonneg=True)
    if "simulate" in m:
        sm = _mapping(m["simulate"][1], source, "simulate")
        _check_keys(sm, {"samples", "micro"}, [], source, "simulate", m["simulate"][1])
        if "samples" in sm:
            samples = _number(sm["samples"][1], source, "simulate.samples", integer=True, positive=True)
        if "micro" in sm:
            sim_micro = _number(sm["micro"][1], source, "simulate.micro", integer=True, positive=True)

    hybrid = None
    if "hybrid" in m:
        hm = _mapping(m["hybrid"][1], source, "hybrid")
        _check_keys(hm, {"avoid", "goal"}, ["avoid", "goal"], source, "hybrid", m["hybrid"][1])
        hybrid = {}
        for stage in ("avoid", "goal"):
            s_spec, s_lkw, s_T, s_rc = _parse_stage(hm[stage][1], source, dim, f"hybrid.{stage}")
            s_lkw.setdefault("seed", seed)
            try:
                s_learn = LearnConfig(horizon=s_T, reach=s_rc, **s_lkw)
            except ValueError as exc:
                raise _err(hm[stage][1], str(exc), source) from None
            hybrid[stage] = {
                "cfg": StageConfig(_build_controller(s_spec, s_learn.seed), s_learn),
                "_spec": s_spec,
            }
    elif template is None:
        raise _err(root, "missing key 'controller' in config", source)

    output = str(_plain(m["output"][1])) if "output" in m else None
    cfg = ExperimentConfig(
        name, system, sets, template, learn, reach, T, depth, samples, sim_micro, hybrid, output, source
    )
    if spec is not None and "init" in spec and "gain" not in spec and "weights" not in spec:
        cfg._random_init = spec
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        shipped = shipped_config_path(str(path))
        if shipped is None:
            raise ConfigError(f"no such config file: {path}", source=str(path))
        path = shipped
    return parse_config(path.read_text(), str(path))


def shipped_configs() -> list[str]:
    root = resources.files("reachloop") / "configs"
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def shipped_config_path(name: str) -> Optional[Path]:
    """Path of a shipped config given its bare name (``acc_geometric``)."""
    stem = name[: -len(".yaml")] if name.endswith(".yaml") else name
    if "/" in stem or stem not in shipped_configs():
        return None
    return Path(str(resources.files("reachloop") / "configs" / f"{stem}.yaml"))
