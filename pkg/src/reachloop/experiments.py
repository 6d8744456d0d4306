"""Experiment orchestration behind the command-line tool.

Each ``run_*`` function does the work of one subcommand, writes its artifacts
into a run directory and returns a small result record; the CLI only parses
arguments and maps results to exit codes.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .controllers import LinearController, NeuralController, controller_from_text, controller_to_text
from .dynamics import simulate_many
from .initset import InitSetResult, certified_verdict, search_initial_set
from .learner import learn, learn_hybrid, verify_hybrid
from .plotting import plot_convergence, plot_flowpipe, plot_summary
from .reach import Verdict, check_verdict, compute_flowpipe

__all__ = [
    "EmpiricalReport",
    "HybridController",
    "read_controller",
    "write_controller",
    "empirical_rates",
    "run_verify",
    "run_learn",
    "run_simulate",
    "run_report",
    "MissingArtifacts",
    "REPORT_FILES",
]

REPORT_FILES = ("report.json", "iterations.jsonl", "controller.txt", "xinit.csv", "flowpipe.csv", "plot.svg")


class MissingArtifacts(FileNotFoundError):
    def __init__(self, directory, missing):
        self.directory = Path(directory)
        self.missing = list(missing)
        super().__init__(f"{directory}: missing {', '.join(self.missing)}")


# ---------------------------------------------------------------- files


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_plot(fn, path: Path, *args, **kw):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.stem}.tmp{path.suffix}")
    fn(tmp, *args, **kw)
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class HybridController:
    """Network for the first ``switch_step`` periods, then a linear law."""

    avoid: NeuralController
    goal: LinearController
    switch_step: int


def write_controller(path, controller):
    if isinstance(controller, HybridController):
        doc = {
            "type": "hybrid",
            "switch_step": controller.switch_step,
            "avoid": json.loads(controller_to_text(controller.avoid)),
            "goal": json.loads(controller_to_text(controller.goal)),
        }
        text = json.dumps(doc, indent=2) + "\n"
    else:
        text = controller_to_text(controller)
    _atomic_write(path, text)


def read_controller(path):
    text = Path(path).read_text()
    doc = json.loads(text)
    if doc.get("type") == "hybrid":
        return HybridController(
            controller_from_text(json.dumps(doc["avoid"])),
            controller_from_text(json.dumps(doc["goal"])),
            int(doc["switch_step"]),
        )
    return controller_from_text(text)


# ---------------------------------------------------------------- verification


def _hybrid_stages(cfg: ExperimentConfig):
    if cfg.hybrid is None:
        raise ValueError("a two-stage controller needs a config with a hybrid block")
    return cfg.hybrid["avoid"]["cfg"].learn, cfg.hybrid["goal"]["cfg"].learn


def _verify(cfg: ExperimentConfig, controller):
    """``(flowpipe, second-stage flowpipe or None, verdict)``."""
    if isinstance(controller, HybridController):
        la, lg = _hybrid_stages(cfg)
        fp1, fp2, v = verify_hybrid(
            cfg.system, controller.avoid, controller.goal, cfg.sets, la.horizon, la.reach, lg.horizon, lg.reach
        )
        return fp1, fp2, v
    fp = compute_flowpipe(cfg.system, controller, cfg.sets.X0, cfg.horizon, cfg.reach)
    return fp, None, check_verdict(fp, cfg.sets.unsafe, cfg.sets.goal)


def _flowpipe_csv(fp, fp2) -> str:
    text = fp.to_csv()
    if fp2 is not None:
        offset = fp.steps
        rows = fp2.to_csv().splitlines()[1:]
        extra = []
        for row in rows:
            step, rest = row.split(",", 1)
            extra.append(f"{int(step) + offset},{rest}")
        text += "\n".join(extra) + "\n"
    return text


def run_verify(cfg: ExperimentConfig, controller, out: Path) -> Verdict:
    out = Path(out)
    fp, fp2, verdict = _verify(cfg, controller)
    _atomic_write(out / "flowpipe.csv", _flowpipe_csv(fp, fp2))
    _atomic_plot(plot_flowpipe, out / "plot.svg", fp, cfg.sets, f"{cfg.name}: {verdict}", extra=fp2)
    _atomic_write(out / "report.json", _dump_json({"command": "verify", "config": cfg.name, **verdict.to_dict()}))
    return verdict


# ---------------------------------------------------------------- simulation


@dataclass
class EmpiricalReport:
    samples: int
    safe_rate: float
    goal_rate: float
    diverged: int = 0
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "safe_rate": self.safe_rate,
            "goal_rate": self.goal_rate,
            "diverged": self.diverged,
            "failures": self.failures,
        }


def _rollout(cfg, controller, x0s):
    if isinstance(controller, HybridController):
        la, lg = _hybrid_stages(cfg)
        s1, d1 = simulate_many(cfg.system, controller.avoid, x0s, la.horizon, cfg.sim_micro)
        start = np.where(d1[:, None], 0.0, s1[-1])
        s2, d2 = simulate_many(cfg.system, controller.goal, start, lg.horizon, cfg.sim_micro)
        s2 = np.where((d1[None, :, None]), np.nan, s2)
        return np.concatenate([s1, s2[1:]]), d1 | d2
    return simulate_many(cfg.system, controller, x0s, cfg.horizon, cfg.sim_micro)


def empirical_rates(cfg: ExperimentConfig, controller, n: int, seed: int) -> EmpiricalReport:
    """Simulate ``n`` initial states drawn uniformly from ``X0``.

    A trace is safe if no period-boundary state lies in the unsafe set and it
    never diverges; it reaches the goal if some boundary state lies in the goal.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    x0s = cfg.sets.X0.sample(rng, n)
    states, diverged = _rollout(cfg, controller, x0s)
    u, g = cfg.sets.unsafe, cfg.sets.goal
    with np.errstate(invalid="ignore"):
        in_u = np.all((states >= u.lo) & (states <= u.hi), axis=-1).any(axis=0)
        in_g = np.all((states >= g.lo) & (states <= g.hi), axis=-1).any(axis=0)
    safe = ~in_u & ~diverged
    goal = in_g & ~diverged
    failures = []
    for i in np.flatnonzero(~safe | ~goal):
        reasons = []
        if diverged[i]:
            reasons.append("diverged")
        elif in_u[i]:
            reasons.append("unsafe")
        if not goal[i]:
            reasons.append("goal not reached")
        failures.append({"x0": x0s[i].tolist(), "reason": ", ".join(reasons)})
    return EmpiricalReport(n, float(safe.mean()), float(goal.mean()), int(diverged.sum()), failures)


def run_simulate(cfg: ExperimentConfig, controller, n: int, seed: int, out: Path) -> EmpiricalReport:
    rep = empirical_rates(cfg, controller, n, seed)
    _atomic_write(Path(out) / "report.json", _dump_json({"command": "simulate", "config": cfg.name, "seed": seed, **rep.to_dict()}))
    return rep


# ---------------------------------------------------------------- learning


@dataclass
class LearnOutcome:
    success: bool
    controller: object
    iterations: int
    verdict: Verdict
    initset: Optional[InitSetResult]
    rates: Optional[EmpiricalReport]
    report: dict


def _xinit_csv_full(box) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = box.dim
    w.writerow([f"lo{i + 1}" for i in range(n)] + [f"hi{i + 1}" for i in range(n)] + ["goal_step"])
    w.writerow([repr(float(z)) for z in np.concatenate([box.lo, box.hi])] + [""])
    return buf.getvalue()


def run_learn(cfg: ExperimentConfig, out: Path, simulate: bool = True) -> LearnOutcome:
    """Learn a controller, search its certified initial set, simulate it and
    write every artifact to ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "iterations.jsonl"
    log_fh = open(log_path.with_name(".iterations.jsonl.tmp"), "w")

    def log(record):
        log_fh.write(json.dumps(record) + "\n")
        log_fh.flush()

    try:
        if cfg.hybrid is not None:
            outcome = _learn_hybrid(cfg, out, log)
        else:
            outcome = _learn_single(cfg, out, log)
    finally:
        log_fh.close()
        os.replace(log_path.with_name(".iterations.jsonl.tmp"), log_path)
    if simulate:
        outcome.rates = empirical_rates(cfg, outcome.controller, cfg.samples, cfg.learn.seed)
        outcome.report["empirical"] = outcome.rates.to_dict()
    _atomic_write(out / "report.json", _dump_json(outcome.report))
    return outcome


def _learn_single(cfg, out, log):
    res = learn(cfg.system, cfg.template, cfg.sets, cfg.learn, log)
    write_controller(out / "controller.txt", res.controller)
    iset = search_initial_set(
        cfg.system, res.controller, cfg.sets.X0, cfg.sets.unsafe, cfg.sets.goal, cfg.horizon, cfg.reach, cfg.initset_depth
    )
    _atomic_write(out / "xinit.csv", iset.to_csv())
    _atomic_write(out / "flowpipe.csv", res.flowpipe.to_csv())
    _atomic_plot(plot_flowpipe, out / "plot.svg", res.flowpipe, cfg.sets, f"{cfg.name}: {res.verdict}", X_I=iset.boxes)
    _atomic_plot(plot_convergence, out / "convergence.svg", res.history, cfg.name)
    success = res.success and not iset.empty
    report = {
        "command": "learn",
        "config": cfg.name,
        "metric": cfg.learn.metric,
        "seed": cfg.learn.seed,
        "success": success,
        "iterations": res.iterations,
        "verdict": res.verdict.to_dict(),
        "cell_coverage": res.coverage,
        "initset": {**iset.summary(), "verdict": certified_verdict(iset).to_dict()},
        "mean_iteration_s": float(np.mean(res.elapsed)) if res.elapsed else 0.0,
        "params": res.params.tolist(),
    }
    return LearnOutcome(success, res.controller, res.iterations, res.verdict, iset, None, report)


def _learn_hybrid(cfg, out, log):
    st_a, st_g = cfg.hybrid["avoid"]["cfg"], cfg.hybrid["goal"]["cfg"]
    res = learn_hybrid(cfg.system, st_a.template, st_g.template, cfg.sets, st_a.learn, st_g.learn, log)
    goal_ctrl = res.goal.controller if res.goal is not None else st_g.template
    ctrl = HybridController(res.avoid.controller, goal_ctrl, res.switch_step)
    write_controller(out / "controller.txt", ctrl)
    fp1, fp2, verdict = _verify(cfg, ctrl)
    success = res.success and verdict.is_reach_avoid
    _atomic_write(out / "flowpipe.csv", _flowpipe_csv(fp1, fp2))
    _atomic_write(out / "xinit.csv", _xinit_csv_full(cfg.sets.X0) if success else _xinit_csv_full(cfg.sets.X0).splitlines()[0] + "\n")
    _atomic_plot(plot_flowpipe, out / "plot.svg", fp1, cfg.sets, f"{cfg.name}: {verdict}", extra=fp2)
    history = res.avoid.history + ([] if res.goal is None else res.goal.history)
    _atomic_plot(plot_convergence, out / "convergence.svg", history, cfg.name)
    iterations = res.avoid.iterations + (0 if res.goal is None else res.goal.iterations)
    report = {
        "command": "learn",
        "config": cfg.name,
        "metric": f"hybrid-{st_a.learn.metric}/{st_g.learn.metric}",
        "seed": cfg.learn.seed,
        "success": success,
        "iterations": iterations,
        "stage_iterations": [res.avoid.iterations, None if res.goal is None else res.goal.iterations],
        "verdict": verdict.to_dict(),
        "switch_step": res.switch_step,
        "switch_box": None if res.X_switch is None else res.X_switch.bounds(),
        "initset": {"coverage": 1.0 if success else 0.0, "certified_boxes": int(success)},
    }
    return LearnOutcome(success, ctrl, iterations, verdict, None, None, report)


# ---------------------------------------------------------------- report


def _run_dirs(directory: Path) -> list[Path]:
    if (directory / "report.json").exists():
        return [directory]
    return sorted(p.parent for p in directory.glob("*/report.json"))


def _fmt_pct(x):
    return "n/a" if x is None else f"{100.0 * x:.1f}%"


def run_report(directory: Path):
    """Aggregate learn runs below ``directory`` into ``summary.txt``,
    ``summary.csv`` and the figure ``summary.svg``.

    Returns ``(rows, text)``. Raises :class:`MissingArtifacts` when no run is
    found or a run lacks one of its artifact files.
    """
    directory = Path(directory)
    dirs = _run_dirs(directory) if directory.is_dir() else []
    if not dirs:
        raise MissingArtifacts(directory, REPORT_FILES)
    groups: dict[str, list] = {}
    for d in dirs:
        rep = json.loads((d / "report.json").read_text())
        if rep.get("command") != "learn":
            continue
        missing = [f for f in REPORT_FILES if not (d / f).exists()]
        if missing:
            raise MissingArtifacts(d, missing)
        groups.setdefault(f"{rep['config']} ({rep['metric']})", []).append(rep)
    if not groups:
        raise MissingArtifacts(directory, REPORT_FILES)
    rows = []
    for method, reps in sorted(groups.items()):
        its = np.array([r["iterations"] for r in reps if r["success"]], dtype=float)
        emp = [r.get("empirical") for r in reps if r["success"] and r.get("empirical")]
        safe = float(np.mean([e["safe_rate"] for e in emp])) if emp else None
        goal = float(np.mean([e["goal_rate"] for e in emp])) if emp else None
        ok = sum(r["success"] for r in reps)
        rows.append(
            {
                "method": method,
                "runs": len(reps),
                "converged": ok,
                "iterations_mean": float(its.mean()) if its.size else None,
                "iterations_sd": float(its.std(ddof=1)) if its.size > 1 else (0.0 if its.size else None),
                "safe_rate": safe,
                "goal_rate": goal,
                "verified": "reach-avoid" if ok == len(reps) else f"reach-avoid in {ok}/{len(reps)}",
            }
        )
    lines = [f"{'method':40s} {'runs':>4s} {'conv':>4s} {'iterations':>16s} {'safe':>7s} {'goal':>7s}  verified"]
    for r in rows:
        its = "n/a" if r["iterations_mean"] is None else f"{r['iterations_mean']:.1f} ± {r['iterations_sd']:.1f}"
        lines.append(
            f"{r['method']:40s} {r['runs']:4d} {r['converged']:4d} {its:>16s} "
            f"{_fmt_pct(r['safe_rate']):>7s} {_fmt_pct(r['goal_rate']):>7s}  {r['verified']}"
        )
    text = "\n".join(lines) + "\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _atomic_write(directory / "summary.txt", text)
    _atomic_write(directory / "summary.csv", buf.getvalue())
    _atomic_plot(plot_summary, directory / "summary.svg", rows)
    return rows, text


def verdict_exit_code(verdict: Verdict) -> int:
    return verdict.exit_code


def simulate_exit_code(rep: EmpiricalReport) -> int:
    if rep.safe_rate < 1.0:
        return 1
    if rep.goal_rate < 1.0:
        return 2
    return 0

