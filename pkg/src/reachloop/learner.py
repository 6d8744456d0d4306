"""Verification-in-the-loop parameter tuning.

Each iteration perturbs the controller parameters in both directions, computes
a flowpipe for each perturbed controller, turns the two flowpipes into a pair of
scores (one for the unsafe set, one for the goal) and steps along the resulting
difference-quotient gradients. A flowpipe at the updated parameters decides
whether to stop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .controllers import perturb
from .geometry import IntervalBox
from .metrics import MetricUnavailable, geometric_score, wasserstein_score
from .reach import (
    Flowpipe,
    ReachConfig,
    Verdict,
    VerdictKind,
    cell_verdicts,
    check_verdict,
    compute_flowpipe,
)

__all__ = [
    "ReachAvoidSets",
    "LearnConfig",
    "LearnResult",
    "HybridResult",
    "IterationSkipped",
    "difference_gradient",
    "learn",
    "learn_hybrid",
    "cell_coverage",
    "verify_hybrid",
]

MAX_RETRIES = 5
MAX_CONSECUTIVE_SKIPS = 10


class IterationSkipped(RuntimeError):
    """Every perturbation drawn for one iteration produced a blown-up flowpipe."""


@dataclass(frozen=True)
class ReachAvoidSets:
    X0: IntervalBox
    unsafe: IntervalBox
    goal: IntervalBox


@dataclass(frozen=True)
class LearnConfig:
    """Hyper-parameters of one learning run.

    Geometric runs ascend ``alpha * grad d_u + beta * grad d_g``; Wasserstein
    runs step ``-alpha * grad W_goal + beta * grad W_unsafe``. ``scale`` bounds
    the perturbation; when ``scale_goal`` is set the goal gradient gets its own
    perturbation draw with that bound. ``objective="avoid"`` ignores the goal
    and stops once the flowpipe stays clear of the unsafe set. ``max_step``
    (optional) caps the Euclidean length of each update. With
    ``min_coverage < 1`` a safe flowpipe whose certified initial cells cover
    at least that fraction of ``X0`` also ends the run. ``precondition``
    multiplies each gradient component by its squared perturbation scale, so
    the step is taken in coordinates where every scale is one (``max_step``
    is then measured in those coordinates too); this helps when parameters
    act on very different magnitudes (gains vs. a bias).
    """

    metric: str = "geometric"
    alpha: float = 1e-4
    beta: float = 1e-4
    lam: float = 0.5
    scale: object = 1.0
    scale_goal: object = None
    max_iter: int = 500
    horizon: int = 50
    seed: int = 0
    reach: ReachConfig = field(default_factory=ReachConfig)
    n_cloud: int = 64
    pairs: int = 1
    objective: str = "reach-avoid"
    max_step: Optional[float] = None
    min_coverage: float = 1.0
    precondition: bool = False

    def __post_init__(self):
        if self.metric not in ("geometric", "wasserstein"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.objective not in ("reach-avoid", "avoid"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("step lengths must be positive")
        if not 0 < self.min_coverage <= 1:
            raise ValueError("min_coverage must lie in (0, 1]")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be positive when given")
        if self.max_iter < 0 or self.horizon < 1 or self.pairs < 1 or self.n_cloud < 1:
            raise ValueError("max_iter >= 0, horizon >= 1, pairs >= 1 and n_cloud >= 1 required")


@dataclass
class LearnResult:
    params: np.ndarray
    controller: object
    iterations: int
    history: list
    flowpipe: Flowpipe
    verdict: Verdict
    elapsed: list
    coverage: float = 0.0
    min_coverage: float = 1.0

    @property
    def success(self) -> bool:
        return self.verdict.is_reach_avoid or (
            self.verdict.kind is VerdictKind.GOAL_NOT_REACHED and self.coverage >= self.min_coverage
        )


@dataclass
class HybridResult:
    avoid: LearnResult
    goal: Optional[LearnResult]
    switch_step: int
    X_switch: Optional[IntervalBox]

    @property
    def success(self) -> bool:
        return (
            self.goal is not None
            and _avoid_verdict(self.avoid.flowpipe, self.avoid.verdict).is_reach_avoid
            and self.goal.verdict.is_reach_avoid
        )


def difference_gradient(score_fn: Callable, theta, scale, seed, retries: int = MAX_RETRIES):
    """Two-sided perturbation gradients of a pair-valued score.

    ``score_fn(theta)`` returns ``(s_u, s_g)``. One perturbation ``p`` gives
    ``grad_i = (s(theta + p) - s(theta - p)) / (2 p_i)`` for both scores. A
    :class:`~reachloop.metrics.MetricUnavailable` at either point triggers a
    fresh draw, at most ``retries`` times.
    """
    rng = np.random.default_rng(seed)
    theta = np.asarray(theta, dtype=float)
    for _ in range(retries + 1):
        plus, minus, p = perturb(theta, scale, rng)
        try:
            su_p, sg_p = score_fn(plus)
            su_m, sg_m = score_fn(minus)
        except MetricUnavailable:
            continue
        return (su_p - su_m) / (2.0 * p), (sg_p - sg_m) / (2.0 * p)
    raise IterationSkipped(f"flowpipe blew up for {retries + 1} perturbation draws")


def _score_pair(fp: Flowpipe, sets: ReachAvoidSets, cfg: LearnConfig, cloud_seed) -> tuple:
    """``(unsafe score, goal score)`` of the active metric."""
    if cfg.metric == "geometric":
        s = geometric_score(fp, sets.unsafe, sets.goal)
        return s.d_u, s.d_g
    s = wasserstein_score(fp, sets.goal, sets.unsafe, cfg.lam, cfg.n_cloud, cloud_seed)
    return s.W_unsafe, s.W_goal


def _log_scores(fp: Flowpipe, sets: ReachAvoidSets, cfg: LearnConfig, cloud_seed) -> dict:
    out = {"d_u": None, "d_g": None, "W_goal": None, "W_unsafe": None}
    if fp.blowup:
        return out
    g = geometric_score(fp, sets.unsafe, sets.goal)
    w = wasserstein_score(fp, sets.goal, sets.unsafe, cfg.lam, cfg.n_cloud, cloud_seed)
    out.update(d_u=g.d_u, d_g=g.d_g, W_goal=w.W_goal, W_unsafe=w.W_unsafe)
    return out


def _avoid_verdict(fp: Flowpipe, verdict: Verdict) -> Verdict:
    """Success for the avoid-only objective: fully computed and never unsafe."""
    if verdict.kind in (VerdictKind.UNSAFE, VerdictKind.UNKNOWN):
        return verdict
    return Verdict(VerdictKind.REACH_AVOID, fp.steps, "unsafe set avoided")


def cell_coverage(fp: Flowpipe, sets: ReachAvoidSets) -> float:
    """Fraction of the (equal-area) initial cells certified on their own."""
    cells = cell_verdicts(fp, sets.unsafe, sets.goal)
    return sum(v.is_reach_avoid for v in cells) / len(cells)


def _done(fp, verdict, cfg, sets) -> bool:
    if cfg.objective == "avoid":
        return _avoid_verdict(fp, verdict).is_reach_avoid
    if verdict.is_reach_avoid:
        return True
    if cfg.min_coverage < 1 and verdict.kind is VerdictKind.GOAL_NOT_REACHED:
        return cell_coverage(fp, sets) >= cfg.min_coverage
    return False


def learn(sys, template, sets: ReachAvoidSets, cfg: LearnConfig, log: Optional[Callable] = None) -> LearnResult:
    """Tune ``template``'s parameters until its flowpipe certifies the objective.

    ``log`` (optional) receives one dict per iteration. The result always
    carries the flowpipe and verdict at the final parameters; a run that
    exhausts ``cfg.max_iter`` simply returns a non-success verdict.
    """
    rng = np.random.default_rng(cfg.seed)
    cloud_seed = int(np.random.SeedSequence(cfg.seed).generate_state(1)[0])

    def flowpipe(theta):
        return compute_flowpipe(sys, template.with_params(theta), sets.X0, cfg.horizon, cfg.reach)

    def score(theta):
        return _score_pair(flowpipe(theta), sets, cfg, cloud_seed)

    theta = template.params()
    fp = flowpipe(theta)
    verdict = check_verdict(fp, sets.unsafe, sets.goal)
    history, elapsed = [], []
    skips = 0
    k = 0
    while k < cfg.max_iter and not _done(fp, verdict, cfg, sets):
        start = time.perf_counter()
        k += 1
        g_u = np.zeros_like(theta)
        g_g = np.zeros_like(theta)
        skipped = False
        try:
            for _ in range(cfg.pairs):
                du, dg = difference_gradient(score, theta, cfg.scale, rng)
                if cfg.scale_goal is not None and cfg.objective != "avoid":
                    _, dg = difference_gradient(score, theta, cfg.scale_goal, rng)
                g_u += du / cfg.pairs
                g_g += dg / cfg.pairs
        except IterationSkipped:
            skipped = True
        if not skipped:
            skips = 0
            if cfg.precondition:
                s_u = np.broadcast_to(np.asarray(cfg.scale, dtype=float), theta.shape)
                s_g = s_u if cfg.scale_goal is None else np.broadcast_to(np.asarray(cfg.scale_goal, dtype=float), theta.shape)
                g_u, g_g = g_u * s_u**2, g_g * s_g**2
            if cfg.objective == "avoid":
                step = cfg.alpha * g_u
            elif cfg.metric == "geometric":
                step = cfg.alpha * g_u + cfg.beta * g_g
            else:
                step = -cfg.alpha * g_g + cfg.beta * g_u
            unit = s_u if cfg.precondition else 1.0
            norm = float(np.linalg.norm(step / unit))
            if cfg.max_step is not None and norm > cfg.max_step:
                step = step * (cfg.max_step / norm)
            theta = theta + step
            fp = flowpipe(theta)
            verdict = check_verdict(fp, sets.unsafe, sets.goal)
        else:
            skips += 1
        dt = time.perf_counter() - start
        elapsed.append(dt)
        record = {
            "iter": k,
            **_log_scores(fp, sets, cfg, cloud_seed),
            "grad_u_norm": float(np.linalg.norm(g_u)),
            "grad_g_norm": float(np.linalg.norm(g_g)),
            "verdict": verdict.kind.value,
            "skipped": skipped,
            "elapsed_ms": round(1000.0 * dt, 3),
            "params": theta.tolist(),
        }
        history.append(record)
        if log is not None:
            log(record)
        if skips >= MAX_CONSECUTIVE_SKIPS:
            verdict = Verdict(VerdictKind.UNKNOWN, None, "flowpipes kept blowing up under perturbation")
            break
    if cfg.objective == "avoid" and verdict.kind is not VerdictKind.UNKNOWN:
        verdict = _avoid_verdict(fp, verdict)
    coverage = 1.0 if verdict.is_reach_avoid else cell_coverage(fp, sets)
    return LearnResult(
        theta, template.with_params(theta), k, history, fp, verdict, elapsed, coverage, cfg.min_coverage
    )


def learn_hybrid(
    sys,
    nn_template,
    linear_template,
    sets: ReachAvoidSets,
    cfg_avoid: LearnConfig,
    cfg_goal: LearnConfig,
    log: Optional[Callable] = None,
) -> HybridResult:
    """Two-stage synthesis: a network that avoids ``sets.unsafe`` for
    ``cfg_avoid.horizon`` periods, then a linear controller that reaches the
    goal from the box hull of the network stage's last step.
    """
    cfg_avoid = replace(cfg_avoid, objective="avoid")

    def tagged(stage):
        return None if log is None else (lambda r: log({"stage": stage, **r}))

    first = learn(sys, nn_template, sets, cfg_avoid, tagged("avoid"))
    if not first.success:
        return HybridResult(first, None, cfg_avoid.horizon, None)
    X_switch = first.flowpipe.step_bounding_box(first.flowpipe.steps)
    second_sets = ReachAvoidSets(X_switch, sets.unsafe, sets.goal)
    cfg_goal = replace(cfg_goal, objective="reach-avoid")
    second = learn(sys, linear_template, second_sets, cfg_goal, tagged("goal"))
    return HybridResult(first, second, cfg_avoid.horizon, X_switch)


def verify_hybrid(sys, nn, linear, sets: ReachAvoidSets, T_avoid: int, reach_avoid: ReachConfig,
                  T_goal: int, reach_goal: ReachConfig):
    """Combined certificate of a two-stage controller.

    Returns ``(fp_avoid, fp_goal, verdict)``. The network stage must stay clear
    of ``sets.unsafe`` for ``T_avoid`` periods; the linear stage must then be
    reach-avoid from the box hull of the network stage's last step.
    """
    fp1 = compute_flowpipe(sys, nn, sets.X0, T_avoid, reach_avoid)
    v1 = _avoid_verdict(fp1, check_verdict(fp1, sets.unsafe, sets.goal))
    if not v1.is_reach_avoid:
        return fp1, None, v1
    X_switch = fp1.step_bounding_box(fp1.steps)
    fp2 = compute_flowpipe(sys, linear, X_switch, T_goal, reach_goal)
    v2 = check_verdict(fp2, sets.unsafe, sets.goal)
    if v2.kind is VerdictKind.UNSAFE:
        return fp1, fp2, Verdict(VerdictKind.UNSAFE, T_avoid + v2.step, "second stage")
    if v2.is_reach_avoid:
        return fp1, fp2, Verdict(VerdictKind.REACH_AVOID, T_avoid + v2.step)
    return fp1, fp2, Verdict(v2.kind, None if v2.step is None else T_avoid + v2.step, v2.reason)
