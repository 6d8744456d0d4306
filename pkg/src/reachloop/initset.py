"""Search for the certified initial subset under a fixed controller.

Rounds of widest-axis bisection refine only the part of ``X0`` that is not yet
certified; every sub-box is verified from scratch and kept once certified.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import IntervalBox
from .reach import ReachConfig, Verdict, VerdictKind, check_verdict, compute_flowpipe

__all__ = ["InitSetResult", "search_initial_set"]


@dataclass
class InitSetResult:
    """Certified sub-boxes of ``X0`` (their union is ``X_I``) and the rest."""

    X0: IntervalBox
    boxes: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    remainder: list = field(default_factory=list)
    remainder_verdicts: list = field(default_factory=list)
    depth: int = 0
    calls: int = 0

    @property
    def coverage(self) -> float:
        total = self.X0.volume()
        if total == 0:
            return 1.0 if self.boxes else 0.0
        return sum(b.volume() for b in self.boxes) / total

    @property
    def empty(self) -> bool:
        return not self.boxes

    def contains(self, x) -> bool:
        return any(b.contains_point(x) for b in self.boxes)

    def sample(self, rng, n: int) -> np.ndarray:
        """Uniform samples from the union of certified boxes."""
        if self.empty:
            raise ValueError("X_I is empty")
        rng = np.random.default_rng(rng)
        vol = np.array([b.volume() for b in self.boxes])
        p = vol / vol.sum() if vol.sum() > 0 else None
        idx = rng.choice(len(self.boxes), size=n, p=p)
        lo = np.array([b.lo for b in self.boxes])[idx]
        w = np.array([b.width for b in self.boxes])[idx]
        return lo + rng.random(lo.shape) * w

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.X0.dim
        w.writerow([f"lo{i + 1}" for i in range(n)] + [f"hi{i + 1}" for i in range(n)] + ["goal_step"])
        for b, v in zip(self.boxes, self.verdicts):
            w.writerow([repr(float(z)) for z in np.concatenate([b.lo, b.hi])] + [v.step])
        return buf.getvalue()

    def summary(self) -> dict:
        unknown = sum(v.kind is VerdictKind.UNKNOWN for v in self.remainder_verdicts)
        return {
            "coverage": self.coverage,
            "certified_boxes": len(self.boxes),
            "remainder_boxes": len(self.remainder),
            "unknown_boxes": unknown,
            "depth": self.depth,
            "verifier_calls": self.calls,
        }


def _bisect(box: IntervalBox) -> tuple[IntervalBox, IntervalBox]:
    return box.split(int(np.argmax(box.width)))


def _key(box: IntervalBox):
    return tuple(box.lo) + tuple(box.hi)


def search_initial_set(
    sys,
    controller,
    X0: IntervalBox,
    unsafe: IntervalBox,
    goal: IntervalBox,
    T: int,
    reach_cfg: ReachConfig = ReachConfig(),
    max_depth: int = 6,
) -> InitSetResult:
    """Certified subset of ``X0`` by repeated bisection of the uncertified rest.

    Round 0 verifies ``X0`` itself; round ``k`` halves every remaining box
    along its widest axis and verifies both halves. The search ends when the
    remainder is empty, when a round certifies nothing new after something
    has been certified, or after ``max_depth`` rounds. Boxes whose flowpipe
    blows up stay in the remainder with an Unknown verdict.
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    result = InitSetResult(X0)

    def verify(box):
        result.calls += 1
        fp = compute_flowpipe(sys, controller, box, T, reach_cfg)
        return check_verdict(fp, unsafe, goal)

    pending = [X0]
    for depth in range(max_depth + 1):
        if depth:
            pending = [half for b in pending for half in _bisect(b)]
        result.depth = depth
        rest, rest_verdicts = [], []
        gained = 0
        for box in pending:
            v = verify(box)
            if v.is_reach_avoid:
                result.boxes.append(box)
                result.verdicts.append(v)
                gained += 1
            else:
                rest.append(box)
                rest_verdicts.append(v)
        pending = rest
        result.remainder, result.remainder_verdicts = rest, rest_verdicts
        if not pending or (gained == 0 and result.boxes):
            break
    order = sorted(range(len(result.boxes)), key=lambda i: _key(result.boxes[i]))
    result.boxes = [result.boxes[i] for i in order]
    result.verdicts = [result.verdicts[i] for i in order]
    return result


def certified_verdict(result: InitSetResult) -> Verdict:
    """Summary verdict for ``X_I``: ReachAvoid when nonempty."""
    if result.empty:
        return Verdict(VerdictKind.GOAL_NOT_REACHED, None, "no sub-box of X0 certified")
    steps = [v.step for v in result.verdicts]
    return Verdict(VerdictKind.REACH_AVOID, max(steps), f"X_I covers {result.coverage:.3f} of X0")
