"""Controller representations sharing a flat parameter-vector interface.

Both controller types are immutable. The learner works exclusively on
``controller.params()`` / ``controller.with_params(theta)`` so that linear
gains and network weights are perturbed and updated the same way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import IntervalBox
from .interval import Interval, imatmul, matvec

__all__ = [
    "LinearController",
    "NeuralController",
    "perturb",
    "nn_lipschitz_bound",
    "controller_to_text",
    "controller_from_text",
    "evaluate",
]

ACTIVATIONS = ("tanh", "identity")
PERTURB_FLOOR = 0.01


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LinearController:
    """``u = gain . x + bias``. The bias is trainable only if ``train_bias``."""

    gain: np.ndarray
    bias: float = 0.0
    train_bias: bool = False

    def __post_init__(self):
        g = _frozen(self.gain).reshape(-1)
        object.__setattr__(self, "gain", g)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def state_dim(self) -> int:
        return self.gain.size

    @property
    def n_params(self) -> int:
        return self.gain.size + int(self.train_bias)

    def params(self) -> np.ndarray:
        if self.train_bias:
            return np.append(self.gain, self.bias)
        return self.gain.copy()

    def with_params(self, theta) -> "LinearController":
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        if self.train_bias:
            return LinearController(theta[:-1], theta[-1], True)
        return LinearController(theta, self.bias, False)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.state_dim:
            raise ValueError(f"state has dimension {x.shape[-1]}, controller expects {self.state_dim}")
        return (x @ self.gain + self.bias)[..., None]

    def __repr__(self):
        return f"LinearController(gain={self.gain.tolist()}, bias={self.bias})"


@dataclass(frozen=True, eq=False)
class NeuralController:
    """Feed-forward network with scalar output.

    ``weights[i]`` has shape ``(out_i, in_i)``. Hidden layers use
    ``activations[i]``; the output layer is affine.
    """

    weights: tuple
    biases: tuple
    activations: tuple = field(default=None)

    def __post_init__(self):
        W = tuple(_frozen(w) for w in self.weights)
        b = tuple(_frozen(v).reshape(-1) for v in self.biases)
        if len(W) != len(b) or not W:
            raise ValueError("weights and biases must be non-empty and of equal length")
        for i, (w, v) in enumerate(zip(W, b)):
            if w.ndim != 2 or w.shape[0] != v.size:
                raise ValueError(f"layer {i}: weight {w.shape} does not match bias {v.shape}")
            if i and w.shape[1] != W[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {w.shape[1]} != layer {i - 1} output {W[i - 1].shape[0]}")
        if W[-1].shape[0] != 1:
            raise ValueError("the output layer must be scalar")
        acts = self.activations
        if acts is None:
            acts = ("tanh",) * (len(W) - 1)
        acts = tuple(acts)
        if len(acts) != len(W) - 1 or any(a not in ACTIVATIONS for a in acts):
            raise ValueError(f"need one activation in {ACTIVATIONS} per hidden layer, got {acts}")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "activations", acts)

    @classmethod
    def random(cls, layer_sizes: Sequence[int], rng, low=0.0, high=1.0, activation="tanh"):
        """Uniform ``[low, high]`` initialization for every weight and bias."""
        rng = np.random.default_rng(rng)
        W, b = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            W.append(rng.uniform(low, high, (n_out, n_in)))
            b.append(rng.uniform(low, high, n_out))
        return cls(tuple(W), tuple(b), (activation,) * (len(W) - 1))

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def state_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_params(self) -> int:
        return sum(w.size + v.size for w, v in zip(self.weights, self.biases))

    def params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.reshape(-1), v]) for w, v in zip(self.weights, self.biases)])

    def with_params(self, theta) -> "NeuralController":
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        W, b, k = [], [], 0
        for w, v in zip(self.weights, self.biases):
            W.append(theta[k : k + w.size].reshape(w.shape))
            k += w.size
            b.append(theta[k : k + v.size])
            k += v.size
        return NeuralController(tuple(W), tuple(b), self.activations)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.state_dim:
            raise ValueError(f"state has dimension {x.shape[-1]}, controller expects {self.state_dim}")
        z = x
        for i, (w, v) in enumerate(zip(self.weights, self.biases)):
            z = z @ w.T + v
            if i < len(self.activations) and self.activations[i] == "tanh":
                z = np.tanh(z)
        return z

    def interval_forward(self, x: Interval) -> Interval:
        """Layer-by-layer interval enclosure of the output over a batch of boxes."""
        z = x
        for i, (w, v) in enumerate(zip(self.weights, self.biases)):
            z = matvec(w, z) + v
            if i < len(self.activations) and self.activations[i] == "tanh":
                z = z.tanh()
        return z

    def jacobian(self, x) -> np.ndarray:
        """Point Jacobian ``du/dx`` for a batch of states, shape ``(..., 1, n)``."""
        x = np.asarray(x, dtype=float)
        J = np.broadcast_to(np.eye(self.state_dim), x.shape[:-1] + (self.state_dim, self.state_dim))
        z = x
        for i, (w, v) in enumerate(zip(self.weights, self.biases)):
            z = z @ w.T + v
            J = w @ J
            if i < len(self.activations) and self.activations[i] == "tanh":
                z = np.tanh(z)
                J = (1.0 - z * z)[..., :, None] * J
        return J

    def interval_jacobian(self, x: Interval) -> Interval:
        """Enclosure of ``du/dx`` over a batch of boxes, shape ``(..., 1, n)``."""
        n = self.state_dim
        eye = np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n))
        J = Interval(eye, eye)
        z = x
        for i, (w, v) in enumerate(zip(self.weights, self.biases)):
            z = matvec(w, z) + v
            J = imatmul(Interval.point(np.broadcast_to(w, x.shape[:-1] + w.shape)), J)
            if i < len(self.activations) and self.activations[i] == "tanh":
                s = z.tanh_slope()
                J = Interval(s.lo[..., :, None], s.hi[..., :, None]) * J
                z = z.tanh()
        return J

    def __repr__(self):
        return f"NeuralController(layers={self.layer_sizes}, activations={list(self.activations)})"


def evaluate(controller, x) -> np.ndarray:
    """Control vector for a single state (or a batch)."""
    return controller(x)


def perturb(theta, scale, rng):
    """Two-sided perturbation for the difference gradient.

    Each ``p_i`` is uniform on ``[-scale_i, scale_i]``; draws with
    ``|p_i| < 0.01 * scale_i`` are resampled so the per-parameter quotient
    stays bounded. Returns ``(theta + p, theta - p, p)``.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), theta.shape)
    if np.any(scale <= 0):
        raise ValueError("perturbation scale must be positive")
    rng = np.random.default_rng(rng)
    p = rng.uniform(-scale, scale)
    small = np.abs(p) < PERTURB_FLOOR * scale
    while np.any(small):
        p[small] = rng.uniform(-scale[small], scale[small])
        small = np.abs(p) < PERTURB_FLOOR * scale
    return theta + p, theta - p, p


def nn_lipschitz_bound(controller, domain: IntervalBox | None = None) -> float:
    """Upper bound on the Lipschitz constant (Euclidean norms).

    Product over layers of the spectral norm times the largest activation
    slope. With a ``domain`` the tanh slope is bounded on the pre-activation
    range reached from that box instead of globally by 1.
    """
    if isinstance(controller, LinearController):
        return float(np.linalg.norm(controller.gain))
    z = None if domain is None else Interval(domain.lo, domain.hi)
    L = 1.0
    for i, (w, v) in enumerate(zip(controller.weights, controller.biases)):
        L *= float(np.linalg.norm(w, 2))
        if z is not None:
            z = matvec(w, z) + v
        if i < len(controller.activations) and controller.activations[i] == "tanh":
            if z is not None:
                L *= float(z.tanh_slope().hi.max())
                z = z.tanh()
    return L


def controller_to_text(controller) -> str:
    if isinstance(controller, LinearController):
        doc = {
            "type": "linear",
            "state_dim": controller.state_dim,
            "gain": controller.gain.tolist(),
            "bias": controller.bias,
            "train_bias": controller.train_bias,
        }
    elif isinstance(controller, NeuralController):
        doc = {
            "type": "neural",
            "layer_sizes": controller.layer_sizes,
            "activations": list(controller.activations),
            "layers": [
                {"shape": list(w.shape), "weights": w.reshape(-1).tolist(), "bias": v.tolist()}
                for w, v in zip(controller.weights, controller.biases)
            ],
        }
    else:
        raise TypeError(f"cannot serialize {type(controller).__name__}")
    return json.dumps(doc, indent=2) + "\n"


def controller_from_text(text: str):
    doc = json.loads(text)
    kind = doc.get("type")
    if kind == "linear":
        return LinearController(doc["gain"], doc.get("bias", 0.0), bool(doc.get("train_bias", False)))
    if kind == "neural":
        W = [np.array(layer["weights"], dtype=float).reshape(layer["shape"]) for layer in doc["layers"]]
        b = [np.array(layer["bias"], dtype=float) for layer in doc["layers"]]
        return NeuralController(tuple(W), tuple(b), tuple(doc["activations"]))
    raise ValueError(f"unknown controller type {kind!r}")
