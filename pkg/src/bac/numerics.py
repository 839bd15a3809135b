"""Dense MLPs with hand-written backprop, Adam, and gradient utilities.

Every network in the package (actor, twin critics and their targets, the
autoencoder, the auxiliary critic) is an :class:`MlpParams`. Inputs may be a
single vector or a batch with samples along the first axis; gradients from a
batch are summed over the samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "linear")


class NumericalError(ValueError):
    """A non-finite value would have entered or left a public operation."""


class MlpParams:
    """Layer weights ``(out, in)``, biases ``(out,)`` and activation names.

    All parameters live in one flat float64 buffer; ``weights`` and
    ``biases`` are views into it, in the order w0, b0, w1, b1, ...
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], activations: Sequence[str]):
        if not (len(weights) == len(biases) == len(activations)):
            raise ValueError("weights, biases and activations must have equal length")
        if not weights:
            raise ValueError("an MLP needs at least one layer")
        shapes = []
        for i, (w, b, act) in enumerate(zip(weights, biases, activations)):
            w, b = np.asarray(w), np.asarray(b)
            if act not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i > 0 and shapes[-2][0] != w.shape[1]:
                raise ValueError(f"layer {i}: input width {w.shape[1]} != previous output width")
            shapes.extend((w.shape, b.shape))
        flat = np.concatenate([np.ravel(a) for pair in zip(weights, biases) for a in pair]).astype(np.float64)
        self._bind(flat, tuple(shapes), tuple(activations))

    def _bind(self, flat: np.ndarray, shapes: tuple, activations: tuple) -> None:
        self.flat = flat
        self.shapes = shapes
        self.activations = list(activations)
        views, pos = [], 0
        for shape in shapes:
            size = math.prod(shape)
            views.append(flat[pos:pos + size].reshape(shape))
            pos += size
        self.weights = views[0::2]
        self.biases = views[1::2]

    @classmethod
    def from_flat(cls, flat: np.ndarray, like: "MlpParams") -> "MlpParams":
        """Wrap ``flat`` (not copied) with the layout of ``like``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != like.flat.shape:
            raise ValueError(f"expected {like.flat.size} values, got {flat.size}")
        out = cls.__new__(cls)
        out._bind(flat, like.shapes, tuple(like.activations))
        return out

    def __repr__(self) -> str:
        sizes = [self.input_dim] + [w.shape[0] for w in self.weights]
        return f"MlpParams(sizes={sizes}, activations={self.activations})"

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return self.flat.size

    def copy(self) -> "MlpParams":
        return MlpParams.from_flat(self.flat.copy(), self)

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def to_vector(self) -> np.ndarray:
        return self.flat.copy()

    def with_vector(self, vec: np.ndarray) -> "MlpParams":
        """Return a copy whose parameters are read from a flat vector."""
        return MlpParams.from_flat(np.array(vec, dtype=np.float64).reshape(-1), self)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def global_norm(self) -> float:
        v = self.to_vector()
        return float(np.sqrt(v @ v))

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet([w * factor for w in self.weights], [b * factor for b in self.biases])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "GradientSet":
        return cls([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])


@dataclass
class AdamState:
    """Adam moments, stored flat in the same order as ``MlpParams.flat``."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: MlpParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), 0, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2, self.eps)


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations recorded by :func:`mlp_forward`."""

    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    batched: bool = True


def init_mlp(sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> MlpParams:
    """Uniform ``±1/sqrt(fan_in)`` initialization for weights and biases.

    ``sizes`` lists the layer widths including input and output, so a net
    with ``len(sizes) - 1`` layers is produced.
    """
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases, list(activations))


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "tanh":
        return np.tanh(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: np.ndarray, y: np.ndarray, act: str) -> np.ndarray | float:
    if act == "tanh":
        return 1.0 - y * y
    if act == "relu":
        return z > 0.0
    return 1.0


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on a vector or a ``(batch, input_dim)`` array."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != params.input_dim:
        raise ValueError(f"input shape {x.shape} does not match input width {params.input_dim}")
    h = x if batched else x[None, :]
    cache = ForwardCache(batched=batched)
    for w, b, act in zip(params.weights, params.biases, params.activations):
        cache.inputs.append(h)
        z = h @ w.T + b
        h = _activate(z, act)
        cache.preacts.append(z)
        cache.outputs.append(h)
    # a sum is non-finite iff some entry is (or the sum overflows)
    if not np.isfinite(h.sum()):
        raise NumericalError("non-finite network output")
    return (h if batched else h[0]), cache


def mlp_backward(
    params: MlpParams, cache: ForwardCache, output_gradient: np.ndarray, need_params: bool = True
) -> tuple[GradientSet | None, np.ndarray]:
    """Reverse-mode gradients of ``sum(output * output_gradient)``.

    Returns parameter gradients (``None`` when ``need_params`` is false, which
    skips the weight outer products) and the gradient w.r.t. the input.
    """
    g = np.asarray(output_gradient, dtype=np.float64)
    if len(cache.inputs) != len(params.weights):
        raise ValueError("cache does not belong to this network")
    if not cache.batched:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise ValueError(f"output gradient shape {g.shape} != output shape {cache.outputs[-1].shape}")
    n = len(params.weights)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        act = params.activations[i]
        if act != "linear":
            g = g * _activation_grad(cache.preacts[i], cache.outputs[i], act)
        if need_params:
            dws[i] = g.T @ cache.inputs[i]
            dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    grad_in = g if cache.batched else g[0]
    return (GradientSet(dws, dbs) if need_params else None), grad_in


def adam_step(
    params: MlpParams, grads: GradientSet, state: AdamState, learning_rate: float
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam descent step; returns new params and state."""
    g = grads.to_vector()
    if g.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ValueError(f"shape mismatch: params {params.flat.shape}, grads {g.shape}, state {state.m.shape}")
    if not np.isfinite(g @ g):
        raise NumericalError("refusing Adam update with non-finite gradients")
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * (g * g)
    step_size = learning_rate / (1.0 - b1 ** t)
    denom = np.sqrt(v / (1.0 - b2 ** t))
    denom += state.eps
    flat = params.flat - step_size * m / denom
    return MlpParams.from_flat(flat, params), AdamState(m, v, t, b1, b2, state.eps)


def global_norm_clip(grads: GradientSet, max_norm: float) -> GradientSet:
    """Rescale all entries jointly so the global L2 norm is at most ``max_norm``."""
    if not max_norm > 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    if not grads.is_finite():
        raise NumericalError("cannot clip non-finite gradients")
    norm = grads.global_norm()
    if norm <= max_norm:
        return grads
    return grads.scaled(max_norm / norm)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def polyak(target: MlpParams, source: MlpParams, tau: float) -> MlpParams:
    """Elementwise ``tau * source + (1 - tau) * target``."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if tau == 1.0:
        return source.copy()
    return MlpParams.from_flat(tau * source.flat + (1.0 - tau) * target.flat, target)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))
