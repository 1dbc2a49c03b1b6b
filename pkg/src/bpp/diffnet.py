"""Minimal feedforward network with hand-written backprop and Adam.

The engine is deliberately small: a fixed chain of dense layers, each followed
by one of a few smooth activations. Inputs pass through an optional fixed
feature map and an affine normalization; outputs are de-normalized affinely.

Weights are stored as ``(fan_in, fan_out)`` and applied as ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WEIGHTS_VERSION = 1
_CHUNK = 64


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "softplus": (_softplus, lambda x, y: _sigmoid(x)),
    "identity": (lambda x: x, lambda x, y: np.ones_like(x)),
}

# Fixed, parameter-free input feature maps applied before the affine normalization.
INPUT_MAPS = {
    "none": (lambda x: x, lambda x: np.ones_like(x)),
    # log(1 - x) for x <= 0: spreads the dispersion range [-500, 0] evenly
    "neglog1p": (lambda x: np.log1p(-x), lambda x: -1.0 / (1.0 - x)),
}


def _matmul_rows(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    # Fixed-size GEMM blocks make each output row independent of batch size
    # (BLAS picks different kernels for different M, which changes rounding).
    n = X.shape[0]
    pad = (-n) % _CHUNK
    if pad:
        X = np.concatenate([X, np.zeros((pad, X.shape[1]))], axis=0)
    out = np.empty((X.shape[0], W.shape[1]))
    for s in range(0, X.shape[0], _CHUNK):
        np.matmul(X[s : s + _CHUNK], W, out=out[s : s + _CHUNK])
    return out[:n]


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "tanh"


@dataclass
class GradTape:
    """Per-layer inputs and outputs cached by one forward pass."""

    net_id: int
    net_version: int
    x_raw: np.ndarray
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    used: bool = False


class StaleTapeError(RuntimeError):
    pass


class DiffNet:
    def __init__(
        self,
        layers: list[Layer],
        in_shift=None,
        in_scale=None,
        out_shift=None,
        out_scale=None,
        input_map: str = "none",
    ):
        if not layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ValueError("layer dimensions do not chain")
        for layer in layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.b.shape != (layer.W.shape[1],):
                raise ValueError("bias shape does not match weight")
        if input_map not in INPUT_MAPS:
            raise ValueError(f"unknown input map {input_map!r}")
        self.layers = layers
        n_in, n_out = self.in_dim, self.out_dim
        self.in_shift = np.zeros(n_in) if in_shift is None else np.asarray(in_shift, float)
        self.in_scale = np.ones(n_in) if in_scale is None else np.asarray(in_scale, float)
        self.out_shift = np.zeros(n_out) if out_shift is None else np.asarray(out_shift, float)
        self.out_scale = np.ones(n_out) if out_scale is None else np.asarray(out_scale, float)
        self.input_map = input_map
        self._version = 0

    @classmethod
    def init(
        cls,
        sizes: list[int],
        activation: str = "tanh",
        out_activation: str = "identity",
        seed: int = 0,
        **kwargs,
    ) -> "DiffNet":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        layers = []
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            lim = np.sqrt(6.0 / (fi + fo))
            act = out_activation if i == len(sizes) - 2 else activation
            layers.append(Layer(rng.uniform(-lim, lim, (fi, fo)), np.zeros(fo), act))
        return cls(layers, **kwargs)

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [l.W.shape[1] for l in self.layers]

    def n_params(self) -> int:
        return sum(l.W.size + l.b.size for l in self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.W, l.b]
        return out

    def mark_updated(self):
        self._version += 1

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of width {self.in_dim}, got shape {x.shape}")
        return x

    def forward(self, x, tape: bool = False):
        """Map a batch ``(B, in_dim)`` to ``(B, out_dim)``.

        With ``tape=True`` also returns a :class:`GradTape` for :meth:`backward`.
        """
        x = self._check_input(x)
        fmap, _ = INPUT_MAPS[self.input_map]
        h = (fmap(x) - self.in_shift) / self.in_scale
        t = GradTape(id(self), self._version, x) if tape else None
        for layer in self.layers:
            act, _ = ACTIVATIONS[layer.activation]
            a = _matmul_rows(h, layer.W) + layer.b
            y = act(a)
            if t is not None:
                t.inputs.append(h)
                t.pre.append(a)
                t.post.append(y)
            h = y
        out = self.out_shift + self.out_scale * h
        return (out, t) if tape else out

    __call__ = forward

    def backward(self, tape: GradTape, cotangent):
        """Vector-Jacobian product of the taped forward.

        Returns ``(param_grads, input_grad)`` where ``param_grads`` is a list
        ``[dW0, db0, dW1, db1, ...]`` aligned with :meth:`params`.
        """
        if tape.net_id != id(self) or tape.net_version != self._version:
            raise StaleTapeError("tape was recorded on a different network state")
        if tape.used:
            raise StaleTapeError("tape already consumed")
        tape.used = True
        g = np.asarray(cotangent, dtype=float).reshape(tape.post[-1].shape) * self.out_scale
        grads: list[np.ndarray] = []
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            _, dact = ACTIVATIONS[layer.activation]
            g = g * dact(tape.pre[i], tape.post[i])
            grads = [tape.inputs[i].T @ g, g.sum(axis=0)] + grads
            g = g @ layer.W.T
        _, dmap = INPUT_MAPS[self.input_map]
        dx = g / self.in_scale * dmap(tape.x_raw)
        return grads, dx

    def input_grad(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Outputs and d(sum of outputs)/d(input); only meaningful for scalar nets."""
        y, t = self.forward(x, tape=True)
        _, dx = self.backward(t, np.ones_like(y))
        return y, dx

    def copy(self) -> "DiffNet":
        return DiffNet(
            [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers],
            self.in_shift.copy(), self.in_scale.copy(),
            self.out_shift.copy(), self.out_scale.copy(), self.input_map,
        )

    def to_dict(self) -> dict:
        return {
            "version": WEIGHTS_VERSION,
            "layer_sizes": self.sizes,
            "activations": [l.activation for l in self.layers],
            "input_map": self.input_map,
            "weights": [l.W.tolist() for l in self.layers],
            "biases": [l.b.tolist() for l in self.layers],
            "input_normalization": {"shift": self.in_shift.tolist(), "scale": self.in_scale.tolist()},
            "output_normalization": {"shift": self.out_shift.tolist(), "scale": self.out_scale.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffNet":
        if d.get("version") != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weight file version {d.get('version')!r}")
        layers = [
            Layer(np.asarray(W, float).reshape(fi, fo), np.asarray(b, float), act)
            for W, b, act, fi, fo in zip(
                d["weights"], d["biases"], d["activations"], d["layer_sizes"][:-1], d["layer_sizes"][1:]
            )
        ]
        net = cls(
            layers,
            d["input_normalization"]["shift"], d["input_normalization"]["scale"],
            d["output_normalization"]["shift"], d["output_normalization"]["scale"],
            d.get("input_map", "none"),
        )
        if not all(np.all(np.isfinite(p)) for p in net.params()):
            raise ValueError("weight file contains non-finite parameters")
        return net

    def save(self, path, extra: dict | None = None):
        d = self.to_dict()
        if extra:
            d["meta"] = extra
        # repr round-trips float64 exactly
        Path(path).write_text(json.dumps(d))

    @classmethod
    def load(cls, path) -> "DiffNet":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(target, grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update.

    ``target`` is a :class:`DiffNet` or a flat list of parameter arrays.
    """
    params = target.params() if isinstance(target, DiffNet) else target
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    if isinstance(target, DiffNet):
        target.mark_updated()


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm:
        for g in grads:
            g *= max_norm / (total + 1e-12)
    return total
