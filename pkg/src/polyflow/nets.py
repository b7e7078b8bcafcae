"""Small fully-connected vector-field networks with hand-rolled gradients.

The network maps (state, time) -> velocity. It exposes reverse-mode
parameter gradients for training and a forward-mode directional derivative
(JVP) in the state argument, which is what exact divergence computation
needs. The smooth activation keeps the field C^1 so the divergence is well
defined everywhere.

Checkpoints store weights as base64 little-endian float64 regardless of the
compute dtype, so a float32-trained model reloads bit-stably.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
from scipy.special import expit

__all__ = ["VectorFieldNet", "Adam", "silu", "silu_deriv"]


def silu(x):
    return x * expit(x)


def silu_deriv(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()


def _decode(blob: str, shape) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(blob), dtype="<f8")
    return flat.reshape(shape).copy()


class VectorFieldNet:
    """MLP velocity field psi(h, t) with SiLU hidden layers.

    Input is the state with the scalar time appended; the output layer is
    zero-initialized so a fresh network is exactly the zero field (an
    untrained flow is the identity map).
    """

    def __init__(self, dim: int, hidden=(64, 64, 64), seed: int = 0,
                 dtype=np.float64):
        if dim < 1:
            raise ValueError("state dimension must be positive")
        self.dim = int(dim)
        self.hidden = tuple(int(w) for w in hidden)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        sizes = [self.dim + 1, *self.hidden, self.dim]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if i == len(sizes) - 2:
                W = np.zeros((n_in, n_out))
            else:
                W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
            self.weights.append(W.astype(self.dtype))
            self.biases.append(np.zeros(n_out, dtype=self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def _stack(self, h, t):
        h = np.atleast_2d(np.asarray(h, dtype=self.dtype))
        tcol = np.broadcast_to(np.asarray(t, dtype=self.dtype),
                               (h.shape[0],)).reshape(-1, 1)
        return np.concatenate([h, tcol], axis=1)

    def forward(self, h, t):
        """Velocity at states h (n, K) and time t (scalar or (n,))."""
        z = self._stack(h, t)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = silu(z @ W + b)
        return z @ self.weights[-1] + self.biases[-1]

    def forward_cached(self, x):
        """Forward pass keeping layer inputs and pre-activations for backprop."""
        inputs = [x]
        preacts = []
        z = x
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = z @ W + b
            preacts.append(a)
            z = silu(a)
            inputs.append(z)
        out = z @ self.weights[-1] + self.biases[-1]
        return out, inputs, preacts

    def backprop(self, x, dout):
        """Parameter gradients given dL/d(output), with L summed over the batch.

        Returns a list of (dW, db) matching self.weights order.
        """
        _, inputs, preacts = self.forward_cached(x)
        grads = [None] * self.n_layers
        delta = np.asarray(dout, dtype=self.dtype)
        for l in range(self.n_layers - 1, -1, -1):
            grads[l] = (inputs[l].T @ delta, delta.sum(axis=0))
            if l > 0:
                delta = (delta @ self.weights[l].T) * silu_deriv(preacts[l - 1])
        return grads

    def jvp(self, h, t, dh):
        """Forward-mode sensitivity: (psi, d psi in state direction dh).

        Time is held fixed, so only the state block of the input carries a
        tangent.
        """
        z = self._stack(h, t)
        dz = np.concatenate(
            [np.atleast_2d(np.asarray(dh, dtype=self.dtype)),
             np.zeros((z.shape[0], 1), dtype=self.dtype)], axis=1)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = z @ W + b
            da = dz @ W
            z = silu(a)
            dz = da * silu_deriv(a)
        return z @ self.weights[-1] + self.biases[-1], dz @ self.weights[-1]

    def astype(self, dtype) -> "VectorFieldNet":
        """Copy of the network with parameters cast to dtype."""
        out = VectorFieldNet.__new__(VectorFieldNet)
        out.dim = self.dim
        out.hidden = self.hidden
        out.dtype = np.dtype(dtype)
        out.weights = [W.astype(out.dtype) for W in self.weights]
        out.biases = [b.astype(out.dtype) for b in self.biases]
        return out

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "hidden": list(self.hidden),
            "activation": "silu",
            "layers": [
                {"shape": list(W.shape), "W": _encode(W), "b": _encode(b)}
                for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_json(cls, data: dict, dtype=np.float64) -> "VectorFieldNet":
        net = cls(data["dim"], tuple(data["hidden"]), dtype=dtype)
        for layer, W, spot in zip(data["layers"], net.weights, range(len(net.weights))):
            shape = tuple(layer["shape"])
            if shape != W.shape:
                raise ValueError(f"layer {spot} shape mismatch in checkpoint")
            net.weights[spot] = _decode(layer["W"], shape).astype(net.dtype)
            net.biases[spot] = _decode(layer["b"], (shape[1],)).astype(net.dtype)
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path, dtype=np.float64) -> "VectorFieldNet":
        return cls.from_json(json.loads(Path(path).read_text()), dtype=dtype)


class Adam:
    """First-order moments optimizer over a VectorFieldNet's parameters."""

    def __init__(self, net: VectorFieldNet, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [(np.zeros_like(W), np.zeros_like(b))
                  for W, b in zip(net.weights, net.biases)]
        self.v = [(np.zeros_like(W), np.zeros_like(b))
                  for W, b in zip(net.weights, net.biases)]

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for l, (gW, gb) in enumerate(grads):
            for slot, g, param in ((0, gW, self.net.weights[l]),
                                   (1, gb, self.net.biases[l])):
                m = self.m[l][slot]
                v = self.v[l][slot]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                param -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
