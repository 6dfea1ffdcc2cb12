"""Minimal dense network with manual backprop.

Deliberately framework-free: the update rules under test are literal
"parameters += step * gradient" forms, and the gradients themselves are
checked against finite differences, so every array op needs to be visible.
Hidden layers are rectified, the output layer is affine. float64 throughout.
"""
from __future__ import annotations

import numpy as np

__all__ = ["Mlp"]


class Mlp:
    """Fully connected [d_in, hidden..., d_out] network.

    Weights are initialized uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
    biases at zero.
    """

    def __init__(self, layer_sizes: list[int], rng: np.random.Generator):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = list(layer_sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out, dtype=np.float64))

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """x: (d_in,) or (batch, d_in). Returns matching (d_out,) or (batch, d_out)."""
        out, _ = self.forward_cached(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return out[0] if np.asarray(x).ndim == 1 else out

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Batched forward pass keeping pre/post activations for backprop."""
        h = x
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = z if i == last else np.maximum(z, 0.0)
            cache.append(h)
        return h, cache

    def backward(
        self, cache: list[np.ndarray], gout: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Gradients of sum_b <gout[b], output[b]> w.r.t. weights and biases.

        cache comes from forward_cached on the same batch. Scaling of gout is
        the caller's business (e.g. divide by batch size for a mean).
        """
        gw = [np.zeros_like(w) for w in self.weights]
        gb = [np.zeros_like(b) for b in self.biases]
        g = gout
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                # Rectifier mask: cache[i+1] holds the post-activation values.
                g = g * (cache[i + 1] > 0.0)
            gw[i] = g.T @ cache[i]
            gb[i] = g.sum(axis=0)
            g = g @ self.weights[i]
        return gw, gb

    def grad_output(self, x: np.ndarray, index: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Gradient of a single output unit for a single input."""
        out, cache = self.forward_cached(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        gout = np.zeros_like(out)
        gout[0, index] = 1.0
        return self.backward(cache, gout)

    def apply(self, gw: list[np.ndarray], gb: list[np.ndarray], scale: float) -> None:
        """parameters += scale * gradient, in place."""
        for w, g in zip(self.weights, gw):
            w += scale * g
        for b, g in zip(self.biases, gb):
            b += scale * g

    def clone(self) -> "Mlp":
        other = object.__new__(Mlp)
        other.layer_sizes = list(self.layer_sizes)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def copy_from(self, other: "Mlp") -> None:
        if other.layer_sizes != self.layer_sizes:
            raise ValueError("shape mismatch")
        self.weights = [w.copy() for w in other.weights]
        self.biases = [b.copy() for b in other.biases]

    def all_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )

    # -- flat parameter view, used by checkpoints and finite-difference tests --

    def get_flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [b.ravel() for b in self.biases])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for w in self.weights:
            w[...] = flat[pos : pos + w.size].reshape(w.shape)
            pos += w.size
        for b in self.biases:
            b[...] = flat[pos : pos + b.size]
            pos += b.size
        if pos != flat.size:
            raise ValueError("flat parameter vector has wrong length")

    def to_obj(self) -> dict:
        return {
            "version": 1,
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "Mlp":
        if obj.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
        net = object.__new__(cls)
        net.layer_sizes = list(obj["layer_sizes"])
        net.weights = [np.array(w, dtype=np.float64) for w in obj["weights"]]
        net.biases = [np.array(b, dtype=np.float64) for b in obj["biases"]]
        for w, (fan_out, fan_in) in zip(net.weights, zip(net.layer_sizes[1:], net.layer_sizes)):
            if w.shape != (fan_out, fan_in):
                raise ValueError("checkpoint layer shape mismatch")
        return net
