"""Small dense-layer primitives shared by the local and sequence modules.

All math is plain numpy in the dtype of the inputs; parameters are created
in float64 from an explicit Generator so builds are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


def silu(x):
    return x / (1.0 + np.exp(-x))


def softplus(x):
    # log(1 + e^x) without overflow for large x
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    # x such that softplus(x) == y, for y > 0
    return np.log(np.expm1(y))


def rms_norm(x, scale, eps=1e-8):
    """Channel-wise RMS normalization with a learnable per-channel scale."""
    rms = np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)
    return x / rms * scale


@dataclass
class AffineMap:
    """y = x @ w.T + b with weight shape (d_out, d_in)."""

    w: np.ndarray
    b: np.ndarray | None = None

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        limit = 1.0 / np.sqrt(d_in)
        w = rng.uniform(-limit, limit, size=(d_out, d_in))
        return cls(w=w, b=np.zeros(d_out) if bias else None)

    @property
    def d_in(self) -> int:
        return self.w.shape[1]

    @property
    def d_out(self) -> int:
        return self.w.shape[0]

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise ConfigurationError(
                f"affine expects {self.d_in} input channels, got {x.shape[-1]}"
            )
        y = x @ self.w.T
        if self.b is not None:
            y = y + self.b
        return y

    def named_params(self, prefix: str):
        yield f"{prefix}.w", self.w
        if self.b is not None:
            yield f"{prefix}.b", self.b
