"""Geometric affine normalization and residual-MLP local aggregation.

A neighborhood of K points is normalized against its center by the global
RMS of the deviations, lifted per neighbor through a residual MLP, reduced
by a channel-wise max over the K neighbors, and refined per center by a
second residual MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .nn import AffineMap, rms_norm, silu
from .sample import NeighborhoodIndex


@dataclass
class GAMParams:
    """Per-channel scale/shift for the geometric affine normalization.

    ``alpha`` multiplies the normalized deviations, ``beta`` (optional,
    zero-initialized) shifts them, ``delta`` guards the division. With
    ``per_center`` the RMS is computed per neighborhood instead of once per
    cloud.
    """

    alpha: np.ndarray
    beta: np.ndarray | None = None
    delta: float = 1e-5
    per_center: bool = False

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @classmethod
    def init(cls, d: int, delta: float = 1e-5, with_beta: bool = True):
        return cls(
            alpha=np.ones(d),
            beta=np.zeros(d) if with_beta else None,
            delta=delta,
        )

    def named_params(self, prefix: str):
        yield f"{prefix}.alpha", self.alpha
        if self.beta is not None:
            yield f"{prefix}.beta", self.beta


def gam_sigma(neighborhood_features: np.ndarray, center_features: np.ndarray) -> float:
    """RMS of neighbor deviations from their centers, one scalar per cloud.

    sigma = sqrt(mean over all centers, neighbors, channels of
    (f_ij - f_i)^2).
    """
    dev = neighborhood_features - center_features[:, None, :]
    return float(np.sqrt((dev * dev).mean()))


def _sigma_per_center(neigh, centers):
    dev = neigh - centers[:, None, :]
    return np.sqrt((dev * dev).mean(axis=(1, 2)))


def gam_normalize(
    neighborhood_features: np.ndarray,
    center_features: np.ndarray,
    params: GAMParams,
) -> np.ndarray:
    """alpha * (f_ij - f_i) / (sigma + delta) + beta, elementwise."""
    dev = neighborhood_features - center_features[:, None, :]
    if params.per_center:
        sigma = _sigma_per_center(neighborhood_features, center_features)[:, None, None]
    else:
        sigma = gam_sigma(neighborhood_features, center_features)
    out = params.alpha * dev / (sigma + params.delta)
    if params.beta is not None:
        out = out + params.beta
    return out


@dataclass
class ResidualMLP:
    """x + norm(affine2(silu(norm(affine1(x))))) with equal in/out width."""

    affine1: AffineMap
    affine2: AffineMap
    norm1_scale: np.ndarray
    norm2_scale: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, d: int):
        return cls(
            affine1=AffineMap.init(rng, d, d),
            affine2=AffineMap.init(rng, d, d),
            norm1_scale=np.ones(d),
            norm2_scale=np.ones(d),
        )

    def __call__(self, x):
        h = silu(rms_norm(self.affine1(x), self.norm1_scale))
        return x + rms_norm(self.affine2(h), self.norm2_scale)

    def named_params(self, prefix: str):
        yield from self.affine1.named_params(f"{prefix}.affine1")
        yield from self.affine2.named_params(f"{prefix}.affine2")
        yield f"{prefix}.norm1_scale", self.norm1_scale
        yield f"{prefix}.norm2_scale", self.norm2_scale


@dataclass
class MLPStack:
    """Optional width-changing entry affine followed by residual blocks."""

    entry: AffineMap | None
    blocks: list = field(default_factory=list)

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, depth: int = 1):
        entry = None if d_in == d_out else AffineMap.init(rng, d_in, d_out)
        return cls(entry=entry, blocks=[ResidualMLP.init(rng, d_out) for _ in range(depth)])

    @property
    def d_in(self) -> int:
        if self.entry is not None:
            return self.entry.d_in
        return self.blocks[0].affine1.d_in

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise ConfigurationError(
                f"stack expects {self.d_in} input channels, got {x.shape[-1]}"
            )
        if self.entry is not None:
            x = self.entry(x)
        for block in self.blocks:
            x = block(x)
        return x

    def named_params(self, prefix: str):
        if self.entry is not None:
            yield from self.entry.named_params(f"{prefix}.entry")
        for i, block in enumerate(self.blocks):
            yield from block.named_params(f"{prefix}.block{i}")


def local_aggregate(
    features: np.ndarray,
    neighborhood: NeighborhoodIndex,
    phi1: MLPStack,
    phi2: MLPStack,
    gam: GAMParams,
) -> np.ndarray:
    """Per-center features: phi2(maxpool_K(phi1(GAM(neighbors)))).

    The max over the K neighbors makes the result invariant to neighbor
    order and to duplicated neighbors.
    """
    neigh = features[neighborhood.neighbors]  # (M, K, D_in)
    centers = features[neighborhood.centers]  # (M, D_in)
    if features.shape[-1] != gam.alpha.shape[0]:
        raise ConfigurationError(
            f"GAM expects {gam.alpha.shape[0]} channels, got {features.shape[-1]}"
        )
    g = gam_normalize(neigh, centers, gam)
    m, k, d_in = g.shape
    lifted = phi1(g.reshape(m * k, d_in)).reshape(m, k, -1)
    pooled = lifted.max(axis=1)
    return phi2(pooled)
