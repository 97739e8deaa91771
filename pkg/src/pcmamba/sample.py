"""Downsampling and neighborhood construction.

Everything here is deterministic: farthest-point sampling starts from the
lexicographically smallest point by default, k-nearest-neighbor ties are
broken by lexicographic coordinates then input index, and the seeded random
sampler uses an explicit PCG64 stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .pointset import PointCloud, canonical_tiebreak_order

DETERMINISTIC_MIN = "deterministic_min"


@dataclass(frozen=True)
class NeighborhoodIndex:
    """K nearest base points per center, rows sorted by ascending distance."""

    centers: np.ndarray
    neighbors: np.ndarray
    k: int

    def __post_init__(self):
        centers = np.ascontiguousarray(self.centers, dtype=np.int64)
        neighbors = np.ascontiguousarray(self.neighbors, dtype=np.int64)
        if neighbors.ndim != 2 or neighbors.shape != (len(centers), self.k):
            raise ValueError("neighbors must be (len(centers), k)")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "neighbors", neighbors)


def _coords_of(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.coords
    return np.ascontiguousarray(cloud, dtype=np.float64)


def farthest_point_sample(cloud, m: int, start=DETERMINISTIC_MIN) -> np.ndarray:
    """Greedy max-min subset of m point indices.

    ``start=deterministic_min`` seeds the greedy pass at the lexicographically
    smallest point, which makes the selection a pure function of geometry;
    an integer seeds it at that index. Ties in the max-min distance keep the
    earliest index.
    """
    coords = _coords_of(cloud)
    n = len(coords)
    if not 1 <= m <= n:
        raise ValueError(f"m must lie in [1, {n}], got {m}")
    if start == DETERMINISTIC_MIN:
        first = int(canonical_tiebreak_order(coords)[0])
    else:
        first = int(start)
        if not 0 <= first < n:
            raise ValueError(f"start index {first} out of range")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = first
    d2 = ((coords - coords[first]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(d2))
        selected[i] = nxt
        np.minimum(d2, ((coords - coords[nxt]) ** 2).sum(axis=1), out=d2)
    return selected


def random_sample(cloud, m: int, seed: int) -> np.ndarray:
    """Seeded uniform sample of m indices without replacement (PCG64)."""
    coords = _coords_of(cloud)
    n = len(coords)
    if not 1 <= m <= n:
        raise ValueError(f"m must lie in [1, {n}], got {m}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.choice(n, size=m, replace=False).astype(np.int64)


def _chunked_sq_dists(query: np.ndarray, base: np.ndarray, row_handler, chunk_rows=None):
    """Apply row_handler(start, d2_block) over exact squared distances."""
    n = len(base)
    if chunk_rows is None:
        chunk_rows = max(1, int(4_000_000 // max(n, 1)))
    for s in range(0, len(query), chunk_rows):
        block = query[s : s + chunk_rows]
        d2 = ((block[:, None, :] - base[None, :, :]) ** 2).sum(axis=2)
        row_handler(s, d2)


def knn(query_coords, base_coords, k: int) -> NeighborhoodIndex:
    """Exact k nearest base points per query point.

    Distances are computed from explicit coordinate differences (no expanded
    quadratic form), so equal distances are exactly equal and the tie rule
    is meaningful: lexicographically smaller base coordinates win, then the
    smaller base index.
    """
    query = _coords_of(query_coords)
    base = _coords_of(base_coords)
    n = len(base)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    # Pre-sort base points canonically; a stable argsort on distances then
    # resolves ties in canonical order automatically.
    base_rank = canonical_tiebreak_order(base)
    base_sorted = base[base_rank]
    neighbors = np.empty((len(query), k), dtype=np.int64)

    def handle(start, d2):
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        neighbors[start : start + len(order)] = base_rank[order]

    _chunked_sq_dists(query, base_sorted, handle)
    return NeighborhoodIndex(centers=np.arange(len(query)), neighbors=neighbors, k=k)


def voxel_grid_sample(cloud: PointCloud, cell_size: float) -> PointCloud:
    """One representative point per occupied voxel of edge ``cell_size``.

    The representative is the member closest to the centroid of the points
    in that voxel (ties canonical); output order follows the lexicographic
    voxel index.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    coords = cloud.coords
    vox = np.floor(coords / cell_size).astype(np.int64)
    _, inverse = np.unique(vox, axis=0, return_inverse=True)
    reps = []
    for group in range(inverse.max() + 1):
        members = np.flatnonzero(inverse == group)
        pts = coords[members]
        d2 = ((pts - pts.mean(axis=0)) ** 2).sum(axis=1)
        pick = np.lexsort((members, pts[:, 2], pts[:, 1], pts[:, 0], d2))[0]
        reps.append(members[pick])
    return cloud.select(np.asarray(reps, dtype=np.int64))


def interpolate_features(
    target_coords, source_coords, source_features, k: int = 3
) -> np.ndarray:
    """Inverse-distance-weighted feature transfer from source to target points.

    Each target gets the 1/d-weighted average of its k nearest sources; a
    target that coincides exactly with a source copies that source's feature.
    """
    target = _coords_of(target_coords)
    source = _coords_of(source_coords)
    feats = np.asarray(source_features, dtype=np.float64)
    if len(source) == 0:
        raise InvalidInputError("interpolation needs at least one source point")
    if len(source) < k:
        raise ValueError(f"need at least k={k} source points, got {len(source)}")
    hood = knn(target, source, k)
    diffs = target[:, None, :] - source[hood.neighbors]
    dist = np.sqrt((diffs**2).sum(axis=2))  # (M, k), rows ascending
    out = np.empty((len(target), feats.shape[1]), dtype=feats.dtype)
    exact = dist[:, 0] == 0.0
    if exact.any():
        out[exact] = feats[hood.neighbors[exact, 0]]
    rest = ~exact
    if rest.any():
        w = 1.0 / dist[rest]
        w /= w.sum(axis=1, keepdims=True)
        out[rest] = np.einsum("mk,mkc->mc", w, feats[hood.neighbors[rest]])
    return out
