"""Flatten 3-D point clouds into 1-D sequences.

Four orderings are provided: the snake-traversal family (six axis-permuted
variants built from a boustrophedon pairing code), Morton/z-order,
transposed z-order, and a 3-D Hilbert curve. All of them quantize the
normalized cloud onto a grid, assign each cell an integer code, and sort
points by code with deterministic tie-breaking.

The pairing code exists in two modes. ``paper_literal`` maps odd rows with
``(n2 + 1) * width - n1``, which collides at row boundaries (the end of an
odd row equals the start of the row two above it). ``bijective`` subtracts
one more (``(n2 + 1) * width - 1 - n1``) and is a true boustrophedon
bijection; it is the default because collisions would make the ordering
depend on sort tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError
from .pointset import NormalizedCloud, PointCloud

MODE_PAPER = "paper_literal"
MODE_BIJECTIVE = "bijective"

CTS_NAMES = ("xyz", "xzy", "yxz", "yzx", "zxy", "zyx")
ORDER_NAMES = CTS_NAMES + ("z", "z-trans", "hilbert")

# which input axis plays code role (c1, c2, c3) for each snake variant
_CTS_PERMS = {
    "xyz": (0, 1, 2),
    "xzy": (0, 2, 1),
    "yxz": (1, 0, 2),
    "yzx": (1, 2, 0),
    "zxy": (2, 0, 1),
    "zyx": (2, 1, 0),
}

MAX_GRID_CTS = 1 << 20
MAX_GRID_INTERLEAVE = 1 << 21


@dataclass(frozen=True)
class GridCoords:
    """Integer grid cells for every point, each component in [0, grid_n)."""

    cells: np.ndarray
    grid_n: int

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        if self.grid_n < 1:
            raise ValueError("grid_n must be >= 1")
        if cells.min(initial=0) < 0 or cells.max(initial=0) >= self.grid_n:
            raise ValueError("grid cell out of range")
        object.__setattr__(self, "cells", cells)


@dataclass(frozen=True)
class SerializationOrder:
    """A named ordering rule: snake variant, z, transposed z, or Hilbert."""

    kind: str  # "cts" | "z" | "z_trans" | "hilbert"
    axis_perm: tuple = (0, 1, 2)  # cts only
    mode: str = MODE_BIJECTIVE  # cts only

    def __post_init__(self):
        if self.kind not in ("cts", "z", "z_trans", "hilbert"):
            raise ValueError(f"unknown serialization kind {self.kind!r}")
        if sorted(self.axis_perm) != [0, 1, 2]:
            raise ValueError(f"axis_perm must permute (0,1,2), got {self.axis_perm}")
        if self.mode not in (MODE_PAPER, MODE_BIJECTIVE):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def name(self) -> str:
        if self.kind == "cts":
            for name, perm in _CTS_PERMS.items():
                if perm == tuple(self.axis_perm):
                    return name
        return {"z": "z", "z_trans": "z-trans", "hilbert": "hilbert"}[self.kind]


def order_from_name(name: str, mode: str = MODE_BIJECTIVE) -> SerializationOrder:
    """Build a SerializationOrder from one of the nine CLI names."""
    if name in _CTS_PERMS:
        return SerializationOrder(kind="cts", axis_perm=_CTS_PERMS[name], mode=mode)
    if name == "z":
        return SerializationOrder(kind="z")
    if name == "z-trans":
        return SerializationOrder(kind="z_trans")
    if name == "hilbert":
        return SerializationOrder(kind="hilbert")
    raise ValueError(
        f"unknown order name {name!r}; valid names: {', '.join(ORDER_NAMES)}"
    )


def grid_quantize(cloud: NormalizedCloud, grid_n: int) -> GridCoords:
    """Quantize normalized coords onto a grid: cell = floor(coord * grid_n).

    A coordinate of exactly 1.0 is clamped into the last cell.
    """
    if grid_n < 1:
        raise ValueError("grid_n must be a positive integer")
    coords = cloud.cloud.coords
    cells = np.floor(coords * grid_n).astype(np.int64)
    np.clip(cells, 0, grid_n - 1, out=cells)
    return GridCoords(cells=cells, grid_n=grid_n)


def code_func(n1, n2, width: int, mode: str = MODE_BIJECTIVE):
    """Pair two non-negative grid indices into one snake-order code.

    Even rows run forward (``n2 * width + n1``), odd rows run backward. In
    ``paper_literal`` mode the backward row is ``(n2 + 1) * width - n1``;
    in ``bijective`` mode it is ``(n2 + 1) * width - 1 - n1``.

    Accepts scalars or equal-shaped integer arrays. Requires 0 <= n1 < width.
    """
    n1a = np.asarray(n1, dtype=np.int64)
    n2a = np.asarray(n2, dtype=np.int64)
    if np.any(n1a < 0) or np.any(n1a >= width):
        raise ValueError(f"n1 must lie in [0, {width})")
    if np.any(n2a < 0):
        raise ValueError("n2 must be non-negative")
    if mode == MODE_PAPER:
        backward = (n2a + 1) * width - n1a
    elif mode == MODE_BIJECTIVE:
        backward = (n2a + 1) * width - 1 - n1a
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = np.where(n2a % 2 == 0, n2a * width + n1a, backward)
    if out.ndim == 0:
        return int(out)
    return out


def cts_code(cell, grid_n: int, axis_perm=(0, 1, 2), mode: str = MODE_BIJECTIVE):
    """Snake-order code of a grid cell (or N x 3 array of cells).

    The two-index pairing is applied twice: first on the roles (c1, c2)
    with width grid_n, then on (inner, c3) with width grid_n**2, since the
    inner code spans [0, grid_n**2). Only that outer width makes the
    composition injective in bijective mode.
    """
    if grid_n > MAX_GRID_CTS:
        raise ValueError(f"grid_n must be <= {MAX_GRID_CTS} for snake codes")
    cells = np.asarray(cell, dtype=np.int64)
    single = cells.ndim == 1
    cells = np.atleast_2d(cells)
    p1 = cells[:, axis_perm[0]]
    p2 = cells[:, axis_perm[1]]
    p3 = cells[:, axis_perm[2]]
    inner = code_func(p1, p2, width=grid_n, mode=mode)
    outer_width = grid_n * grid_n
    if np.any(np.asarray(inner) >= outer_width):
        # only reachable in paper_literal mode at the collision boundary
        inner = np.minimum(inner, outer_width - 1)
    code = code_func(inner, p3, width=outer_width, mode=mode)
    code = np.atleast_1d(np.asarray(code))
    return int(code[0]) if single else code


def _bits_for(grid_n: int) -> int:
    """Bits per axis; grid sizes are rounded up to the next power of two."""
    return max(1, int(np.ceil(np.log2(grid_n))))


def _spread_bits_3(v: np.ndarray) -> np.ndarray:
    """Spread the low 21 bits of v so they occupy every third bit."""
    v = v.astype(np.uint64)
    v &= np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_code(cell, grid_n: int):
    """z-order (Morton) code: bit-interleave of the cell indices, x fastest."""
    if grid_n > MAX_GRID_INTERLEAVE:
        raise ValueError(f"grid_n must be <= {MAX_GRID_INTERLEAVE} for interleaving")
    cells = np.asarray(cell, dtype=np.int64)
    single = cells.ndim == 1
    cells = np.atleast_2d(cells)
    code = (
        _spread_bits_3(cells[:, 0])
        | (_spread_bits_3(cells[:, 1]) << np.uint64(1))
        | (_spread_bits_3(cells[:, 2]) << np.uint64(2))
    ).astype(np.int64)
    return int(code[0]) if single else code


def _hilbert_transpose(cells: np.ndarray, bits: int) -> np.ndarray:
    """Skilling transform: grid axes -> transposed Hilbert axes (in place on a copy)."""
    x = cells.astype(np.uint64).copy()
    one = np.uint64(1)
    q = one << np.uint64(bits - 1)
    while q > one:
        p = q - one
        for i in range(3):
            invert = (x[:, i] & q) != 0
            x[invert, 0] ^= p
            t = (x[:, 0] ^ x[:, i]) & p
            t[invert] = 0
            x[:, 0] ^= t
            x[:, i] ^= t
        q >>= one
    for i in range(1, 3):
        x[:, i] ^= x[:, i - 1]
    t = np.zeros(len(x), dtype=np.uint64)
    q = one << np.uint64(bits - 1)
    while q > one:
        mask = (x[:, 2] & q) != 0
        t[mask] ^= q - one
        q >>= one
    for i in range(3):
        x[:, i] ^= t
    return x


def hilbert_code(cell, grid_n: int):
    """3-D Hilbert curve index of a grid cell.

    Bijective on the (power-of-two padded) cube, and consecutive indices are
    always one unit grid step apart.
    """
    if grid_n > MAX_GRID_INTERLEAVE:
        raise ValueError(f"grid_n must be <= {MAX_GRID_INTERLEAVE} for interleaving")
    cells = np.asarray(cell, dtype=np.int64)
    single = cells.ndim == 1
    cells = np.atleast_2d(cells)
    bits = _bits_for(grid_n)
    tr = _hilbert_transpose(cells, bits)
    code = np.zeros(len(tr), dtype=np.uint64)
    for b in range(bits - 1, -1, -1):
        for i in range(3):
            code = (code << np.uint64(1)) | ((tr[:, i] >> np.uint64(b)) & np.uint64(1))
    code = code.astype(np.int64)
    return int(code[0]) if single else code


def serialization_codes(cells: np.ndarray, grid_n: int, order: SerializationOrder):
    """Integer code per point for the given ordering rule."""
    if order.kind == "cts":
        return cts_code(cells, grid_n, axis_perm=order.axis_perm, mode=order.mode)
    if order.kind == "z":
        return morton_code(cells, grid_n)
    if order.kind == "z_trans":
        # z-order with axis roles rotated to (y, z, x)
        return morton_code(cells[:, (1, 2, 0)], grid_n)
    if order.kind == "hilbert":
        return hilbert_code(cells, grid_n)
    raise ValueError(f"unknown kind {order.kind!r}")


def serialize(
    cloud: NormalizedCloud, order: SerializationOrder, grid_n: int = 64
) -> np.ndarray:
    """Permutation that orders the points along the chosen 1-D traversal.

    Points are stably sorted by their cell code; ties (points in the same
    cell) fall back to lexicographic coordinates and then input index, so
    the serialized coordinate sequence is a pure function of the geometry.
    """
    cells = grid_quantize(cloud, grid_n).cells
    codes = serialization_codes(cells, grid_n, order)
    coords = cloud.cloud.coords
    return np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], codes))


def count_code_collisions(
    cloud: NormalizedCloud, order: SerializationOrder, grid_n: int
) -> int:
    """Number of points sharing a code with a point in a *different* cell.

    Zero for any bijective ordering; positive in paper_literal mode whenever
    the row-boundary collision of the backward-row formula is hit.
    """
    cells = grid_quantize(cloud, grid_n).cells
    codes = np.asarray(serialization_codes(cells, grid_n, order))
    collisions = 0
    by_code: dict[int, set] = {}
    for code, cell in zip(codes.tolist(), map(tuple, cells.tolist())):
        by_code.setdefault(code, set()).add(cell)
    for members in by_code.values():
        if len(members) > 1:
            collisions += len(members)
    return collisions


def locality_metrics(cloud: PointCloud, perm: np.ndarray, window: int = 8) -> dict:
    """How spatially local a serialization is.

    ``mean_gap`` is the mean Euclidean distance between consecutive points
    in serialized order. ``adjacency_rate`` is the fraction of consecutive
    pairs that are mutually within each other's ``window`` nearest
    neighbors (self excluded).
    """
    from .sample import knn  # local import; sample does not import serialize

    coords = cloud.coords
    n = len(coords)
    if n < 2:
        raise UndefinedMetricError("locality metrics need at least 2 points")
    if window < 1:
        raise ValueError("window must be >= 1")
    perm = np.asarray(perm)
    ordered = coords[perm]
    gaps = np.linalg.norm(np.diff(ordered, axis=0), axis=1)
    k = min(window + 1, n)  # +1 because the query point itself ranks first
    hood = knn(coords, coords, k).neighbors
    neighbor_sets = [set(row.tolist()) - {i} for i, row in enumerate(hood)]
    mutual = 0
    for a, b in zip(perm[:-1].tolist(), perm[1:].tolist()):
        if b in neighbor_sets[a] and a in neighbor_sets[b]:
            mutual += 1
    return {
        "mean_gap": float(gaps.mean()),
        "adjacency_rate": mutual / (n - 1),
    }
