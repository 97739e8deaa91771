"""Point-cloud files, synthetic shapes, and binary weight archives.

The text format is one point per line ("x y z [extra feature columns]"),
'#' comments skipped, written back with 17 significant digits so a
write/read round trip is exact. Weight archives are little-endian
regardless of platform: magic "PCMW", u32 version, u32 tensor count, then
per tensor a u16 name length, UTF-8 name, u8 dtype code (0 = f32, 1 = f64),
u8 rank, u64 dims, and the raw data.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, InvalidInputError, ParseError
from .pointset import PointCloud

MAGIC = b"PCMW"
VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {"f4": 0, "f8": 1}

SHAPE_KINDS = ("sphere", "cube", "torus", "plane")


def read_xyz(path) -> PointCloud:
    """Parse an ASCII xyz file; extra columns become feature channels."""
    coords, feats = [], []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ParseError(
                    f"{path}:{lineno}: expected at least 3 columns, got {len(parts)}",
                    line_number=lineno,
                )
            try:
                values = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", line_number=lineno) from exc
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(
                    f"{path}:{lineno}: inconsistent column count "
                    f"({len(values)} vs {width})",
                    line_number=lineno,
                )
            coords.append(values[:3])
            feats.append(values[3:])
    if not coords:
        raise InvalidInputError(f"{path}: no points found")
    features = np.asarray(feats) if feats and len(feats[0]) else None
    return PointCloud(coords=np.asarray(coords), features=features)


def write_xyz(cloud: PointCloud, path) -> None:
    """Write a cloud in the xyz text format with 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(cloud.n_points):
            row = [f"{v:.17g}" for v in cloud.coords[i]]
            if cloud.features is not None:
                row += [f"{v:.17g}" for v in cloud.features[i]]
            fh.write(" ".join(row) + "\n")


def generate_shape(kind: str, n: int, noise_sigma: float = 0.0, seed: int = 0) -> PointCloud:
    """Seeded uniform surface sample of a unit-scale shape plus Gaussian jitter.

    Shapes: unit sphere; cube surface with half-extent 1; torus with major
    radius 1 and minor radius 0.4; unit plane square in z = 0. Labels carry
    the shape's kind id.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape {kind!r}; valid: {', '.join(SHAPE_KINDS)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    if kind == "sphere":
        v = rng.normal(size=(n, 3))
        coords = v / np.linalg.norm(v, axis=1, keepdims=True)
    elif kind == "cube":
        face = rng.integers(0, 6, size=n)
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        coords = np.empty((n, 3))
        axis = face // 2
        rows = np.arange(n)
        others = np.array([[1, 2], [0, 2], [0, 1]])[axis]
        coords[rows, axis] = np.where(face % 2 == 0, 1.0, -1.0)
        coords[rows, others[:, 0]] = uv[:, 0]
        coords[rows, others[:, 1]] = uv[:, 1]
    elif kind == "torus":
        major, minor = 1.0, 0.4
        theta = np.empty(n)
        filled = 0
        while filled < n:  # rejection sampling weights theta by R + r*cos(theta)
            cand = rng.uniform(0.0, 2 * np.pi, size=2 * (n - filled))
            accept = rng.uniform(0.0, 1.0, size=cand.size) < (
                (major + minor * np.cos(cand)) / (major + minor)
            )
            took = cand[accept][: n - filled]
            theta[filled : filled + took.size] = took
            filled += took.size
        phi = rng.uniform(0.0, 2 * np.pi, size=n)
        ring = major + minor * np.cos(theta)
        coords = np.stack(
            [ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)], axis=1
        )
    else:  # plane
        coords = np.zeros((n, 3))
        coords[:, :2] = rng.uniform(-1.0, 1.0, size=(n, 2))
    if noise_sigma > 0:
        coords = coords + rng.normal(0.0, noise_sigma, size=coords.shape)
    labels = np.full(n, SHAPE_KINDS.index(kind), dtype=np.int64)
    return PointCloud(coords=coords, labels=labels)


def save_weights(model, path) -> None:
    """Serialize every named tensor of the model to a weight archive."""
    tensors = list(model.named_params())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors:
            data = np.ascontiguousarray(arr)
            kind = data.dtype.str.lstrip("<>=|")
            if kind not in _CODE_FOR_KIND:
                raise FormatError(f"tensor {name!r} has unsupported dtype {data.dtype}")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", _CODE_FOR_KIND[kind], data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes())


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated archive while reading {what}")
    return data


def read_archive(path) -> dict:
    """Read a weight archive into an ordered name -> array mapping."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise FormatError(f"{path}: bad magic, not a weight archive")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            code, rank = struct.unpack("<BB", _read_exact(fh, 2, "tensor header"))
            if code not in _DTYPE_CODES:
                raise FormatError(f"{path}: tensor {name!r} has unknown dtype code {code}")
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "dims"))
            dtype = _DTYPE_CODES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            data = np.frombuffer(_read_exact(fh, nbytes, f"tensor {name!r}"), dtype=dtype)
            out[name] = data.reshape(dims)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after last tensor")
    return out


def load_weights(path, config):
    """Build a model for ``config`` and fill it from the archive at ``path``.

    Name or shape mismatches raise a FormatError listing every offender; on
    error no model is returned (no partially-loaded state escapes).
    """
    from .model import build_model

    archive = read_archive(path)
    model = build_model(config)
    problems = []
    seen = set()
    for name, arr in model.named_params():
        seen.add(name)
        if name not in archive:
            problems.append(f"missing tensor {name!r}")
            continue
        stored = archive[name]
        if tuple(stored.shape) != tuple(arr.shape):
            problems.append(
                f"shape mismatch for {name!r}: archive {tuple(stored.shape)} "
                f"vs model {tuple(arr.shape)}"
            )
    extras = [n for n in archive if n not in seen]
    problems.extend(f"unexpected tensor {n!r}" for n in extras)
    if problems:
        raise FormatError(
            f"{path}: archive does not match the model configuration: "
            + "; ".join(problems)
        )
    for name, arr in model.named_params():
        np.copyto(arr, archive[name].astype(arr.dtype, copy=False))
    return model
