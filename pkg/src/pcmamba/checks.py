"""Invariant suites behind ``pcmamba verify`` (also reused by the tests).

Each check returns a CheckResult with the measured error and the tolerance
it was held to; exact structural checks use a tolerance of 0 and report a
violation count as the measurement.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import serialize as ser
from . import ssm
from .local import GAMParams, gam_normalize, gam_sigma
from .model import (
    ModelConfig,
    StageConfig,
    TASK_SEGMENTATION,
    build_model,
    count_parameters,
    forward_classification,
    forward_segmentation,
    preset_config,
)
from .pointset import PointCloud, normalize_unit_cube


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float


def _check(name, measured, tolerance):
    return CheckResult(name, bool(measured <= tolerance), float(measured), float(tolerance))


# ---------------------------------------------------------------------------
# serialization


def _full_grid(grid_n):
    r = range(grid_n)
    return np.array(list(itertools.product(r, r, r)), dtype=np.int64)


def serialization_checks(seed: int = 0):
    results = []
    for grid_n in (2, 4, 8, 16):
        cells = _full_grid(grid_n)
        dup_worst = 0
        step_worst = 0
        for name in ser.CTS_NAMES:
            order = ser.order_from_name(name)
            codes = ser.cts_code(cells, grid_n, order.axis_perm, order.mode)
            dup_worst = max(dup_worst, grid_n**3 - len(np.unique(codes)))
            walk = cells[np.argsort(codes)]
            steps = np.abs(np.diff(walk, axis=0)).sum(axis=1)
            step_worst = max(step_worst, int(np.abs(steps - 1).max()))
        results.append(_check(f"cts_bijective_grid{grid_n}", dup_worst, 0))
        results.append(_check(f"cts_snake_grid{grid_n}", step_worst, 0))
        codes_paper = ser.cts_code(cells, grid_n, (0, 1, 2), ser.MODE_PAPER)
        collisions = grid_n**3 - len(np.unique(codes_paper))
        results.append(
            CheckResult(
                f"paper_literal_collides_grid{grid_n}", collisions > 0, collisions, 1.0
            )
        )
    # axis-variant identity, exhaustive at grid 8
    cells = _full_grid(8)
    yxz = ser.cts_code(cells, 8, ser.order_from_name("yxz").axis_perm)
    xyz_swapped = ser.cts_code(cells[:, (1, 0, 2)], 8, ser.order_from_name("xyz").axis_perm)
    results.append(_check("axis_variant_identity_grid8", int((yxz != xyz_swapped).sum()), 0))
    # hilbert and morton bijectivity; hilbert adjacency
    cells = _full_grid(4)
    hc = ser.hilbert_code(cells, 4)
    results.append(_check("hilbert_bijective_grid4", 64 - len(np.unique(hc)), 0))
    walk = cells[np.argsort(hc)]
    steps = np.abs(np.diff(walk, axis=0)).sum(axis=1)
    results.append(_check("hilbert_unit_steps_grid4", int(np.abs(steps - 1).max()), 0))
    mc = ser.morton_code(cells, 4)
    results.append(_check("morton_bijective_grid4", 64 - len(np.unique(mc)), 0))
    # serialization is a pure function of geometry
    rng = np.random.Generator(np.random.PCG64(seed))
    cloud = PointCloud(rng.uniform(0, 1, size=(256, 3)))
    nc = normalize_unit_cube(cloud)
    shuffled = PointCloud(cloud.coords[rng.permutation(256)])
    ns = normalize_unit_cube(shuffled)
    mismatch = 0
    for name in ser.ORDER_NAMES:
        order = ser.order_from_name(name)
        a = nc.cloud.coords[ser.serialize(nc, order, 32)]
        b = ns.cloud.coords[ser.serialize(ns, order, 32)]
        mismatch += int(not np.array_equal(a, b))
    results.append(_check("serialize_pure_function_of_geometry", mismatch, 0))
    # refinement 2 -> 4 preserves distinctions: distinct coarse codes stay
    # distinct, and sharing a fine cell implies sharing the coarse cell
    pts = rng.uniform(0, 1, size=(200, 3))
    nc = normalize_unit_cube(PointCloud(pts))
    coarse = ser.cts_code(ser.grid_quantize(nc, 2).cells, 2)
    fine = ser.cts_code(ser.grid_quantize(nc, 4).cells, 4)
    merged = 0
    for i in range(len(pts)):
        same_fine = fine == fine[i]
        merged += int(np.any(same_fine & (coarse != coarse[i])))
    results.append(_check("refinement_preserves_distinction", merged, 0))
    return results


# ---------------------------------------------------------------------------
# ssm


def ssm_checks(seed: int = 0):
    results = []
    rng = np.random.Generator(np.random.PCG64(seed))
    # duality of the recurrence and the global convolution
    worst = 0.0
    for _ in range(100):
        s = int(rng.integers(1, 17))
        m = int(rng.integers(1, 257))
        system = ssm.LTISystem(
            a=rng.uniform(-2.0, -0.05, size=s),
            b=rng.normal(size=s),
            c=rng.normal(size=s),
            dt=float(rng.uniform(0.1, 1.0)),
        )
        x = rng.normal(size=m)
        a_bar, b_bar = system.discretize()
        worst = max(
            worst,
            float(np.abs(ssm.scan(x, a_bar, b_bar, system.c) - ssm.conv_form(x, system)).max()),
        )
    results.append(_check("scan_equals_conv", worst, 1e-6))
    # exact discretization values
    a_bar, b_bar = ssm.discretize(np.log(2.0), np.array([-1.0]), np.array([1.0]))
    err = max(abs(a_bar[0] - 0.5), abs(b_bar[0] - 0.5))
    results.append(_check("zoh_exact_values", err, 1e-12))
    # series branch vs closed form at |dt*a| = 1e-7
    _, series = ssm.discretize(1e-7, np.array([1.0]), np.array([1.0]))
    closed = np.expm1(1e-7) / 1.0
    results.append(_check("zoh_series_matches_closed", abs(series[0] - closed) / closed, 1e-12))
    # stability: a < 0 implies |a_bar| < 1
    a = rng.uniform(-50.0, -1e-6, size=1000)
    dt = rng.uniform(1e-6, 10.0, size=1000)
    a_bar, _ = ssm.discretize(dt, a, np.ones(1000))
    results.append(_check("discretization_stability", int((np.abs(a_bar) >= 1).sum()), 0))
    # adjoint against central finite differences
    worst = 0.0
    for _ in range(20):
        m, s = 32, 8
        x = rng.normal(size=m)
        a_bar = rng.uniform(0.2, 0.99, size=(m, s))
        b_bar = rng.normal(size=(m, s))
        c = rng.normal(size=(m, s))
        g = rng.normal(size=m)
        grads = ssm.scan_backward(x, a_bar, b_bar, c, g)
        h = 1e-5
        params = {"x": x, "a_bar": a_bar, "b_bar": b_bar, "c": c}
        for name, arr in params.items():
            flat = arr.reshape(-1)
            fd = np.empty(flat.size)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = float(g @ ssm.scan(x, a_bar, b_bar, c))
                flat[i] = keep - h
                down = float(g @ ssm.scan(x, a_bar, b_bar, c))
                flat[i] = keep
                fd[i] = (up - down) / (2 * h)
            rel = np.abs(grads[name].reshape(-1) - fd) / (1.0 + np.abs(fd))
            worst = max(worst, float(rel.max()))
    results.append(_check("adjoint_matches_finite_differences", worst, 1e-4))
    # linearity in x (exact)
    m, s = 64, 4
    x = rng.normal(size=m)
    a_bar = rng.uniform(0.2, 0.95, size=(m, s))
    b_bar = rng.normal(size=(m, s))
    c = rng.normal(size=(m, s))
    lin = np.abs(ssm.scan(2.0 * x, a_bar, b_bar, c) - 2.0 * ssm.scan(x, a_bar, b_bar, c))
    results.append(_check("scan_linearity_exact", float(lin.max()), 0.0))
    # causality: a later perturbation never reaches earlier outputs
    y0 = ssm.scan(x, a_bar, b_bar, c)
    xp = x.copy()
    xp[m // 2] += 10.0
    y1 = ssm.scan(xp, a_bar, b_bar, c)
    results.append(
        _check("scan_causality", float(np.abs(y1[: m // 2] - y0[: m // 2]).max()), 0.0)
    )
    # determinism of the full block
    layer = ssm.SelectiveSSMLayer.init(np.random.Generator(np.random.PCG64(seed)), 16)
    tokens = np.random.Generator(np.random.PCG64(seed + 1)).normal(size=(40, 16))
    same = np.array_equal(ssm.mamba_block(tokens, layer), ssm.mamba_block(tokens, layer))
    results.append(CheckResult("mamba_block_deterministic", same, 0.0 if same else 1.0, 0.0))
    return results


# ---------------------------------------------------------------------------
# gam


def gam_checks(seed: int = 0):
    results = []
    rng = np.random.Generator(np.random.PCG64(seed))
    neigh = rng.normal(size=(20, 8, 6))
    centers = rng.normal(size=(20, 6))
    # triple-loop oracle for sigma
    acc = 0.0
    m, k, d = neigh.shape
    for i in range(m):
        for j in range(k):
            for q in range(d):
                acc += (neigh[i, j, q] - centers[i, q]) ** 2
    oracle = np.sqrt(acc / (m * k * d))
    results.append(
        _check("gam_sigma_matches_oracle", abs(gam_sigma(neigh, centers) - oracle), 1e-7)
    )
    # unit RMS with alpha=1, beta=0, delta -> 0
    params = GAMParams(alpha=np.ones(d), beta=None, delta=1e-300)
    out = gam_normalize(neigh, centers, params)
    rms = float(np.sqrt((out * out).mean()))
    results.append(_check("gam_unit_rms", abs(rms - 1.0), 1e-6))
    # alpha linearity
    p2 = GAMParams(alpha=np.full(d, 2.0), beta=None, delta=1e-300)
    doubled = gam_normalize(neigh, centers, p2)
    results.append(_check("gam_alpha_linearity", float(np.abs(doubled - 2 * out).max()), 0.0))
    # neighbors equal to centers give exactly beta
    beta = rng.normal(size=d)
    pb = GAMParams(alpha=np.ones(d), beta=beta, delta=1e-5)
    same = np.broadcast_to(centers[:, None, :], neigh.shape)
    out_b = gam_normalize(same, centers, pb)
    results.append(
        _check("gam_degenerate_gives_beta", float(np.abs(out_b - beta).max()), 0.0)
    )
    return results


def _small_config(task=None, num_classes=3, seed=0):
    stages = (
        StageConfig(channels=16, num_layers=1, serializations=("xyz",), points=64, k_neighbors=8),
        StageConfig(channels=16, num_layers=1, serializations=("xzy",), points=32, k_neighbors=8),
        StageConfig(channels=32, num_layers=1, serializations=("z",), points=16, k_neighbors=8),
        StageConfig(channels=32, num_layers=1, serializations=("hilbert",), points=8, k_neighbors=4),
    )
    kwargs = dict(stages=stages, n_p=2, grid_n=16, num_classes=num_classes, seed=seed)
    if task is not None:
        kwargs["task"] = task
    return ModelConfig(**kwargs)


# ---------------------------------------------------------------------------
# model


def model_checks(seed: int = 0):
    results = []
    rng = np.random.Generator(np.random.PCG64(seed))
    cloud = PointCloud(rng.uniform(0.0, 1.0, size=(1024, 3)))
    model = build_model(preset_config("pcm-tiny", num_classes=5, seed=seed))
    logits = forward_classification(model, cloud)
    shuffled = PointCloud(cloud.coords[rng.permutation(1024)])
    logits_shuffled = forward_classification(model, shuffled)
    exact = np.array_equal(logits, logits_shuffled)
    results.append(
        CheckResult("classification_permutation_invariant", exact, 0.0 if exact else 1.0, 0.0)
    )
    # segmentation equivariance on a smaller config for speed
    seg_model = build_model(_small_config(task=TASK_SEGMENTATION, seed=seed))
    small = PointCloud(rng.uniform(0.0, 1.0, size=(128, 3)))
    perm = rng.permutation(128)
    seg = forward_segmentation(seg_model, small)
    seg_perm = forward_segmentation(seg_model, PointCloud(small.coords[perm]))
    exact = np.array_equal(seg_perm, seg[perm])
    results.append(
        CheckResult("segmentation_permutation_equivariant", exact, 0.0 if exact else 1.0, 0.0)
    )
    # token counts follow the configured schedule
    from .model import encode

    enc = encode(model, cloud)
    counts = [len(f) for f in enc.stage_feats]
    wanted = [1024, 512, 256, 128]
    results.append(_check("stage_token_counts", int(counts != wanted), 0))
    # finite activations over 100 seeded clouds on a small config
    small_model = build_model(_small_config(seed=seed))
    bad = 0
    for i in range(100):
        r = np.random.Generator(np.random.PCG64(1000 + i))
        c = PointCloud(r.uniform(0.0, 1.0, size=(64, 3)))
        out = forward_classification(small_model, c)
        bad += int(not np.isfinite(out).all())
    results.append(_check("activations_finite_100_clouds", bad, 0))
    # determinism of seeded builds
    m1 = build_model(_small_config(seed=seed))
    m2 = build_model(_small_config(seed=seed))
    same = all(np.array_equal(a, b) for (_, a), (_, b) in zip(m1.named_params(), m2.named_params()))
    out_same = same and np.array_equal(
        forward_classification(m1, cloud.select(np.arange(200))),
        forward_classification(m2, cloud.select(np.arange(200))),
    )
    results.append(
        CheckResult("seeded_build_deterministic", out_same, 0.0 if out_same else 1.0, 0.0)
    )
    # parameter budgets versus the published sizes
    tiny = count_parameters(build_model(preset_config("pcm-tiny")))
    full = count_parameters(build_model(preset_config("pcm")))
    results.append(_check("params_pcm_tiny_within_15pct", abs(tiny / 6.9e6 - 1.0), 0.15))
    results.append(_check("params_pcm_within_15pct", abs(full / 34.2e6 - 1.0), 0.15))
    return results


SUITES = {
    "serialization": serialization_checks,
    "ssm": ssm_checks,
    "gam": gam_checks,
    "model": model_checks,
}


def run_suite(name: str, seed: int = 0):
    if name == "all":
        out = []
        for key in ("serialization", "ssm", "gam", "model"):
            out.extend(SUITES[key](seed))
        return out
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; valid: {', '.join(SUITES)} or all")
    return SUITES[name](seed)
