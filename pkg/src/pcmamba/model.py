"""Four-stage encoder, classification head, and segmentation decoder.

Each stage downsamples with deterministic farthest-point sampling, gathers
k-nearest neighborhoods, aggregates them locally, and then runs its Mamba
layers, each over its own serialization of the current points. Sequences
are un-permuted back to a canonical spatial order after every layer so the
per-layer orders stay independent.

The whole forward pass is a pure function of the point geometry: inputs are
reordered canonically on entry (and segmentation outputs mapped back), so
permuting a distinct-coordinate input cloud cannot change a single bit of
the output. One seeded 64-bit PCG64 generator, consumed in a fixed build
order, drives every parameter initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import OrderPromptBank, PositionalMap, attach_prompts, positional_embed, strip_prompts
from .errors import ConfigurationError, DegenerateLabelsError, InvalidInputError
from .local import GAMParams, MLPStack, local_aggregate
from .nn import AffineMap, silu
from .pointset import NormalizedCloud, PointCloud, canonical_tiebreak_order, normalize_unit_cube
from .sample import NeighborhoodIndex, farthest_point_sample, interpolate_features, knn
from .serialize import order_from_name, serialize
from .ssm import SelectiveSSMLayer, bidirectional_mamba

TASK_CLASSIFICATION = "classification"
TASK_SEGMENTATION = "part_segmentation"


@dataclass(frozen=True)
class StageConfig:
    """Width, depth, per-layer serialization orders, and sampling for one stage."""

    channels: int
    num_layers: int
    serializations: tuple
    points: int
    k_neighbors: int = 12

    def __post_init__(self):
        if len(self.serializations) != self.num_layers:
            raise ConfigurationError(
                f"stage declares {self.num_layers} layers but "
                f"{len(self.serializations)} serializations"
            )


@dataclass(frozen=True)
class ModelConfig:
    stages: tuple
    n_p: int = 6
    grid_n: int = 64
    task: str = TASK_CLASSIFICATION
    num_classes: int = 15
    seed: int = 0
    in_features: int = 0
    prompt_width: int = 64
    state_size: int = 16
    expand: int = 1
    conv_width: int = 4
    head_hidden: int = 256

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ConfigurationError("the encoder has exactly four stages")
        if self.task not in (TASK_CLASSIFICATION, TASK_SEGMENTATION):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")

    @property
    def order_names(self) -> tuple:
        seen = []
        for stage in self.stages:
            for name in stage.serializations:
                if name not in seen:
                    seen.append(name)
        return tuple(seen)


# Table-driven presets: Mamba layers {1,2,2,4} / {1,1,2,2}, channels
# {384,384,768,768} / {192,192,384,384}, six order prompts, point schedule
# {1024,512,256,128}.
_PRESETS = {
    "pcm": dict(
        channels=(384, 384, 768, 768),
        layers=(1, 2, 2, 4),
        serializations=(
            ("xyz",),
            ("xzy", "yxz"),
            ("yzx", "zxy"),
            ("zyx", "hilbert", "z", "z-trans"),
        ),
    ),
    "pcm-tiny": dict(
        channels=(192, 192, 384, 384),
        layers=(1, 1, 2, 2),
        serializations=(("xyz",), ("xzy",), ("yxz", "yzx"), ("zxy", "zyx")),
    ),
}

POINT_SCHEDULE = (1024, 512, 256, 128)


def preset_config(
    name: str,
    task: str = TASK_CLASSIFICATION,
    num_classes: int = 15,
    seed: int = 0,
    in_features: int = 0,
) -> ModelConfig:
    """Named architecture presets: "pcm" and "pcm-tiny"."""
    if name not in _PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; available: {sorted(_PRESETS)}")
    preset = _PRESETS[name]
    stages = tuple(
        StageConfig(
            channels=c,
            num_layers=l,
            serializations=s,
            points=p,
        )
        for c, l, s, p in zip(
            preset["channels"], preset["layers"], preset["serializations"], POINT_SCHEDULE
        )
    )
    return ModelConfig(
        stages=stages, task=task, num_classes=num_classes, seed=seed, in_features=in_features
    )


@dataclass
class StageModule:
    gam: GAMParams
    phi1: MLPStack
    phi2: MLPStack
    layers: list  # [(fwd, bwd) SelectiveSSMLayer pairs]
    orders: list  # SerializationOrder per layer

    def named_params(self, prefix: str):
        yield from self.gam.named_params(f"{prefix}.gam")
        yield from self.phi1.named_params(f"{prefix}.phi1")
        yield from self.phi2.named_params(f"{prefix}.phi2")
        for j, (fwd, bwd) in enumerate(self.layers):
            yield from fwd.named_params(f"{prefix}.layer{j}.fwd")
            yield from bwd.named_params(f"{prefix}.layer{j}.bwd")


@dataclass
class SegDecoder:
    transforms: list  # per level: (AffineMap concat->D, AffineMap D->D)
    classifier: AffineMap

    def named_params(self, prefix: str):
        for i, (t1, t2) in enumerate(self.transforms):
            yield from t1.named_params(f"{prefix}.level{i}.t1")
            yield from t2.named_params(f"{prefix}.level{i}.t2")
        yield from self.classifier.named_params(f"{prefix}.classifier")


@dataclass
class Model:
    config: ModelConfig
    stem: MLPStack
    stages: list
    pos_maps: list
    prompt_bank: OrderPromptBank
    head: list | None = None  # classification: [AffineMap, AffineMap]
    decoder: SegDecoder | None = None

    def named_params(self):
        yield from self.stem.named_params("stem")
        for l, stage in enumerate(self.stages):
            yield from stage.named_params(f"stage{l}")
        for l, pm in enumerate(self.pos_maps):
            yield from pm.named_params(f"pos.stage{l}")
        yield from self.prompt_bank.named_params("prompts")
        if self.head is not None:
            yield from self.head[0].named_params("head.hidden")
            yield from self.head[1].named_params("head.logits")
        if self.decoder is not None:
            yield from self.decoder.named_params("decoder")


def build_model(config: ModelConfig, seed: int | None = None) -> Model:
    """Deterministically initialize all parameters for the given config."""
    rng = np.random.Generator(np.random.PCG64(config.seed if seed is None else seed))
    d1 = config.stages[0].channels
    stem = MLPStack.init(rng, 3 + config.in_features, d1, depth=1)
    stages = []
    d_prev = d1
    for sc in config.stages:
        d = sc.channels
        gam = GAMParams.init(d_prev)
        phi1 = MLPStack.init(rng, d_prev, d, depth=1)
        phi2 = MLPStack.init(rng, d, d, depth=1)
        layers = [
            (
                SelectiveSSMLayer.init(
                    rng, d, config.state_size, config.expand, config.conv_width
                ),
                SelectiveSSMLayer.init(
                    rng, d, config.state_size, config.expand, config.conv_width
                ),
            )
            for _ in range(sc.num_layers)
        ]
        orders = [order_from_name(name) for name in sc.serializations]
        stages.append(StageModule(gam=gam, phi1=phi1, phi2=phi2, layers=layers, orders=orders))
        d_prev = d
    pos_maps = [PositionalMap.init(rng, sc.channels) for sc in config.stages]
    bank = OrderPromptBank.init(
        rng,
        config.order_names,
        [sc.channels for sc in config.stages],
        n_p=config.n_p,
        native_width=config.prompt_width,
    )
    head = None
    decoder = None
    d_last = config.stages[-1].channels
    if config.task == TASK_CLASSIFICATION:
        head = [
            AffineMap.init(rng, d_last, config.head_hidden),
            AffineMap.init(rng, config.head_hidden, config.num_classes),
        ]
    else:
        transforms = []
        for lvl in (2, 1, 0):
            d = config.stages[lvl].channels
            d_above = config.stages[lvl + 1].channels
            transforms.append(
                (AffineMap.init(rng, d_above + d, d), AffineMap.init(rng, d, d))
            )
        classifier = AffineMap.init(rng, config.stages[0].channels, config.num_classes)
        decoder = SegDecoder(transforms=transforms, classifier=classifier)
    return Model(
        config=config,
        stem=stem,
        stages=stages,
        pos_maps=pos_maps,
        prompt_bank=bank,
        head=head,
        decoder=decoder,
    )


@dataclass
class EncodeResult:
    pooled: np.ndarray  # (D_last,) channel-wise max over final tokens
    stage_coords: list  # normalized coords per stage (canonical order)
    stage_feats: list  # features per stage, after that stage's Mamba layers
    full_coords: np.ndarray  # all input points, normalized, canonical order
    canonical_perm: np.ndarray  # input index of each canonical position


def _wrap_normalized(coords: np.ndarray) -> NormalizedCloud:
    cloud = PointCloud(coords)
    return NormalizedCloud(cloud=cloud, original_min=np.zeros(3), original_scale=1.0)


def encode(model: Model, cloud: PointCloud) -> EncodeResult:
    """Run the four-stage encoder; see the module docstring for the pipeline."""
    cfg = model.config
    if cloud.n_points < cfg.stages[-1].points:
        raise InvalidInputError(
            f"need at least {cfg.stages[-1].points} points, got {cloud.n_points}"
        )
    expected_feats = cfg.in_features
    have_feats = 0 if cloud.features is None else cloud.features.shape[1]
    if have_feats != expected_feats:
        raise InvalidInputError(
            f"model expects {expected_feats} feature channels, cloud has {have_feats}"
        )

    canon = canonical_tiebreak_order(cloud.coords)
    work = cloud.select(canon)
    normalized = normalize_unit_cube(work)
    full_coords = normalized.cloud.coords

    # resample down to the stage-1 budget when the cloud is larger
    budget = cfg.stages[0].points
    if len(full_coords) > budget:
        keep = np.sort(farthest_point_sample(full_coords, budget))
    else:
        keep = np.arange(len(full_coords))
    coords = full_coords[keep]
    stem_in = coords if work.features is None else np.hstack([coords, work.features[keep]])
    feats = model.stem(stem_in)

    stage_coords, stage_feats = [], []
    for l, (sc, stage) in enumerate(zip(cfg.stages, model.stages)):
        if l == 0:
            centers = np.arange(len(coords))
        else:
            m = min(sc.points, len(coords))
            centers = np.sort(farthest_point_sample(coords, m))
        k = min(sc.k_neighbors, len(coords))
        hood = knn(coords[centers], coords, k)
        hood = NeighborhoodIndex(centers=centers, neighbors=hood.neighbors, k=k)
        feats = local_aggregate(feats, hood, stage.phi1, stage.phi2, stage.gam)
        coords = coords[centers]
        for order, (fwd, bwd) in zip(stage.orders, stage.layers):
            perm = serialize(_wrap_normalized(coords), order, cfg.grid_n)
            seq = feats[perm] + positional_embed(coords[perm], model.pos_maps[l])
            seq = attach_prompts(seq, order.name, model.prompt_bank, l)
            seq = bidirectional_mamba(seq, fwd, bwd)
            seq = strip_prompts(seq, cfg.n_p)
            feats = np.empty_like(seq)
            feats[perm] = seq
        stage_coords.append(coords)
        stage_feats.append(feats)

    return EncodeResult(
        pooled=stage_feats[-1].max(axis=0),
        stage_coords=stage_coords,
        stage_feats=stage_feats,
        full_coords=full_coords,
        canonical_perm=canon,
    )


def forward_classification(model: Model, cloud: PointCloud) -> np.ndarray:
    """Class logits for one cloud; invariant to input point order."""
    if model.head is None:
        raise ConfigurationError("model was built for segmentation, not classification")
    enc = encode(model, cloud)
    hidden, logits = model.head
    return logits(silu(hidden(enc.pooled)))


def forward_segmentation(model: Model, cloud: PointCloud) -> np.ndarray:
    """Per-point logits (N x num_classes) in the input point order."""
    if model.decoder is None:
        raise ConfigurationError("model was built for classification, not segmentation")
    enc = encode(model, cloud)
    f = enc.stage_feats[3]
    for (t1, t2), lvl in zip(model.decoder.transforms, (2, 1, 0)):
        up = interpolate_features(enc.stage_coords[lvl], enc.stage_coords[lvl + 1], f, k=3)
        f = t2(silu(t1(np.hstack([up, enc.stage_feats[lvl]]))))
    full = interpolate_features(enc.full_coords, enc.stage_coords[0], f, k=3)
    logits_canon = model.decoder.classifier(full)
    out = np.empty_like(logits_canon)
    out[enc.canonical_perm] = logits_canon
    return out


def count_parameters(model: Model, per_module: bool = False):
    """Exact scalar parameter count; optionally broken down by top-level module."""
    if not per_module:
        return sum(int(arr.size) for _, arr in model.named_params())
    groups: dict[str, int] = {}
    for name, arr in model.named_params():
        top = name.split(".")[0]
        groups[top] = groups.get(top, 0) + int(arr.size)
    return groups


def _stage_token_counts(config: ModelConfig, n_points: int):
    counts = []
    current = min(n_points, config.stages[0].points)
    for l, sc in enumerate(config.stages):
        if l > 0:
            current = min(sc.points, current)
        counts.append(current)
    return counts


def estimate_flops(model: Model, n_points: int) -> int:
    """Analytic multiply-accumulate count for one forward pass.

    Counts the dense work (affine maps, depthwise conv, recurrence updates,
    neighborhood MLPs, interpolation weights); index manipulation and sorting
    are not MACs and are excluded.
    """
    cfg = model.config
    counts = _stage_token_counts(cfg, n_points)
    n0 = min(n_points, cfg.stages[0].points)
    d1 = cfg.stages[0].channels
    total = n0 * (3 + cfg.in_features) * d1 + n0 * 2 * d1 * d1  # stem
    d_prev = d1
    for l, sc in enumerate(cfg.stages):
        m = counts[l]
        d = sc.channels
        k = sc.k_neighbors
        # local aggregation: entry + one residual block per neighbor, one per center
        total += m * k * (d_prev * d + 2 * d * d) + m * 2 * d * d
        di = cfg.expand * d
        rank = max(1, d // 16)
        m_seq = m + 2 * cfg.n_p
        per_direction = (
            m_seq * d * 2 * di  # in_proj
            + m_seq * di * cfg.conv_width  # depthwise conv
            + m_seq * 2 * di * rank  # factored dt projection
            + m_seq * 2 * di * cfg.state_size  # b_proj, c_proj
            + m_seq * 4 * di * cfg.state_size  # recurrence update + readout
            + m_seq * di  # gate product
            + m_seq * di * d  # out_proj
        )
        per_layer = 2 * per_direction + m * 3 * d + cfg.n_p * cfg.prompt_width * d
        total += sc.num_layers * per_layer
        d_prev = d
    if cfg.task == TASK_CLASSIFICATION:
        total += cfg.stages[-1].channels * cfg.head_hidden
        total += cfg.head_hidden * cfg.num_classes
    else:
        for lvl in (2, 1, 0):
            d = cfg.stages[lvl].channels
            d_above = cfg.stages[lvl + 1].channels
            n_l = counts[lvl]
            total += n_l * 3 * d_above  # interpolation weights
            total += n_l * ((d_above + d) * d + d * d)
        total += n_points * 3 * cfg.stages[0].channels
        total += n_points * cfg.stages[0].channels * cfg.num_classes
    return int(total)


@dataclass
class ProbeResult:
    weights: np.ndarray  # (C, D)
    bias: np.ndarray  # (C,)
    train_accuracy: float

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(features @ self.weights.T + self.bias, axis=1)


def softmax_xent_grad(weights, bias, features, labels):
    """Loss and hand-coded gradients of softmax cross-entropy (mean over rows)."""
    logits = features @ weights.T + bias
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    m = len(labels)
    loss = -np.log(probs[np.arange(m), labels] + 1e-300).mean()
    delta = probs.copy()
    delta[np.arange(m), labels] -= 1.0
    delta /= m
    return loss, delta.T @ features, delta.sum(axis=0)


def train_linear_probe(
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int = 300,
    lr: float = 0.5,
    seed: int = 0,
) -> ProbeResult:
    """Full-batch gradient-descent softmax regression on frozen features."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DegenerateLabelsError("need at least two classes to fit a probe")
    n_classes = int(classes.max()) + 1
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = rng.normal(0.0, 0.01, size=(n_classes, features.shape[1]))
    bias = np.zeros(n_classes)
    for _ in range(epochs):
        _, gw, gb = softmax_xent_grad(weights, bias, features, labels)
        weights -= lr * gw
        bias -= lr * gb
    preds = np.argmax(features @ weights.T + bias, axis=1)
    return ProbeResult(
        weights=weights, bias=bias, train_accuracy=float((preds == labels).mean())
    )
