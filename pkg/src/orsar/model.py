"""Object-graph clip backbone.

Every valid detection becomes a graph node carrying two learned features: a
spatial position embedding (an MLP image of the 4-component box vector) and
a per-category embedding row. The fused node features are summed per
category within each frame, which removes any need for instance tracking;
an MLP shared across categories then reasons over each category's
concatenated frame sequence, and a final MLP over the concatenated
category vectors yields the clip feature that feeds the classifier.

``forward_batch`` runs whole minibatches as one graph: all valid nodes
across the batch go through the MLPs as one matrix and a segment-sum
scatters them into (clip, frame, category) buckets. Padding slots are
excluded up front, so extending a frame with more padding can never change
the output.

Ablation flags substitute a zero tensor for either node feature before
fusion (``no-spe`` drops the box embedding, ``no-ce`` drops the category
embedding) while keeping the fusion input width fixed. Category-wise
aggregation still groups by the true category either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .scene import CategoryTable, Clip

ABLATIONS = ("none", "no-spe", "no-ce")


@dataclass
class ModelConfig:
    embed_dim: int = 1024  # d
    categories: int = 6  # C
    slots: int = 15  # N
    clip_frames: int = 8  # T
    classes: int = 9  # K
    temporal_dim: int | None = None  # d' (defaults to embed_dim)
    clip_dim: int | None = None  # clip feature width (defaults to embed_dim)
    spe_hidden: list = None
    fusion_hidden: list = None
    temp_hidden: list = None
    category_hidden: list = None
    appearance_dim: int | None = None

    def __post_init__(self):
        d = self.embed_dim
        if self.temporal_dim is None:
            self.temporal_dim = d
        if self.clip_dim is None:
            self.clip_dim = d
        for name in ("spe_hidden", "fusion_hidden", "temp_hidden", "category_hidden"):
            if getattr(self, name) is None:
                setattr(self, name, [d])
        for v in (
            self.embed_dim,
            self.categories,
            self.slots,
            self.clip_frames,
            self.classes,
            self.temporal_dim,
            self.clip_dim,
        ):
            if v < 1:
                raise ValueError("model dimensions must be positive")
        if self.appearance_dim is not None and self.appearance_dim < 1:
            raise ValueError("appearance_dim must be positive when set")

    @property
    def classifier_in(self) -> int:
        return self.clip_dim + (self.appearance_dim or 0)

    def to_json(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "categories": self.categories,
            "slots": self.slots,
            "clip_frames": self.clip_frames,
            "classes": self.classes,
            "temporal_dim": self.temporal_dim,
            "clip_dim": self.clip_dim,
            "spe_hidden": list(self.spe_hidden),
            "fusion_hidden": list(self.fusion_hidden),
            "temp_hidden": list(self.temp_hidden),
            "category_hidden": list(self.category_hidden),
            "appearance_dim": self.appearance_dim,
        }

    @staticmethod
    def from_json(obj: dict) -> "ModelConfig":
        return ModelConfig(**obj)


def _mlp_sizes(in_dim: int, hidden: list, out_dim: int) -> list:
    return [in_dim] + list(hidden) + [out_dim]


def _init_mlp(sizes: list, rng: np.random.Generator, dtype, zero: bool) -> list:
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(scale=1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        layers.append(
            (Tensor(w, dtype=dtype), Tensor(np.zeros(fan_out), dtype=dtype))
        )
    return layers


def apply_mlp(x: Tensor, layers: list) -> Tensor:
    """Linear layers with relu between them (none after the last)."""
    for i, (w, b) in enumerate(layers):
        x = ad.add(ad.matmul(x, w), b)
        if i + 1 < len(layers):
            x = ad.relu(x)
    return x


@dataclass
class BackboneParams:
    spe: list
    embed: Tensor
    fusion: list
    temp: list
    category: list
    classifier_w: Tensor
    classifier_b: Tensor

    def named(self) -> dict:
        """Stable name -> tensor map (the checkpoint contract)."""
        out = {}
        for group, layers in (
            ("spe", self.spe),
            ("fusion", self.fusion),
            ("temp", self.temp),
            ("category", self.category),
        ):
            for i, (w, b) in enumerate(layers):
                out[f"{group}.{i}.weight"] = w
                out[f"{group}.{i}.bias"] = b
        out["embed.table"] = self.embed
        out["classifier.weight"] = self.classifier_w
        out["classifier.bias"] = self.classifier_b
        return out

    def tensors(self) -> list:
        return list(self.named().values())

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()


def init_backbone(
    config: ModelConfig,
    rng: np.random.Generator,
    dtype=np.float32,
    init: str = "normal",
) -> BackboneParams:
    """Fresh parameters: MLP weights at normal(0, 1/sqrt(fan_in)), zero
    biases, embedding rows at unit normal. ``init='zero'`` gives the
    all-zero model used as the untrained baseline."""
    if init not in ("normal", "zero"):
        raise ValueError(f"unknown init {init!r}")
    zero = init == "zero"
    d, c, t = config.embed_dim, config.categories, config.clip_frames
    embed = (
        np.zeros((c, d)) if zero else rng.normal(size=(c, d))
    )
    return BackboneParams(
        spe=_init_mlp(_mlp_sizes(4, config.spe_hidden, d), rng, dtype, zero),
        embed=Tensor(embed, dtype=dtype),
        fusion=_init_mlp(_mlp_sizes(2 * d, config.fusion_hidden, d), rng, dtype, zero),
        temp=_init_mlp(
            _mlp_sizes(t * d, config.temp_hidden, config.temporal_dim), rng, dtype, zero
        ),
        category=_init_mlp(
            _mlp_sizes(c * config.temporal_dim, config.category_hidden, config.clip_dim),
            rng,
            dtype,
            zero,
        ),
        classifier_w=Tensor(
            np.zeros((config.classifier_in, config.classes))
            if zero
            else rng.normal(
                scale=1.0 / np.sqrt(config.classifier_in),
                size=(config.classifier_in, config.classes),
            ),
            dtype=dtype,
        ),
        classifier_b=Tensor(np.zeros(config.classes), dtype=dtype),
    )


# ---------------------------------------------------------------------------
# single-node / single-frame operations (the unit surface)


def spatial_position_embed(box, params: BackboneParams) -> Tensor:
    """Embed one box's (cx, cy, w, h) vector; rejects padding slots.

    Accepts a BoundingBox or a length-4 tensor (the latter lets gradient
    checks differentiate with respect to the box coordinates).
    """
    if isinstance(box, Tensor):
        if box.shape != (4,):
            raise ad.ShapeError(f"box tensor must have shape (4,), got {box.shape}")
        row = ad.reshape(box, (1, 4))
    else:
        if box.w <= 0.0 or box.h <= 0.0:
            raise ValueError("padding slot passed to spatial_position_embed")
        row = Tensor(
            np.asarray([box.as_vector()]), dtype=params.classifier_w.dtype
        )
    out = apply_mlp(row, params.spe)
    return ad.reshape(out, (out.shape[1],))


def category_embed(category: int, params: BackboneParams) -> Tensor:
    return ad.embedding_lookup(params.embed, int(category))


def fuse_node(box_embed: Tensor, cat_embed: Tensor, params: BackboneParams) -> Tensor:
    """Fused node feature; concatenation order is (spatial, category)."""
    if box_embed.shape != cat_embed.shape or box_embed.ndim != 1:
        raise ad.ShapeError(
            f"fuse_node wants two equal vectors, got {box_embed.shape} and {cat_embed.shape}"
        )
    joint = ad.reshape(ad.concat([box_embed, cat_embed], axis=0), (1, -1))
    out = apply_mlp(joint, params.fusion)
    return ad.reshape(out, (out.shape[1],))


def aggregate_by_category(
    fused: Tensor, categories, valid, num_categories: int
) -> Tensor:
    """Sum fused node features per category for one frame.

    Padding slots (``valid`` false) contribute nothing; categories with no
    valid node come out as zero rows. Addition is order-free, so any slot
    permutation gives the same result.
    """
    categories = np.asarray(categories)
    valid = np.asarray(valid, dtype=bool)
    if fused.ndim != 2 or categories.shape != (fused.shape[0],) or valid.shape != categories.shape:
        raise ad.ShapeError(
            f"aggregate: fused {fused.shape}, categories {categories.shape}, valid {valid.shape}"
        )
    idx = np.nonzero(valid)[0]
    rows = ad.embedding_lookup(fused, idx)
    return ad.segment_sum(rows, categories[idx], num_categories)


def temporal_reason(per_frame: list, params: BackboneParams) -> Tensor:
    """Concatenate each category's frame sequence and apply the shared MLP.

    One weight set serves every category; the input must hold exactly the
    configured number of frames (the MLP input width pins it).
    """
    stacked = ad.concat(list(per_frame), axis=1)
    expected = params.temp[0][0].shape[0]
    if stacked.shape[1] != expected:
        raise ad.ShapeError(
            f"temporal_reason got width {stacked.shape[1]}, expected {expected} "
            f"({len(per_frame)} frames supplied)"
        )
    return apply_mlp(stacked, params.temp)


def category_reason(per_category: Tensor, params: BackboneParams) -> Tensor:
    """Concatenate category rows in table order into the clip feature."""
    expected = params.category[0][0].shape[0]
    if per_category.ndim != 2 or per_category.size != expected:
        raise ad.ShapeError(
            f"category_reason got {per_category.shape}, expected {expected} values"
        )
    row = ad.reshape(per_category, (1, expected))
    out = apply_mlp(row, params.category)
    return ad.reshape(out, (out.shape[1],))


def classify(
    clip_feature: Tensor,
    appearance,
    params: BackboneParams,
    config: ModelConfig,
) -> Tensor:
    """Linear head over the clip feature, late-fused with appearance."""
    if (appearance is not None) != (config.appearance_dim is not None):
        raise ValueError(
            "appearance vector supplied iff config.appearance_dim is set"
        )
    feat = clip_feature
    if appearance is not None:
        app = appearance if isinstance(appearance, Tensor) else Tensor(
            np.asarray(appearance), dtype=params.classifier_w.dtype
        )
        if app.shape != (config.appearance_dim,):
            raise ad.ShapeError(
                f"appearance shape {app.shape} != ({config.appearance_dim},)"
            )
        feat = ad.concat([feat, app], axis=0)
    row = ad.reshape(feat, (1, feat.size))
    out = ad.add(ad.matmul(row, params.classifier_w), params.classifier_b)
    return ad.reshape(out, (config.classes,))


# ---------------------------------------------------------------------------
# whole-clip forward


def _gather_nodes(clips: list, config: ModelConfig) -> tuple:
    """Flatten all valid detections of a batch into node arrays."""
    t_frames, c = config.clip_frames, config.categories
    boxes, cats, buckets = [], [], []
    for b, clip in enumerate(clips):
        if clip.num_frames != t_frames:
            raise ad.ShapeError(
                f"clip has {clip.num_frames} frames, config wants {t_frames}"
            )
        for t, frame in enumerate(clip.frames):
            for det in frame:
                if not det.valid:
                    continue
                if det.category >= c:
                    raise ValueError(
                        f"valid detection with category {det.category} >= {c}"
                    )
                boxes.append(det.box.as_vector())
                cats.append(det.category)
                buckets.append((b * t_frames + t) * c + det.category)
    return (
        np.asarray(boxes, dtype=float).reshape(len(boxes), 4),
        np.asarray(cats, dtype=np.int64),
        np.asarray(buckets, dtype=np.int64),
    )


def _batch_appearance(clips: list, config: ModelConfig, dtype) -> Tensor | None:
    if config.appearance_dim is None:
        return None
    rows = []
    for clip in clips:
        if clip.appearance is None:
            raise ValueError(
                f"config fuses appearance but clip {clip.source} carries none"
            )
        vec = np.asarray(clip.appearance, dtype=float)
        if vec.shape != (config.appearance_dim,):
            raise ad.ShapeError(
                f"appearance shape {vec.shape} != ({config.appearance_dim},)"
            )
        rows.append(vec)
    return Tensor(np.stack(rows), dtype=dtype)


def forward_batch(
    clips: list,
    params: BackboneParams,
    config: ModelConfig,
    ablate: str = "none",
    return_features: bool = False,
):
    """Logits for a batch of clips, shape (batch, classes).

    With ``return_features`` also returns the pre-classifier clip features
    (batch, clip_dim); those are what the sequence head consumes.
    """
    if ablate not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablate!r}; expected one of {ABLATIONS}")
    if not clips:
        raise ValueError("forward_batch needs at least one clip")
    dtype = params.classifier_w.dtype
    bsz, t_frames, c, d = len(clips), config.clip_frames, config.categories, config.embed_dim
    boxes, cats, buckets = _gather_nodes(clips, config)

    if ablate == "no-spe":
        sigma = Tensor(np.zeros((len(boxes), d)), dtype=dtype)
    else:
        sigma = apply_mlp(Tensor(boxes, dtype=dtype), params.spe)
    if ablate == "no-ce":
        kappa = Tensor(np.zeros((len(boxes), d)), dtype=dtype)
    else:
        kappa = ad.embedding_lookup(params.embed, cats)

    fused = apply_mlp(ad.concat([sigma, kappa], axis=1), params.fusion)
    per_bucket = ad.segment_sum(fused, buckets, bsz * t_frames * c)
    by_cat = ad.transpose(ad.reshape(per_bucket, (bsz, t_frames, c, d)), (0, 2, 1, 3))
    temporal_in = ad.reshape(by_cat, (bsz * c, t_frames * d))
    temporal_out = apply_mlp(temporal_in, params.temp)
    category_in = ad.reshape(temporal_out, (bsz, c * config.temporal_dim))
    clip_features = apply_mlp(category_in, params.category)

    feat = clip_features
    appearance = _batch_appearance(clips, config, dtype)
    if appearance is not None:
        feat = ad.concat([feat, appearance], axis=1)
    logits = ad.add(ad.matmul(feat, params.classifier_w), params.classifier_b)
    if return_features:
        return logits, clip_features
    return logits


def forward(
    clip: Clip, params: BackboneParams, config: ModelConfig, ablate: str = "none"
) -> Tensor:
    """Logits for one clip, shape (classes,)."""
    logits = forward_batch([clip], params, config, ablate=ablate)
    return ad.reshape(logits, (config.classes,))


def clip_features(clips: list, params: BackboneParams, config: ModelConfig) -> np.ndarray:
    """Pre-classifier clip features as a plain array (inference only)."""
    _, feats = forward_batch(clips, params, config, return_features=True)
    return feats.values
