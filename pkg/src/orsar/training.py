"""Two-stage training: clip backbone, then GRU over extracted features.

Stage one trains the object-graph backbone on single-phase clips with SGD
(momentum, weight decay, warmup-cosine schedule). Stage two freezes the
backbone, tiles each video into non-overlapping clip positions, extracts
the pre-classifier clip features, and trains the GRU on per-position
majority labels with per-video summed cross-entropy.

The data-efficiency sweep repeats the full two-stage pipeline for each
(labeled-fraction, split-seed, variant) cell against one fixed held-out
set per split; cells are independent and can run in parallel processes.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import model as mdl
from . import sequence as seq
from .metrics import PredictionSet, mean_ap, top1_accuracy
from .optim import SgdMomentum, warmup_cosine_lr
from .scene import (
    CategoryTable,
    Clip,
    VideoRecord,
    clip_at_position,
    clip_positions,
    CLIP_STRIDE,
    sample_clip,
    split_labeled_fraction,
)

CATEGORIES = CategoryTable()

VARIANTS = ("graph", "fusion", "appearance")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 1e-6
    warmup_start_lr: float = 0.01
    peak_lr: float = 0.05
    warmup_epochs: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.epochs > 0 and not 0 < self.warmup_epochs < self.epochs:
            raise ValueError(
                f"need 0 < warmup_epochs ({self.warmup_epochs}) < epochs ({self.epochs})"
            )
        if self.peak_lr <= 0 or self.warmup_start_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "warmup_start_lr": self.warmup_start_lr,
            "peak_lr": self.peak_lr,
            "warmup_epochs": self.warmup_epochs,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        return TrainConfig(**obj)


def lr_at(config: TrainConfig, step: int, total_steps: int, steps_per_epoch: int) -> float:
    """Schedule value for a global step; warmup length comes in epochs."""
    return warmup_cosine_lr(
        step,
        total_steps,
        peak_lr=config.peak_lr,
        warmup_steps=config.warmup_epochs * steps_per_epoch,
        warmup_start_lr=config.warmup_start_lr,
    )


# ---------------------------------------------------------------------------
# stage one: clip backbone


def epoch_clips(
    videos: list,
    model_config: mdl.ModelConfig,
    rng: np.random.Generator,
) -> list:
    """One training clip per phase run of every video.

    Short runs pad by repeating their last frame; clip placement within a
    run is uniform, so epochs see different windows of the same runs.
    """
    clips = []
    for video in videos:
        for run in video.phase_runs():
            clips.append(
                sample_clip(
                    video,
                    run,
                    model_config.clip_frames,
                    model_config.slots,
                    CATEGORIES,
                    rng,
                    allow_short=True,
                )
            )
    return clips


def predict_clips(
    clips: list,
    params: mdl.BackboneParams,
    model_config: mdl.ModelConfig,
    ablate: str = "none",
    batch_size: int = 256,
) -> PredictionSet:
    """Softmax scores for a clip list (inference, no tape)."""
    scores = []
    for i in range(0, len(clips), batch_size):
        logits = mdl.forward_batch(
            clips[i : i + batch_size], params, model_config, ablate=ablate
        ).values
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        scores.append(e / e.sum(axis=1, keepdims=True))
    return PredictionSet(np.concatenate(scores), np.array([c.label for c in clips]))


def train_backbone(
    train_videos: list,
    config: TrainConfig,
    model_config: mdl.ModelConfig,
    val_videos: list | None = None,
    ablate: str = "none",
    dtype=np.float32,
    init: str = "normal",
) -> tuple:
    """Train the backbone; returns (params, per-epoch log)."""
    if not train_videos:
        raise ValueError("train_backbone needs a non-empty dataset")
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = mdl.init_backbone(model_config, rng, dtype=dtype, init=init)
    log = []
    if config.epochs == 0:
        return params, log

    steps_per_epoch = max(
        1, (len(epoch_clips(train_videos, model_config, np.random.default_rng(0))) + config.batch_size - 1) // config.batch_size
    )
    total_steps = config.epochs * steps_per_epoch
    opt = SgdMomentum(params.tensors(), config.momentum, config.weight_decay)
    val_clips = None
    if val_videos:
        val_clips = epoch_clips(val_videos, model_config, np.random.default_rng(config.seed + 99))

    step = 0
    for epoch in range(config.epochs):
        clips = epoch_clips(train_videos, model_config, rng)
        order = rng.permutation(len(clips))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [clips[i] for i in order[start : start + config.batch_size]]
            targets = [c.label for c in batch]
            lr = lr_at(config, min(step, total_steps - 1), total_steps, steps_per_epoch)
            opt.zero_grad()
            with ad.Tape() as tape:
                logits = mdl.forward_batch(batch, params, model_config, ablate=ablate)
                loss = ad.softmax_cross_entropy(logits, targets)
                tape.backward(loss)
            opt.step(lr)
            losses.append(loss.item())
            step += 1
        entry = {
            "epoch": epoch,
            "step": step,
            "lr": lr,
            "loss": float(np.mean(losses)),
            "val_top1": None,
        }
        if val_clips:
            entry["val_top1"] = top1_accuracy(
                predict_clips(val_clips, params, model_config, ablate=ablate)
            )
        log.append(entry)
    return params, log


# ---------------------------------------------------------------------------
# stage two: feature extraction + sequence model


@dataclass
class VideoFeatures:
    """Per-video tiling output: one feature row per clip position."""

    video_id: str
    features: np.ndarray  # (positions, clip_dim)
    labels: np.ndarray  # (positions,) majority phase per span
    num_frames: int
    appearance: np.ndarray | None = None  # (positions, appearance_dim)


def extract_features(
    videos: list,
    params: mdl.BackboneParams,
    model_config: mdl.ModelConfig,
    batch_size: int = 256,
) -> list:
    """Clip features at every non-overlapping position of every video.

    Inference only: parameters are not touched. Videos shorter than one
    clip span come out with zero positions.
    """
    out = []
    for video in videos:
        n_pos = clip_positions(len(video), model_config.clip_frames)
        clips = [
            clip_at_position(video, p, model_config.clip_frames, model_config.slots, CATEGORIES)
            for p in range(n_pos)
        ]
        if clips:
            feats = np.concatenate(
                [
                    mdl.clip_features(clips[i : i + batch_size], params, model_config)
                    for i in range(0, len(clips), batch_size)
                ]
            )
        else:
            feats = np.zeros((0, model_config.clip_dim), dtype=np.float32)
        appearance = None
        if video.appearance is not None:
            appearance = np.asarray(video.appearance, dtype=np.float32)[:n_pos]
        out.append(
            VideoFeatures(
                video_id=video.id,
                features=feats.astype(np.float32, copy=False),
                labels=np.array([c.label for c in clips], dtype=np.int64),
                num_frames=len(video),
                appearance=appearance,
            )
        )
    return out


def _gru_inputs(vf: VideoFeatures, variant: str) -> tuple:
    """(features, appearance) streams the GRU sees under a variant."""
    if variant == "graph":
        return vf.features, None
    if vf.appearance is None:
        raise ValueError(f"variant {variant!r} needs appearance features ({vf.video_id})")
    if variant == "fusion":
        return vf.features, vf.appearance
    if variant == "appearance":
        return vf.appearance, None
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def gru_input_dim(model_config: mdl.ModelConfig, appearance_dim: int | None, variant: str) -> int:
    if variant == "graph":
        return model_config.clip_dim
    if appearance_dim is None:
        raise ValueError(f"variant {variant!r} needs an appearance dimension")
    if variant == "fusion":
        return model_config.clip_dim + appearance_dim
    if variant == "appearance":
        return appearance_dim
    raise ValueError(f"unknown variant {variant!r}")


def train_sequence(
    feature_videos: list,
    gru_config: seq.GruConfig,
    config: TrainConfig,
    variant: str = "graph",
    dtype=np.float32,
    normalize: bool = True,
) -> tuple:
    """Train the GRU head; returns (SequenceModel, per-epoch log).

    Loss is cross-entropy summed over positions within a video, averaged
    over the videos of a batch. Inputs are standardized with statistics of
    the training streams (kept in the returned model) unless ``normalize``
    is off.
    """
    usable = [vf for vf in feature_videos if len(vf.labels) > 0]
    if not usable:
        raise ValueError("train_sequence needs at least one video with positions")
    for vf in usable:
        if len(vf.labels) != len(vf.features):
            raise ValueError(f"video {vf.video_id}: labels misaligned with features")
    config.validate()

    streams = [_gru_inputs(vf, variant) for vf in usable]
    feat_scaler = app_scaler = None
    if normalize:
        feat_scaler = seq.FeatureScaler.fit(np.concatenate([s[0] for s in streams]))
        if streams[0][1] is not None:
            app_scaler = seq.FeatureScaler.fit(np.concatenate([s[1] for s in streams]))

    rng = np.random.default_rng(config.seed)
    params = seq.init_gru(gru_config, rng, dtype=dtype)
    model = seq.SequenceModel(
        params=params,
        config=gru_config,
        variant=variant,
        feat_scaler=feat_scaler,
        app_scaler=app_scaler,
    )
    scaled = [model.scaled(f, a) for f, a in streams]
    steps_per_epoch = max(1, (len(usable) + config.batch_size - 1) // config.batch_size)
    total_steps = max(1, config.epochs * steps_per_epoch)
    opt = SgdMomentum(params.tensors(), config.momentum, config.weight_decay)
    log = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(usable))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            lr = lr_at(config, min(step, total_steps - 1), total_steps, steps_per_epoch)
            opt.zero_grad()
            with ad.Tape() as tape:
                parts = []
                for i in idx:
                    feats, apps = scaled[i]
                    logits = seq.segment_video(feats, apps, params)
                    parts.append(
                        ad.softmax_cross_entropy(logits, usable[i].labels, reduction="sum")
                    )
                total = parts[0]
                for p in parts[1:]:
                    total = ad.add(total, p)
                loss = ad.scale(total, 1.0 / len(idx))
                tape.backward(loss)
            opt.step(lr)
            losses.append(loss.item())
            step += 1
        log.append(
            {"epoch": epoch, "step": step, "lr": lr, "loss": float(np.mean(losses)), "val_top1": None}
        )
    return model, log


# ---------------------------------------------------------------------------
# segmentation evaluation


def positions_to_frames(scores: np.ndarray, num_frames: int, span: int) -> np.ndarray:
    """Expand per-position scores to per-frame scores.

    Each frame takes its position's scores; tail frames past the last full
    span reuse the final position.
    """
    if len(scores) == 0:
        raise ValueError("no positions to expand")
    idx = np.minimum(np.arange(num_frames) // span, len(scores) - 1)
    return scores[idx]


def segmentation_predictions(
    feature_videos: list,
    seq_model: seq.SequenceModel | None,
    videos_by_id: dict,
    model_config: mdl.ModelConfig,
    backbone_params: mdl.BackboneParams | None = None,
    variant: str = "graph",
) -> PredictionSet:
    """Frame-wise prediction set over all videos.

    With ``seq_model`` the scores come from the sequence head; with
    ``seq_model=None`` they are the backbone's per-position softmax
    (the no-temporal-model baseline), which requires ``backbone_params``.
    """
    span = CLIP_STRIDE * model_config.clip_frames
    all_scores, all_truths = [], []
    for vf in feature_videos:
        if len(vf.labels) == 0:
            continue
        video = videos_by_id[vf.video_id]
        if seq_model is not None:
            feats, apps = _gru_inputs(vf, seq_model.variant)
            pos_scores = seq_model.scores(feats, apps)
        else:
            if backbone_params is None:
                raise ValueError("backbone baseline needs backbone_params")
            clips = [
                clip_at_position(video, p, model_config.clip_frames, model_config.slots, CATEGORIES)
                for p in range(len(vf.labels))
            ]
            pos_scores = predict_clips(clips, backbone_params, model_config).scores
        frame_scores = positions_to_frames(pos_scores, len(video), span)
        all_scores.append(frame_scores)
        all_truths.append(np.asarray(video.phases))
    if not all_scores:
        raise ValueError("no video produced any clip position")
    return PredictionSet(np.concatenate(all_scores), np.concatenate(all_truths))


# ---------------------------------------------------------------------------
# data-efficiency sweep


@dataclass
class SweepSettings:
    """Everything one sweep cell needs besides the data itself."""

    fractions: tuple = (0.02, 0.05, 0.10, 0.20, 1.0)
    split_seeds: tuple = (0, 1, 2)
    variants: tuple = VARIANTS
    holdout_fraction: float = 0.2
    backbone: TrainConfig = None
    gru: TrainConfig = None
    model: mdl.ModelConfig = None
    gru_hidden: int = 64
    appearance_dim: int = 16
    base_seed: int = 0

    def __post_init__(self):
        if self.backbone is None:
            self.backbone = TrainConfig(epochs=12, batch_size=32, peak_lr=0.05, warmup_epochs=2)
        if self.gru is None:
            self.gru = TrainConfig(epochs=30, batch_size=8, peak_lr=0.05, warmup_epochs=3)
        if self.model is None:
            self.model = mdl.ModelConfig(embed_dim=48, clip_frames=8)


def split_holdout(videos: list, split_seed: int, holdout_fraction: float) -> tuple:
    """(pool, held) video split, fixed per split seed."""
    held, pool = split_labeled_fraction(videos, holdout_fraction, seed=split_seed * 7919 + 13)
    return pool, held


def run_sweep_cell(
    videos: list,
    fraction: float,
    split_seed: int,
    variant: str,
    settings: SweepSettings,
) -> dict:
    """Train the full two-stage pipeline for one sweep cell and evaluate."""
    pool, held = split_holdout(videos, split_seed, settings.holdout_fraction)
    labeled, _ = split_labeled_fraction(pool, fraction, seed=split_seed * 104729 + int(fraction * 1000))
    held_ids = {v.id for v in held}
    assert not held_ids & {v.id for v in labeled}, "labeled subset leaked into holdout"

    cell_seed = (
        settings.base_seed
        + 15485863 * settings.split_seeds.index(split_seed)
        + 32452843 * int(fraction * 1000)
        + 49979687 * settings.variants.index(variant)
    ) % (2**31)
    model_config = replace(settings.model)
    backbone_cfg = replace(settings.backbone, seed=cell_seed)
    gru_cfg = replace(settings.gru, seed=cell_seed + 1)

    if variant == "graph":
        model_config.appearance_dim = None
    elif variant == "fusion":
        model_config.appearance_dim = settings.appearance_dim

    backbone_params = None
    if variant in ("graph", "fusion"):
        backbone_params, _ = train_backbone(labeled, backbone_cfg, model_config)
        feats_train = extract_features(labeled, backbone_params, model_config)
        feats_held = extract_features(held, backbone_params, model_config)
    else:
        # appearance-only: the GRU consumes appearance vectors directly
        zero_params = mdl.init_backbone(
            model_config, np.random.default_rng(cell_seed), dtype=np.float32, init="zero"
        )
        feats_train = extract_features(labeled, zero_params, model_config)
        feats_held = extract_features(held, zero_params, model_config)

    gru_config = seq.GruConfig(
        input_dim=gru_input_dim(model_config, settings.appearance_dim, variant),
        hidden_dim=settings.gru_hidden,
        classes=model_config.classes,
    )
    gru_params, _ = train_sequence(feats_train, gru_config, gru_cfg, variant=variant)

    preds = segmentation_predictions(
        feats_held,
        gru_params,
        {v.id: v for v in held},
        variant,
        model_config,
    )
    m, _, _ = mean_ap(preds)
    return {
        "fraction": fraction,
        "split": split_seed,
        "variant": variant,
        "map": m,
        "top1": top1_accuracy(preds),
    }


_WORKER_VIDEOS: dict = {}


def _sweep_worker(args) -> dict:
    path, fraction, split_seed, variant, settings = args
    videos = _WORKER_VIDEOS.get(path)
    if videos is None:
        from .scene import load_dataset

        videos = list(load_dataset(path))
        _WORKER_VIDEOS[path] = videos
    return run_sweep_cell(videos, fraction, split_seed, variant, settings)


def run_data_efficiency_sweep(
    videos: list,
    settings: SweepSettings,
    jobs: int = 1,
    dataset_path=None,
) -> list:
    """All sweep cells, sorted by (fraction, split, variant).

    ``jobs > 1`` fans cells out to worker processes; that path needs
    ``dataset_path`` so workers can load the videos themselves.
    """
    cells = [
        (fraction, split_seed, variant)
        for fraction in settings.fractions
        for split_seed in settings.split_seeds
        for variant in settings.variants
    ]
    if jobs > 1 and dataset_path is not None and len(cells) > 1:
        args = [(str(dataset_path), f, s, v, settings) for f, s, v in cells]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_worker, args))
    else:
        rows = [run_sweep_cell(videos, f, s, v, settings) for f, s, v in cells]
    rows.sort(key=lambda r: (r["fraction"], r["split"], VARIANTS.index(r["variant"])))
    return rows
