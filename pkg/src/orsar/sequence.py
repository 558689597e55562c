"""Uni-directional GRU over per-clip features for long-video segmentation.

The backbone turns a procedure into a sequence of clip feature vectors
(optionally concatenated with appearance features). A single GRU consumes
them strictly left to right from a zero initial state, and a per-step
linear head emits activity logits, so the prediction at position t depends
only on features at positions <= t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class FeatureScaler:
    """Per-dimension standardization fitted on training features.

    The GRU's gates saturate when input magnitudes drift with backbone
    training, so inputs are standardized with statistics frozen at stage-two
    training time; the scaler travels with the checkpoint.
    """

    mean: np.ndarray
    scale: np.ndarray

    @staticmethod
    def fit(rows: np.ndarray, eps: float = 1e-6) -> "FeatureScaler":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise ValueError(f"scaler needs a non-empty 2-d array, got {rows.shape}")
        return FeatureScaler(
            mean=rows.mean(axis=0), scale=rows.std(axis=0) + eps
        )

    def apply(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows) - self.mean) / self.scale

    def to_json(self) -> dict:
        return {"mean": [float(x) for x in self.mean], "scale": [float(x) for x in self.scale]}

    @staticmethod
    def from_json(obj: dict) -> "FeatureScaler":
        return FeatureScaler(
            mean=np.asarray(obj["mean"], dtype=np.float64),
            scale=np.asarray(obj["scale"], dtype=np.float64),
        )


@dataclass
class GruConfig:
    input_dim: int
    hidden_dim: int = 256
    classes: int = 9

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1 or self.classes < 1:
            raise ValueError("GRU dimensions must be positive")

    def to_json(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "classes": self.classes,
        }

    @staticmethod
    def from_json(obj: dict) -> "GruConfig":
        return GruConfig(**obj)


@dataclass
class GruParams:
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor
    classifier_w: Tensor
    classifier_b: Tensor

    def named(self) -> dict:
        return {
            "update.w": self.w_z,
            "update.u": self.u_z,
            "update.b": self.b_z,
            "reset.w": self.w_r,
            "reset.u": self.u_r,
            "reset.b": self.b_r,
            "candidate.w": self.w_h,
            "candidate.u": self.u_h,
            "candidate.b": self.b_h,
            "classifier.weight": self.classifier_w,
            "classifier.bias": self.classifier_b,
        }

    def tensors(self) -> list:
        return list(self.named().values())

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()


def init_gru(
    config: GruConfig,
    rng: np.random.Generator,
    dtype=np.float32,
    init: str = "normal",
) -> GruParams:
    if init not in ("normal", "zero"):
        raise ValueError(f"unknown init {init!r}")
    d_in, h, k = config.input_dim, config.hidden_dim, config.classes

    def mat(fan_in, fan_out):
        if init == "zero":
            return Tensor(np.zeros((fan_in, fan_out)), dtype=dtype)
        return Tensor(
            rng.normal(scale=1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)),
            dtype=dtype,
        )

    def vec(n):
        return Tensor(np.zeros(n), dtype=dtype)

    return GruParams(
        w_z=mat(d_in, h), u_z=mat(h, h), b_z=vec(h),
        w_r=mat(d_in, h), u_r=mat(h, h), b_r=vec(h),
        w_h=mat(d_in, h), u_h=mat(h, h), b_h=vec(h),
        classifier_w=mat(h, k), classifier_b=vec(k),
    )


def gru_step(x: Tensor, h: Tensor, params: GruParams) -> Tensor:
    """One recurrence step: gates from (input, state), convex state update.

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * c
    """
    if x.ndim != 1 or h.ndim != 1:
        raise ad.ShapeError(f"gru_step wants vectors, got {x.shape} and {h.shape}")
    if x.shape[0] != params.w_z.shape[0] or h.shape[0] != params.u_z.shape[0]:
        raise ad.ShapeError(
            f"gru_step shapes: x {x.shape} vs W {params.w_z.shape}, "
            f"h {h.shape} vs U {params.u_z.shape}"
        )
    xr = ad.reshape(x, (1, x.shape[0]))
    hr = ad.reshape(h, (1, h.shape[0]))
    z = ad.sigmoid(ad.add(ad.add(ad.matmul(xr, params.w_z), ad.matmul(hr, params.u_z)), params.b_z))
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(xr, params.w_r), ad.matmul(hr, params.u_r)), params.b_r))
    cand = ad.tanh(
        ad.add(
            ad.add(ad.matmul(xr, params.w_h), ad.matmul(ad.mul(r, hr), params.u_h)),
            params.b_h,
        )
    )
    new = ad.add(hr, ad.mul(z, ad.sub(cand, hr)))
    return ad.reshape(new, (h.shape[0],))


def step_logits(h: Tensor, params: GruParams) -> Tensor:
    row = ad.reshape(h, (1, h.shape[0]))
    out = ad.add(ad.matmul(row, params.classifier_w), params.classifier_b)
    return out


def segment_video(clip_features, appearance, params: GruParams) -> Tensor:
    """Per-position logits for one video's clip-feature sequence.

    ``clip_features`` is a sequence of equal-length vectors (arrays or
    tensors); ``appearance``, when given, must align one-to-one and is
    concatenated onto each input. Returns a (positions, classes) tensor.
    """
    n = len(clip_features)
    if n == 0:
        raise ValueError("segment_video needs at least one position")
    if appearance is not None and len(appearance) != n:
        raise ValueError(
            f"appearance stream length {len(appearance)} != features {n}"
        )
    dtype = params.w_z.dtype
    h = Tensor(np.zeros(params.u_z.shape[0]), dtype=dtype)
    rows = []
    for i in range(n):
        feat = clip_features[i]
        x = feat if isinstance(feat, Tensor) else Tensor(np.asarray(feat), dtype=dtype)
        if appearance is not None:
            app = appearance[i]
            app_t = app if isinstance(app, Tensor) else Tensor(np.asarray(app), dtype=dtype)
            x = ad.concat([x, app_t], axis=0)
        h = gru_step(x, h, params)
        rows.append(step_logits(h, params))
    return ad.concat(rows, axis=0)


def segment_scores(clip_features, appearance, params: GruParams) -> np.ndarray:
    """Softmax probabilities per position, computed without a tape."""
    logits = segment_video(clip_features, appearance, params).values
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class SequenceModel:
    """Trained stage-two bundle: GRU weights plus input plumbing.

    ``variant`` names which streams feed the GRU (graph features,
    appearance features, or their concatenation); the scalers standardize
    each stream with statistics from training time.
    """

    params: GruParams
    config: GruConfig
    variant: str
    feat_scaler: FeatureScaler | None = None
    app_scaler: FeatureScaler | None = None

    def scaled(self, features, appearance) -> tuple:
        feats = self.feat_scaler.apply(features) if self.feat_scaler is not None else features
        apps = appearance
        if appearance is not None and self.app_scaler is not None:
            apps = self.app_scaler.apply(appearance)
        return feats, apps

    def scores(self, features, appearance) -> np.ndarray:
        feats, apps = self.scaled(features, appearance)
        return segment_scores(feats, apps, self.params)
