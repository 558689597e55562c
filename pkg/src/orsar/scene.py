"""Scene domain types: detections, clips, videos, and their file format.

Detections arrive as data (produced upstream by a detector or by the
simulator); there is no image handling here. A clip is the unit the
backbone classifies: T frames taken at stride 2 from a single-phase span,
each frame padded to exactly N detection slots. A video record is a full
procedure: a frame stream of detections plus a per-frame phase label and,
optionally, one appearance feature vector per non-overlapping clip
position.

Datasets are UTF-8 JSONL, one video record per line:

    {"id": str, "fps_subsample": 2,
     "frames": [[{"cat": int, "box": [cx, cy, w, h], "conf": float}, ...], ...],
     "phases": [int, ...],
     "appearance": [[float, ...], ...]}        # optional

Box floats round-trip exactly (json uses repr). Padding never appears on
disk; it is applied when frames are packed into clips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DEFAULT_CATEGORIES = ("human", "table", "gurney", "psc", "or-table", "vsc")

#: Activity labels; ids are positions in this tuple. Roll-up and roll-back
#: share object occupancy and differ only in motion, which makes them the
#: probe pair for position-feature ablations.
ACTIVITIES = (
    "sterile-prep",
    "patient-roll-in",
    "patient-prep",
    "robot-roll-up",
    "docking",
    "surgery",
    "undocking",
    "robot-roll-back",
    "patient-roll-out",
)
NUM_ACTIVITIES = len(ACTIVITIES)
MOTION_ONLY_PAIR = (ACTIVITIES.index("robot-roll-up"), ACTIVITIES.index("robot-roll-back"))

#: Source frames are subsampled by two when clips are cut.
CLIP_STRIDE = 2


class DatasetError(ValueError):
    """A dataset file failed to parse or violated a record invariant."""


@dataclass(frozen=True)
class CategoryTable:
    """Dense category ids 0..C-1 plus a reserved padding id == C."""

    names: tuple = DEFAULT_CATEGORIES

    @property
    def count(self) -> int:
        return len(self.names)

    @property
    def padding_id(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, all components normalized to [0, 1]."""

    cx: float
    cy: float
    w: float
    h: float

    def as_vector(self) -> tuple:
        return (self.cx, self.cy, self.w, self.h)

    def validate(self) -> None:
        for name, v in zip(("cx", "cy", "w", "h"), self.as_vector()):
            if not 0.0 <= v <= 1.0:
                raise DatasetError(f"box component {name}={v} outside [0, 1]")


ZERO_BOX = BoundingBox(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Detection:
    """One observed object instance in one frame.

    ``valid=False`` marks a padding slot: zero box, reserved padding
    category, never embedded or aggregated.
    """

    box: BoundingBox
    category: int
    valid: bool = True
    conf: float = 1.0


def padding_detection(categories: CategoryTable) -> Detection:
    return Detection(ZERO_BOX, categories.padding_id, valid=False, conf=0.0)


@dataclass
class Clip:
    """T frames of N detection slots with one activity label."""

    frames: list  # T lists of exactly N Detection
    label: int
    source: tuple = ("", 0)  # (video id, start source frame)
    appearance: np.ndarray | None = None

    @property
    def num_frames(self) -> int:
        return len(self.frames)


@dataclass
class VideoRecord:
    """A full procedure: per-frame detections and phase labels."""

    id: str
    frames: list  # per-frame list of valid Detection
    phases: list
    appearance: list | None = None  # one vector per non-overlapping clip position

    def __len__(self) -> int:
        return len(self.frames)

    def validate(self) -> None:
        if len(self.phases) != len(self.frames):
            raise DatasetError(
                f"video {self.id}: {len(self.phases)} phases for "
                f"{len(self.frames)} frames"
            )
        for dets in self.frames:
            for det in dets:
                det.box.validate()
                if det.category < 0:
                    raise DatasetError(f"video {self.id}: negative category")

    def phase_runs(self) -> list:
        """Maximal contiguous spans of equal phase, as (start, end, phase)."""
        runs = []
        start = 0
        for i in range(1, len(self.phases) + 1):
            if i == len(self.phases) or self.phases[i] != self.phases[start]:
                runs.append((start, i, self.phases[start]))
                start = i
        return runs


# ---------------------------------------------------------------------------
# JSONL serialization


def _det_to_json(det: Detection) -> dict:
    return {"cat": det.category, "box": list(det.box.as_vector()), "conf": det.conf}


def _det_from_json(obj: dict) -> Detection:
    box = obj["box"]
    return Detection(
        BoundingBox(box[0], box[1], box[2], box[3]),
        int(obj["cat"]),
        valid=True,
        conf=float(obj.get("conf", 1.0)),
    )


def record_to_json(record: VideoRecord) -> dict:
    obj = {
        "id": record.id,
        "fps_subsample": CLIP_STRIDE,
        "frames": [[_det_to_json(d) for d in dets] for dets in record.frames],
        "phases": list(record.phases),
    }
    if record.appearance is not None:
        obj["appearance"] = [list(map(float, v)) for v in record.appearance]
    return obj


def record_from_json(obj: dict) -> VideoRecord:
    record = VideoRecord(
        id=str(obj["id"]),
        frames=[[_det_from_json(d) for d in dets] for dets in obj["frames"]],
        phases=[int(p) for p in obj["phases"]],
        appearance=[np.asarray(v, dtype=float) for v in obj["appearance"]]
        if obj.get("appearance") is not None
        else None,
    )
    record.validate()
    return record


def load_dataset(path) -> Iterator[VideoRecord]:
    """Yield video records from a JSONL file, validating each one."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            try:
                yield record_from_json(obj)
            except (KeyError, TypeError, DatasetError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc


def save_dataset(records: Sequence[VideoRecord], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record), sort_keys=True))
            fh.write("\n")


# ---------------------------------------------------------------------------
# clip assembly


class SamplingError(ValueError):
    """A phase run cannot yield a clip under the requested settings."""


def pad_frame(detections: Sequence[Detection], n_slots: int, categories: CategoryTable) -> list:
    """Pack detections into exactly ``n_slots`` slots.

    Valid detections keep their order in the leading slots; the remainder
    are padding. Overfull frames keep the ``n_slots`` highest-confidence
    detections (stable under ties).
    """
    dets = list(detections)
    if len(dets) > n_slots:
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].conf, i))
        keep = sorted(order[:n_slots])
        dets = [dets[i] for i in keep]
    pad = padding_detection(categories)
    return dets + [pad] * (n_slots - len(dets))


def clip_frame_indices(run_start: int, run_end: int, clip_start: int, num_frames: int) -> list:
    """Source-frame indices for a clip: stride-2, last frame repeated if the
    run ends early."""
    idx = []
    for j in range(num_frames):
        i = clip_start + CLIP_STRIDE * j
        idx.append(min(i, run_end - 1))
    return idx


def sample_clip(
    video: VideoRecord,
    run: tuple,
    num_frames: int,
    n_slots: int,
    categories: CategoryTable,
    rng: np.random.Generator,
    allow_short: bool = False,
) -> Clip:
    """Cut one stride-2 clip from a single-phase run, start chosen uniformly.

    The run must cover ``2 * num_frames`` source frames; shorter runs raise
    unless ``allow_short`` is set, in which case the final frame is repeated
    to fill.
    """
    start, end, phase = run
    if any(p != phase for p in video.phases[start:end]):
        raise SamplingError(f"run [{start}, {end}) spans more than one phase")
    span = CLIP_STRIDE * num_frames
    if end - start < span:
        if not allow_short:
            raise SamplingError(
                f"run of {end - start} frames too short for a "
                f"{num_frames}-frame clip at stride {CLIP_STRIDE}"
            )
        clip_start = start
    else:
        clip_start = start + int(rng.integers(0, end - start - span + 1))
    indices = clip_frame_indices(start, end, clip_start, num_frames)
    frames = [
        pad_frame(video.frames[i], n_slots, categories) for i in indices
    ]
    appearance = None
    if video.appearance is not None and video.appearance:
        pos = min(clip_start // span, len(video.appearance) - 1)
        appearance = np.asarray(video.appearance[pos], dtype=float)
    return Clip(frames=frames, label=phase, source=(video.id, clip_start), appearance=appearance)


def clip_positions(video_length: int, num_frames: int) -> int:
    """How many non-overlapping clip positions a video of this length tiles into."""
    return video_length // (CLIP_STRIDE * num_frames)


def clip_at_position(
    video: VideoRecord,
    position: int,
    num_frames: int,
    n_slots: int,
    categories: CategoryTable,
) -> Clip:
    """The clip at a fixed tiling position, labeled by majority phase.

    Ties in the majority vote go to the lowest phase id.
    """
    span = CLIP_STRIDE * num_frames
    start = position * span
    if start + span > len(video.frames):
        raise SamplingError(
            f"position {position} out of range for video of {len(video.frames)} frames"
        )
    indices = [start + CLIP_STRIDE * j for j in range(num_frames)]
    frames = [pad_frame(video.frames[i], n_slots, categories) for i in indices]
    span_phases = video.phases[start : start + span]
    label = int(np.bincount(span_phases).argmax())
    appearance = None
    if video.appearance is not None and video.appearance:
        appearance = np.asarray(video.appearance[min(position, len(video.appearance) - 1)], dtype=float)
    return Clip(frames=frames, label=label, source=(video.id, start), appearance=appearance)


def split_labeled_fraction(videos: Sequence[VideoRecord], fraction: float, seed: int) -> tuple:
    """Video-level split into (labeled subset, remainder), seed-deterministic.

    The labeled count is round(fraction * len(videos)), floored at one
    video. Order within each part follows the original sequence, so the
    parts partition the input exactly.
    """
    if not videos:
        raise ValueError("cannot split an empty video list")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside (0, 1]")
    n = len(videos)
    n_labeled = max(1, int(round(fraction * n)))
    rng = np.random.default_rng(seed)
    chosen = set(rng.permutation(n)[:n_labeled].tolist())
    labeled = [videos[i] for i in range(n) if i in chosen]
    rest = [videos[i] for i in range(n) if i not in chosen]
    return labeled, rest
