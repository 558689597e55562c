"""Synthetic operating-room scene generator.

Produces labeled bounding-box trajectories for the six scene categories
under nine scripted activities, plus full procedures that chain activities
in a plausible order. A detection-noise model (per-category misses, box
jitter, false positives, optional label confusion) stands in for a real
detector; its default miss rates are a monotone map of the per-class
quality of the upstream detector, so hard-to-detect categories (the OR
table) drop out more often than easy ones (humans).

Scene layout lives on the unit square: the OR table sits near the center,
the patient-side cart (psc) parks at the left edge and rolls up to the
table, gurneys come and go through the right edge, and the vision-side
cart and instrument table hold the corners. Entity motion is one of three
programs: ``static`` (stay put), ``walk`` (undirected wander), ``lerp``
(travel from the start region to a target across the run, so displacement
per clip scales with clip coverage and the mover always arrives).

Four activity scripts (roll-up, docking, undocking, roll-back) share the
exact same category occupancy and differ only in motion. Category counts
alone cannot separate them, which is precisely the lever that makes
position-feature ablations measurable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .scene import (
    ACTIVITIES,
    NUM_ACTIVITIES,
    CLIP_STRIDE,
    BoundingBox,
    CategoryTable,
    Clip,
    Detection,
    VideoRecord,
    pad_frame,
    sample_clip,
    clip_positions,
)

CATEGORIES = CategoryTable()
HUMAN, TABLE, GURNEY, PSC, OR_TABLE, VSC = range(6)

#: Per-class detection quality (percent) of the reference detector; the
#: default miss rates derive from these so relative difficulty carries over.
DETECTOR_MAP_PCT = {
    HUMAN: 79.3,
    TABLE: 65.4,
    GURNEY: 57.4,
    PSC: 70.2,
    OR_TABLE: 46.4,
    VSC: 69.7,
}

#: Nominal (w, h) per category, normalized units.
NOMINAL_SIZE = {
    HUMAN: (0.08, 0.20),
    TABLE: (0.14, 0.10),
    GURNEY: (0.22, 0.12),
    PSC: (0.13, 0.17),
    OR_TABLE: (0.26, 0.16),
    VSC: (0.10, 0.14),
}

# Fixed floor-plan anchors.
OR_TABLE_POS = (0.50, 0.52)
TABLE_POS = (0.14, 0.80)
VSC_POS = (0.86, 0.16)
PSC_PARK = (0.06, 0.52)
PSC_DOCK = (0.40, 0.52)
GURNEY_DOOR = (0.92, 0.56)
GURNEY_PARK = (0.60, 0.56)


class ConfigError(ValueError):
    """A simulation config is inconsistent or unusable."""


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle to sample spawn/target points from."""

    x0: float
    y0: float
    x1: float
    y1: float

    def sample(self, rng: np.random.Generator) -> tuple:
        return (float(rng.uniform(self.x0, self.x1)), float(rng.uniform(self.y0, self.y1)))

    @staticmethod
    def around(point, radius=0.02) -> "Region":
        x, y = point
        return Region(x - radius, y - radius, x + radius, y + radius)


@dataclass(frozen=True)
class Motion:
    """Per-entity motion program for one activity run.

    kind 'static': hold the spawn point (positional noise only).
    kind 'walk':   undirected random walk, no systematic drift.
    kind 'lerp':   move from spawn to a point in ``target`` across the run.
    """

    kind: str
    target: Region | None = None
    jitter: float = 0.004

    def validate(self) -> None:
        if self.kind not in ("static", "walk", "lerp"):
            raise ConfigError(f"unknown motion kind {self.kind!r}")
        if self.kind == "lerp" and self.target is None:
            raise ConfigError("lerp motion needs a target region")


@dataclass(frozen=True)
class EntitySpec:
    """Spawn rule for one group of same-category entities."""

    category: int
    count: tuple  # (min, max) inclusive
    start: Region
    motion: Motion


@dataclass(frozen=True)
class ActivityScript:
    activity: int
    name: str
    duration: tuple  # (min, max) frames, inclusive
    entities: tuple

    def validate(self, num_categories: int, min_frames: int) -> None:
        if self.duration[0] < min_frames:
            raise ConfigError(
                f"script {self.name}: min duration {self.duration[0]} < {min_frames}"
            )
        if self.duration[0] > self.duration[1]:
            raise ConfigError(f"script {self.name}: bad duration range")
        for spec in self.entities:
            if not 0 <= spec.category < num_categories:
                raise ConfigError(
                    f"script {self.name}: category {spec.category} out of range"
                )
            spec.motion.validate()

    def count_signature(self) -> tuple:
        """Total (min, max) spawn count per category."""
        lo = [0] * CATEGORIES.count
        hi = [0] * CATEGORIES.count
        for spec in self.entities:
            lo[spec.category] += spec.count[0]
            hi[spec.category] += spec.count[1]
        return tuple(zip(lo, hi))


def _static(cat, point, count=1, radius=0.02, jitter=0.003):
    return EntitySpec(cat, (count, count), Region.around(point, radius), Motion("static", jitter=jitter))


def _walk(cat, region, count=1, jitter=0.010):
    return EntitySpec(cat, (count, count), region, Motion("walk", jitter=jitter))


def _lerp(cat, start, target, count=1, radius=0.02, jitter=0.004):
    return EntitySpec(
        cat,
        (count, count),
        Region.around(start, radius),
        Motion("lerp", target=Region.around(target, radius), jitter=jitter),
    )


def default_scripts() -> dict:
    """The nine built-in activity scripts, keyed by activity id.

    Occupancy signatures (humans, table, gurney, psc, or-table, vsc):
      sterile-prep      2 1 0 0 1 1
      patient-roll-in   2 1 1 0 1 1   gurney travels door -> table
      patient-prep      3 1 1 0 1 1
      robot-roll-up     2 1 0 1 1 1   psc travels park -> dock
      docking           2 1 0 1 1 1   humans close in on the psc
      surgery           3 1 0 1 1 1
      undocking         2 1 0 1 1 1   humans back away from the psc
      robot-roll-back   2 1 0 1 1 1   psc travels dock -> park
      patient-roll-out  2 1 1 0 1 1   gurney travels table -> door
    Roll-up/docking/undocking/roll-back share occupancy exactly; so do
    roll-in/roll-out. Those groups are separable only through motion.
    """
    fixtures = (
        _static(TABLE, TABLE_POS),
        _static(OR_TABLE, OR_TABLE_POS),
        _static(VSC, VSC_POS),
    )
    work_zone = Region(0.32, 0.34, 0.68, 0.70)  # around the OR table
    dock = PSC_DOCK
    # Fixed per-instance offsets keep the class's mean displacement vector
    # stable across clips; random ring angles would average it away.
    dock_out_a = (dock[0] + 0.16, dock[1] + 0.11)
    dock_out_b = (dock[0] + 0.02, dock[1] - 0.18)
    dock_in_a = (dock[0] + 0.04, dock[1] + 0.03)
    dock_in_b = (dock[0] + 0.01, dock[1] - 0.05)

    scripts = [
        ActivityScript(
            0, ACTIVITIES[0], (24, 48),
            fixtures + (_walk(HUMAN, work_zone, count=2),),
        ),
        ActivityScript(
            1, ACTIVITIES[1], (24, 48),
            fixtures
            + (
                _lerp(GURNEY, GURNEY_DOOR, GURNEY_PARK),
                _lerp(HUMAN, (0.90, 0.44), (0.64, 0.48)),
                _lerp(HUMAN, (0.94, 0.68), (0.68, 0.62)),
            ),
        ),
        ActivityScript(
            2, ACTIVITIES[2], (24, 48),
            fixtures
            + (
                _static(GURNEY, GURNEY_PARK),
                _walk(HUMAN, work_zone, count=3, jitter=0.008),
            ),
        ),
        ActivityScript(
            3, ACTIVITIES[3], (24, 48),
            fixtures
            + (
                _lerp(PSC, PSC_PARK, PSC_DOCK),
                _lerp(HUMAN, (0.10, 0.40), (0.36, 0.44)),
                _static(HUMAN, (0.56, 0.60)),
            ),
        ),
        ActivityScript(
            4, ACTIVITIES[4], (24, 48),
            fixtures
            + (
                _static(PSC, PSC_DOCK, radius=0.01),
                _lerp(HUMAN, dock_out_a, dock_in_a),
                _lerp(HUMAN, dock_out_b, dock_in_b),
            ),
        ),
        ActivityScript(
            5, ACTIVITIES[5], (24, 48),
            fixtures
            + (
                _static(PSC, PSC_DOCK, radius=0.01),
                _static(HUMAN, (0.80, 0.28)),   # surgeon at the console
                _static(HUMAN, (0.44, 0.66)),
                _static(HUMAN, (0.22, 0.72)),
            ),
        ),
        ActivityScript(
            6, ACTIVITIES[6], (24, 48),
            fixtures
            + (
                _static(PSC, PSC_DOCK, radius=0.01),
                _lerp(HUMAN, dock_in_a, dock_out_a),
                _lerp(HUMAN, dock_in_b, dock_out_b),
            ),
        ),
        ActivityScript(
            7, ACTIVITIES[7], (24, 48),
            fixtures
            + (
                _lerp(PSC, PSC_DOCK, PSC_PARK),
                _lerp(HUMAN, (0.36, 0.44), (0.10, 0.40)),
                _static(HUMAN, (0.56, 0.60)),
            ),
        ),
        ActivityScript(
            8, ACTIVITIES[8], (24, 48),
            fixtures
            + (
                _lerp(GURNEY, GURNEY_PARK, GURNEY_DOOR),
                _lerp(HUMAN, (0.64, 0.48), (0.90, 0.44)),
                _lerp(HUMAN, (0.68, 0.62), (0.94, 0.68)),
            ),
        ),
    ]
    return {s.activity: s for s in scripts}


#: Activity pair with identical occupancy whose only difference is the psc
#: travel direction; count-based models cannot beat chance on it.
MOTION_ONLY_PAIR = (3, 7)


@dataclass
class NoiseConfig:
    """Detector imperfection model applied to generated detections."""

    miss: tuple  # per-category drop probability
    jitter_std: float = 0.010
    fp_rate: float = 0.15  # expected false positives per frame
    confusion: np.ndarray | None = None  # row-stochastic CxC, None = identity

    def validate(self) -> None:
        if len(self.miss) != CATEGORIES.count:
            raise ConfigError(f"need {CATEGORIES.count} miss probabilities")
        if any(not 0.0 <= m <= 1.0 for m in self.miss):
            raise ConfigError("miss probabilities must be in [0, 1]")
        if self.jitter_std < 0 or self.fp_rate < 0:
            raise ConfigError("jitter and fp rate must be >= 0")
        if self.confusion is not None:
            c = np.asarray(self.confusion)
            if c.shape != (CATEGORIES.count, CATEGORIES.count):
                raise ConfigError("confusion matrix must be CxC")
            if (c < 0).any() or not np.allclose(c.sum(axis=1), 1.0):
                raise ConfigError("confusion rows must be stochastic")

    @staticmethod
    def default() -> "NoiseConfig":
        # Monotone map from detector quality; the 0.5 factor keeps the
        # recognition task learnable while preserving relative difficulty.
        miss = tuple(
            round((1.0 - DETECTOR_MAP_PCT[c] / 100.0) * 0.5, 6)
            for c in range(CATEGORIES.count)
        )
        return NoiseConfig(miss=miss)

    @staticmethod
    def zero() -> "NoiseConfig":
        return NoiseConfig(miss=(0.0,) * CATEGORIES.count, jitter_std=0.0, fp_rate=0.0)


@dataclass
class AppearanceConfig:
    """Activity-conditioned Gaussian stand-in for video appearance features.

    Class means are unit directions scaled by ``separation``; draws add
    isotropic noise of scale ``sigma``. Defaults are tuned for noticeable
    class overlap so appearance alone is a weak signal.
    """

    enabled: bool = True
    dim: int = 16
    separation: float = 1.7
    sigma: float = 1.0
    seed: int = 7

    def class_means(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        raw = rng.normal(size=(NUM_ACTIVITIES, self.dim))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        return raw * self.separation

    def sample(self, activity: int, rng: np.random.Generator) -> np.ndarray:
        means = self.class_means()
        return means[activity] + self.sigma * rng.normal(size=self.dim)


@dataclass
class ChainConfig:
    """Absorbing Markov chain over activities for full procedures."""

    start: dict  # activity -> probability
    transitions: dict  # activity -> {activity or "end": probability}

    END = "end"

    @staticmethod
    def linear(activities=None) -> "ChainConfig":
        acts = list(activities) if activities is not None else list(range(NUM_ACTIVITIES))
        transitions = {}
        for i, a in enumerate(acts):
            nxt = acts[i + 1] if i + 1 < len(acts) else ChainConfig.END
            transitions[a] = {nxt: 1.0}
        return ChainConfig(start={acts[0]: 1.0}, transitions=transitions)

    def states(self) -> list:
        return sorted(self.transitions.keys())

    def validate(self) -> None:
        states = set(self.transitions.keys())
        for a, p in self.start.items():
            if a not in states:
                raise ConfigError(f"chain start state {a} has no transitions")
            if p < 0:
                raise ConfigError("chain probabilities must be >= 0")
        if abs(sum(self.start.values()) - 1.0) > 1e-9:
            raise ConfigError("chain start distribution must sum to 1")
        for a, row in self.transitions.items():
            if abs(sum(row.values()) - 1.0) > 1e-9:
                raise ConfigError(f"chain row {a} must sum to 1")
            for b in row:
                if b != self.END and b not in states:
                    raise ConfigError(f"chain row {a} targets unknown state {b}")
        # Every state reachable from the start must reach the terminal,
        # otherwise generation would loop forever in a dead end.
        reach_end = set()
        changed = True
        while changed:
            changed = False
            for a, row in self.transitions.items():
                if a in reach_end:
                    continue
                for b, p in row.items():
                    if p > 0 and (b == self.END or b in reach_end):
                        reach_end.add(a)
                        changed = True
                        break
        reachable = {a for a, p in self.start.items() if p > 0}
        frontier = list(reachable)
        while frontier:
            a = frontier.pop()
            for b, p in self.transitions[a].items():
                if p > 0 and b != self.END and b not in reachable:
                    reachable.add(b)
                    frontier.append(b)
        stuck = reachable - reach_end
        if stuck:
            raise ConfigError(f"chain states {sorted(stuck)} cannot reach the end")

    def expected_visits(self) -> dict:
        """Expected number of visits per activity for one procedure.

        Standard absorbing-chain arithmetic: with Q the transient-to-
        transient transition matrix and s the start distribution, expected
        visits are s^T (I - Q)^{-1}.
        """
        states = self.states()
        index = {a: i for i, a in enumerate(states)}
        n = len(states)
        q = np.zeros((n, n))
        for a, row in self.transitions.items():
            for b, p in row.items():
                if b != self.END:
                    q[index[a], index[b]] = p
        s = np.zeros(n)
        for a, p in self.start.items():
            s[index[a]] = p
        visits = s @ np.linalg.inv(np.eye(n) - q)
        return {a: float(visits[index[a]]) for a in states}

    def walk(self, rng: np.random.Generator, max_phases: int = 1000) -> list:
        self.validate()
        starts = sorted(self.start.items())
        state = starts[int(rng.choice(len(starts), p=[p for _, p in starts]))][0]
        path = []
        while len(path) < max_phases:
            path.append(state)
            row = sorted(self.transitions[state].items(), key=lambda kv: str(kv[0]))
            nxt = row[int(rng.choice(len(row), p=[p for _, p in row]))][0]
            if nxt == self.END:
                return path
            state = nxt
        raise ConfigError(f"chain failed to terminate within {max_phases} phases")


@dataclass
class SimConfig:
    """Full generator configuration; serializes to versioned JSON."""

    kind: str = "clips"  # "clips" | "procedures"
    counts: dict = field(default_factory=lambda: {"train": 2000, "val": 0, "test": 500})
    clip_frames: int = 8  # T
    slots: int = 15  # N
    activities: tuple = tuple(range(NUM_ACTIVITIES))
    scripts: dict = field(default_factory=default_scripts)
    noise: NoiseConfig = field(default_factory=NoiseConfig.default)
    appearance: AppearanceConfig = field(default_factory=AppearanceConfig)
    chain: ChainConfig | None = None

    def __post_init__(self):
        if self.chain is None:
            self.chain = ChainConfig.linear(self.activities)

    def validate(self) -> None:
        if self.kind not in ("clips", "procedures"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.clip_frames < 1 or self.slots < 1:
            raise ConfigError("clip_frames and slots must be positive")
        for split, n in self.counts.items():
            if n < 0:
                raise ConfigError(f"count for {split} must be >= 0")
        if not self.activities:
            raise ConfigError("need at least one activity")
        for a in self.activities:
            if a not in self.scripts:
                raise ConfigError(f"activity {a} has no script")
        min_frames = CLIP_STRIDE * self.clip_frames
        for a in self.activities:
            self.scripts[a].validate(CATEGORIES.count, min_frames)
        self.noise.validate()
        if self.kind == "procedures":
            self.chain.validate()


# ---------------------------------------------------------------------------
# config (de)serialization

CONFIG_VERSION = 1


def _region_to_json(r: Region) -> list:
    return [r.x0, r.y0, r.x1, r.y1]


def _script_to_json(s: ActivityScript) -> dict:
    return {
        "activity": s.activity,
        "name": s.name,
        "duration": list(s.duration),
        "entities": [
            {
                "category": e.category,
                "count": list(e.count),
                "start": _region_to_json(e.start),
                "motion": {
                    "kind": e.motion.kind,
                    "target": _region_to_json(e.motion.target)
                    if e.motion.target is not None
                    else None,
                    "jitter": e.motion.jitter,
                },
            }
            for e in s.entities
        ],
    }


def _script_from_json(obj: dict) -> ActivityScript:
    entities = tuple(
        EntitySpec(
            category=int(e["category"]),
            count=tuple(e["count"]),
            start=Region(*e["start"]),
            motion=Motion(
                kind=e["motion"]["kind"],
                target=Region(*e["motion"]["target"])
                if e["motion"]["target"] is not None
                else None,
                jitter=float(e["motion"]["jitter"]),
            ),
        )
        for e in obj["entities"]
    )
    return ActivityScript(
        activity=int(obj["activity"]),
        name=str(obj["name"]),
        duration=tuple(obj["duration"]),
        entities=entities,
    )


def config_to_json(config: SimConfig) -> dict:
    return {
        "version": CONFIG_VERSION,
        "kind": config.kind,
        "counts": dict(config.counts),
        "clip": {"frames": config.clip_frames, "slots": config.slots},
        "activities": list(config.activities),
        "scripts": [_script_to_json(config.scripts[a]) for a in sorted(config.scripts)],
        "noise": {
            "miss": list(config.noise.miss),
            "jitter_std": config.noise.jitter_std,
            "fp_rate": config.noise.fp_rate,
            "confusion": None
            if config.noise.confusion is None
            else np.asarray(config.noise.confusion).tolist(),
        },
        "appearance": asdict(config.appearance),
        "chain": {
            "start": {str(k): v for k, v in config.chain.start.items()},
            "transitions": {
                str(a): {str(b): p for b, p in row.items()}
                for a, row in config.chain.transitions.items()
            },
        },
    }


def _chain_key(k: str):
    return k if k == ChainConfig.END else int(k)


def config_from_json(obj: dict) -> SimConfig:
    version = obj.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    try:
        scripts = {s["activity"]: _script_from_json(s) for s in obj["scripts"]}
        noise = NoiseConfig(
            miss=tuple(obj["noise"]["miss"]),
            jitter_std=float(obj["noise"]["jitter_std"]),
            fp_rate=float(obj["noise"]["fp_rate"]),
            confusion=None
            if obj["noise"].get("confusion") is None
            else np.asarray(obj["noise"]["confusion"], dtype=float),
        )
        chain = ChainConfig(
            start={_chain_key(k): float(v) for k, v in obj["chain"]["start"].items()},
            transitions={
                _chain_key(a): {_chain_key(b): float(p) for b, p in row.items()}
                for a, row in obj["chain"]["transitions"].items()
            },
        )
        config = SimConfig(
            kind=obj["kind"],
            counts={k: int(v) for k, v in obj["counts"].items()},
            clip_frames=int(obj["clip"]["frames"]),
            slots=int(obj["clip"]["slots"]),
            activities=tuple(obj["activities"]),
            scripts=scripts,
            appearance=AppearanceConfig(**obj["appearance"]),
            noise=noise,
            chain=chain,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"config field missing or malformed: {exc}") from exc
    config.validate()
    return config


def load_config(path) -> SimConfig:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return config_from_json(obj)


# ---------------------------------------------------------------------------
# trajectory simulation


def _clamp_box(cx, cy, w, h) -> BoundingBox:
    return BoundingBox(
        float(np.clip(cx, 0.0, 1.0)),
        float(np.clip(cy, 0.0, 1.0)),
        float(np.clip(w, 0.005, 1.0)),
        float(np.clip(h, 0.005, 1.0)),
    )


def _simulate_entity(spec: EntitySpec, length: int, rng: np.random.Generator) -> list:
    """Center track of one entity across ``length`` frames."""
    x, y = spec.start.sample(rng)
    jitter = spec.motion.jitter
    if spec.motion.kind == "lerp":
        tx, ty = spec.motion.target.sample(rng)
        frac = np.linspace(0.0, 1.0, length)
        xs = x + (tx - x) * frac
        ys = y + (ty - y) * frac
    elif spec.motion.kind == "walk":
        steps = rng.normal(scale=jitter, size=(length, 2))
        steps[0] = 0.0
        path = np.cumsum(steps, axis=0)
        xs = np.clip(x + path[:, 0], spec.start.x0 - 0.08, spec.start.x1 + 0.08)
        ys = np.clip(y + path[:, 1], spec.start.y0 - 0.08, spec.start.y1 + 0.08)
        return list(zip(xs, ys))
    else:
        xs = np.full(length, x)
        ys = np.full(length, y)
    noise = rng.normal(scale=jitter, size=(length, 2))
    return list(zip(xs + noise[:, 0], ys + noise[:, 1]))


def simulate_run(script: ActivityScript, length: int, rng: np.random.Generator) -> list:
    """Noiseless frames (lists of valid detections) for one activity run."""
    tracks = []
    for spec in script.entities:
        count = int(rng.integers(spec.count[0], spec.count[1] + 1))
        for _ in range(count):
            w0, h0 = NOMINAL_SIZE[spec.category]
            size_scale = float(rng.uniform(0.9, 1.1))
            tracks.append(
                (
                    spec.category,
                    w0 * size_scale,
                    h0 * size_scale,
                    _simulate_entity(spec, length, rng),
                )
            )
    frames = []
    for t in range(length):
        dets = [
            Detection(
                _clamp_box(track[3][t][0], track[3][t][1], track[1], track[2]),
                track[0],
                conf=float(rng.uniform(0.55, 0.99)),
            )
            for track in tracks
        ]
        frames.append(dets)
    return frames


def _corrupt_frame(dets: list, noise: NoiseConfig, rng: np.random.Generator, capacity: int) -> list:
    """Apply the detector model to one frame's valid detections."""
    out = []
    for det in dets:
        if rng.uniform() < noise.miss[det.category]:
            continue
        category = det.category
        if noise.confusion is not None:
            category = int(rng.choice(CATEGORIES.count, p=noise.confusion[category]))
        box = det.box
        if noise.jitter_std > 0:
            d = rng.normal(scale=noise.jitter_std, size=4)
            box = _clamp_box(box.cx + d[0], box.cy + d[1], box.w + d[2], box.h + d[3])
        out.append(Detection(box, category, conf=det.conf))
    n_fp = int(rng.poisson(noise.fp_rate)) if noise.fp_rate > 0 else 0
    for _ in range(n_fp):
        if len(out) >= capacity:
            break
        cat = int(rng.integers(0, CATEGORIES.count))
        w0, h0 = NOMINAL_SIZE[cat]
        s = float(rng.uniform(0.7, 1.3))
        out.append(
            Detection(
                _clamp_box(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), w0 * s, h0 * s),
                cat,
                conf=float(rng.uniform(0.05, 0.5)),
            )
        )
    return out


def corrupt_detections(clip: Clip, noise: NoiseConfig, rng: np.random.Generator) -> Clip:
    """Noisy copy of a clip: misses, jitter, false positives; label kept."""
    noise.validate()
    frames = []
    for slots in clip.frames:
        valid = [d for d in slots if d.valid]
        noisy = _corrupt_frame(valid, noise, rng, capacity=len(slots))
        frames.append(pad_frame(noisy, len(slots), CATEGORIES))
    return Clip(frames=frames, label=clip.label, source=clip.source, appearance=clip.appearance)


# ---------------------------------------------------------------------------
# generators


def _clip_window_record(
    activity: int, config: SimConfig, rng: np.random.Generator, vid: str
) -> VideoRecord:
    """One clip-worth of source frames (2T), already corrupted."""
    script = config.scripts[activity]
    length = int(rng.integers(script.duration[0], script.duration[1] + 1))
    frames = simulate_run(script, length, rng)
    span = CLIP_STRIDE * config.clip_frames
    start = int(rng.integers(0, length - span + 1))
    window = [
        _corrupt_frame(frames[i], config.noise, rng, capacity=config.slots)
        for i in range(start, start + span)
    ]
    appearance = None
    if config.appearance.enabled:
        appearance = [config.appearance.sample(activity, rng)]
    return VideoRecord(
        id=vid, frames=window, phases=[activity] * span, appearance=appearance
    )


def generate_clip(activity: int, config: SimConfig, rng: np.random.Generator) -> Clip:
    """One padded T-frame clip following the activity's script."""
    if activity not in config.scripts:
        raise ValueError(f"unknown activity {activity}")
    record = _clip_window_record(activity, config, rng, vid=f"clip-{activity}")
    return sample_clip(
        record,
        (0, len(record), activity),
        config.clip_frames,
        config.slots,
        CATEGORIES,
        rng,
    )


def generate_procedure(config: SimConfig, rng: np.random.Generator, vid: str) -> VideoRecord:
    """One full procedure: chained phase runs plus per-position appearance."""
    phases_seq = config.chain.walk(rng)
    frames = []
    phase_labels = []
    for activity in phases_seq:
        script = config.scripts[activity]
        length = int(rng.integers(script.duration[0], script.duration[1] + 1))
        run = simulate_run(script, length, rng)
        frames.extend(
            _corrupt_frame(f, config.noise, rng, capacity=config.slots) for f in run
        )
        phase_labels.extend([activity] * length)
    appearance = None
    if config.appearance.enabled:
        span = CLIP_STRIDE * config.clip_frames
        appearance = []
        for pos in range(clip_positions(len(frames), config.clip_frames)):
            span_phases = phase_labels[pos * span : (pos + 1) * span]
            majority = int(np.bincount(span_phases).argmax())
            appearance.append(config.appearance.sample(majority, rng))
    record = VideoRecord(id=vid, frames=frames, phases=phase_labels, appearance=appearance)
    record.validate()
    return record


def generate_split(config: SimConfig, count: int, seed: int, prefix: str) -> list:
    """A list of records for one dataset split, seed-deterministic."""
    config.validate()
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        if config.kind == "clips":
            activity = int(config.activities[rng.integers(0, len(config.activities))])
            records.append(
                _clip_window_record(activity, config, rng, vid=f"{prefix}-{i:05d}")
            )
        else:
            records.append(generate_procedure(config, rng, vid=f"{prefix}-{i:05d}"))
    return records


def generate_dataset(config: SimConfig, seed: int) -> dict:
    """All configured splits, keyed by split name."""
    out = {}
    for idx, (split, count) in enumerate(sorted(config.counts.items())):
        out[split] = generate_split(config, count, seed + 7919 * idx, prefix=split)
    return out
