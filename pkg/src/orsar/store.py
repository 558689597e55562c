"""Binary artifact formats: model checkpoints and the clip-feature store.

Both formats are deliberately simple and fully deterministic so reruns
produce byte-identical files.

Checkpoint layout (one file)::

    8 bytes   magic  b"ORCKPT01"
    8 bytes   header length (little-endian uint64)
    N bytes   header JSON (utf-8, sorted keys)
    ...       parameter payloads, concatenated raw little-endian arrays

The header carries the format version, the checkpoint kind ("backbone" or
"gru"), the full model config, and for every parameter its name, shape,
dtype, and byte offset into the payload; names follow the stable maps on
``BackboneParams.named`` / ``GruParams.named``. Loading rejects version,
kind, or shape mismatches.

Feature store layout (a directory)::

    features.bin    per video, in manifest order: positions x dim float32
                    little-endian, row major
    features.json   manifest: version, dim, per-video id/offset/positions/
                    labels/frame count, variant bookkeeping

Position labels (majority phase per clip span) ride along in the manifest
so the sequence stage needs no second pass over the dataset.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import model as mdl
from . import sequence as seq
from .training import VideoFeatures

CHECKPOINT_MAGIC = b"ORCKPT01"
CHECKPOINT_VERSION = 1
FEATURES_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint or feature store failed validation."""


def _write_blob(path: Path, header: dict, payload: bytes) -> None:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(payload)


def _read_blob(path: Path) -> tuple:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    header_len = int.from_bytes(data[8:16], "little")
    header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    return header, data[16 + header_len :]


def _pack_params(named: dict) -> tuple:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(named):
        arr = np.ascontiguousarray(named[name].values)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.name,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def _unpack_params(entries: list, payload: bytes) -> dict:
    out = {}
    for e in entries:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        arr = np.frombuffer(
            payload, dtype=dt, count=int(np.prod(e["shape"], dtype=int)), offset=e["offset"]
        ).reshape(e["shape"])
        out[e["name"]] = arr.astype(e["dtype"])
    return out


def save_backbone(path, params: mdl.BackboneParams, config: mdl.ModelConfig) -> None:
    entries, payload = _pack_params(params.named())
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": "backbone",
        "config": config.to_json(),
        "params": entries,
    }
    _write_blob(Path(path), header, payload)


def _check_kind_version(header: dict, kind: str, path) -> None:
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {header.get('version')!r} unsupported"
        )
    if header.get("kind") != kind:
        raise CheckpointError(f"{path}: checkpoint kind {header.get('kind')!r}, wanted {kind!r}")


def load_backbone(path) -> tuple:
    """Returns (params, model config); rejects version/kind/shape mismatch."""
    header, payload = _read_blob(Path(path))
    _check_kind_version(header, "backbone", path)
    config = mdl.ModelConfig.from_json(header["config"])
    arrays = _unpack_params(header["params"], payload)
    fresh = mdl.init_backbone(config, np.random.default_rng(0), dtype=np.float32, init="zero")
    named = fresh.named()
    if set(named) != set(arrays):
        raise CheckpointError(
            f"{path}: parameter names do not match config "
            f"(missing {sorted(set(named) - set(arrays))}, "
            f"extra {sorted(set(arrays) - set(named))})"
        )
    for name, tensor in named.items():
        if tuple(arrays[name].shape) != tensor.shape:
            raise CheckpointError(
                f"{path}: {name} has shape {arrays[name].shape}, config wants {tensor.shape}"
            )
        tensor.values = arrays[name]
    return fresh, config


def save_gru(path, params: seq.GruParams, config: seq.GruConfig, variant: str) -> None:
    entries, payload = _pack_params(params.named())
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": "gru",
        "config": config.to_json(),
        "variant": variant,
        "params": entries,
    }
    _write_blob(Path(path), header, payload)


def load_gru(path) -> tuple:
    """Returns (params, gru config, variant)."""
    header, payload = _read_blob(Path(path))
    _check_kind_version(header, "gru", path)
    config = seq.GruConfig.from_json(header["config"])
    arrays = _unpack_params(header["params"], payload)
    fresh = seq.init_gru(config, np.random.default_rng(0), dtype=np.float32, init="zero")
    named = fresh.named()
    if set(named) != set(arrays):
        raise CheckpointError(f"{path}: parameter names do not match")
    for name, tensor in named.items():
        if tuple(arrays[name].shape) != tensor.shape:
            raise CheckpointError(
                f"{path}: {name} has shape {arrays[name].shape}, config wants {tensor.shape}"
            )
        tensor.values = arrays[name]
    return fresh, config, header.get("variant", "graph")


# ---------------------------------------------------------------------------
# feature store


def save_features(out_dir, feature_videos: list, clip_dim: int, extra: dict | None = None) -> None:
    """Write the binary feature store plus its sidecar manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_videos = []
    offset = 0
    with (out_dir / "features.bin").open("wb") as fh:
        for vf in feature_videos:
            feats = np.ascontiguousarray(vf.features, dtype="<f4")
            if feats.ndim != 2 or (feats.size and feats.shape[1] != clip_dim):
                raise CheckpointError(
                    f"{vf.video_id}: feature shape {feats.shape} != (*, {clip_dim})"
                )
            raw = feats.tobytes()
            entry = {
                "id": vf.video_id,
                "offset": offset,
                "positions": int(feats.shape[0]),
                "labels": [int(x) for x in vf.labels],
                "num_frames": vf.num_frames,
            }
            if vf.appearance is not None:
                entry["appearance"] = [
                    [float(x) for x in row] for row in np.asarray(vf.appearance)
                ]
            manifest_videos.append(entry)
            fh.write(raw)
            offset += len(raw)
    manifest = {
        "version": FEATURES_VERSION,
        "dim": clip_dim,
        "dtype": "<f4",
        "videos": manifest_videos,
    }
    if extra:
        manifest.update(extra)
    (out_dir / "features.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def load_features(in_dir) -> tuple:
    """Returns (list of VideoFeatures, manifest dict)."""
    in_dir = Path(in_dir)
    manifest_path = in_dir / "features.json"
    bin_path = in_dir / "features.bin"
    if not manifest_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f"{in_dir}: not a feature store")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("version") != FEATURES_VERSION:
        raise CheckpointError(f"{in_dir}: feature store version unsupported")
    dim = int(manifest["dim"])
    payload = bin_path.read_bytes()
    out = []
    for entry in manifest["videos"]:
        n = int(entry["positions"])
        feats = np.frombuffer(
            payload, dtype="<f4", count=n * dim, offset=int(entry["offset"])
        ).reshape(n, dim)
        out.append(
            VideoFeatures(
                video_id=entry["id"],
                features=feats.astype(np.float32),
                labels=np.asarray(entry["labels"], dtype=np.int64),
                num_frames=int(entry["num_frames"]),
                appearance=np.asarray(entry["appearance"], dtype=np.float32)
                if "appearance" in entry
                else None,
            )
        )
    return out, manifest
