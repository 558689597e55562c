"""Checkpoint and feature-store round-trips and rejection paths."""

import numpy as np
import pytest

from orsar import model as mdl
from orsar import sequence as seq
from orsar import store
from orsar.training import VideoFeatures

CFG = mdl.ModelConfig(embed_dim=12, categories=3, slots=4, clip_frames=2, classes=4)


class TestBackboneCheckpoint:
    def test_round_trip(self, tmp_path):
        params = mdl.init_backbone(CFG, np.random.default_rng(0))
        path = tmp_path / "model.orck"
        store.save_backbone(path, params, CFG)
        loaded, config = store.load_backbone(path)
        assert config.to_json() == CFG.to_json()
        for name, tensor in params.named().items():
            np.testing.assert_array_equal(loaded.named()[name].values, tensor.values)

    def test_rerun_byte_identical(self, tmp_path):
        params = mdl.init_backbone(CFG, np.random.default_rng(1))
        a, b = tmp_path / "a.orck", tmp_path / "b.orck"
        store.save_backbone(a, params, CFG)
        store.save_backbone(b, params, CFG)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.orck"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(store.CheckpointError, match="magic"):
            store.load_backbone(path)

    def test_version_mismatch_rejected(self, tmp_path):
        params = mdl.init_backbone(CFG, np.random.default_rng(2))
        path = tmp_path / "model.orck"
        store.save_backbone(path, params, CFG)
        header, payload = store._read_blob(path)
        header["version"] = 99
        store._write_blob(path, header, payload)
        with pytest.raises(store.CheckpointError, match="version"):
            store.load_backbone(path)

    def test_shape_mismatch_rejected(self, tmp_path):
        params = mdl.init_backbone(CFG, np.random.default_rng(3))
        path = tmp_path / "model.orck"
        store.save_backbone(path, params, CFG)
        header, payload = store._read_blob(path)
        header["config"]["embed_dim"] = 16  # payload no longer matches
        store._write_blob(path, header, payload)
        with pytest.raises(store.CheckpointError):
            store.load_backbone(path)

    def test_gru_kind_confusion_rejected(self, tmp_path):
        gcfg = seq.GruConfig(input_dim=6, hidden_dim=4, classes=3)
        gparams = seq.init_gru(gcfg, np.random.default_rng(4))
        path = tmp_path / "gru.orck"
        store.save_gru(path, gparams, gcfg, variant="graph")
        with pytest.raises(store.CheckpointError, match="kind"):
            store.load_backbone(path)


class TestGruCheckpoint:
    def test_round_trip_with_variant(self, tmp_path):
        cfg = seq.GruConfig(input_dim=6, hidden_dim=4, classes=3)
        params = seq.init_gru(cfg, np.random.default_rng(5))
        path = tmp_path / "gru.orck"
        store.save_gru(path, params, cfg, variant="fusion")
        loaded, config, variant = store.load_gru(path)
        assert variant == "fusion"
        assert config.to_json() == cfg.to_json()
        for name, tensor in params.named().items():
            np.testing.assert_array_equal(loaded.named()[name].values, tensor.values)


def feature_videos(rng, dims=6):
    return [
        VideoFeatures(
            video_id=f"v{i}",
            features=rng.normal(size=(i + 1, dims)).astype(np.float32),
            labels=rng.integers(0, 4, size=i + 1).astype(np.int64),
            num_frames=(i + 1) * 16,
            appearance=rng.normal(size=(i + 1, 3)).astype(np.float32) if i % 2 else None,
        )
        for i in range(3)
    ]


class TestFeatureStore:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        videos = feature_videos(rng)
        store.save_features(tmp_path / "feat", videos, clip_dim=6)
        loaded, manifest = store.load_features(tmp_path / "feat")
        assert manifest["dim"] == 6
        for orig, back in zip(videos, loaded):
            assert back.video_id == orig.video_id
            np.testing.assert_array_equal(back.features, orig.features)
            np.testing.assert_array_equal(back.labels, orig.labels)
            assert back.num_frames == orig.num_frames
            if orig.appearance is None:
                assert back.appearance is None
            else:
                np.testing.assert_allclose(back.appearance, orig.appearance, atol=1e-6)

    def test_rerun_byte_identical(self, tmp_path):
        rng = np.random.default_rng(7)
        videos = feature_videos(rng)
        store.save_features(tmp_path / "a", videos, clip_dim=6)
        store.save_features(tmp_path / "b", videos, clip_dim=6)
        assert (tmp_path / "a/features.bin").read_bytes() == (tmp_path / "b/features.bin").read_bytes()
        assert (tmp_path / "a/features.json").read_bytes() == (tmp_path / "b/features.json").read_bytes()

    def test_missing_store_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            store.load_features(tmp_path / "nope")

    def test_dim_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(8)
        with pytest.raises(store.CheckpointError):
            store.save_features(tmp_path / "feat", feature_videos(rng), clip_dim=9)
