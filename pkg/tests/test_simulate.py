"""Synthetic scene generator: scripts, noise model, chains, learnability."""

import numpy as np
import pytest

from orsar import simulate as sim
from orsar.scene import NUM_ACTIVITIES
from tests.oracles import NearestCentroid, motion_features


def zero_noise_config(**kw):
    return sim.SimConfig(noise=sim.NoiseConfig.zero(), **kw)


def clip_centers(clip, category):
    """Mean center of a category per frame, for frames where it appears."""
    out = []
    for frame in clip.frames:
        pts = [(d.box.cx, d.box.cy) for d in frame if d.valid and d.category == category]
        if pts:
            out.append(np.mean(pts, axis=0))
    return out


class TestScripts:
    def test_all_activities_have_scripts(self):
        scripts = sim.default_scripts()
        assert sorted(scripts) == list(range(NUM_ACTIVITIES))

    def test_motion_only_group_shares_occupancy(self):
        scripts = sim.default_scripts()
        a, b = sim.MOTION_ONLY_PAIR
        assert scripts[a].count_signature() == scripts[b].count_signature()
        # docking and undocking sit in the same occupancy group
        assert scripts[4].count_signature() == scripts[a].count_signature()
        assert scripts[6].count_signature() == scripts[a].count_signature()

    def test_scripts_validate(self):
        config = sim.SimConfig()
        config.validate()

    def test_bad_category_rejected(self):
        script = sim.ActivityScript(
            0, "broken", (24, 48),
            (sim.EntitySpec(99, (1, 1), sim.Region(0, 0, 1, 1), sim.Motion("static")),),
        )
        with pytest.raises(sim.ConfigError):
            script.validate(6, 16)

    def test_duration_below_clip_span_rejected(self):
        script = sim.ActivityScript(0, "short", (10, 12), ())
        with pytest.raises(sim.ConfigError):
            script.validate(6, 16)


class TestGenerateClip:
    def test_rollup_psc_moves_toward_or_table(self):
        config = zero_noise_config()
        for seed in range(5):
            clip = sim.generate_clip(3, config, np.random.default_rng(seed))
            centers = clip_centers(clip, sim.PSC)
            disp = np.asarray(centers[-1]) - np.asarray(centers[0])
            assert np.linalg.norm(disp) > 0.1
            to_table = np.asarray(sim.OR_TABLE_POS) - np.asarray(centers[0])
            cos = disp @ to_table / (np.linalg.norm(disp) * np.linalg.norm(to_table))
            assert cos > 0.9

    def test_same_seed_identical(self):
        config = sim.SimConfig()
        a = sim.generate_clip(2, config, np.random.default_rng(42))
        b = sim.generate_clip(2, config, np.random.default_rng(42))
        assert a.frames == b.frames
        assert a.label == b.label

    def test_zero_noise_exact_counts(self):
        config = zero_noise_config()
        for activity in range(NUM_ACTIVITIES):
            clip = sim.generate_clip(activity, config, np.random.default_rng(activity))
            signature = config.scripts[activity].count_signature()
            for frame in clip.frames:
                counts = [0] * 6
                for det in frame:
                    if det.valid:
                        counts[det.category] += 1
                assert tuple((c, c) for c in counts) == signature

    def test_unknown_activity(self):
        with pytest.raises(ValueError):
            sim.generate_clip(99, sim.SimConfig(), np.random.default_rng(0))

    def test_clip_has_label_and_appearance(self):
        config = sim.SimConfig()
        clip = sim.generate_clip(5, config, np.random.default_rng(1))
        assert clip.label == 5
        assert clip.appearance is not None and clip.appearance.shape == (16,)


class TestCorrupt:
    def test_zero_noise_is_identity(self):
        config = zero_noise_config()
        clip = sim.generate_clip(1, config, np.random.default_rng(3))
        out = sim.corrupt_detections(clip, sim.NoiseConfig.zero(), np.random.default_rng(9))
        assert out.frames == clip.frames
        assert out.label == clip.label

    def test_miss_probability_one_removes_category(self):
        config = zero_noise_config()
        clip = sim.generate_clip(1, config, np.random.default_rng(4))
        miss = [0.0] * 6
        miss[sim.GURNEY] = 1.0
        noise = sim.NoiseConfig(miss=tuple(miss), jitter_std=0.0, fp_rate=0.0)
        out = sim.corrupt_detections(clip, noise, np.random.default_rng(5))
        for frame in out.frames:
            assert all(d.category != sim.GURNEY for d in frame if d.valid)

    def test_default_or_table_miss_exceeds_human(self):
        noise = sim.NoiseConfig.default()
        assert noise.miss[sim.OR_TABLE] > noise.miss[sim.HUMAN]

    def test_corrupted_boxes_stay_in_unit_square(self):
        config = zero_noise_config()
        clip = sim.generate_clip(7, config, np.random.default_rng(6))
        noise = sim.NoiseConfig(miss=(0.0,) * 6, jitter_std=0.3, fp_rate=2.0)
        out = sim.corrupt_detections(clip, noise, np.random.default_rng(7))
        for frame in out.frames:
            for det in frame:
                if det.valid:
                    for v in det.box.as_vector():
                        assert 0.0 <= v <= 1.0

    def test_false_positives_respect_capacity(self):
        config = zero_noise_config()
        clip = sim.generate_clip(5, config, np.random.default_rng(8))
        noise = sim.NoiseConfig(miss=(0.0,) * 6, jitter_std=0.0, fp_rate=50.0)
        out = sim.corrupt_detections(clip, noise, np.random.default_rng(9))
        for frame in out.frames:
            assert len(frame) == 15

    def test_confusion_relabels(self):
        config = zero_noise_config()
        clip = sim.generate_clip(0, config, np.random.default_rng(10))
        confusion = np.zeros((6, 6))
        confusion[:, sim.VSC] = 1.0  # everything becomes a vsc
        noise = sim.NoiseConfig(miss=(0.0,) * 6, jitter_std=0.0, fp_rate=0.0, confusion=confusion)
        out = sim.corrupt_detections(clip, noise, np.random.default_rng(11))
        for frame in out.frames:
            assert all(d.category == sim.VSC for d in frame if d.valid)


class TestChain:
    def test_linear_chain_visits_each_once(self):
        chain = sim.ChainConfig.linear()
        path = chain.walk(np.random.default_rng(0))
        assert path == list(range(NUM_ACTIVITIES))

    def test_dead_end_rejected(self):
        chain = sim.ChainConfig(start={0: 1.0}, transitions={0: {1: 1.0}, 1: {1: 1.0}})
        with pytest.raises(sim.ConfigError, match="cannot reach"):
            chain.validate()

    def test_expected_visits_linear(self):
        visits = sim.ChainConfig.linear().expected_visits()
        assert all(abs(v - 1.0) < 1e-12 for v in visits.values())

    def test_expected_visits_match_monte_carlo(self):
        # surgery can loop back to docking: expected visits > 1 for the loop
        chain = sim.ChainConfig.linear()
        chain.transitions[6] = {7: 0.7, 4: 0.3}
        chain.validate()
        expected = chain.expected_visits()
        counts = {a: 0 for a in expected}
        n = 300
        rng = np.random.default_rng(123)
        for _ in range(n):
            for a in chain.walk(rng):
                counts[a] += 1
        for a, exp in expected.items():
            assert counts[a] / n == pytest.approx(exp, rel=0.10)


class TestProcedures:
    def test_record_valid_and_phases_contiguous(self):
        config = sim.SimConfig(kind="procedures")
        record = sim.generate_procedure(config, np.random.default_rng(0), "p0")
        record.validate()
        runs = record.phase_runs()
        assert [r[2] for r in runs] == list(range(NUM_ACTIVITIES))
        assert all(r[1] - r[0] >= 24 for r in runs)

    def test_fixed_durations_give_deterministic_boundaries(self):
        scripts = {
            a: sim.ActivityScript(s.activity, s.name, (30, 30), s.entities)
            for a, s in sim.default_scripts().items()
        }
        config = sim.SimConfig(kind="procedures", scripts=scripts)
        record = sim.generate_procedure(config, np.random.default_rng(1), "p1")
        assert [r[:2] for r in record.phase_runs()] == [
            (30 * i, 30 * (i + 1)) for i in range(NUM_ACTIVITIES)
        ]

    def test_appearance_per_position(self):
        config = sim.SimConfig(kind="procedures")
        record = sim.generate_procedure(config, np.random.default_rng(2), "p2")
        assert record.appearance is not None
        assert len(record.appearance) == len(record) // 16


class TestDatasetGeneration:
    def test_split_counts_and_determinism(self):
        config = sim.SimConfig(counts={"train": 5, "test": 3})
        data = sim.generate_dataset(config, seed=11)
        assert len(data["train"]) == 5 and len(data["test"]) == 3
        again = sim.generate_dataset(config, seed=11)
        assert [r.frames for r in data["train"]] == [r.frames for r in again["train"]]

    def test_activity_subset(self):
        config = sim.SimConfig(activities=sim.MOTION_ONLY_PAIR, counts={"train": 20})
        data = sim.generate_dataset(config, seed=0)
        assert set(r.phases[0] for r in data["train"]) <= set(sim.MOTION_ONLY_PAIR)

    def test_config_json_round_trip(self):
        config = sim.SimConfig(kind="procedures", counts={"train": 4, "test": 2})
        obj = sim.config_to_json(config)
        back = sim.config_from_json(obj)
        assert sim.config_to_json(back) == obj

    def test_bad_version_rejected(self):
        obj = sim.config_to_json(sim.SimConfig())
        obj["version"] = 99
        with pytest.raises(sim.ConfigError):
            sim.config_from_json(obj)


def _clips_and_labels(config, n_per_class, seed):
    rng = np.random.default_rng(seed)
    clips, labels = [], []
    for activity in range(NUM_ACTIVITIES):
        for _ in range(n_per_class):
            clips.append(sim.generate_clip(activity, config, rng))
            labels.append(activity)
    return clips, labels


class TestLearnability:
    def test_nearest_centroid_beats_80pct_on_noiseless_clips(self):
        config = zero_noise_config()
        train_clips, train_labels = _clips_and_labels(config, 12, seed=100)
        test_clips, test_labels = _clips_and_labels(config, 6, seed=200)
        feats = [motion_features(c, 6) for c in train_clips]
        model = NearestCentroid().fit(feats, train_labels)
        acc = model.accuracy([motion_features(c, 6) for c in test_clips], test_labels)
        assert acc > 0.8

    def test_count_classifier_at_chance_on_motion_only_pair(self):
        config = zero_noise_config()
        rng = np.random.default_rng(300)
        clips, labels = [], []
        for activity in sim.MOTION_ONLY_PAIR:
            for _ in range(20):
                clips.append(sim.generate_clip(activity, config, rng))
                labels.append(activity)
        count_feats = [motion_features(c, 6)[:6] for c in clips]  # occupancy only
        model = NearestCentroid().fit(count_feats, labels)
        acc = model.accuracy(count_feats, labels)
        assert acc <= 0.6
