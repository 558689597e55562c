"""Domain types, JSONL round-trips, clip sampling, and splits."""

import numpy as np
import pytest

from orsar import scene
from orsar.scene import (
    BoundingBox,
    CategoryTable,
    DatasetError,
    Detection,
    SamplingError,
    VideoRecord,
)

CATS = CategoryTable()


def det(cx=0.5, cy=0.5, w=0.1, h=0.1, cat=0, conf=1.0):
    return Detection(BoundingBox(cx, cy, w, h), cat, conf=conf)


def make_video(n_frames, phases=None, dets_per_frame=1, vid="v0"):
    frames = [[det(cat=i % CATS.count) for i in range(dets_per_frame)] for _ in range(n_frames)]
    return VideoRecord(
        id=vid,
        frames=frames,
        phases=list(phases) if phases is not None else [0] * n_frames,
    )


class TestTypes:
    def test_box_vector_order(self):
        assert BoundingBox(0.1, 0.2, 0.3, 0.4).as_vector() == (0.1, 0.2, 0.3, 0.4)

    def test_box_validation(self):
        with pytest.raises(DatasetError):
            BoundingBox(1.2, 0.5, 0.1, 0.1).validate()

    def test_padding_detection_is_neutral(self):
        pad = scene.padding_detection(CATS)
        assert not pad.valid
        assert pad.category == CATS.padding_id
        assert pad.box.as_vector() == (0.0, 0.0, 0.0, 0.0)

    def test_category_table_dense_ids(self):
        assert CATS.count == 6
        assert CATS.id_of("human") == 0
        assert CATS.id_of("vsc") == 5
        assert CATS.padding_id == 6

    def test_phase_runs(self):
        video = make_video(7, phases=[1, 1, 2, 2, 2, 0, 0])
        assert video.phase_runs() == [(0, 2, 1), (2, 5, 2), (5, 7, 0)]

    def test_phase_length_mismatch_rejected(self):
        video = make_video(3)
        video.phases = [0, 0]
        with pytest.raises(DatasetError):
            video.validate()


class TestJsonl:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert list(scene.load_dataset(path)) == []

    def test_single_record(self, tmp_path):
        path = tmp_path / "one.jsonl"
        scene.save_dataset([make_video(2)], path)
        records = list(scene.load_dataset(path))
        assert len(records) == 1
        assert len(records[0]) == 2

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        videos = []
        for v in range(3):
            frames = [
                [
                    det(
                        cx=float(rng.uniform()),
                        cy=float(rng.uniform()),
                        w=float(rng.uniform(0.01, 0.5)),
                        h=float(rng.uniform(0.01, 0.5)),
                        cat=int(rng.integers(0, CATS.count)),
                        conf=float(rng.uniform()),
                    )
                    for _ in range(int(rng.integers(0, 4)))
                ]
                for _ in range(5)
            ]
            videos.append(
                VideoRecord(
                    id=f"v{v}",
                    frames=frames,
                    phases=[int(p) for p in rng.integers(0, 3, size=5)],
                    appearance=[rng.normal(size=4) for _ in range(2)],
                )
            )
        path = tmp_path / "rt.jsonl"
        scene.save_dataset(videos, path)
        loaded = list(scene.load_dataset(path))
        path2 = tmp_path / "rt2.jsonl"
        scene.save_dataset(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_malformed_line_reports_lineno(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        scene.save_dataset([make_video(1)], path)
        with path.open("a") as fh:
            fh.write("{nope\n")
        with pytest.raises(DatasetError, match=":2"):
            list(scene.load_dataset(path))

    def test_out_of_range_box_rejected(self, tmp_path):
        path = tmp_path / "oob.jsonl"
        path.write_text(
            '{"id": "x", "fps_subsample": 2, "phases": [0], '
            '"frames": [[{"cat": 0, "box": [1.5, 0.5, 0.1, 0.1], "conf": 1.0}]]}\n'
        )
        with pytest.raises(DatasetError, match="outside"):
            list(scene.load_dataset(path))


class TestPadFrame:
    def test_pads_to_n(self):
        slots = scene.pad_frame([det() for _ in range(3)], 15, CATS)
        assert len(slots) == 15
        assert sum(s.valid for s in slots) == 3
        assert all(not s.valid for s in slots[3:])

    def test_empty_frame_all_padding(self):
        slots = scene.pad_frame([], 15, CATS)
        assert all(not s.valid for s in slots)

    def test_full_frame_order_preserved(self):
        dets = [det(cx=i / 20.0, cat=i % 6) for i in range(15)]
        slots = scene.pad_frame(dets, 15, CATS)
        assert slots == dets

    def test_overfull_keeps_highest_confidence(self):
        dets = [det(cx=0.1, conf=0.9), det(cx=0.2, conf=0.1), det(cx=0.3, conf=0.8)]
        slots = scene.pad_frame(dets, 2, CATS)
        assert [s.box.cx for s in slots] == [0.1, 0.3]


class TestSampleClip:
    def test_exact_length_run_forces_start(self):
        video = make_video(16)
        rng = np.random.default_rng(0)
        clip = scene.sample_clip(video, (0, 16, 0), 8, 15, CATS, rng)
        assert clip.source == ("v0", 0)

    def test_stride_two_span(self):
        video = make_video(64, phases=[0] * 64)
        rng = np.random.default_rng(1)
        clip = scene.sample_clip(video, (0, 64, 0), 8, 15, CATS, rng)
        # 8 frames at stride 2 cover 16 consecutive source frames
        assert clip.num_frames == 8
        start = clip.source[1]
        assert 0 <= start <= 64 - 16

    def test_same_seed_same_clip(self):
        video = make_video(64)
        a = scene.sample_clip(video, (0, 64, 0), 8, 15, CATS, np.random.default_rng(7))
        b = scene.sample_clip(video, (0, 64, 0), 8, 15, CATS, np.random.default_rng(7))
        assert a.source == b.source

    def test_short_run_raises_without_allow(self):
        video = make_video(10)
        with pytest.raises(SamplingError):
            scene.sample_clip(video, (0, 10, 0), 8, 15, CATS, np.random.default_rng(0))

    def test_short_run_repeats_last_frame(self):
        video = make_video(10)
        video.frames[9] = [det(cx=0.9)]
        clip = scene.sample_clip(
            video, (0, 10, 0), 8, 15, CATS, np.random.default_rng(0), allow_short=True
        )
        assert clip.num_frames == 8
        # positions 0,2,4,6,8 are real; 10,12,14 clamp to frame 9
        assert clip.frames[5][0].box.cx == 0.9
        assert clip.frames[7][0].box.cx == 0.9

    def test_mixed_phase_run_rejected(self):
        video = make_video(16, phases=[0] * 8 + [1] * 8)
        with pytest.raises(SamplingError):
            scene.sample_clip(video, (0, 16, 0), 8, 15, CATS, np.random.default_rng(0))


class TestTiling:
    def test_position_count(self):
        assert scene.clip_positions(64, 8) == 4
        assert scene.clip_positions(63, 8) == 3
        assert scene.clip_positions(15, 8) == 0

    def test_clip_at_position_majority_label(self):
        # span [0, 16) holds 10 frames of phase 0 and 6 of phase 1
        video = make_video(32, phases=[0] * 10 + [1] * 22)
        assert scene.clip_at_position(video, 0, 8, 15, CATS).label == 0
        assert scene.clip_at_position(video, 1, 8, 15, CATS).label == 1

    def test_majority_tie_takes_lowest_id(self):
        video = make_video(16, phases=[2] * 8 + [1] * 8)
        assert scene.clip_at_position(video, 0, 8, 15, CATS).label == 1


class TestSplit:
    def test_full_fraction(self):
        videos = [make_video(4, vid=f"v{i}") for i in range(5)]
        labeled, rest = scene.split_labeled_fraction(videos, 1.0, seed=0)
        assert len(labeled) == 5 and rest == []

    def test_400_at_5_percent_gives_20(self):
        videos = [make_video(1, vid=f"v{i}") for i in range(400)]
        labeled, _ = scene.split_labeled_fraction(videos, 0.05, seed=3)
        assert len(labeled) == 20

    def test_partition_property(self):
        videos = [make_video(1, vid=f"v{i}") for i in range(37)]
        labeled, rest = scene.split_labeled_fraction(videos, 0.3, seed=11)
        ids = sorted(v.id for v in labeled) + sorted(v.id for v in rest)
        assert sorted(ids) == sorted(v.id for v in videos)
        assert not set(v.id for v in labeled) & set(v.id for v in rest)

    def test_deterministic(self):
        videos = [make_video(1, vid=f"v{i}") for i in range(20)]
        a = scene.split_labeled_fraction(videos, 0.25, seed=5)
        b = scene.split_labeled_fraction(videos, 0.25, seed=5)
        assert [v.id for v in a[0]] == [v.id for v in b[0]]

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            scene.split_labeled_fraction([], 0.5, seed=0)
