"""GRU step semantics, causality, prefix consistency, gradient checks."""

import numpy as np
import pytest

from orsar import autodiff as ad
from orsar import sequence as seq
from orsar.autodiff import Tensor
from tests.oracles import check_grads

CFG = seq.GruConfig(input_dim=5, hidden_dim=4, classes=3)


def params_for(seed=0, dtype=np.float64, init="normal"):
    return seq.init_gru(CFG, np.random.default_rng(seed), dtype=dtype, init=init)


class TestGruStep:
    def test_zero_params_halve_state(self):
        params = params_for(init="zero")
        h = Tensor(np.array([1.0, -2.0, 0.5, 4.0]))
        x = Tensor(np.zeros(5))
        out = seq.gru_step(x, h, params)
        np.testing.assert_allclose(out.values, 0.5 * h.values, atol=1e-15)

    def test_zero_everything_stays_zero(self):
        params = params_for(init="zero")
        out = seq.gru_step(Tensor(np.zeros(5)), Tensor(np.zeros(4)), params)
        np.testing.assert_array_equal(out.values, np.zeros(4))

    def test_shape_mismatch(self):
        params = params_for()
        with pytest.raises(ad.ShapeError):
            seq.gru_step(Tensor(np.zeros(6)), Tensor(np.zeros(4)), params)

    def test_gates_stay_in_open_unit_interval(self):
        rng = np.random.default_rng(1)
        for trial in range(20):
            params = params_for(seed=trial)
            x = Tensor(rng.normal(scale=5.0, size=5))
            h = Tensor(rng.normal(scale=5.0, size=4))
            xr = ad.reshape(x, (1, 5))
            hr = ad.reshape(h, (1, 4))
            z = ad.sigmoid(
                ad.add(ad.add(ad.matmul(xr, params.w_z), ad.matmul(hr, params.u_z)), params.b_z)
            ).values
            r = ad.sigmoid(
                ad.add(ad.add(ad.matmul(xr, params.w_r), ad.matmul(hr, params.u_r)), params.b_r)
            ).values
            assert np.all(z > 0) and np.all(z < 1)
            assert np.all(r > 0) and np.all(r < 1)

    def test_three_step_gradient_check(self):
        params = params_for(seed=2)
        rng = np.random.default_rng(3)
        xs = [Tensor(rng.normal(size=5)) for _ in range(3)]
        w = Tensor(rng.normal(size=4))

        def loss():
            h = Tensor(np.zeros(4))
            for x in xs:
                h = seq.gru_step(x, h, params)
            return ad.total_sum(ad.mul(h, w))

        check_grads(loss, params.tensors() + xs, rtol=1e-4, atol=1e-8)


class TestSegmentVideo:
    def test_length_one_equals_step_then_classify(self):
        params = params_for(seed=4)
        x = np.random.default_rng(5).normal(size=5)
        logits = seq.segment_video([x], None, params).values
        h = seq.gru_step(Tensor(x), Tensor(np.zeros(4)), params)
        manual = seq.step_logits(h, params).values
        np.testing.assert_allclose(logits, manual, atol=1e-15)
        assert logits.shape == (1, 3)

    def test_zero_params_constant_output(self):
        params = params_for(init="zero")
        rng = np.random.default_rng(6)
        logits = seq.segment_video([rng.normal(size=5) for _ in range(4)], None, params).values
        np.testing.assert_array_equal(logits, np.zeros((4, 3)))

    def test_causality_perturbation_probe(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            params = params_for(seed=100 + trial)
            feats = [rng.normal(size=5) for _ in range(6)]
            base = seq.segment_video(feats, None, params).values
            j = int(rng.integers(0, 6))
            bumped = [f.copy() for f in feats]
            bumped[j] = bumped[j] + rng.normal(scale=0.5, size=5)
            out = seq.segment_video(bumped, None, params).values
            np.testing.assert_array_equal(out[:j], base[:j])
            assert np.abs(out[j:] - base[j:]).max() > 0

    def test_prefix_consistency_bit_level(self):
        params = params_for(seed=8)
        rng = np.random.default_rng(9)
        feats = [rng.normal(size=5) for _ in range(7)]
        full = seq.segment_video(feats, None, params).values
        prefix = seq.segment_video(feats[:4], None, params).values
        np.testing.assert_array_equal(full[:4], prefix)

    def test_appearance_concat_and_mismatch(self):
        wide = seq.GruConfig(input_dim=7, hidden_dim=4, classes=3)
        params = seq.init_gru(wide, np.random.default_rng(10), dtype=np.float64)
        rng = np.random.default_rng(11)
        feats = [rng.normal(size=5) for _ in range(3)]
        apps = [rng.normal(size=2) for _ in range(3)]
        out = seq.segment_video(feats, apps, params)
        assert out.shape == (3, 3)
        with pytest.raises(ValueError):
            seq.segment_video(feats, apps[:2], params)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            seq.segment_video([], None, params_for())

    def test_scores_are_distributions(self):
        params = params_for(seed=12)
        rng = np.random.default_rng(13)
        scores = seq.segment_scores([rng.normal(size=5) for _ in range(4)], None, params)
        np.testing.assert_allclose(scores.sum(axis=1), np.ones(4), atol=1e-12)
        assert (scores >= 0).all()
