"""Tests for roomclass.models: architectures, prediction, checkpoints and the
Gaussian naive Bayes baseline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomclass.errors import DataError
from roomclass.models import (
    ARCHS,
    ModelSpec,
    build_model,
    fit_nbc,
    load_checkpoint,
    minimum_input_shape,
    predict,
    predict_class,
    predict_nbc,
    save_checkpoint,
)
from roomclass.nn import AdamState, AttentionPool, Dense, adam_step

SMALL = dict(conv_filters=(3, 4), gru_units=4, head_units=5, cnn_dense=6, td_units=5, ff_hidden=(6, 6, 6))


def small_model(arch, shape=(20, 17), n_classes=4, seed=0):
    shape = (9,) if arch == "ff_baseline" else shape
    return build_model(ModelSpec(arch, shape, n_classes, **SMALL), seed=seed)


def n_params(model):
    return sum(p.size for p in model.parameters().values())


class TestModelSpec:
    def test_unknown_arch(self):
        with pytest.raises(DataError, match="unknown arch"):
            ModelSpec("transformer", (10, 10), 3)

    def test_single_class(self):
        with pytest.raises(DataError):
            ModelSpec("cnn", (10, 10), 1)

    def test_non_positive_shape(self):
        with pytest.raises(DataError):
            ModelSpec("rnn", (0, 10), 3)

    def test_dict_round_trip(self):
        spec = ModelSpec("att_crnn", (30, 20), 5, **SMALL)
        assert ModelSpec.from_dict(spec.to_dict()) == spec


class TestBuildModel:
    def test_paper_shape_att_crnn(self):
        model = build_model(ModelSpec("att_crnn", (500, 161), 7), seed=0)
        x = np.random.default_rng(0).standard_normal((500, 161))
        p = predict(model, x)
        assert p.shape == (7,)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("arch", ARCHS)
    def test_every_arch_outputs_distribution(self, arch):
        model = small_model(arch)
        x = np.random.default_rng(1).standard_normal((3, *model.spec.input_shape))
        p = predict(model, x)
        assert p.shape == (3, 4)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p >= 0)

    def test_pooling_difference_is_attention_parameters(self):
        rnn, att = small_model("rnn"), small_model("att_rnn")
        pool = att.layers[att.attention_index]
        assert isinstance(pool, AttentionPool)
        # scoring vector over both directions plus one bias
        assert n_params(att) - n_params(rnn) == 2 * SMALL["gru_units"] + 1 == sum(p.size for p in pool.params.values())

    def test_crnn_pooling_difference(self):
        assert n_params(small_model("att_crnn")) - n_params(small_model("crnn")) == 2 * SMALL["gru_units"] + 1

    def test_ff_baseline_layout(self):
        model = build_model(ModelSpec("ff_baseline", (6,), 3), seed=0)
        dense = [l for l in model.layers if isinstance(l, Dense)]
        assert [d.units for d in dense] == [32, 32, 32, 3]
        rates = [l.rate for l in model.layers if l.kind == "dropout"]
        assert rates == [0.1, 0.1, 0.1]

    def test_seeded_init(self):
        a, b = small_model("att_crnn", seed=4), small_model("att_crnn", seed=4)
        for k, v in a.parameters().items():
            np.testing.assert_array_equal(v, b.parameters()[k])

    def test_minimum_shape_reported(self):
        spec = ModelSpec("cnn", (500, 161), 3)
        assert minimum_input_shape(spec) == (22, 22)
        with pytest.raises(DataError, match=r"minimum \(22, 22\)"):
            build_model(ModelSpec("cnn", (21, 161), 3))

    @settings(max_examples=10, deadline=None)
    @given(arch=st.sampled_from(["cnn", "crnn", "att_crnn"]), t=st.integers(1, 30), k=st.integers(1, 30))
    def test_any_shape_builds_or_reports(self, arch, t, k):
        spec = ModelSpec(arch, (t, k), 3, **SMALL)
        lo = minimum_input_shape(spec)
        if t >= lo[0] and k >= lo[1]:
            model = build_model(spec)
            assert predict(model, np.zeros((t, k))).shape == (3,)
        else:
            with pytest.raises(DataError, match="minimum"):
                build_model(spec)

    def test_attention_contract_end_to_end(self):
        model = small_model("att_crnn")
        x = np.random.default_rng(2).standard_normal((4, 20, 17))
        z = model.forward(x, upto=model.attention_index)
        alphas = model.layers[model.attention_index].weights(z)
        assert np.all(alphas >= 0)
        np.testing.assert_allclose(alphas.sum(axis=1), 1.0, atol=1e-6)


class TestPredict:
    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            predict(small_model("cnn"), np.zeros((20, 16)))

    def test_zero_final_layer_uniform(self):
        model = small_model("att_crnn")
        final = [l for l in model.layers if isinstance(l, Dense)][-1]
        final.params["W"][...] = 0.0
        final.params["b"][...] = 0.0
        p = predict(model, np.random.default_rng(3).standard_normal((20, 17)))
        np.testing.assert_allclose(p, 0.25, atol=1e-15)
        assert predict_class(model, np.zeros((20, 17))) == 0

    def test_bias_shift_keeps_argmax(self):
        model = small_model("cnn")
        x = np.random.default_rng(4).standard_normal((6, 20, 17))
        before = predict_class(model, x)
        final = [l for l in model.layers if isinstance(l, Dense)][-1]
        final.params["b"] += 3.3
        np.testing.assert_array_equal(predict_class(model, x), before)

    def test_overfit_one_sample(self):
        model = small_model("att_rnn", seed=5)
        x = np.random.default_rng(6).standard_normal((1, 20, 17))
        state = AdamState(lr=1e-2)
        rng = np.random.default_rng(7)
        for _ in range(150):
            model.loss_and_grad(x, [2], rng=rng)
            adam_step(model.parameters(), model.gradients(), state)
        assert predict(model, x[0])[2] > 0.99


class TestCheckpoint:
    @pytest.mark.parametrize("arch", ARCHS)
    def test_round_trip(self, tmp_path, arch):
        model = small_model(arch)
        model.fit_normalization(np.random.default_rng(8).normal(3.0, 2.0, (4, *model.spec.input_shape)))
        state = AdamState(lr=5e-4)
        x = np.random.default_rng(9).standard_normal((2, *model.spec.input_shape))
        model.loss_and_grad(x, [0, 1], rng=np.random.default_rng(0))
        adam_step(model.parameters(), model.gradients(), state)
        save_checkpoint(tmp_path / "c.npz", model, state, seed=11, history={"val": [0.5]})
        back, extra = load_checkpoint(tmp_path / "c.npz")
        assert back.spec == model.spec
        np.testing.assert_array_equal(predict(back, x), predict(model, x))
        assert extra["seed"] == 11 and extra["history"] == {"val": [0.5]}
        assert extra["adam"].t == 1 and extra["adam"].lr == 5e-4
        for k in state.m:
            np.testing.assert_array_equal(extra["adam"].m[k], state.m[k])
            np.testing.assert_array_equal(extra["adam"].v[k], state.v[k])

    def test_bad_file(self, tmp_path):
        np.savez(tmp_path / "x.npz", meta=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "x.npz")


class TestNbc:
    def test_separable_clusters(self):
        rng = np.random.default_rng(10)
        X = np.concatenate([rng.normal(0, 0.01, 20), rng.normal(10, 0.01, 20)])[:, None]
        y = np.repeat([0, 1], 20)
        assert np.mean(predict_nbc(fit_nbc(X, y), X) == y) == 1.0

    def test_identical_classes_tie_to_first(self):
        X = np.array([[1.0], [2.0], [1.0], [2.0]])
        y = np.array([0, 0, 1, 1])
        np.testing.assert_array_equal(predict_nbc(fit_nbc(X, y), X), [0, 0, 0, 0])

    def test_variance_floor_and_priors(self):
        model = fit_nbc(np.ones((4, 2)), [0, 0, 1, 1])
        assert np.all(model.variances == 1e-8)
        assert np.exp(model.log_priors).sum() == pytest.approx(1.0)

    def test_too_few_samples(self):
        with pytest.raises(DataError):
            fit_nbc(np.zeros((3, 1)), [0, 0, 1])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 100), shift=st.floats(-50, 50))
    def test_affine_consistency(self, seed, scale, shift):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((30, 3)) + np.repeat(np.arange(3), 10)[:, None]
        y = np.repeat(np.arange(3), 10)
        T = rng.standard_normal((10, 3)) + 1
        a = predict_nbc(fit_nbc(X, y), T)
        b = predict_nbc(fit_nbc(X * scale + shift, y), T * scale + shift)
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), c=st.floats(-100, 100))
    def test_prior_shift_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        X, y = rng.standard_normal((12, 2)), np.repeat([0, 1, 2], 4)
        model = fit_nbc(X, y)
        T = rng.standard_normal((8, 2))
        before = predict_nbc(model, T)
        model.log_priors = model.log_priors + c
        np.testing.assert_array_equal(predict_nbc(model, T), before)
