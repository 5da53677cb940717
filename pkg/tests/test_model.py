"""Tests for the gated composite predictor and its regression form."""

import numpy as np
import pytest

from zslinear.data import SemanticSpace
from zslinear.errors import (
    DataFormatError,
    DegeneratePredictionError,
    ValidationError,
)
from zslinear.model import (
    CompositeModel,
    IndicatorVector,
    OpCounter,
    forward,
    forward_batch,
    init_model,
    lift_features,
    lift_matrix,
    load_checkpoint,
    predict_class,
    save_checkpoint,
    stacked_weights,
)


def lifted_form(model, x, gates):
    """Oracle: evaluate the predictor as a single regression on lifted input."""
    return stacked_weights(model).T @ lift_features(x, gates) + model.global_bias


class TestLiftFeatures:
    def test_two_networks_one_active(self):
        out = lift_features(np.array([2.0, 3.0]), np.array([1.0, 0.0]))
        np.testing.assert_array_equal(out, [1.0, 2.0, 3.0, 0.0, 0.0, 0.0])

    def test_all_gates_zero(self):
        out = lift_features(np.array([2.0, 3.0]), np.zeros(4))
        np.testing.assert_array_equal(out, np.zeros(4 * 3))

    def test_all_gates_one_scalar_input(self):
        out = lift_features(np.array([1.0]), np.ones(5))
        np.testing.assert_array_equal(out, np.ones(10))

    def test_block_zero_iff_gate_zero(self):
        x = np.random.default_rng(1).normal(size=4)
        gates = np.array([0.0, 1.0, 0.0])
        out = lift_features(x, gates).reshape(3, 5)
        assert np.all(out[0] == 0.0) and np.all(out[2] == 0.0)
        assert out[1, 0] == 1.0
        np.testing.assert_array_equal(out[1, 1:], x)

    def test_gate_count_checked(self):
        with pytest.raises(ValidationError):
            lift_features(np.array([1.0]), np.ones(3), k=2)

    def test_matrix_variant_matches(self):
        rng = np.random.default_rng(2)
        feats = rng.normal(size=(6, 4))
        gates = (rng.random((6, 3)) < 0.5).astype(float)
        rows = lift_matrix(feats, gates)
        for i in range(6):
            np.testing.assert_array_equal(rows[i], lift_features(feats[i], gates[i]))


class TestIndicatorVector:
    def test_valid(self):
        iv = IndicatorVector(np.array([1.0, 0.0, 1.0]), 2)
        assert iv.active_count == 2

    def test_non_binary_rejected(self):
        with pytest.raises(ValidationError):
            IndicatorVector(np.array([0.5, 0.5]), 1)

    def test_count_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            IndicatorVector(np.array([1.0, 1.0]), 1)


class TestForward:
    def test_all_gates_zero_returns_shared_bias(self):
        m = init_model(3, 4, 2, 1, seed=0)
        m.global_bias[:] = [5.0, -1.0]
        out = forward(m, np.ones(4), np.zeros(3))
        np.testing.assert_array_equal(out, [5.0, -1.0])

    def test_identity_network_passes_input_through(self):
        thetas = np.zeros((2, 3, 3))
        thetas[0] = np.eye(3)
        m = CompositeModel(thetas, np.zeros((2, 3)), np.zeros(3), k_active=1)
        x = np.array([0.5, -2.0, 7.0])
        np.testing.assert_array_equal(forward(m, x, np.array([1.0, 0.0])), x)

    def test_matches_lifted_regression_form(self):
        rng = np.random.default_rng(3)
        for seed in range(5):
            m = init_model(6, 5, 4, 3, seed=seed)
            m.biases[:] = rng.normal(size=(6, 4))
            m.global_bias[:] = rng.normal(size=4)
            x = rng.normal(size=5)
            gates = np.zeros(6)
            gates[rng.choice(6, 3, replace=False)] = 1.0
            err = np.abs(forward(m, x, gates) - lifted_form(m, x, gates)).max()
            assert err <= 1e-12

    def test_rectifier_clamps(self):
        thetas = np.zeros((1, 1, 2))
        thetas[0, 0] = [1.0, -1.0]
        m = CompositeModel(
            thetas, np.zeros((1, 2)), np.zeros(2), k_active=1,
            activation="rectifier",
        )
        np.testing.assert_array_equal(
            forward(m, np.array([2.0]), np.array([1.0])), [2.0, 0.0]
        )

    def test_dimension_mismatch(self):
        m = init_model(2, 3, 2, 1, seed=0)
        with pytest.raises(ValidationError):
            forward(m, np.ones(4), np.array([1.0, 0.0]))
        with pytest.raises(ValidationError):
            forward(m, np.ones(3), np.array([1.0]))

    def test_inactive_weights_do_not_matter(self):
        m = init_model(4, 3, 2, 2, seed=1)
        x = np.ones(3)
        gates = np.array([1.0, 0.0, 1.0, 0.0])
        before = forward(m, x, gates)
        m.thetas[1] = 99.0
        m.biases[3] = -7.0
        np.testing.assert_array_equal(forward(m, x, gates), before)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        m = init_model(5, 4, 3, 2, seed=2)
        feats = rng.normal(size=(7, 4))
        gates = (rng.random((7, 5)) < 0.4).astype(float)
        batch = forward_batch(m, feats, gates)
        for i in range(7):
            np.testing.assert_allclose(
                batch[i], forward(m, feats[i], gates[i]), atol=1e-12
            )


class TestOperationCount:
    def test_cost_tracks_active_count_not_k(self):
        d, s = 8, 3
        x = np.ones(d)

        def ops(k_networks, active):
            m = init_model(k_networks, d, s, max(active, 1), seed=0)
            gates = np.zeros(k_networks)
            gates[:active] = 1.0
            c = OpCounter()
            forward(m, x, gates, counter=c)
            return c.total

        per_net = d * s + s
        assert ops(10, 4) - ops(10, 2) == 2 * per_net
        # Growing K with the same active set only adds the gate scan.
        assert ops(100, 2) - ops(10, 2) == 90


class TestPredictClass:
    def setup_method(self):
        rng = np.random.default_rng(9)
        desc = rng.normal(size=(5, 3))
        desc /= np.linalg.norm(desc, axis=1, keepdims=True)
        self.space = SemanticSpace(desc, [True, True, True, False, False])

    def model_with_output(self, vec):
        thetas = np.zeros((2, 4, 3))
        return CompositeModel(thetas, np.zeros((2, 3)), np.asarray(vec, float), 1)

    def test_exact_descriptor_match(self):
        m = self.model_with_output(self.space.descriptors[3])
        assert predict_class(m, np.zeros(4), np.zeros(2), self.space, "all") == 3

    def test_unseen_scope_excludes_seen(self):
        m = self.model_with_output(self.space.descriptors[0])
        assert (
            predict_class(m, np.zeros(4), np.zeros(2), self.space, "all") == 0
        )
        got = predict_class(m, np.zeros(4), np.zeros(2), self.space, "unseen_only")
        assert got in (3, 4)

    def test_tie_breaks_to_lowest_id(self):
        desc = np.ones((5, 3))
        desc[2] = [1.0, -1.0, 0.0]
        space = SemanticSpace(desc, [True] * 3 + [False] * 2)
        m = self.model_with_output([1.0, 1.0, 1.0])
        # classes 0, 1, 3, 4 are all perfectly similar; lowest id wins
        assert predict_class(m, np.zeros(4), np.zeros(2), space, "all") == 0

    def test_zero_prediction_rejected(self):
        m = self.model_with_output([0.0, 0.0, 0.0])
        with pytest.raises(DegeneratePredictionError):
            predict_class(m, np.zeros(4), np.zeros(2), self.space, "all")

    def test_unknown_scope_rejected(self):
        m = self.model_with_output([1.0, 0.0, 0.0])
        with pytest.raises(ValidationError):
            predict_class(m, np.zeros(4), np.zeros(2), self.space, "seen_only")

    def test_scale_invariance(self):
        rng = np.random.default_rng(21)
        m = init_model(3, 4, 3, 2, seed=5)
        x = rng.normal(size=4)
        gates = np.array([1.0, 1.0, 0.0])
        base = predict_class(m, x, gates, self.space, "all")
        for c in (0.25, 4.0, 1e6):
            scaled = CompositeModel(
                m.thetas * c, m.biases * c, m.global_bias * c, m.k_active
            )
            assert predict_class(scaled, x, gates, self.space, "all") == base


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        m = init_model(3, 4, 2, 2, activation="rectifier", seed=6)
        m.global_bias[:] = [1.5, -2.5]
        save_checkpoint(m, tmp_path / "ck")
        loaded = load_checkpoint(tmp_path / "ck")
        np.testing.assert_array_equal(loaded.thetas, m.thetas)
        np.testing.assert_array_equal(loaded.biases, m.biases)
        np.testing.assert_array_equal(loaded.global_bias, m.global_bias)
        assert loaded.k_active == 2 and loaded.activation == "rectifier"

    def test_expected_files(self, tmp_path):
        m = init_model(2, 3, 2, 1, seed=0)
        save_checkpoint(m, tmp_path / "ck")
        names = {p.name for p in (tmp_path / "ck").iterdir()}
        assert names == {
            "meta", "theta_0.pmx1", "theta_1.pmx1",
            "bias_0.pmx1", "bias_1.pmx1", "global_bias.pmx1",
        }

    def test_missing_meta(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path)

    def test_corrupt_meta(self, tmp_path):
        m = init_model(2, 3, 2, 1, seed=0)
        save_checkpoint(m, tmp_path / "ck")
        (tmp_path / "ck" / "meta").write_text("K = 2\nwhat\n")
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "ck")

    def test_shape_mismatch(self, tmp_path):
        from zslinear.data import save_matrix

        m = init_model(2, 3, 2, 1, seed=0)
        save_checkpoint(m, tmp_path / "ck")
        save_matrix(np.zeros((3, 3)), tmp_path / "ck" / "theta_0.pmx1")
        with pytest.raises(ValidationError):
            load_checkpoint(tmp_path / "ck")


class TestInitModel:
    def test_unit_frobenius_weights(self):
        m = init_model(6, 9, 4, 3, seed=3)
        for theta in m.thetas:
            assert np.linalg.norm(theta) == pytest.approx(1.0, abs=1e-9)

    def test_deterministic(self):
        a = init_model(3, 5, 2, 1, seed=8)
        b = init_model(3, 5, 2, 1, seed=8)
        np.testing.assert_array_equal(a.thetas, b.thetas)

    def test_descriptor_mean_seeds_bias(self):
        m = init_model(2, 3, 2, 1, seed=0, descriptor_mean=[0.5, 0.25])
        np.testing.assert_array_equal(m.global_bias, [0.5, 0.25])

    def test_k_active_bounds(self):
        with pytest.raises(ValidationError):
            init_model(2, 3, 2, 3, seed=0)
        with pytest.raises(ValidationError):
            init_model(2, 3, 2, 0, seed=0)
