import numpy as np
import pytest

from helpers import (
    assert_grad_matches,
    frozen_soft_targets,
    frozen_target_loss,
    max_rel_err,
    numeric_grad,
    safe_net,
)
from mialab import losses as L
from mialab.errors import ConfigError, DimensionError
from mialab.losses import CenterBank
from mialab.model import (
    backward,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from mialab.numerics import softmax


class TestInitModel:
    def test_deterministic(self):
        a = init_model([3, 5, 4, 2], seed=7)
        b = init_model([3, 5, 4, 2], seed=7)
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)

    def test_shapes(self):
        p = init_model([2, 4, 3], seed=0)
        assert len(p.encoder_weights) == 1
        assert p.encoder_weights[0].shape == (2, 4)
        assert p.classifier_weight.shape == (4, 3)
        assert p.layer_sizes == [2, 4, 3]
        assert p.feature_dim == 4 and p.n_classes == 3

    def test_seed_changes_weights(self):
        a = init_model([2, 4, 3], seed=0)
        b = init_model([2, 4, 3], seed=1)
        assert not np.array_equal(a.encoder_weights[0], b.encoder_weights[0])

    def test_biases_start_at_zero(self):
        p = init_model([2, 4, 3], seed=0)
        assert np.all(p.encoder_biases[0] == 0.0)
        assert np.all(p.classifier_bias == 0.0)

    def test_too_few_sizes(self):
        with pytest.raises(ConfigError):
            init_model([2, 3], seed=0)


class TestForward:
    def test_zero_parameters_give_uniform_softmax(self):
        p = init_model([2, 4, 3], seed=0)
        for arr in p.arrays():
            arr[...] = 0.0
        trace = forward(p, np.ones((2, 2)))
        assert np.all(trace.logits == 0.0)
        np.testing.assert_allclose(softmax(trace.logits), 1.0 / 3.0, atol=1e-15)

    def test_batch_independence(self):
        p = init_model([3, 6, 4], seed=1)
        row = np.random.default_rng(0).normal(size=(1, 3))
        single = forward(p, row).logits
        double = forward(p, np.vstack([row, row])).logits
        assert np.array_equal(double[0], single[0])
        assert np.array_equal(double[0], double[1])

    def test_hand_computed_logits(self):
        p = init_model([2, 2, 3], seed=0)
        p.encoder_weights[0][...] = np.eye(2)
        p.encoder_biases[0][...] = [0.0, 0.0]
        p.classifier_weight[...] = [[1.0, 2.0, 0.0], [0.0, 1.0, 1.0]]
        p.classifier_bias[...] = [0.5, 0.0, -1.0]
        trace = forward(p, np.array([[1.0, 2.0]]))
        np.testing.assert_allclose(trace.features, [[1.0, 2.0]], atol=1e-15)
        np.testing.assert_allclose(trace.logits, [[1.5, 4.0, 1.0]], atol=1e-15)

    def test_zero_input_row_follows_bias_only_path(self):
        p = init_model([3, 5, 4], seed=2)
        p.encoder_biases[0][...] = np.linspace(-1.0, 1.0, 5)
        p.classifier_bias[...] = [0.3, -0.2, 0.1, 0.0]
        trace = forward(p, np.zeros((1, 3)))
        expected = np.maximum(p.encoder_biases[0], 0.0) @ p.classifier_weight
        expected = expected + p.classifier_bias
        np.testing.assert_allclose(trace.logits[0], expected, atol=1e-15)

    def test_dimension_mismatch(self):
        p = init_model([2, 4, 3], seed=0)
        with pytest.raises(DimensionError):
            forward(p, np.zeros((1, 5)))


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        p = init_model([2, 4, 3], seed=0)
        trace = forward(p, np.ones((3, 2)))
        grads = backward(p, trace, np.zeros((3, 3)), np.zeros((3, 4)), want_input_grad=True)
        for g in grads.arrays():
            assert np.all(g == 0.0)
        assert np.all(grads.input_grad == 0.0)

    def test_parameter_gradients_match_finite_differences(self):
        """Linear objective in (logits, features) checked against FD on a 2-8-4-3 net."""
        params, x = safe_net([2, 8, 4, 3], batch=4, seed=10)
        rng = np.random.default_rng(0)
        r_logits = rng.normal(size=(4, 3))
        r_feats = rng.normal(size=(4, 4))

        def objective():
            t = forward(params, x)
            return float((t.logits * r_logits).sum() + (t.features * r_feats).sum())

        trace = forward(params, x)
        grads = backward(params, trace, r_logits, r_feats)
        for p_arr, g_arr in zip(params.arrays(), grads.arrays()):
            assert max_rel_err(g_arr, numeric_grad(objective, p_arr)) < 1e-4

    def test_input_gradient_matches_finite_differences(self):
        params, x = safe_net([2, 8, 4, 3], batch=3, seed=11)
        r_logits = np.random.default_rng(1).normal(size=(3, 3))
        trace = forward(params, x)
        grads = backward(params, trace, r_logits, want_input_grad=True)

        def objective():
            return float((forward(params, x).logits * r_logits).sum())

        assert_grad_matches(grads.input_grad, objective, x)

    def test_feature_grad_does_not_touch_classifier(self):
        params, x = safe_net([2, 8, 4, 3], batch=3, seed=12)
        trace = forward(params, x)
        grads = backward(params, trace, None, np.random.default_rng(2).normal(size=(3, 4)))
        assert np.all(grads.classifier_weight == 0.0)
        assert np.all(grads.classifier_bias == 0.0)
        assert any(np.any(g != 0.0) for g in grads.encoder_weights)

    def test_shape_mismatch(self):
        params = init_model([2, 4, 3], seed=0)
        trace = forward(params, np.ones((2, 2)))
        with pytest.raises(DimensionError):
            backward(params, trace, np.zeros((2, 5)))


class TestSgdStep:
    def test_zero_grads_leave_params_unchanged(self):
        p = init_model([2, 4, 3], seed=0)
        before = [a.copy() for a in p.arrays()]
        trace = forward(p, np.ones((1, 2)))
        grads = backward(p, trace, np.zeros((1, 3)))
        sgd_step(p, grads, lr=0.5)
        for a, b in zip(p.arrays(), before):
            assert np.array_equal(a, b)

    def test_scalar_update(self):
        p = init_model([2, 4, 3], seed=0)
        p.classifier_bias[...] = 0.0
        p.classifier_bias[0] = 1.0
        trace = forward(p, np.ones((1, 2)))
        grads = backward(p, trace, np.zeros((1, 3)))
        grads.classifier_bias[0] = 2.0
        sgd_step(p, grads, lr=0.1)
        assert p.classifier_bias[0] == pytest.approx(0.8, abs=1e-15)

    def test_two_steps_equal_one_summed_step_when_grads_fixed(self):
        a = init_model([2, 4, 3], seed=3)
        b = init_model([2, 4, 3], seed=3)
        trace = forward(a, np.ones((2, 2)))
        g1 = backward(a, trace, np.random.default_rng(0).normal(size=(2, 3)))
        g2 = backward(a, trace, np.random.default_rng(1).normal(size=(2, 3)))
        sgd_step(a, g1, 0.05)
        sgd_step(a, g2, 0.05)
        summed = backward(b, forward(b, np.ones((2, 2))), np.zeros((2, 3)))
        for s, x, y in zip(summed.arrays(), g1.arrays(), g2.arrays()):
            s[...] = x + y
        sgd_step(b, summed, 0.05)
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_allclose(x, y, atol=1e-15)

    def test_nonpositive_lr_rejected(self):
        p = init_model([2, 4, 3], seed=0)
        grads = backward(p, forward(p, np.ones((1, 2))), np.zeros((1, 3)))
        with pytest.raises(ConfigError):
            sgd_step(p, grads, lr=0.0)


class TestComposedLossGradients:
    """End-to-end FD over model parameters for every loss through backward.

    Gradient-stopped quantities (soft targets, scenario-3 confidence weights)
    are frozen at their unperturbed values inside the FD objective, matching
    what the analytic gradients claim to differentiate.
    """

    SIZES = [2, 6, 4, 3]

    def _setup(self, seed):
        params, x = safe_net(self.SIZES, batch=4, seed=seed)
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 3, size=4)
        bank = CenterBank(centers=rng.normal(size=(3, 4)), center_lr=0.001)
        return params, x, labels, bank

    def _check(self, params, x, result, objective):
        trace = forward(params, x)
        grads = backward(params, trace, result.grad_logits, result.grad_features)
        for p_arr, g_arr in zip(params.arrays(), grads.arrays()):
            assert max_rel_err(g_arr, numeric_grad(objective, p_arr)) < 1e-4

    def test_plain_logit_losses(self):
        params, x, labels, _ = self._setup(30)
        cases = [
            (lambda g: L.ce_loss(g, labels), "ce"),
            (lambda g: L.lce_loss(g, labels, 0.4), "lce"),
            (lambda g: L.label_smoothing_loss(g, labels, 0.2), "label_smoothing"),
            (lambda g: L.confidence_penalty_loss(g, labels, 0.3), "confidence_penalty"),
        ]
        for fn, name in cases:
            result = fn(forward(params, x).logits)
            self._check(params, x, result, lambda fn=fn: fn(forward(params, x).logits).loss)

    def test_soft_target_losses_with_frozen_targets(self):
        params, x, labels, _ = self._setup(31)
        logits0 = forward(params, x).logits
        targets = frozen_soft_targets(logits0, labels)
        result = L.sce_loss(logits0, labels, 0.4)
        self._check(
            params, x, result,
            lambda: frozen_target_loss(forward(params, x).logits, targets, 0.4),
        )

    def test_relax_family_branches(self):
        params, x, labels, _ = self._setup(32)
        logits0 = forward(params, x).logits
        targets = frozen_soft_targets(logits0, labels)
        base_ce = L.ce_loss(logits0, labels).loss
        base_lce = L.lce_loss(logits0, labels, 0.4).loss
        cases = [
            (lambda g: L.relax_loss(g, labels, base_ce * 0.5, 3), None, 0.0),
            (lambda g: L.relax_loss(g, labels, base_ce + 0.5, 2), None, 0.0),
            (lambda g: L.relax_loss(g, labels, base_ce + 0.5, 3), targets, 0.0),
            (lambda g: L.imp_relax_loss(g, labels, base_lce * 0.5, 0.4, 3), None, 0.4),
            (lambda g: L.imp_relax_loss(g, labels, base_lce * 0.5, 0.4, 2), None, 0.4),
            (lambda g: L.imp_relax_loss(g, labels, base_lce + 0.5, 0.4, 3), targets, 0.4),
        ]
        for fn, frozen, tau in cases:
            result = fn(logits0)
            if frozen is None:
                objective = lambda fn=fn: fn(forward(params, x).logits).loss
            else:
                objective = lambda t=frozen, tau=tau: frozen_target_loss(
                    forward(params, x).logits, t, tau
                )
            self._check(params, x, result, objective)

    def test_center_losses_through_encoder(self):
        params, x, labels, bank = self._setup(33)
        trace0 = forward(params, x)
        probs0 = softmax(trace0.logits)  # frozen confidence weights
        tau = 0.25
        l_ct = L.relaxed_center_loss(trace0.features, bank, probs0, labels, 0.0, tau, 3).loss
        cases = [
            lambda q: L.center_loss(q, bank, labels),
            lambda q: L.relaxed_center_loss(q, bank, probs0, labels, l_ct * 0.5, tau, 3),
            lambda q: L.relaxed_center_loss(q, bank, probs0, labels, l_ct * 0.5, tau, 2),
            lambda q: L.relaxed_center_loss(q, bank, probs0, labels, l_ct + 0.4, tau, 3),
        ]
        for fn in cases:
            result = fn(trace0.features)
            self._check(params, x, result, lambda fn=fn: fn(forward(params, x).features).loss)

    def test_joint_loss_composed(self):
        params, x, labels, bank = self._setup(34)
        trace0 = forward(params, x)
        probs0 = softmax(trace0.logits)
        base_lce = L.lce_loss(trace0.logits, labels, 0.4).loss
        l_ct = L.relaxed_center_loss(trace0.features, bank, probs0, labels, 0.0, 0.25, 3).loss
        lam = 0.7

        def build(trace):
            rce = L.imp_relax_loss(trace.logits, labels, base_lce * 0.5, 0.4, 3)
            rcl = L.relaxed_center_loss(
                trace.features, bank, probs0, labels, l_ct * 0.5, 0.25, 3
            )
            return L.crl_total(rce, rcl, lam)

        result = build(trace0)
        self._check(params, x, result, lambda: build(forward(params, x)).loss)


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, tmp_path):
        p = init_model([3, 6, 4, 2], seed=9)
        save_checkpoint(str(tmp_path), p, seed=9, epoch=17)
        loaded, manifest, centers = load_checkpoint(str(tmp_path))
        assert manifest["layer_sizes"] == [3, 6, 4, 2]
        assert manifest["seed"] == 9 and manifest["epoch"] == 17
        assert centers is None
        for a, b in zip(p.arrays(), loaded.arrays()):
            assert np.array_equal(a, b)

    def test_round_trip_with_centers(self, tmp_path):
        p = init_model([3, 6, 4, 2], seed=9)
        c = np.random.default_rng(4).normal(size=(2, 4))
        save_checkpoint(str(tmp_path), p, seed=9, epoch=1, centers=c, center_lr=0.001)
        _, manifest, loaded_c = load_checkpoint(str(tmp_path))
        assert manifest["centers"]["lr"] == 0.001
        assert np.array_equal(c, loaded_c)

    def test_truncated_blob_rejected(self, tmp_path):
        p = init_model([3, 6, 4, 2], seed=9)
        save_checkpoint(str(tmp_path), p, seed=9, epoch=1)
        blob = tmp_path / "model.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(str(tmp_path))
