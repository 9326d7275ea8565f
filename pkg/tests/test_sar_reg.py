import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorreg.anchors import generate_anchors
from anchorreg.grad_core import Tensor, backward, finite_diff_check, sum_all, zero_grad
from anchorreg.nn import Linear
from anchorreg.sar_reg import (
    EmbeddingHead,
    SarConfig,
    SemanticAnchorState,
    anchor_confidences,
    aux_ce_loss,
    compute_reweights,
    ema_update,
    embed_anchors,
    p2a_loss,
    sar_total_loss,
)


def fixed_classifier(W, b=None):
    W = np.asarray(W, dtype=np.float64)
    g = Linear(W.shape[0], W.shape[1], np.random.default_rng(0), "g")
    g.W.value[:] = W
    if b is not None:
        g.b.value[:] = b
    return g


class TestEmbedAnchors:
    def test_identity_head_shape(self):
        head = EmbeddingHead(4, np.random.default_rng(0))
        for layer in head.layers[:-1]:
            layer.W.value[:] = 0.0
        head.layers[-1].W.value[:] = np.eye(4)
        anchors = generate_anchors("ND", 3, 4, seed=0)
        out = embed_anchors(head, anchors)
        assert out.shape == (3, 4)
        np.testing.assert_array_equal(out.value, 0.0)

    def test_gradient_matches_fd(self):
        head = EmbeddingHead(3, np.random.default_rng(1), hidden=5)
        anchors = generate_anchors("ND", 4, 3, seed=2)
        err = finite_diff_check(lambda: sum_all(embed_anchors(head, anchors)), head.parameters())
        assert err <= 1e-4

    def test_anchors_receive_no_gradient(self):
        head = EmbeddingHead(3, np.random.default_rng(1))
        anchors = generate_anchors("ND", 2, 3, seed=2)
        before = anchors.A.copy()
        backward(sum_all(embed_anchors(head, anchors)))
        np.testing.assert_array_equal(anchors.A, before)
        # the output bias always receives the upstream ones
        np.testing.assert_array_equal(head.parameters()[-1].grad, np.full((1, 3), 2.0))


class TestAnchorConfidences:
    def test_saturated(self):
        g = fixed_classifier(np.eye(3) * 1000.0)
        conf = anchor_confidences(g, Tensor(np.eye(3)))
        np.testing.assert_allclose(conf, 1.0, atol=1e-12)

    def test_zero_classifier_uniform(self):
        g = fixed_classifier(np.zeros((4, 5)))
        conf = anchor_confidences(g, Tensor(np.random.default_rng(0).normal(size=(5, 4))))
        np.testing.assert_allclose(conf, 0.2)

    def test_hand_two_class(self):
        # identity classifier on embedded rows [[2,0],[0,1]] gives those logits
        g = fixed_classifier(np.eye(2))
        conf = anchor_confidences(g, Tensor([[2.0, 0.0], [0.0, 1.0]]))
        expected = [math.exp(2) / (math.exp(2) + 1), math.e / (1 + math.e)]
        np.testing.assert_allclose(conf, expected, rtol=1e-12)
        np.testing.assert_allclose(conf, [0.8808, 0.7311], atol=1e-4)


class TestReweights:
    def test_worked_example(self):
        w = compute_reweights([0.95, 0.5, 0.2], tau=0.9)
        denom = math.log(0.5) + math.log(0.2)
        np.testing.assert_allclose(w, [0.0, math.log(0.5) / denom, math.log(0.2) / denom], rtol=1e-12)
        np.testing.assert_allclose(w, [0.0, 0.3010, 0.6990], atol=1e-4)

    def test_all_filtered(self):
        np.testing.assert_array_equal(compute_reweights([0.95, 0.99, 0.91], 0.9), 0.0)

    def test_single_unfiltered(self):
        w = compute_reweights([0.95, 0.4, 0.99], 0.9)
        assert w.tolist() == [0.0, 1.0, 0.0]

    def test_threshold_is_strict(self):
        w = compute_reweights([0.9, 0.5], 0.9)
        assert w[0] > 0

    def test_clamps_exact_zero_and_one(self):
        w = compute_reweights([0.0, 1.0, 0.5], 0.9)
        assert np.all(np.isfinite(w))
        assert w[1] == 0.0
        assert w[0] > w[2] > 0

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.integers(1, 999), min_size=2, max_size=12, unique=True),
        st.floats(0.05, 1.0),
    )
    def test_properties(self, conf, tau):
        # a grid of step 1e-3 keeps neighbouring log-confidences distinguishable
        conf = np.array(conf) / 1000.0
        w = compute_reweights(conf, tau)
        filtered = conf > tau
        assert np.all(w[filtered] == 0.0)
        kept = ~filtered
        if kept.any():
            assert w[kept].sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(w[kept] > 0)
            order = np.argsort(conf[kept])
            # strictly decreasing in confidence
            assert np.all(np.diff(w[kept][order]) < 0)


class TestAuxLoss:
    def test_zero_weights(self):
        logits = Tensor(np.random.default_rng(0).normal(size=(3, 3)), requires_grad=True)
        loss = aux_ce_loss(logits, np.zeros(3))
        assert loss.item() == 0.0
        backward(loss)
        np.testing.assert_array_equal(logits.grad, 0.0)

    def test_single_class_half_confidence(self):
        # logits (0, 0) with target 0 -> conf 0.5
        logits = Tensor([[0.0, 0.0], [5.0, 5.0]])
        loss = aux_ce_loss(logits, np.array([1.0, 0.0]))
        assert loss.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_saturated_zero_weight(self):
        logits = Tensor(np.eye(2) * 1000.0)
        assert aux_ce_loss(logits, np.zeros(2)).item() == 0.0

    def test_equals_weighted_log_conf(self):
        rng = np.random.default_rng(4)
        g = fixed_classifier(rng.normal(size=(3, 3)))
        emb = Tensor(rng.normal(size=(3, 3)))
        conf = anchor_confidences(g, emb)
        w = np.array([0.2, 0.5, 0.3])
        loss = aux_ce_loss(g(emb), w)
        assert loss.item() == pytest.approx(-np.dot(w, np.log(conf)), rel=1e-12)


class TestEMA:
    def test_alpha_one_keeps_initialized_rows(self):
        s = SemanticAnchorState.empty(2, 3, alpha=1.0)
        s = ema_update(s, np.ones((2, 3)), [0.9, 0.9], delta=0.8)
        s2 = ema_update(s, np.full((2, 3), 7.0), [0.99, 0.99], delta=0.8)
        np.testing.assert_array_equal(s2.A_hat, s.A_hat)

    def test_unrolled_recurrence(self):
        alpha, t = 0.9, 25
        A0 = np.array([[1.0, -2.0]])
        h = np.array([[3.0, 0.5]])
        s = SemanticAnchorState.empty(1, 2, alpha)
        s = ema_update(s, A0, [0.95], delta=0.8)
        for _ in range(t):
            s = ema_update(s, h, [0.95], delta=0.8)
        expected = alpha**t * A0 + (1 - alpha**t) * h
        np.testing.assert_allclose(s.A_hat, expected, rtol=1e-12)
        assert s.step == t + 1

    def test_gate_is_strict(self):
        s = SemanticAnchorState.empty(2, 2, 0.5)
        s = ema_update(s, np.ones((2, 2)), [0.9, 0.9], delta=0.8)
        s2 = ema_update(s, np.full((2, 2), 5.0), [0.8, 0.95], delta=0.8)
        np.testing.assert_array_equal(s2.A_hat[0], s.A_hat[0])
        assert s2.active.tolist() == [False, True]
        np.testing.assert_allclose(s2.A_hat[1], [3.0, 3.0])

    def test_first_activation_adopts_snapshot(self):
        s = SemanticAnchorState.empty(2, 2, 0.999)
        s = ema_update(s, [[1.0, 2.0], [3.0, 4.0]], [0.85, 0.1], delta=0.8)
        assert s.initialized.tolist() == [True, False]
        np.testing.assert_array_equal(s.A_hat, [[1.0, 2.0], [0.0, 0.0]])

    def test_input_state_untouched(self):
        s = SemanticAnchorState.empty(1, 2, 0.5)
        ema_update(s, [[1.0, 1.0]], [0.9], 0.8)
        assert not s.initialized[0] and s.step == 0

    def test_active_implies_initialized(self):
        rng = np.random.default_rng(0)
        s = SemanticAnchorState.empty(4, 2, 0.9)
        for _ in range(30):
            s = ema_update(s, rng.normal(size=(4, 2)), rng.uniform(0, 1, 4), 0.6)
            assert np.all(s.initialized[s.active])


class TestP2A:
    def _state(self, A_hat, active):
        s = SemanticAnchorState.empty(*np.shape(A_hat), 0.9)
        s.A_hat = np.asarray(A_hat, dtype=np.float64)
        s.active = np.asarray(active)
        s.initialized = np.asarray(active)
        return s

    def test_at_anchor_is_zero(self):
        s = self._state([[1.0, 2.0], [3.0, 4.0]], [True, True])
        assert p2a_loss(Tensor([[3.0, 4.0], [1.0, 2.0]]), [1, 0], s).item() == 0.0

    def test_hand_value(self):
        s = self._state([[0.0, 1.0]], [True])
        assert p2a_loss(Tensor([[1.0, 3.0]]), [0], s).item() == 2.5

    def test_inactive_classes_ignored(self):
        s = self._state([[0.0, 1.0], [5.0, 5.0]], [False, False])
        F = Tensor([[1.0, 3.0]], requires_grad=True)
        loss = p2a_loss(F, [0], s)
        assert loss.item() == 0.0
        backward(loss)
        np.testing.assert_array_equal(F.grad, 0.0)

    def test_gradient_only_into_features(self):
        s = self._state([[0.0, 1.0]], [True])
        F = Tensor([[1.0, 3.0]], requires_grad=True)
        before = s.A_hat.copy()
        backward(p2a_loss(F, [0], s))
        np.testing.assert_allclose(F.grad, [[1.0, 2.0]])
        np.testing.assert_array_equal(s.A_hat, before)


class TestTotalLoss:
    def test_degenerate_weights(self):
        cfg = SarConfig(lambda1=0.0, lambda2=0.0)
        assert sar_total_loss(1.25, 0.5, 2.0, cfg).item() == 1.25

    def test_hand_value(self):
        cfg = SarConfig(lambda1=1.0, lambda2=0.1)
        assert sar_total_loss(1.0, 0.5, 2.0, cfg).item() == pytest.approx(1.7, abs=1e-15)

    def test_defaults(self):
        cfg = SarConfig()
        assert (cfg.lambda1, cfg.lambda2, cfg.tau, cfg.delta, cfg.alpha) == (1.0, 0.1, 0.9, 0.8, 0.999)

    @pytest.mark.parametrize("kw", [{"lambda1": -1}, {"tau": 0.0}, {"delta": 1.5}, {"alpha": 1.1}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SarConfig(**kw)


def test_full_objective_gradient_two_class_toy():
    """Gradient of ce + l1*aux + l2*p2a on a 2-class, D=3 toy instance."""
    from anchorreg.grad_core import softmax_ce
    from anchorreg.nn import MLP

    rng = np.random.default_rng(8)
    f = MLP(2, [5], 3, rng, "f")
    g = Linear(3, 2, rng, "g")
    head = EmbeddingHead(3, rng)
    anchors = generate_anchors("ND", 2, 3, seed=1)
    X = rng.uniform(-1, 1, (6, 2))
    y = np.array([0, 1, 0, 1, 1, 0])
    # zero-initialised biases put hidden units exactly on the ReLU kink
    for p in f.parameters() + g.parameters() + head.parameters():
        if p.name.endswith(".b"):
            p.value[...] = rng.uniform(0.2, 0.5, p.value.shape)
    state = SemanticAnchorState.empty(2, 3, 0.999)
    state = ema_update(state, rng.normal(size=(2, 3)), [0.9, 0.9], 0.8)
    cfg = SarConfig()
    w = compute_reweights(anchor_confidences(g, embed_anchors(head, anchors)), tau=1.0)

    def loss_fn():
        F = f(Tensor(X))
        ce, _ = softmax_ce(g(F), y)
        aux = aux_ce_loss(g(embed_anchors(head, anchors)), w)
        return sar_total_loss(ce, aux, p2a_loss(F, y, state), cfg)

    params = f.parameters() + g.parameters() + head.parameters()
    zero_grad(params)
    assert finite_diff_check(loss_fn, params, eps=1e-4) <= 1e-4
