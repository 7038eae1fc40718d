import numpy as np
import pytest

from greenfed import nn


def loss_at(params, x, labels):
    logits, _ = nn.forward_train(params, x)
    losses, _ = nn.softmax_cross_entropy(logits, labels)
    return losses.mean()


class TestForward:
    def test_zero_weights_give_zero_logits(self, tiny_arch, rng):
        params = {k: np.zeros(s) for k, s in tiny_arch.param_shapes().items()}
        params["bn1.g"][:] = 1.0
        params["bn2.g"][:] = 1.0
        x = rng.standard_normal((3, 1, 4, 4))
        logits, _ = nn.forward_train(params, x)
        assert np.allclose(logits, 0.0)

    def test_identity_dense_layer(self):
        x = np.array([[1.5, -2.0], [0.25, 3.0]])
        y, _ = nn.dense_forward(x, np.eye(2), np.zeros(2), "fc")
        assert np.allclose(y, x)

    def test_two_layer_dense_hand_computed(self):
        # hand calculation: h = W1 x + b1 = [-0.5, -1.5]; y = W2 h + b2
        w1 = np.array([[1.0, 2.0], [3.0, 4.0]])
        b1 = np.array([0.5, -0.5])
        w2 = np.array([[2.0, 0.0], [1.0, 1.0]])
        b2 = np.array([0.0, 1.0])
        x = np.array([[1.0, -1.0]])
        h, _ = nn.dense_forward(x, w1, b1, "fc1")
        y, _ = nn.dense_forward(h, w2, b2, "fc2")
        assert np.allclose(y, [[-1.0, -1.0]])

    def test_shape_mismatch_names_layer(self, tiny_arch, rng):
        params = tiny_arch.init_params(rng)
        with pytest.raises(nn.ShapeMismatchError) as err:
            nn.forward_train(params, rng.standard_normal((2, 3, 4, 4)))
        assert err.value.layer == "input"

    def test_logit_shape(self, tiny_arch, rng):
        params = tiny_arch.init_params(rng)
        logits, _ = nn.forward_train(params, rng.standard_normal((5, 1, 4, 4)))
        assert logits.shape == (5, 4)


class TestSgdStep:
    def setup_method(self):
        self.params = {"w": np.array([1.0])}
        self.vel = {"w": np.zeros(1)}

    def test_zero_gradient_leaves_model(self):
        cfg = nn.SgdConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
        p, _ = nn.sgd_step(self.params, {"w": np.zeros(1)}, cfg, self.vel)
        assert p["w"][0] == 1.0

    def test_direct_formula(self):
        cfg = nn.SgdConfig(learning_rate=0.001, momentum=0.0, weight_decay=0.0)
        p, _ = nn.sgd_step(self.params, {"w": np.array([2.0])}, cfg, self.vel)
        assert p["w"][0] == pytest.approx(0.998)

    def test_two_step_momentum_hand_unrolled(self):
        # lr=0.1, momentum=0.9, g=0.5 twice:
        # v1=0.5, w1=0.95; v2=0.9*0.5+0.5=0.95, w2=0.95-0.095=0.855
        cfg = nn.SgdConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
        g = {"w": np.array([0.5])}
        p, v = nn.sgd_step(self.params, g, cfg, self.vel)
        p, v = nn.sgd_step(p, g, cfg, v)
        assert p["w"][0] == pytest.approx(0.855, abs=1e-12)

    def test_non_finite_gradient_names_layer(self):
        cfg = nn.SgdConfig()
        with pytest.raises(nn.NonFiniteGradientError) as err:
            nn.sgd_step(self.params, {"w": np.array([np.nan])}, cfg, self.vel)
        assert err.value.layer == "w"

    def test_shape_mismatch(self):
        cfg = nn.SgdConfig()
        with pytest.raises(nn.ShapeMismatchError):
            nn.sgd_step(self.params, {"w": np.zeros(3)}, cfg, self.vel)


class TestGradients:
    @pytest.mark.parametrize("layer", [
        "conv1.w", "conv1.b", "bn1.g", "bn1.b",
        "conv2.w", "conv2.b", "bn2.g", "bn2.b",
        "fc.w", "fc.b",
    ])
    def test_finite_difference(self, tiny_arch, rng, layer):
        params = tiny_arch.init_params(rng)
        x = rng.standard_normal((5, 1, 4, 4))
        labels = rng.integers(0, 4, size=5)
        _, grads = nn.loss_and_grads(params, x, labels)
        eps = 1e-4
        flat = params[layer].ravel()
        check = rng.choice(flat.size, size=min(flat.size, 6), replace=False)
        for i in check:
            probe = {k: v.copy() for k, v in params.items()}
            probe[layer].ravel()[i] += eps
            up = loss_at(probe, x, labels)
            probe[layer].ravel()[i] -= 2 * eps
            down = loss_at(probe, x, labels)
            fd = (up - down) / (2 * eps)
            an = grads[layer].ravel()[i]
            assert abs(fd - an) / max(1e-8, abs(fd), abs(an)) <= 1e-3


class TestLocalTrain:
    def test_zero_learning_rate_preserves_model(self, tiny_arch, rng):
        params = tiny_arch.init_params(rng)
        cfg = nn.SgdConfig(learning_rate=0.0, weight_decay=0.0, epochs=1, batch_size=1)
        x = rng.standard_normal((1, 1, 4, 4))
        y = np.array([2])
        initial_loss = loss_at(params, x, y)
        trained, losses, seen = nn.local_train(params, x, y, cfg, np.random.default_rng(0))
        for name in params:
            assert np.array_equal(trained[name], params[name])
        assert losses[0] == pytest.approx(initial_loss)
        assert seen == 1

    def test_descent_on_separable_data(self, tiny_arch, rng):
        n = 20
        x = rng.standard_normal((n, 1, 4, 4))
        y = (x.mean(axis=(1, 2, 3)) > 0).astype(int)
        x[y == 1] += 1.0
        params = tiny_arch.init_params(rng)
        initial = loss_at(params, x, y)
        cfg = nn.SgdConfig(learning_rate=0.05, epochs=50, batch_size=10)
        _, losses, _ = nn.local_train(params, x, y, cfg, np.random.default_rng(0))
        assert np.mean(losses) < initial

    def test_examples_seen_matches_partition(self, tiny_arch, rng):
        x = rng.standard_normal((13, 1, 4, 4))
        y = rng.integers(0, 4, size=13)
        params = tiny_arch.init_params(rng)
        cfg = nn.SgdConfig(learning_rate=0.01, epochs=3, batch_size=5)
        _, losses, seen = nn.local_train(params, x, y, cfg, np.random.default_rng(0))
        assert seen == 13
        assert len(losses) == 13

    def test_empty_partition_rejected(self, tiny_arch, rng):
        params = tiny_arch.init_params(rng)
        with pytest.raises(ValueError):
            nn.local_train(params, np.empty((0, 1, 4, 4)), np.empty(0, dtype=int),
                           nn.SgdConfig(), np.random.default_rng(0))

    def test_deterministic_given_seed(self, tiny_arch, rng):
        x = rng.standard_normal((16, 1, 4, 4))
        y = rng.integers(0, 4, size=16)
        params = tiny_arch.init_params(rng)
        cfg = nn.SgdConfig(learning_rate=0.01, epochs=2, batch_size=4)
        a, _, _ = nn.local_train(params, x, y, cfg, np.random.default_rng(42))
        b, _, _ = nn.local_train(params, x, y, cfg, np.random.default_rng(42))
        for name in a:
            assert np.array_equal(a[name], b[name])

    def test_budget_caps_batches(self, tiny_arch, rng):
        x = rng.standard_normal((20, 1, 4, 4))
        y = rng.integers(0, 4, size=20)
        params = tiny_arch.init_params(rng)
        cfg = nn.SgdConfig(learning_rate=0.01, epochs=2, batch_size=5)
        _, losses, seen = nn.local_train(params, x, y, cfg, np.random.default_rng(0),
                                         max_batches=2)
        assert seen == 10


def direct_bn_stats(params, images):
    """One-pass oracle for the cumulative BN statistics."""
    a1, _ = nn.conv2d_forward(images, params["conv1.w"], params["conv1.b"], "conv1")
    stats = nn.BnStats()
    stats.mean["bn1"] = a1.mean(axis=(0, 2, 3))
    stats.var["bn1"] = a1.var(axis=(0, 2, 3))
    stats.count["bn1"] = a1.shape[0] * a1.shape[2] * a1.shape[3]
    h1 = nn.bn_forward_eval(a1, params["bn1.g"], params["bn1.b"],
                            stats.mean["bn1"], stats.var["bn1"])
    p1, _ = nn.maxpool2_forward(np.maximum(h1, 0.0))
    a2, _ = nn.conv2d_forward(p1, params["conv2.w"], params["conv2.b"], "conv2")
    stats.mean["bn2"] = a2.mean(axis=(0, 2, 3))
    stats.var["bn2"] = a2.var(axis=(0, 2, 3))
    stats.count["bn2"] = a2.shape[0] * a2.shape[2] * a2.shape[3]
    return stats


class TestCollectSbnStats:
    def test_single_client_matches_direct(self, tiny_arch, rng):
        params = tiny_arch.init_params(rng)
        images = rng.standard_normal((30, 1, 4, 4))
        got = nn.collect_sbn_stats(params, [images], batch_size=7)
        want = direct_bn_stats(params, images)
        for layer in ("bn1", "bn2"):
            assert np.allclose(got.mean[layer], want.mean[layer], atol=1e-9)
            assert np.allclose(got.var[layer], want.var[layer], atol=1e-9)

    def test_duplicated_client_same_stats(self, tiny_arch, rng):
        params = tiny_arch.init_params(rng)
        images = rng.standard_normal((10, 1, 4, 4))
        one = nn.collect_sbn_stats(params, [images])
        two = nn.collect_sbn_stats(params, [images, images])
        for layer in ("bn1", "bn2"):
            assert np.allclose(one.mean[layer], two.mean[layer], atol=1e-9)
            assert np.allclose(one.var[layer], two.var[layer], atol=1e-9)

    def test_three_clients_vs_concatenated_oracle(self, tiny_arch, rng):
        params = tiny_arch.init_params(rng)
        parts = [rng.standard_normal((n, 1, 4, 4)) for n in (11, 4, 23)]
        got = nn.collect_sbn_stats(params, parts, batch_size=5)
        want = direct_bn_stats(params, np.concatenate(parts))
        for layer in ("bn1", "bn2"):
            assert np.allclose(got.mean[layer], want.mean[layer], atol=1e-9)
            assert np.allclose(got.var[layer], want.var[layer], atol=1e-9)

    def test_order_independence(self, tiny_arch, rng):
        params = tiny_arch.init_params(rng)
        parts = [rng.standard_normal((n, 1, 4, 4)) for n in (7, 13, 5)]
        fwd = nn.collect_sbn_stats(params, parts)
        rev = nn.collect_sbn_stats(params, parts[::-1])
        for layer in ("bn1", "bn2"):
            assert np.allclose(fwd.mean[layer], rev.mean[layer], atol=1e-9)
            assert np.allclose(fwd.var[layer], rev.var[layer], atol=1e-9)

    def test_sbn_training_does_not_touch_global_stats(self, tiny_arch, rng):
        params = tiny_arch.init_params(rng)
        images = rng.standard_normal((12, 1, 4, 4))
        stats = nn.collect_sbn_stats(params, [images])
        before = {l: (stats.mean[l].copy(), stats.var[l].copy()) for l in stats.mean}
        cfg = nn.SgdConfig(learning_rate=0.01, epochs=2, batch_size=4)
        nn.local_train(params, images, rng.integers(0, 4, 12), cfg, np.random.default_rng(0))
        for layer, (m, v) in before.items():
            assert np.array_equal(stats.mean[layer], m)
            assert np.array_equal(stats.var[layer], v)
