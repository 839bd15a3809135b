import numpy as np
import pytest

from bac.behavior import BehaviorModel, Rollout, autoencoder_sizes, estimate_policy_behavior
from bac.numerics import MlpParams, finite_difference_gradient, mlp_backward, mlp_forward
from tests.helpers import max_relative_error


def model(seed=0, s=3, a=2, **kw):
    return BehaviorModel.create(s, a, np.random.default_rng(seed), **kw)


def cluster(rng, center, width, n, s=3, a=2):
    x = rng.normal(center, width, size=(n, s + a))
    return Rollout(x[:, :s], x[:, s:])


class TestBehaviorValue:
    def test_topology(self):
        assert autoencoder_sizes(5) == [5, 10, 3, 10, 5]
        m = model()
        assert m.width == 5 and m.autoencoder.output_dim == 5

    def test_perfect_reconstruction_is_zero(self):
        m = model()
        # an identity map: one linear layer with the identity matrix
        m.autoencoder = MlpParams([np.eye(5)], [np.zeros(5)], ["linear"])
        assert m.behavior_value(np.ones(3), np.ones(2)) == 0.0

    def test_matches_explicit_squared_error(self):
        m = model(1)
        rng = np.random.default_rng(2)
        s, a = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        x = np.concatenate([s, a], axis=1)
        recon, _ = mlp_forward(m.autoencoder, x)
        np.testing.assert_allclose(m.behavior_value(s, a), ((recon - x) ** 2).sum(axis=1), rtol=1e-14)
        assert m.behavior_value(s, a).min() >= 0

    def test_bounds_normalization(self):
        lo, hi = -2 * np.ones(5), 2 * np.ones(5)
        m = model(3, input_low=lo, input_high=hi)
        plain = model(3)
        s, a = np.full(3, 2.0), np.full(2, -2.0)
        # +2 maps to +1 and -2 to -1
        np.testing.assert_allclose(m.behavior_value(s, a), plain.behavior_value(np.ones(3), -np.ones(2)))

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            model().behavior_value(np.ones(2), np.ones(2))

    def test_normalized_in_unit_interval(self):
        m = model(4)
        rng = np.random.default_rng(5)
        for _ in range(20):
            v = m.normalized_behavior_value(rng.normal(size=(8, 3)) * 3, rng.normal(size=(8, 2)))
            assert np.all(v >= 0) and np.all(v <= 1)
        assert m.running_max > 0

    def test_normalized_without_update_leaves_max(self):
        m = model(4)
        m.running_max = 1e-9
        m.normalized_behavior_value(np.ones((2, 3)), np.ones((2, 2)), update=False)
        assert m.running_max == 1e-9


class TestTraining:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            m = model(int(rng.integers(1 << 30)))
            x = rng.normal(size=(6, 5))
            recon, cache = mlp_forward(m.autoencoder, x)
            grads, _ = mlp_backward(m.autoencoder, cache, 2.0 * (recon - x) / x.shape[0])

            def f(v):
                out, _ = mlp_forward(m.autoencoder.with_vector(v), x)
                return float(np.mean(np.sum((out - x) ** 2, axis=1)))

            fd = finite_difference_gradient(f, m.autoencoder.to_vector())
            assert max_relative_error(grads.to_vector(), fd) <= 1e-4

    def test_training_lowers_loss_and_resets_max(self):
        rng = np.random.default_rng(7)
        data = cluster(rng, 0.5, 0.1, 512)
        m = model(8, train_epochs=20)
        before = m.reconstruction_loss(data.pairs())
        m.running_max = 3.0
        m.train(data)
        assert m.reconstruction_loss(data.pairs()) < 0.5 * before
        assert m.running_max == 0.0

    def test_rejects_non_finite(self):
        m = model()
        with pytest.raises(ValueError):
            m.train(Rollout(np.full((2, 3), np.nan), np.zeros((2, 2))))

    def test_discriminates_unseen_cluster(self):
        rng = np.random.default_rng(9)
        width = 0.1
        m = model(10, train_epochs=30)
        m.train(cluster(rng, 0.0, width, 1000))
        near = cluster(rng, 0.0, width, 500)
        far = cluster(rng, 4 * width, width, 500)  # centers 4 widths apart per coordinate
        assert m.behavior_value(far.states, far.actions).mean() > 2 * m.behavior_value(near.states, near.actions).mean()


class TestPolicyBehavior:
    def test_constant_model(self):
        m = model()
        m.autoencoder = MlpParams([np.zeros((5, 5))], [np.zeros(5)], ["linear"])
        r = Rollout(np.ones((3, 3)), np.ones((3, 2)))
        # reconstruction is 0, so psi = |x|^2 = 5
        assert estimate_policy_behavior(m, [r, r]) == 5.0

    def test_order_invariant(self):
        m = model(11)
        rng = np.random.default_rng(12)
        rs = [cluster(rng, 0, 1, int(rng.integers(1, 20))) for _ in range(6)]
        assert estimate_policy_behavior(m, rs) == estimate_policy_behavior(m, rs[::-1])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            estimate_policy_behavior(model(), [])

    def test_rollout_validation(self):
        with pytest.raises(ValueError):
            Rollout(np.ones((3, 2)), np.ones((2, 1)))
