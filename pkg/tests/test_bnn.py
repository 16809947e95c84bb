import numpy as np
import pytest

from wheelload import autodiff as ad
from wheelload.autodiff import Tape, Var
from wheelload.bnn import (
    BayesianMLP,
    NetworkSpec,
    NSDropoutSite,
    PriorSpec,
    VariationalLinear,
    apply_ns_dropout,
    kl_to_prior,
    ns_dropout_mask,
    predictive_posterior,
    sample_weights,
)
from wheelload.errors import InsufficientSamples, ValidationError


class TestSampling:
    def test_degenerate_posterior_returns_mean(self, rng):
        layer = VariationalLinear(3, 2, rng)
        layer.rho_w.value = np.full_like(layer.rho_w.value, -1e4)
        layer.rho_b.value = np.full_like(layer.rho_b.value, -1e4)
        w, b = sample_weights(layer, rng)
        assert np.array_equal(w.value, layer.mu_w.value)
        assert np.array_equal(b.value, layer.mu_b.value)

    def test_fixed_seed_reproducible(self):
        layer = VariationalLinear(4, 4, np.random.default_rng(0))
        w1, _ = sample_weights(layer, np.random.default_rng(5))
        w2, _ = sample_weights(layer, np.random.default_rng(5))
        assert np.array_equal(w1.value, w2.value)

    def test_sample_mean_matches_mu(self):
        layer = VariationalLinear(1, 1, np.random.default_rng(0))
        layer.mu_w.value = np.array([[0.3]])
        layer.rho_w.value = np.array([[np.log(np.expm1(0.2))]])
        rng = np.random.default_rng(123)
        n = 100_000
        draws = np.array([sample_weights(layer, rng)[0].value[0, 0]
                          for _ in range(n)])
        assert draws.mean() == pytest.approx(0.3, abs=3 * 0.2 / np.sqrt(n))

    def test_reparameterization_gradient_of_mean_is_one(self):
        layer = VariationalLinear(1, 1, np.random.default_rng(0))
        rng = np.random.default_rng(7)
        with Tape() as tape:
            w, _ = sample_weights(layer, rng)
            out = ad.vsum(w)
        grads = ad.backward(tape, out)
        assert ad.grad(grads, layer.mu_w)[0, 0] == 1.0


class TestKL:
    def test_zero_at_prior(self, rng):
        layer = VariationalLinear(6, 6, rng, prior=PriorSpec(1.0))
        layer.mu_w.value[:] = 0.0
        layer.mu_b.value[:] = 0.0
        rho_at_prior = np.log(np.expm1(1.0))
        layer.rho_w.value[:] = rho_at_prior
        layer.rho_b.value[:] = rho_at_prior
        assert abs(kl_to_prior(layer, PriorSpec(1.0)).value) < 1e-12

    def test_single_weight_analytic_value(self, rng):
        layer = VariationalLinear(1, 1, rng)
        layer.mu_w.value = np.array([[1.0]])
        layer.rho_w.value = np.array([[np.log(np.expm1(1.0))]])
        layer.mu_b.value = np.array([0.0])
        layer.rho_b.value = np.array([np.log(np.expm1(1.0))])
        assert kl_to_prior(layer, PriorSpec(1.0)).value == pytest.approx(
            0.5, abs=1e-12)

    def test_non_negative_over_random_states(self):
        dev = np.random.default_rng(99)
        mu = dev.normal(0.0, 2.0, 10_000)
        sigma = dev.uniform(0.05, 3.0, 10_000)
        tau = dev.uniform(0.2, 3.0, 10_000)
        kl = np.log(tau / sigma) + (sigma ** 2 + mu ** 2) / (2 * tau ** 2) - 0.5
        assert kl.min() > -1e-12


class TestNSDropout:
    def test_mask_bounds_and_mean(self):
        rng = np.random.default_rng(0)
        mask = ns_dropout_mask((1_000_000,), 1.0, rng)
        assert mask.min() > 0.5
        assert mask.max() < 1.0
        assert mask.mean() == pytest.approx(0.75, abs=0.002)

    def test_sigmoid_midpoint(self):
        # a zero draw maps to 3/4 exactly
        assert 0.5 / (1.0 + np.exp(0.0)) + 0.5 == 0.75

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_mean_across_scales(self, sigma):
        rng = np.random.default_rng(int(sigma * 10))
        mask = ns_dropout_mask((200_000,), sigma, rng)
        tol = 3.0 * mask.std() / np.sqrt(mask.size)
        assert abs(mask.mean() - 0.75) < max(tol, 5e-4)

    def test_apply_preserves_sign_and_range(self, rng):
        x = Var(rng.standard_normal((50, 8)))
        out = apply_ns_dropout(x, NSDropoutSite(sigma=1.0), rng)
        nonzero = x.value != 0
        ratio = out.value[nonzero] / x.value[nonzero]
        assert ratio.min() > 0.5 and ratio.max() < 1.0

    def test_zero_input_stays_zero(self, rng):
        out = apply_ns_dropout(Var(np.zeros((3, 3))), NSDropoutSite(), rng)
        assert np.abs(out.value).max() == 0.0

    def test_tiny_sigma_approaches_three_quarters(self, rng):
        x = Var(np.ones((4, 4)))
        out = apply_ns_dropout(x, NSDropoutSite(sigma=1e-9), rng)
        assert np.abs(out.value - 0.75).max() < 1e-6

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValidationError):
            NSDropoutSite(sigma=0.0)


class TestForward:
    def spec(self):
        return NetworkSpec(input_width=4, hidden=(8, 8), output_width=1)

    def test_reduces_to_plain_mlp(self):
        model = BayesianMLP(self.spec(), np.random.default_rng(0),
                            use_dropout=False)
        for layer in model.layers:
            layer.rho_w.value[:] = -1e4
            layer.rho_b.value[:] = -1e4
        x = Var(np.random.default_rng(1).standard_normal((5, 4)))
        sampled = model.forward(x, rng=np.random.default_rng(2), mode="sampled")
        # manual plain MLP with the mu weights
        h = x.value
        for layer in model.layers[:-1]:
            h = np.tanh(h @ layer.mu_w.value + layer.mu_b.value)
        manual = h @ model.layers[-1].mu_w.value + model.layers[-1].mu_b.value
        assert np.abs(sampled.value - manual).max() < 1e-12

    def test_sampled_mode_reproducible(self):
        model = BayesianMLP(self.spec(), np.random.default_rng(0))
        x = Var(np.ones((3, 4)))
        a = model.forward(x, rng=np.random.default_rng(9), mode="sampled")
        b = model.forward(x, rng=np.random.default_rng(9), mode="sampled")
        assert np.array_equal(a.value, b.value)

    def test_mean_mode_uses_expected_mask(self):
        model = BayesianMLP(self.spec(), np.random.default_rng(0))
        x = Var(np.ones((2, 4)))
        with_dropout = model.forward(x, mode="mean")
        model.use_dropout = False
        without = model.forward(x, mode="mean")
        assert not np.allclose(with_dropout.value, without.value)

    def test_gradients_pass_finite_difference(self):
        model = BayesianMLP(self.spec(), np.random.default_rng(0))
        x0 = np.random.default_rng(1).standard_normal((3, 4))
        eps = {}
        dev = np.random.default_rng(2)

        def bounded(shape):
            # frozen reparameterization noise away from zero keeps every
            # rho gradient component well-scaled for the central-difference
            # comparison
            return (dev.uniform(0.5, 1.5, shape)
                    * np.where(dev.random(shape) < 0.5, -1.0, 1.0))

        for i, layer in enumerate(model.layers):
            eps[i] = (bounded(layer.mu_w.value.shape),
                      bounded(layer.mu_b.value.shape))
        mask_dev = np.random.default_rng(3)
        masks = [0.5 / (1 + np.exp(-mask_dev.normal(0, 1.0, (3, 8)))) + 0.5
                 for _ in range(2)]

        def frozen_forward(target_layer, attr):
            def f(v):
                h = Var(x0)
                for i, layer in enumerate(model.layers[:-1]):
                    mu_w = v if (i == target_layer and attr == "mu_w") \
                        else layer.mu_w
                    rho_w = v if (i == target_layer and attr == "rho_w") \
                        else layer.rho_w
                    w = ad.add(mu_w, ad.mul(ad.softplus(rho_w), Var(eps[i][0])))
                    b = ad.add(layer.mu_b,
                               ad.mul(ad.softplus(layer.rho_b), Var(eps[i][1])))
                    h = ad.tanh(ad.add(ad.matmul(h, w), b))
                    h = ad.mul(h, Var(masks[i]))
                last = len(model.layers) - 1
                mu_w = v if (target_layer == last and attr == "mu_w") \
                    else model.layers[-1].mu_w
                w = ad.add(mu_w, ad.mul(ad.softplus(model.layers[-1].rho_w),
                                        Var(eps[last][0])))
                b = model.layers[-1].mu_b
                return ad.vmean(ad.matmul(h, w))
            return f

        assert ad.finite_diff_check(
            frozen_forward(0, "mu_w"), model.layers[0].mu_w.value) < 1e-5
        assert ad.finite_diff_check(
            frozen_forward(1, "rho_w"), model.layers[1].rho_w.value) < 1e-5


class TestPredictivePosterior:
    def test_degenerate_has_zero_std(self):
        spec = NetworkSpec(input_width=2, hidden=(4,), output_width=1)
        model = BayesianMLP(spec, np.random.default_rng(0), use_dropout=False)
        for layer in model.layers:
            layer.rho_w.value[:] = -1e4
            layer.rho_b.value[:] = -1e4
        mean, std = predictive_posterior(model, Var(np.ones((4, 2))), 8,
                                         np.random.default_rng(1))
        deterministic = model.forward(Var(np.ones((4, 2))), mode="mean",
                                      dropout="off")
        assert np.abs(std).max() == 0.0
        assert np.abs(mean - deterministic.value).max() < 1e-12

    def test_single_weight_linear_std(self):
        spec = NetworkSpec(input_width=1, hidden=(1,), output_width=1)
        model = BayesianMLP(spec, np.random.default_rng(0), use_dropout=False)
        # make the network output exactly the sampled first weight
        first = model.layers[0]
        first.mu_w.value[:] = 0.0
        first.rho_w.value[:] = np.log(np.expm1(1.0))  # sigma = 1
        first.mu_b.value[:] = 0.0
        first.rho_b.value[:] = -1e4
        last = model.layers[1]
        last.mu_w.value[:] = 1.0
        last.rho_w.value[:] = -1e4
        last.mu_b.value[:] = 0.0
        last.rho_b.value[:] = -1e4
        x = Var(np.full((1, 1), 0.05))  # stay in tanh's linear region
        mean, std = predictive_posterior(model, x, 10_000,
                                         np.random.default_rng(3))
        assert std[0, 0] == pytest.approx(0.05, rel=0.05)

    def test_nonzero_spread_with_wide_posterior(self):
        spec = NetworkSpec(input_width=2, hidden=(4,), output_width=1)
        model = BayesianMLP(spec, np.random.default_rng(0))
        for layer in model.layers:
            layer.rho_w.value[:] = np.log(np.expm1(0.1))
        _, std = predictive_posterior(
            model, Var(np.random.default_rng(4).standard_normal((6, 2))),
            100, np.random.default_rng(5))
        assert std.min() > 0.0

    def test_requires_two_samples(self):
        spec = NetworkSpec(input_width=2, hidden=(4,), output_width=1)
        model = BayesianMLP(spec, np.random.default_rng(0))
        with pytest.raises(InsufficientSamples):
            predictive_posterior(model, Var(np.ones((1, 2))), 1,
                                 np.random.default_rng(0))


def test_network_spec_validation():
    with pytest.raises(ValidationError):
        NetworkSpec(hidden=())
    with pytest.raises(ValidationError):
        NetworkSpec(hidden=(0,))
