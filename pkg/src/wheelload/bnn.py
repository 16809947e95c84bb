"""Variational Bayesian MLP building blocks.

Weights carry factorized Gaussian posteriors sampled with the
reparameterization trick (w = mu + softplus(rho) * eps, eps frozen on the
tape), regularized toward a zero-mean Gaussian prior by a closed-form KL.
Bounded multiplicative noise (half-sigmoid masks in (1/2, 1)) stands in
for zeroing dropout so no activation is ever fully switched off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .dpc import modulate
from .errors import InsufficientSamples, ShapeMismatch, ValidationError


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean Gaussian prior over weights, weakly informative by default."""

    tau: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("prior scale tau must be positive")


@dataclass(frozen=True)
class NSDropoutSite:
    sigma: float = 1.0
    active_in_inference: bool = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("dropout noise scale must be positive")


@dataclass(frozen=True)
class NetworkSpec:
    """Main estimator topology: current + previous frame in, load out.

    Every hidden activation is followed by a feature-wise modulation site
    and a bounded-noise site.
    """

    input_width: int = 12
    hidden: tuple[int, ...] = (64, 64, 64, 64)
    output_width: int = 1
    ns_sigma: float = 1.0
    dropout_active_inference: bool = True

    def __post_init__(self):
        if len(self.hidden) < 1:
            raise ValidationError("at least one hidden layer is required")
        if self.input_width <= 0 or self.output_width <= 0 \
                or any(w <= 0 for w in self.hidden):
            raise ValidationError("layer widths must be positive")

    @property
    def film_width(self) -> int:
        return sum(self.hidden)


def softplus_inverse(y: float) -> float:
    return float(np.log(np.expm1(y)))


class VariationalLinear:
    """Affine layer with Gaussian posteriors on weights and biases."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 prior: PriorSpec = PriorSpec(), sigma_init: float = 0.05,
                 frozen_sigma: bool = False):
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.frozen_sigma = frozen_sigma
        rho0 = softplus_inverse(sigma_init * prior.tau)
        self.mu_w = Var(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)))
        self.rho_w = Var(np.full((fan_in, fan_out), rho0))
        self.mu_b = Var(np.zeros(fan_out))
        self.rho_b = Var(np.full(fan_out, rho0))

    def sample(self, rng: np.random.Generator) -> tuple[Var, Var]:
        """Draw concrete weights; differentiable w.r.t. mu and rho."""
        if self.frozen_sigma:
            return self.mu_w, self.mu_b
        eps_w = Var(rng.standard_normal((self.fan_in, self.fan_out)))
        eps_b = Var(rng.standard_normal(self.fan_out))
        w = ad.add(self.mu_w, ad.mul(ad.softplus(self.rho_w), eps_w))
        b = ad.add(self.mu_b, ad.mul(ad.softplus(self.rho_b), eps_b))
        return w, b

    def mean(self) -> tuple[Var, Var]:
        return self.mu_w, self.mu_b

    def kl(self, prior: PriorSpec) -> Var:
        if self.frozen_sigma:
            return Var(0.0)
        total = None
        for mu, rho in ((self.mu_w, self.rho_w), (self.mu_b, self.rho_b)):
            sigma = ad.softplus(rho)
            term = ad.add(
                ad.sub(Var(np.log(prior.tau)), ad.log(sigma)),
                ad.mul(ad.add(ad.square(sigma), ad.square(mu)),
                       1.0 / (2.0 * prior.tau ** 2)))
            part = ad.vsum(ad.sub(term, 0.5))
            total = part if total is None else ad.add(total, part)
        return total

    def parameters(self) -> list[Var]:
        if self.frozen_sigma:
            return [self.mu_w, self.mu_b]
        return [self.mu_w, self.rho_w, self.mu_b, self.rho_b]

    def parameter_names(self) -> list[str]:
        if self.frozen_sigma:
            return ["mu_w", "mu_b"]
        return ["mu_w", "rho_w", "mu_b", "rho_b"]


def sample_weights(layer: VariationalLinear,
                   rng: np.random.Generator) -> tuple[Var, Var]:
    return layer.sample(rng)


def kl_to_prior(layer: VariationalLinear, prior: PriorSpec) -> Var:
    return layer.kl(prior)


def ns_dropout_mask(shape, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Bounded multiplicative mask: half-sigmoid of a Gaussian draw.

    Every element lies strictly in (1/2, 1); the symmetry of the sigmoid
    under negation of the draw puts the mean at 3/4.
    """
    if sigma <= 0:
        raise ValidationError("dropout noise scale must be positive")
    h = rng.normal(0.0, sigma, shape)
    s = np.where(h >= 0,
                 1.0 / (1.0 + np.exp(-np.abs(h))),
                 np.exp(-np.abs(h)) / (1.0 + np.exp(-np.abs(h))))
    return 0.5 * s + 0.5


def apply_ns_dropout(x: Var, site: NSDropoutSite,
                     rng: np.random.Generator) -> Var:
    """Elementwise product with a fresh bounded mask; never zeroes a unit."""
    mask = ns_dropout_mask(x.value.shape, site.sigma, rng)
    return ad.mul(x, Var(mask))


MASK_MEAN = 0.75


class BayesianMLP:
    """Tanh MLP with variational layers, modulation, and bounded noise.

    ``use_dropout=False`` removes the noise sites entirely (masks become
    one); ``frozen_sigma=True`` collapses every posterior to its mean and
    drops the KL, giving point-estimate weights.
    """

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator,
                 prior: PriorSpec = PriorSpec(), frozen_sigma: bool = False,
                 use_dropout: bool = True):
        self.spec = spec
        self.prior = prior
        self.use_dropout = use_dropout
        self.site = NSDropoutSite(sigma=spec.ns_sigma,
                                  active_in_inference=spec.dropout_active_inference)
        widths = (spec.input_width,) + spec.hidden + (spec.output_width,)
        self.layers = [
            VariationalLinear(widths[i], widths[i + 1], rng, prior,
                              frozen_sigma=frozen_sigma)
            for i in range(len(widths) - 1)
        ]

    @property
    def frozen_sigma(self) -> bool:
        return self.layers[0].frozen_sigma

    def forward(self, x: Var, film=None, rng: np.random.Generator | None = None,
                mode: str = "sampled", dropout: str | None = None) -> Var:
        """Forward pass: affine -> tanh -> modulate -> noise per hidden layer.

        mode 'sampled' draws weights (and masks when dropout='sample');
        mode 'mean' uses posterior means with the deterministic 3/4 mask.
        """
        if x.value.ndim != 2 or x.value.shape[1] != self.spec.input_width:
            raise ShapeMismatch(
                f"expected input (n, {self.spec.input_width}), got {x.value.shape}")
        if film is not None and len(film) != len(self.spec.hidden):
            raise ShapeMismatch(
                f"expected {len(self.spec.hidden)} modulation pairs, got {len(film)}")
        if dropout is None:
            dropout = "sample" if mode == "sampled" else "mean"
        if mode not in ("sampled", "mean"):
            raise ValidationError(f"unknown forward mode {mode!r}")
        if mode == "sampled" and rng is None:
            raise ValidationError("sampled mode requires an rng")

        h = x
        for i, layer in enumerate(self.layers[:-1]):
            w, b = layer.sample(rng) if mode == "sampled" else layer.mean()
            h = ad.tanh(ad.add(ad.matmul(h, w), b))
            if film is not None:
                gamma, beta = film[i]
                h = modulate(h, gamma, beta)
            if self.use_dropout and dropout != "off":
                if dropout == "sample":
                    h = apply_ns_dropout(h, self.site, rng)
                else:
                    h = ad.mul(h, MASK_MEAN)
        w, b = (self.layers[-1].sample(rng) if mode == "sampled"
                else self.layers[-1].mean())
        return ad.add(ad.matmul(h, w), b)

    def kl(self) -> Var:
        total = self.layers[0].kl(self.prior)
        for layer in self.layers[1:]:
            total = ad.add(total, layer.kl(self.prior))
        return total

    def parameters(self) -> list[Var]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Var]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, var in zip(layer.parameter_names(), layer.parameters()):
                out[f"net.layer{i}.{name}"] = var
        return out


def predictive_posterior(model: BayesianMLP, x: Var, n_samples: int,
                         rng: np.random.Generator, film_source=None
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo predictive mean and unbiased std per output element.

    Resamples weights every draw, and masks too when the noise site is
    active at inference. ``film_source``, when given, is called once per
    draw to produce the modulation pairs.
    """
    if n_samples < 2:
        raise InsufficientSamples(
            f"need at least 2 posterior samples, got {n_samples}")
    draws = np.empty((n_samples,) + (x.value.shape[0], model.spec.output_width))
    dropout = "sample" if (model.use_dropout
                           and model.site.active_in_inference) else "off"
    for i in range(n_samples):
        film = film_source() if film_source is not None else None
        out = model.forward(x, film=film, rng=rng, mode="sampled",
                            dropout=dropout)
        draws[i] = out.value
    return draws.mean(axis=0), draws.std(axis=0, ddof=1)
