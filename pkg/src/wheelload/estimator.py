"""The trained wheel-load estimator: network, conditioning, and scaling.

Bundles the Bayesian MLP, the optional conditioning encoder, and the
per-channel standardization fitted on the training split. The network
input is the standardized current frame concatenated with the previous
frame (the pair convention: x_prev = x at a segment start), and the
output is destandardized back to newtons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .bnn import BayesianMLP, NetworkSpec, PriorSpec
from .dpc import DPCEncoder
from .errors import InsufficientSamples, ValidationError

ABLATION_MODES = ("full", "basic-model", "no-bayes", "no-dpc", "no-nsdropout")


@dataclass(frozen=True)
class Standardizer:
    """Affine per-channel scaling fitted on the training inputs/labels."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, inputs: np.ndarray, labels: np.ndarray) -> "Standardizer":
        x_std = inputs.std(axis=0)
        y_std = float(labels.std())
        return cls(x_mean=inputs.mean(axis=0),
                   x_std=np.maximum(x_std, 1e-12),
                   y_mean=float(labels.mean()),
                   y_std=max(y_std, 1e-12))

    def transform_x(self, inputs: np.ndarray) -> np.ndarray:
        return (inputs - self.x_mean) / self.x_std

    def transform_y(self, labels: np.ndarray) -> np.ndarray:
        return (labels - self.y_mean) / self.y_std

    def inverse_y(self, values: np.ndarray) -> np.ndarray:
        return values * self.y_std + self.y_mean


def pair_inputs(x_cur: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Previous-frame copies of a contiguous segment (first row repeats)."""
    x_prev = np.vstack([x_cur[:1], x_cur[:-1]])
    return x_cur, x_prev


class WheelLoadEstimator:
    """End-to-end predictive model for one suspension corner.

    The three machinery switches default from the ablation label but can
    be overridden independently, so combined reductions (down to a plain
    deterministic MLP) stay expressible.
    """

    def __init__(self, spec: NetworkSpec, scaler: Standardizer,
                 corner: str, ablation: str, seed: int,
                 prior: PriorSpec = PriorSpec(),
                 use_bayes: bool | None = None,
                 use_dpc: bool | None = None,
                 use_dropout: bool | None = None):
        if ablation not in ABLATION_MODES:
            raise ValidationError(f"unknown ablation mode {ablation!r}")
        self.spec = spec
        self.scaler = scaler
        self.corner = corner
        self.ablation = ablation
        self.prior = prior
        self.seed = seed
        self.use_bayes = (ablation != "no-bayes") if use_bayes is None \
            else use_bayes
        self.use_dpc = (ablation != "no-dpc") if use_dpc is None else use_dpc
        self.use_dropout = (ablation != "no-nsdropout") if use_dropout is None \
            else use_dropout
        init_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0]))
        self.net = BayesianMLP(spec, init_rng, prior,
                               frozen_sigma=not self.use_bayes,
                               use_dropout=self.use_dropout)
        self.dpc = DPCEncoder(spec.hidden, init_rng) if self.use_dpc else None

    # -- tape-level forward used by the trainer ---------------------------

    def film_for(self, x_std: Var, x_prev_std: Var):
        if self.dpc is None:
            return None
        return self.dpc.encode(x_std, x_prev_std)

    def forward_std(self, x_std: Var, x_prev_std: Var,
                    rng: np.random.Generator | None, mode: str,
                    dropout: str | None = None) -> Var:
        """Standardized-space prediction for standardized frame pairs."""
        pair = ad.concat([x_std, x_prev_std], axis=-1)
        film = self.film_for(x_std, x_prev_std)
        return self.net.forward(pair, film=film, rng=rng, mode=mode,
                                dropout=dropout)

    def parameters(self) -> list[Var]:
        params = self.net.parameters()
        if self.dpc is not None:
            params += self.dpc.parameters()
        return params

    def named_parameters(self) -> dict[str, Var]:
        named = self.net.named_parameters()
        if self.dpc is not None:
            named.update(self.dpc.named_parameters())
        return named

    def kl(self) -> Var:
        return self.net.kl()

    # -- numpy-level prediction APIs --------------------------------------

    def _standardize_pair(self, x_cur: np.ndarray,
                          x_prev: np.ndarray) -> tuple[Var, Var]:
        return (Var(self.scaler.transform_x(x_cur)),
                Var(self.scaler.transform_x(x_prev)))

    def predict_mean(self, x_cur: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
        """Deterministic point prediction (posterior means, expected mask)."""
        xs, xp = self._standardize_pair(x_cur, x_prev)
        out = self.forward_std(xs, xp, rng=None, mode="mean")
        return self.scaler.inverse_y(out.value[:, 0])

    def predictive_posterior(self, x_cur: np.ndarray, x_prev: np.ndarray,
                             n_samples: int, rng: np.random.Generator
                             ) -> tuple[np.ndarray, np.ndarray]:
        """Monte-Carlo predictive mean and std in newtons."""
        if n_samples < 2:
            raise InsufficientSamples(
                f"need at least 2 posterior samples, got {n_samples}")
        xs, xp = self._standardize_pair(x_cur, x_prev)
        dropout = "sample" if (self.net.use_dropout
                               and self.net.site.active_in_inference) else "off"
        draws = np.empty((n_samples, x_cur.shape[0]))
        for i in range(n_samples):
            out = self.forward_std(xs, xp, rng=rng, mode="sampled",
                                   dropout=dropout)
            draws[i] = out.value[:, 0]
        mean = self.scaler.inverse_y(draws.mean(axis=0))
        std = draws.std(axis=0, ddof=1) * self.scaler.y_std
        return mean, std
