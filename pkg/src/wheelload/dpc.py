"""Damper-characteristic conditioning encoder.

Two deterministic pathways read the current state and its one-step
difference: one learns a nonlinear damping representation, the other a
sigmoid gate acting as a control valve on it. A zero-initialized affine
head turns the gated representation into per-layer feature-wise
modulation pairs (gamma, beta), with gamma parameterized residually
(1 + raw) so the whole encoder is an exact identity before training.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ShapeMismatch

# one (gamma, beta) pair per modulated hidden layer
FiLMParams = list[tuple[Var, Var]]


class DenseLayer:
    """Deterministic affine layer; init is Glorot-normal or exact zero."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)),
                           (fan_in, fan_out))
        self.w = Var(w)
        self.b = Var(np.zeros(fan_out))

    def __call__(self, x: Var) -> Var:
        return ad.add(ad.matmul(x, self.w), self.b)

    def parameters(self) -> list[Var]:
        return [self.w, self.b]


class _TanhMLP:
    def __init__(self, widths: tuple[int, ...], rng: np.random.Generator):
        self.layers = [DenseLayer(widths[i], widths[i + 1], rng)
                       for i in range(len(widths) - 1)]

    def __call__(self, x: Var) -> Var:
        h = x
        for layer in self.layers[:-1]:
            h = ad.tanh(layer(h))
        return self.layers[-1](h)

    def parameters(self) -> list[Var]:
        return [p for layer in self.layers for p in layer.parameters()]


def delta_state(x_t: Var, x_prev: Var) -> Var:
    """One-step state difference; callers pass x_prev = x_t at a segment
    start so the first difference is zero."""
    if x_t.value.shape != x_prev.value.shape:
        raise ShapeMismatch(
            f"state shapes differ: {x_t.value.shape} vs {x_prev.value.shape}")
    return ad.sub(x_t, x_prev)


class DPCEncoder:
    """State-conditioned generator of feature-wise modulation pairs."""

    def __init__(self, film_widths: tuple[int, ...], rng: np.random.Generator,
                 state_width: int = 6, repr_width: int = 32,
                 hidden: tuple[int, ...] = (32, 32)):
        self.state_width = state_width
        self.repr_width = repr_width
        self.film_widths = tuple(film_widths)
        self.mlp_d = _TanhMLP((2 * state_width,) + tuple(hidden) + (repr_width,),
                              rng)
        self.mlp_g = _TanhMLP((state_width,) + tuple(hidden) + (repr_width,), rng)
        self.head = DenseLayer(repr_width, 2 * sum(film_widths), rng,
                               zero_init=True)

    def damping_representation(self, dx: Var, x: Var) -> Var:
        """Nonlinear damping features from the state and its difference."""
        if dx.value.shape != x.value.shape:
            raise ShapeMismatch(
                f"delta shape {dx.value.shape} does not match state "
                f"{x.value.shape}")
        return self.mlp_d(ad.concat([dx, x], axis=-1))

    def gate(self, x: Var) -> Var:
        """Sigmoid valve in (0, 1); depends on the current state only."""
        return ad.sigmoid(self.mlp_g(x))

    def film_params(self, g: Var, d: Var) -> FiLMParams:
        """Per-layer (gamma, beta) pairs from the gated representation."""
        if g.value.shape != d.value.shape:
            raise ShapeMismatch(
                f"gate shape {g.value.shape} does not match representation "
                f"{d.value.shape}")
        raw = self.head(ad.mul(g, d))
        pairs = []
        offset = 0
        for width in self.film_widths:
            raw_gamma = _slice_cols(raw, offset, width)
            beta = _slice_cols(raw, offset + width, width)
            pairs.append((ad.add(raw_gamma, 1.0), beta))
            offset += 2 * width
        return pairs

    def encode(self, x: Var, x_prev: Var) -> FiLMParams:
        dx = delta_state(x, x_prev)
        return self.film_params(self.gate(x), self.damping_representation(dx, x))

    def parameters(self) -> list[Var]:
        return (self.mlp_d.parameters() + self.mlp_g.parameters()
                + self.head.parameters())

    def named_parameters(self) -> dict[str, Var]:
        out = {}
        for branch, obj in (("mlp_d", self.mlp_d), ("mlp_g", self.mlp_g)):
            for i, layer in enumerate(obj.layers):
                out[f"dpc.{branch}.layer{i}.w"] = layer.w
                out[f"dpc.{branch}.layer{i}.b"] = layer.b
        out["dpc.head.w"] = self.head.w
        out["dpc.head.b"] = self.head.b
        return out


def _slice_cols(x: Var, start: int, width: int) -> Var:
    """Column slice as a tape-aware operation (a thin concat inverse)."""
    total = x.value.shape[-1]
    if start + width > total:
        raise ShapeMismatch(
            f"slice [{start}:{start + width}] exceeds width {total}")
    out = Var(x.value[..., start:start + width].copy())

    def pull(g):
        full = np.zeros_like(x.value)
        full[..., start:start + width] = g
        return full

    return ad.record_op(out, [(x, pull)])


def modulate(features: Var, gamma: Var, beta: Var) -> Var:
    """Feature-wise affine transform gamma * F + beta, broadcast over batch."""
    if gamma.value.shape[-1] != features.value.shape[-1] \
            or beta.value.shape[-1] != features.value.shape[-1]:
        raise ShapeMismatch(
            f"modulation widths ({gamma.value.shape[-1]}, {beta.value.shape[-1]}) "
            f"do not match features {features.value.shape[-1]}")
    return ad.add(ad.mul(gamma, features), beta)
