"""Bit-exact estimator checkpoints.

Single JSON file: topology, ablation mode, standardization, every
parameter array as base64-encoded raw float64 bytes, and the training
rng state. Load followed by save reproduces the bytes exactly.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .bnn import NetworkSpec, PriorSpec
from .errors import CheckpointVersion, ValidationError
from .estimator import Standardizer, WheelLoadEstimator

FORMAT = "wheelload-checkpoint"
VERSION = 1


def _encode(array: np.ndarray) -> dict:
    array = np.ascontiguousarray(array, dtype=np.float64)
    return {"shape": list(array.shape),
            "data": base64.b64encode(array.tobytes()).decode("ascii")}


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype=np.float64).reshape(entry["shape"]).copy()


def checkpoint_dict(estimator: WheelLoadEstimator, rng_state: dict | None,
                    extra: dict | None = None) -> dict:
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "corner": estimator.corner,
        "ablation": estimator.ablation,
        "flags": {"use_bayes": estimator.use_bayes,
                  "use_dpc": estimator.use_dpc,
                  "use_dropout": estimator.use_dropout},
        "seed": estimator.seed,
        "spec": {
            "input_width": estimator.spec.input_width,
            "hidden": list(estimator.spec.hidden),
            "output_width": estimator.spec.output_width,
            "ns_sigma": estimator.spec.ns_sigma,
            "dropout_active_inference": estimator.spec.dropout_active_inference,
        },
        "prior_tau": estimator.prior.tau,
        "scaler": {
            "x_mean": _encode(estimator.scaler.x_mean),
            "x_std": _encode(estimator.scaler.x_std),
            "y_mean": estimator.scaler.y_mean,
            "y_std": estimator.scaler.y_std,
        },
        "params": {name: _encode(var.value)
                   for name, var in estimator.named_parameters().items()},
        "rng_state": rng_state,
        "extra": extra or {},
    }
    return payload


def save_checkpoint(path, estimator: WheelLoadEstimator,
                    rng_state: dict | None = None,
                    extra: dict | None = None) -> None:
    payload = checkpoint_dict(estimator, rng_state, extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[WheelLoadEstimator, dict]:
    """Rebuild an estimator; returns (estimator, full payload)."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != FORMAT:
        raise CheckpointVersion(f"{path}: not a wheelload checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointVersion(
            f"{path}: unsupported checkpoint version {payload.get('version')}")
    spec = NetworkSpec(
        input_width=payload["spec"]["input_width"],
        hidden=tuple(payload["spec"]["hidden"]),
        output_width=payload["spec"]["output_width"],
        ns_sigma=payload["spec"]["ns_sigma"],
        dropout_active_inference=payload["spec"]["dropout_active_inference"])
    scaler = Standardizer(
        x_mean=_decode(payload["scaler"]["x_mean"]),
        x_std=_decode(payload["scaler"]["x_std"]),
        y_mean=payload["scaler"]["y_mean"],
        y_std=payload["scaler"]["y_std"])
    flags = payload.get("flags", {})
    estimator = WheelLoadEstimator(
        spec, scaler, payload["corner"], payload["ablation"], payload["seed"],
        prior=PriorSpec(tau=payload["prior_tau"]),
        use_bayes=flags.get("use_bayes"), use_dpc=flags.get("use_dpc"),
        use_dropout=flags.get("use_dropout"))
    named = estimator.named_parameters()
    stored = payload["params"]
    if set(named) != set(stored):
        missing = sorted(set(named) ^ set(stored))
        raise ValidationError(f"checkpoint parameter mismatch: {missing[:4]}")
    for name, var in named.items():
        value = _decode(stored[name])
        if value.shape != var.value.shape:
            raise ValidationError(
                f"checkpoint shape mismatch for {name}: "
                f"{value.shape} vs {var.value.shape}")
        var.value = value
    return estimator, payload
