"""Structured text configuration shared by every CLI subcommand.

Format: `key = value` lines with optional `[section]` headers that prefix
the keys (`[geometry]` + `u1 = [...]` stores `geometry.u1`). Dotted keys
work without headers too. Values parse as bracketed float lists, numbers,
booleans, or bare strings; `#` starts a comment.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .dynamics import (
    CornerPhysics,
    MagicFormulaParams,
    SpringDamperCurve,
    UnsprungBody,
)
from .errors import ValidationError
from .geometry import SuspensionConfig, mirror_config
from .simulate import CORNERS, NoiseSpec, VehicleParams
from .training import AblationMode, TrainConfig


def parse_value(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [float(v) for v in inner.split(",")]
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        as_int = int(text)
        return as_int
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_config_text(text: str) -> dict:
    values: dict[str, object] = {}
    section = ""
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip()
        full = f"{section}.{key}" if section else key
        values[full] = parse_value(value)
    return values


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


def config_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ValidationError(f"config is missing required key {key!r}")
    return cfg[key]


def _vec(cfg: dict, key: str) -> np.ndarray:
    value = _require(cfg, key)
    if not isinstance(value, list) or len(value) != 3:
        raise ValidationError(f"{key} must be a 3-element list")
    return np.asarray(value, dtype=np.float64)


def geometry_from_config(cfg: dict) -> SuspensionConfig:
    kwargs = {name: _vec(cfg, f"geometry.{name}")
              for name in ("u1", "u2", "l1", "l2", "p2", "p1",
                           "s1", "s2", "s3", "t", "rack_dir")}
    return SuspensionConfig(
        x_d0=float(_require(cfg, "geometry.x_d0")),
        p1_attachment=str(cfg.get("geometry.p1_attachment", "knuckle")),
        rack_travel=float(cfg.get("geometry.rack_travel", 0.05)),
        spring_travel=float(cfg.get("geometry.spring_travel", 0.06)),
        **kwargs)


def vehicle_from_config(cfg: dict) -> VehicleParams:
    left = geometry_from_config(cfg)
    right = mirror_config(left)
    i_diag = cfg.get("body.i_u_diag", [0.35, 0.45, 0.35])
    body = UnsprungBody(m_u=float(_require(cfg, "body.m_u")),
                        i_u=np.diag(i_diag))
    if "spring.damper_points" in cfg:
        flat = cfg["spring.damper_points"]
        points = tuple((flat[i], flat[i + 1]) for i in range(0, len(flat), 2))
        curve = SpringDamperCurve(
            k=float(_require(cfg, "spring.k")),
            preload=float(_require(cfg, "spring.preload")),
            x_d0=left.x_d0, damper_points=points)
    else:
        curve = SpringDamperCurve.from_slopes(
            k=float(_require(cfg, "spring.k")),
            preload=float(_require(cfg, "spring.preload")),
            x_d0=left.x_d0,
            bump=float(_require(cfg, "spring.bump")),
            rebound=float(_require(cfg, "spring.rebound")))
    tire = MagicFormulaParams(
        b_x=float(_require(cfg, "tire.b_x")), c_x=float(_require(cfg, "tire.c_x")),
        d_x=float(_require(cfg, "tire.d_x")), e_x=float(_require(cfg, "tire.e_x")),
        b_y=float(_require(cfg, "tire.b_y")), c_y=float(_require(cfg, "tire.c_y")),
        d_y=float(_require(cfg, "tire.d_y")), e_y=float(_require(cfg, "tire.e_y")))
    corners = {}
    for corner in CORNERS:
        config = left if corner.endswith("left") else right
        corners[corner] = CornerPhysics(config, body, curve, tire)
    fractions = _require(cfg, "vehicle.fractions")
    return VehicleParams(
        vehicle_id=str(cfg.get("vehicle.id", "vehicle")),
        m_s=float(_require(cfg, "vehicle.m_s")),
        fractions=tuple(float(f) for f in fractions),
        cg_height=float(_require(cfg, "vehicle.cg_height")),
        track=float(_require(cfg, "vehicle.track")),
        wheelbase=float(_require(cfg, "vehicle.wheelbase")),
        corners=corners)


def noise_from_config(cfg: dict) -> NoiseSpec:
    return NoiseSpec(
        x_a=float(cfg.get("noise.x_a", 2.0e-4)),
        x_d=float(cfg.get("noise.x_d", 5.0e-4)),
        xdot_d=float(cfg.get("noise.xdot_d", 5.0e-3)),
        a_u=float(cfg.get("noise.a_u", 0.05)),
        slip=float(cfg.get("noise.slip", 0.0)),
        outlier_rate=float(cfg.get("noise.outlier_rate", 0.0)),
        outlier_scale=float(cfg.get("noise.outlier_scale", 8.0)))


def train_config_from_config(cfg: dict, **overrides) -> TrainConfig:
    hidden = cfg.get("train.hidden", [64, 64, 64, 64])
    kwargs = dict(
        epochs=int(cfg.get("train.epochs", 30)),
        batch_size=int(cfg.get("train.batch_size", 128)),
        learning_rate=float(cfg.get("train.learning_rate", 1e-3)),
        lr_schedule=str(cfg.get("train.lr_schedule", "cosine")),
        seed=int(cfg.get("train.seed", 0)),
        mc_samples=int(cfg.get("train.mc_samples", 1)),
        eval_samples=int(cfg.get("train.eval_samples", 64)),
        ablation=AblationMode(str(cfg.get("train.ablation", "full"))),
        corner=str(cfg.get("train.corner", "front_left")),
        hidden=tuple(int(w) for w in hidden),
        ns_sigma=float(cfg.get("train.ns_sigma", 1.0)),
        prior_tau=float(cfg.get("train.prior_tau", 1.0)),
        sigma_data=(float(cfg["train.sigma_data"])
                    if "train.sigma_data" in cfg else None),
        sigma_phy=(float(cfg["train.sigma_phy"])
                   if "train.sigma_phy" in cfg else None),
        use_physics=bool(cfg.get("train.use_physics", True)),
        collocation_count=int(cfg.get("train.collocation_count", 2048)),
        collocation_batch=int(cfg.get("train.collocation_batch", 256)),
        collocation_strategy=str(cfg.get("train.collocation_strategy", "halton")),
        val_fraction=float(cfg.get("train.val_fraction", 0.3)),
        split_seed=int(cfg.get("train.split_seed", 0)),
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)
