"""Reference vehicle fixtures.

One plausible formula-student-scale double wishbone corner, mirrored for
the right side and reused at the rear with the rack input held at zero.
Values are test-bench choices, not measurements of any particular car.
"""

from __future__ import annotations

import numpy as np

from .dynamics import CornerPhysics, MagicFormulaParams, SpringDamperCurve, UnsprungBody
from .geometry import SuspensionConfig, mirror_config
from .simulate import CORNERS, VehicleParams


def reference_corner_config(x_d0: float = 0.05) -> SuspensionConfig:
    """Left-side double wishbone geometry, link lengths 0.25-0.41 m."""
    return SuspensionConfig(
        u1=[0.15, -0.42, 0.20],
        u2=[-0.15, -0.42, 0.20],
        l1=[0.16, -0.40, -0.12],
        l2=[-0.16, -0.40, -0.12],
        p2=[0.02, -0.30, 0.42],
        p1=[0.01, -0.10, -0.05],
        s1=[0.00, -0.05, 0.16],
        s2=[-0.12, -0.06, 0.02],
        s3=[0.01, -0.03, -0.15],
        t=[-0.12, -0.38, 0.02],
        rack_dir=[0.0, 1.0, 0.0],
        x_d0=x_d0,
    )


def fixture_vehicle(variant: str = "a") -> VehicleParams:
    """Benchmark vehicle; variants perturb masses, springs, and balance."""
    variants = {
        "a": dict(m_s=230.0, fractions=(0.27, 0.23, 0.26, 0.24), k=30000.0,
                  preload=650.0, bump=2500.0, rebound=900.0, cg=0.30),
        "b": dict(m_s=255.0, fractions=(0.28, 0.22, 0.25, 0.25), k=34000.0,
                  preload=720.0, bump=2900.0, rebound=1050.0, cg=0.32),
        "c": dict(m_s=210.0, fractions=(0.26, 0.24, 0.27, 0.23), k=27000.0,
                  preload=590.0, bump=2100.0, rebound=800.0, cg=0.28),
    }
    if variant not in variants:
        raise ValueError(f"unknown fixture variant {variant!r}")
    p = variants[variant]
    left = reference_corner_config()
    right = mirror_config(left)
    body = UnsprungBody(m_u=8.0, i_u=np.diag([0.35, 0.45, 0.35]))
    curve = SpringDamperCurve.from_slopes(
        k=p["k"], preload=p["preload"], x_d0=left.x_d0,
        bump=p["bump"], rebound=p["rebound"])
    tire = MagicFormulaParams(b_x=10.0, c_x=1.9, d_x=1.0, e_x=0.97,
                              b_y=8.0, c_y=1.3, d_y=0.9, e_y=-0.5)
    corners = {}
    for corner in CORNERS:
        config = left if corner.endswith("left") else right
        corners[corner] = CornerPhysics(config, body, curve, tire)
    return VehicleParams(
        vehicle_id=f"fsae_{variant}",
        m_s=p["m_s"],
        fractions=p["fractions"],
        cg_height=p["cg"],
        track=1.20,
        wheelbase=1.55,
        corners=corners,
    )
