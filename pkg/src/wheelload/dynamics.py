"""Suspension force systems and the coupled wheel-load equilibrium.

Force and moment balance of the unsprung body, written in the corner
frame with the accelerometer convention for a_u (proper acceleration; at
rest a_u = (0, 0, +g), so gravity never appears explicitly):

    sum_i F_i + F_tire - m_u a_u = 0
    sum_i M_i + M_ext  - I_u beta_u = 0

F_i are the six suspension member forces along the member axes; F_tire =
F_x x + F_y y + F_z z acts through the unsprung CG (wheel moments beyond
the optional M_ext channel carry no constitutive law here); moments are
taken about the unsprung CG. The six unknowns (five link magnitudes and
F_z) are solved by damped Newton with F_x, F_y eliminated through the
magic formula, which couples them proportionally to F_z at fixed slip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    NoConvergence,
    SingularEquilibrium,
    ValidationError,
)
from .frames import SensorFrame
from .geometry import (
    BatchPoses,
    SuspensionConfig,
    SuspensionPose,
    direction_vector,
    lever_arm,
    solve_pose,
    solve_poses,
)

# member ordering shared by force columns, moment columns, and solutions
FORCE_MEMBERS = ("p", "u1", "u2", "t", "l1", "l2")
FORCE_AXES = (("p2", "p1"), ("u1", "s1"), ("u2", "s1"),
              ("t", "s2"), ("l1", "s3"), ("l2", "s3"))
ATTACHMENTS = ("p2", "u1", "u2", "t", "l1", "l2")

EQUILIBRIUM_TOL = 1e-9
MAX_NEWTON = 50
SINGULAR_COND = 1e12


@dataclass(frozen=True)
class UnsprungBody:
    """Mass and inertia of the wheel + knuckle assembly about its CG."""

    m_u: float
    i_u: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.i_u, dtype=np.float64)
        if i.shape != (3, 3):
            raise ValidationError(f"inertia tensor must be 3x3, got {i.shape}")
        if self.m_u <= 0.0:
            raise ValidationError("unsprung mass must be positive")
        if np.abs(i - i.T).max() > 1e-12:
            raise ValidationError("inertia tensor must be symmetric")
        if np.any(np.linalg.eigvalsh(i) <= 0.0):
            raise ValidationError("inertia tensor must be positive-definite")
        object.__setattr__(self, "i_u", i)


@dataclass(frozen=True)
class SpringDamperCurve:
    """Coil-over constitutive law.

    Spring force grows linearly with (x_d0 - x_d) from the preload; the
    damper adds a monotone piecewise-linear function of xdot_d that passes
    through the origin, with end segments extrapolated.
    """

    k: float
    preload: float
    x_d0: float
    damper_points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.k <= 0.0:
            raise ValidationError("spring stiffness must be positive")
        pts = tuple((float(v), float(f)) for v, f in self.damper_points)
        if len(pts) < 2:
            raise ValidationError("damper curve needs at least two points")
        vs = np.array([p[0] for p in pts])
        fs = np.array([p[1] for p in pts])
        if np.any(np.diff(vs) <= 0):
            raise ValidationError("damper velocities must be strictly increasing")
        if np.any(np.diff(fs) < 0):
            raise ValidationError("damper curve must be monotone non-decreasing")
        if abs(self._interp(vs, fs, 0.0)) > 1e-12:
            raise ValidationError("damper curve must pass through (0, 0)")
        object.__setattr__(self, "damper_points", pts)

    @classmethod
    def from_slopes(cls, k: float, preload: float, x_d0: float,
                    bump: float, rebound: float) -> "SpringDamperCurve":
        """Two-slope damper: bump slope for xdot_d > 0, rebound below."""
        return cls(k, preload, x_d0,
                   ((-1.0, -rebound), (0.0, 0.0), (1.0, bump)))

    @staticmethod
    def _interp(vs, fs, v):
        out = np.interp(v, vs, fs)
        slope_lo = (fs[1] - fs[0]) / (vs[1] - vs[0])
        slope_hi = (fs[-1] - fs[-2]) / (vs[-1] - vs[-2])
        out = np.where(v < vs[0], fs[0] + slope_lo * (v - vs[0]), out)
        out = np.where(v > vs[-1], fs[-1] + slope_hi * (v - vs[-1]), out)
        return out

    def damper_force(self, xdot_d):
        vs = np.array([p[0] for p in self.damper_points])
        fs = np.array([p[1] for p in self.damper_points])
        return self._interp(vs, fs, np.asarray(xdot_d, dtype=np.float64))


def spring_damper_force(curve: SpringDamperCurve, x_d, xdot_d):
    """Coil-over axial force; positive pushes p1 away from p2."""
    return curve.preload + curve.k * (curve.x_d0 - np.asarray(x_d)) \
        + curve.damper_force(xdot_d)


@dataclass(frozen=True)
class MagicFormulaParams:
    """Slip-to-force coefficients, one set per tire channel."""

    b_x: float
    c_x: float
    d_x: float
    e_x: float
    b_y: float
    c_y: float
    d_y: float
    e_y: float

    def __post_init__(self):
        for ch in ("x", "y"):
            b, c, d, e = (getattr(self, f"{k}_{ch}") for k in "bcde")
            if b <= 0 or c <= 0 or d <= 0:
                raise ValidationError(f"B, C, D must be positive for channel {ch}")
            if abs(e) >= 1.0:
                raise ValidationError(f"|E| must be < 1 for channel {ch}")

    def coefficients(self, channel: str) -> tuple[float, float, float, float]:
        if channel not in ("x", "y"):
            raise ValidationError(f"channel must be 'x' or 'y', got {channel!r}")
        return tuple(getattr(self, f"{k}_{channel}") for k in "bcde")


def magic_formula(params: MagicFormulaParams, f_z, slip, channel: str):
    """Tire force for one channel, proportional to vertical load."""
    b, c, d, e = params.coefficients(channel)
    s = np.asarray(slip, dtype=np.float64)
    bs = b * s
    return d * np.asarray(f_z) * np.sin(c * np.arctan(bs - e * (bs - np.arctan(bs))))


def _mf_unit(params: MagicFormulaParams, slip, channel: str):
    """Force per unit vertical load at the given slip."""
    b, c, d, e = params.coefficients(channel)
    s = np.asarray(slip, dtype=np.float64)
    bs = b * s
    return d * np.sin(c * np.arctan(bs - e * (bs - np.arctan(bs))))


def assemble_force_system(pose: SuspensionPose, magnitudes) -> np.ndarray:
    """3x6 force matrix, column j = magnitude_j times the member direction."""
    magnitudes = np.asarray(magnitudes, dtype=np.float64)
    if magnitudes.shape != (6,):
        raise ValidationError(f"expected 6 magnitudes, got shape {magnitudes.shape}")
    cols = [m * direction_vector(pose, a, b)
            for m, (a, b) in zip(magnitudes, FORCE_AXES)]
    return np.stack(cols, axis=1)


def assemble_moment_system(pose: SuspensionPose, f_sus: np.ndarray) -> np.ndarray:
    """3x6 moment matrix about the CG, using the member attachment points."""
    f_sus = np.asarray(f_sus, dtype=np.float64)
    if f_sus.shape != (3, 6):
        raise ValidationError(f"expected a 3x6 force matrix, got {f_sus.shape}")
    cols = [np.cross(lever_arm(pose, attach), f_sus[:, j])
            for j, attach in enumerate(ATTACHMENTS)]
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class WheelLoadSolution:
    """Solved member magnitudes, tire forces, and equilibrium residuals.

    ``f_z`` is the published load (clamped at zero on wheel lift when the
    solver was asked to clamp); ``f_z_raw`` always holds the equilibrium
    value and is what re-substitution checks must use.
    """

    f_p: float
    f_u1: float
    f_u2: float
    f_t: float
    f_l1: float
    f_l2: float
    f_x: float
    f_y: float
    f_z: float
    f_z_raw: float
    m_x: float
    m_y: float
    m_z: float
    force_residual: float
    moment_residual: float
    iterations: int
    negative_load: bool

    @property
    def magnitudes(self) -> np.ndarray:
        return np.array([self.f_p, self.f_u1, self.f_u2,
                         self.f_t, self.f_l1, self.f_l2])


def _system_matrices(pose: SuspensionPose, tire: MagicFormulaParams,
                     slip_kappa: float, slip_alpha: float,
                     tire_axes: np.ndarray):
    """Directions, levers, and the linear system columns for the unknowns."""
    dirs = np.stack([direction_vector(pose, a, b) for a, b in FORCE_AXES], axis=1)
    levers = np.stack([lever_arm(pose, p) for p in ATTACHMENTS], axis=1)
    moment_cols = np.cross(levers.T, dirs.T).T
    a = np.zeros((6, 6))
    a[:3, :5] = dirs[:, 1:]
    a[3:, :5] = moment_cols[:, 1:]
    cx = _mf_unit(tire, slip_kappa, "x")
    cy = _mf_unit(tire, slip_alpha, "y")
    a[:3, 5] = tire_axes @ np.array([cx, cy, 1.0])
    return dirs, moment_cols, a


def solve_wheel_load(config: SuspensionConfig, body: UnsprungBody,
                     curve: SpringDamperCurve, tire: MagicFormulaParams,
                     x_a: float, x_d: float, xdot_d: float, a_u,
                     slip_kappa: float = 0.0, slip_alpha: float = 0.0,
                     m_ext=(0.0, 0.0, 0.0), beta_u=(0.0, 0.0, 0.0),
                     pose: SuspensionPose | None = None,
                     clamp_negative: bool = True,
                     tire_axes=None) -> WheelLoadSolution:
    """Solve the six member/tire unknowns for one sensor state.

    Newton iteration with step halving; the system is linear at fixed
    slip, so convergence is immediate, but the loop guards any future
    load-dependent tire extension. ``tire_axes`` (columns = tire x, y,
    and normal directions in the corner frame) defaults to the identity;
    a cambered or rotated problem supplies its own axes.
    """
    a_u = np.asarray(a_u, dtype=np.float64)
    m_ext = np.asarray(m_ext, dtype=np.float64)
    beta_u = np.asarray(beta_u, dtype=np.float64)
    tire_axes = np.eye(3) if tire_axes is None \
        else np.asarray(tire_axes, dtype=np.float64)
    if pose is None:
        pose = solve_pose(config, x_a, x_d)
    f_p = float(spring_damper_force(curve, x_d, xdot_d))
    dirs, moment_cols, a = _system_matrices(pose, tire, slip_kappa, slip_alpha,
                                            tire_axes)
    rhs = np.concatenate([
        body.m_u * a_u - f_p * dirs[:, 0],
        body.i_u @ beta_u - m_ext - f_p * moment_cols[:, 0],
    ])

    z = np.zeros(6)
    residual = a @ z - rhs
    best = np.abs(residual).max()
    iterations = 0
    while best > EQUILIBRIUM_TOL:
        if iterations >= MAX_NEWTON:
            raise NoConvergence(
                f"equilibrium Newton exceeded {MAX_NEWTON} iterations "
                f"(residual {best:.3e})")
        if np.linalg.cond(a) > SINGULAR_COND:
            raise SingularEquilibrium(
                f"equilibrium Jacobian condition exceeds {SINGULAR_COND:.0e}")
        step = np.linalg.solve(a, -residual)
        scale = 1.0
        for _ in range(9):
            z_new = z + scale * step
            residual_new = a @ z_new - rhs
            if np.abs(residual_new).max() < best or scale <= 1.0 / 256.0:
                break
            scale *= 0.5
        z, residual = z_new, residual_new
        best = np.abs(residual).max()
        iterations += 1

    f_z_raw = float(z[5])
    negative = f_z_raw < 0.0
    f_z = 0.0 if (negative and clamp_negative) else f_z_raw
    force_res = float(np.abs(residual[:3]).max())
    moment_res = float(np.abs(residual[3:]).max())
    return WheelLoadSolution(
        f_p=f_p, f_u1=float(z[0]), f_u2=float(z[1]), f_t=float(z[2]),
        f_l1=float(z[3]), f_l2=float(z[4]),
        f_x=float(_mf_unit(tire, slip_kappa, "x") * f_z_raw),
        f_y=float(_mf_unit(tire, slip_alpha, "y") * f_z_raw),
        f_z=f_z, f_z_raw=f_z_raw,
        m_x=float(m_ext[0]), m_y=float(m_ext[1]), m_z=float(m_ext[2]),
        force_residual=force_res, moment_residual=moment_res,
        iterations=iterations, negative_load=negative)


def equilibrium_residual(pose: SuspensionPose, body: UnsprungBody,
                         tire: MagicFormulaParams, solution: WheelLoadSolution,
                         a_u, slip_kappa: float = 0.0, slip_alpha: float = 0.0,
                         m_ext=(0.0, 0.0, 0.0), beta_u=(0.0, 0.0, 0.0),
                         tire_axes=None) -> tuple[float, float]:
    """Re-substitute a solution into the balance equations.

    Returns the force and moment residual infinity norms (N, N m). Uses
    the raw equilibrium load, and rebuilds both matrices through the
    assembly operations rather than the solver's internal system.
    """
    a_u = np.asarray(a_u, dtype=np.float64)
    tire_axes = np.eye(3) if tire_axes is None \
        else np.asarray(tire_axes, dtype=np.float64)
    f_sus = assemble_force_system(pose, solution.magnitudes)
    m_sus = assemble_moment_system(pose, f_sus)
    f_tire = tire_axes @ np.array([
        float(magic_formula(tire, solution.f_z_raw, slip_kappa, "x")),
        float(magic_formula(tire, solution.f_z_raw, slip_alpha, "y")),
        solution.f_z_raw,
    ])
    force = f_sus.sum(axis=1) + f_tire - body.m_u * a_u
    moment = m_sus.sum(axis=1) + np.asarray(m_ext, dtype=np.float64) \
        - body.i_u @ np.asarray(beta_u, dtype=np.float64)
    return float(np.abs(force).max()), float(np.abs(moment).max())


def physics_estimate(config: SuspensionConfig, body: UnsprungBody,
                     curve: SpringDamperCurve, tire: MagicFormulaParams,
                     frame: SensorFrame, clamp_negative: bool = True) -> float:
    """Published wheel load for one sensor frame (the physics prior)."""
    solution = solve_wheel_load(
        config, body, curve, tire, frame.x_a, frame.x_d, frame.xdot_d,
        frame.a_u, frame.slip_kappa, frame.slip_alpha,
        clamp_negative=clamp_negative)
    return solution.f_z


# ---------------------------------------------------------------------------
# Batched evaluation. One linear solve per sample, vectorized; invalid
# samples (out of travel, pose failure, singular system) are masked, not
# raised, so callers choose the skip policy.

def _batch_system(poses: BatchPoses, tire: MagicFormulaParams,
                  kappa: np.ndarray, alpha: np.ndarray):
    n = poses.x_a.shape[0]
    dirs = np.empty((n, 3, 6))
    levers = np.empty((n, 3, 6))
    cg = poses.cg
    for j, (a_name, b_name) in enumerate(FORCE_AXES):
        a_pos = poses.position(a_name)
        b_pos = poses.position(b_name)
        d = b_pos - a_pos
        dirs[:, :, j] = d / np.linalg.norm(d, axis=1)[:, None]
    for j, attach in enumerate(ATTACHMENTS):
        levers[:, :, j] = poses.position(attach) - cg
    moment_cols = np.cross(levers.transpose(0, 2, 1),
                           dirs.transpose(0, 2, 1)).transpose(0, 2, 1)
    a = np.zeros((n, 6, 6))
    a[:, :3, :5] = dirs[:, :, 1:]
    a[:, 3:, :5] = moment_cols[:, :, 1:]
    a[:, 0, 5] = _mf_unit(tire, kappa, "x")
    a[:, 1, 5] = _mf_unit(tire, alpha, "y")
    a[:, 2, 5] = 1.0
    return dirs, moment_cols, a


def solve_wheel_loads(config: SuspensionConfig, body: UnsprungBody,
                      curve: SpringDamperCurve, tire: MagicFormulaParams,
                      x_a, x_d, xdot_d, a_u, kappa=None, alpha=None,
                      clamp_negative: bool = True,
                      f_p_override=None) -> dict[str, np.ndarray]:
    """Vectorized wheel-load solve over N samples.

    Returns arrays keyed 'fz', 'fz_raw', 'valid', 'force_residual',
    'moment_residual', 'magnitudes' (N x 6), 'fx', 'fy'. When
    ``f_p_override`` is given it replaces the coil-over law, which lets
    callers probe the load's affine dependence on the axial force.
    """
    x_a = np.asarray(x_a, dtype=np.float64)
    x_d = np.asarray(x_d, dtype=np.float64)
    xdot_d = np.asarray(xdot_d, dtype=np.float64)
    a_u = np.asarray(a_u, dtype=np.float64)
    n = x_a.shape[0]
    kappa = np.zeros(n) if kappa is None else np.asarray(kappa, dtype=np.float64)
    alpha = np.zeros(n) if alpha is None else np.asarray(alpha, dtype=np.float64)

    poses = solve_poses(config, x_a, x_d)
    valid = poses.valid.copy()
    if f_p_override is None:
        f_p = spring_damper_force(curve, x_d, xdot_d)
    else:
        f_p = np.broadcast_to(
            np.asarray(f_p_override, dtype=np.float64), (n,)).copy()
    dirs, moment_cols, a = _batch_system(poses, tire, kappa, alpha)
    rhs = np.empty((n, 6))
    rhs[:, :3] = body.m_u * a_u - f_p[:, None] * dirs[:, :, 0]
    rhs[:, 3:] = -f_p[:, None] * moment_cols[:, :, 0]

    z = np.zeros((n, 6))
    solvable = valid & (np.linalg.cond(a) <= SINGULAR_COND)
    if solvable.any():
        z[solvable] = np.linalg.solve(a[solvable], rhs[solvable][..., None])[..., 0]
    residual = np.einsum("nij,nj->ni", a, z) - rhs
    res_ok = np.abs(residual).max(axis=1) <= 1e-6
    valid = solvable & res_ok & np.isfinite(z).all(axis=1)

    fz_raw = z[:, 5]
    negative = fz_raw < 0.0
    fz = np.where(negative & clamp_negative, 0.0, fz_raw)
    return {
        "fz": fz,
        "fz_raw": fz_raw,
        "negative_load": negative,
        "valid": valid,
        "force_residual": np.abs(residual[:, :3]).max(axis=1),
        "moment_residual": np.abs(residual[:, 3:]).max(axis=1),
        "magnitudes": np.concatenate([f_p[:, None], z[:, :5]], axis=1),
        "fx": _mf_unit(tire, kappa, "x") * fz_raw,
        "fy": _mf_unit(tire, alpha, "y") * fz_raw,
        "f_p": f_p,
    }


class CornerPhysics:
    """One corner's geometry and constitutive laws bundled together."""

    def __init__(self, config: SuspensionConfig, body: UnsprungBody,
                 curve: SpringDamperCurve, tire: MagicFormulaParams):
        self.config = config
        self.body = body
        self.curve = curve
        self.tire = tire

    def estimate(self, frame: SensorFrame) -> float:
        return physics_estimate(self.config, self.body, self.curve,
                                self.tire, frame)

    def estimate_batch(self, x_a, x_d, xdot_d, a_u, kappa=None, alpha=None
                       ) -> tuple[np.ndarray, np.ndarray]:
        """(fz, valid) arrays; invalid samples carry NaN loads."""
        out = solve_wheel_loads(self.config, self.body, self.curve, self.tire,
                                x_a, x_d, xdot_d, a_u, kappa, alpha)
        fz = np.where(out["valid"], out["fz"], np.nan)
        return fz, out["valid"]
