"""Double-wishbone linkage kinematics.

Coordinate frame: unsprung-body frame at nominal ride, x forward, y left,
z up, origin at the unsprung mass CG. Chassis anchors (u1, u2, l1, l2, p2)
and the rack axis are fixed in this frame; the knuckle (s1, s2, s3, and by
default the lower damper point p1) moves as one rigid body.

The knuckle pose is a 6-DOF rigid transform pinned by six scalar
constraints: five link lengths (u1-s1, u2-s1, l1-s3, l2-s3, t-s2) plus the
damper length, which shortens by one meter per meter of spring travel
x_d - x_d0. A damped Newton iteration in the incremental twist solves the
system; warm starting from the previous pose keeps the solution on the
assembled mechanism branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    CoincidentPoints,
    KinematicSingularity,
    NoConvergence,
    TravelOutOfRange,
    ValidationError,
)

KNUCKLE_POINTS = ("s1", "s2", "s3")
CHASSIS_POINTS = ("u1", "u2", "l1", "l2", "p2")

# (chassis anchor, knuckle point) pairs of the five rigid links
LINKS = (("u1", "s1"), ("u2", "s1"), ("l1", "s3"), ("l2", "s3"), ("t", "s2"))


def _vec(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ValidationError(f"expected a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class SuspensionConfig:
    """Reference hard-point geometry at nominal ride.

    All positions in meters. ``p1_attachment`` selects whether the lower
    damper point rides on the knuckle rigid body or on the lower control
    arm (interpolated between the LCA anchor midpoint and s3).
    """

    u1: np.ndarray
    u2: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    p2: np.ndarray
    p1: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    t: np.ndarray
    rack_dir: np.ndarray
    x_d0: float
    p1_attachment: str = "knuckle"
    rack_travel: float = 0.05
    spring_travel: float = 0.06

    def __post_init__(self):
        for name in ("u1", "u2", "l1", "l2", "p2", "p1", "s1", "s2", "s3",
                     "t", "rack_dir"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        if abs(np.linalg.norm(self.rack_dir) - 1.0) > 1e-12:
            raise ValidationError("rack_dir must be unit-norm within 1e-12")
        if self.p1_attachment not in ("knuckle", "lca"):
            raise ValidationError(
                f"p1_attachment must be 'knuckle' or 'lca', got {self.p1_attachment!r}")
        for name, length in self.link_lengths().items():
            if length <= 0.0:
                raise ValidationError(f"link {name} has non-positive length")
        # knuckle triple must span a triangle, else the body is underconstrained
        area = 0.5 * np.linalg.norm(
            np.cross(self.s2 - self.s1, self.s3 - self.s1))
        if area <= 1e-9:
            raise ValidationError(
                f"knuckle points are collinear (area {area:.3e} m^2)")
        if self.rack_travel <= 0 or self.spring_travel <= 0:
            raise ValidationError("travel limits must be positive")

    def link_lengths(self) -> dict[str, float]:
        """Derived rigid-link and intra-knuckle distances."""
        d = {}
        for a, b in LINKS:
            d[f"{a}-{b}"] = float(np.linalg.norm(getattr(self, b) - getattr(self, a)))
        for a, b in (("s1", "s2"), ("s2", "s3"), ("s1", "s3")):
            d[f"{a}-{b}"] = float(np.linalg.norm(getattr(self, b) - getattr(self, a)))
        d["p1-p2"] = float(np.linalg.norm(self.p2 - self.p1))
        return d

    @property
    def damper_length_ref(self) -> float:
        return float(np.linalg.norm(self.p2 - self.p1))

    def damper_length(self, x_d: float) -> float:
        """Damper pin-to-pin length demanded for spring travel x_d."""
        return self.damper_length_ref - (x_d - self.x_d0)

    @property
    def lca_mid(self) -> np.ndarray:
        return 0.5 * (self.l1 + self.l2)

    @property
    def lca_fraction(self) -> float:
        """Best-fit fraction placing p1 on the lca_mid -> s3 segment."""
        seg = self.s3 - self.lca_mid
        return float(np.dot(self.p1 - self.lca_mid, seg) / np.dot(seg, seg))

    def in_travel_box(self, x_a: float, x_d: float) -> bool:
        return (abs(x_a) <= self.rack_travel + 1e-12
                and abs(x_d - self.x_d0) <= self.spring_travel + 1e-12)

    def rack_end(self, x_a: float) -> np.ndarray:
        return self.t + x_a * self.rack_dir


def mirror_config(config: SuspensionConfig) -> SuspensionConfig:
    """Reflect a corner through the x-z plane.

    Point coordinates flip in y. The rack direction is reflected and
    negated so that the shared-rack steering sense is preserved: the
    mirrored corner driven with -x_a reproduces the mirror image of the
    original corner driven with +x_a.
    """
    m = np.array([1.0, -1.0, 1.0])
    kwargs = {name: getattr(config, name) * m
              for name in ("u1", "u2", "l1", "l2", "p2", "p1", "s1", "s2", "s3", "t")}
    kwargs["rack_dir"] = -(config.rack_dir * m)
    return replace(config, **kwargs)


@dataclass(frozen=True)
class SuspensionPose:
    """Solved instantaneous geometry for one (x_a, x_d) input."""

    config: SuspensionConfig
    x_a: float
    x_d: float
    rotation: np.ndarray  # 3x3, knuckle body rotation from reference
    translation: np.ndarray  # 3, knuckle body translation from reference
    points: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    iterations: int = 0
    max_residual: float = 0.0

    @property
    def cg(self) -> np.ndarray:
        """Unsprung CG position; rides with the knuckle, origin at reference."""
        return self.translation

    def position(self, name: str) -> np.ndarray:
        if name == "cg":
            return self.cg
        if name in self.points:
            return self.points[name]
        if name in CHASSIS_POINTS:
            return getattr(self.config, name)
        raise ValidationError(f"unknown hard point {name!r}")


def direction_vector(pose: SuspensionPose, i: str, j: str) -> np.ndarray:
    """Unit vector pointing from hard point i to hard point j."""
    if i == j:
        raise ValidationError("direction requires two distinct points")
    d = pose.position(j) - pose.position(i)
    n = np.linalg.norm(d)
    if n < 1e-9:
        raise CoincidentPoints(f"points {i} and {j} coincide (|d| = {n:.3e} m)")
    return d / n


def lever_arm(pose: SuspensionPose, i: str) -> np.ndarray:
    """Vector from the unsprung CG to hard point i.

    The CG is the frame origin at reference and rides with the knuckle,
    so at the nominal pose this is simply the configured coordinate.
    """
    return pose.position(i) - pose.cg


def _rotation_from_vector(w: np.ndarray) -> np.ndarray:
    """Rodrigues rotation for a rotation vector w (angle = |w|)."""
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        k = _skew(w)
        return np.eye(3) + k + 0.5 * (k @ k)
    axis = w / theta
    k = _skew(axis)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _moving_points(config: SuspensionConfig, rot: np.ndarray, trans: np.ndarray,
                   x_a: float) -> dict[str, np.ndarray]:
    pts = {name: rot @ getattr(config, name) + trans for name in KNUCKLE_POINTS}
    pts["t"] = config.rack_end(x_a)
    if config.p1_attachment == "knuckle":
        pts["p1"] = rot @ config.p1 + trans
    else:
        pts["p1"] = config.lca_mid + config.lca_fraction * (pts["s3"] - config.lca_mid)
    return pts


def _residual_and_jacobian(config: SuspensionConfig, rot, trans, x_a, x_d):
    """Length residuals (m) and their Jacobian in the incremental twist.

    Row k differentiates constraint k w.r.t. (delta_omega, delta_d) applied
    about the frame origin: for a moving point at b pulled toward anchor a
    with unit direction u = (b - a)/|b - a|, the row is [b x u, u].
    """
    pts = _moving_points(config, rot, trans, x_a)
    lengths = config.link_lengths()
    res = np.empty(6)
    jac = np.zeros((6, 6))
    for k, (a_name, b_name) in enumerate(LINKS):
        a = pts["t"] if a_name == "t" else getattr(config, a_name)
        b = pts[b_name]
        d = b - a
        n = np.linalg.norm(d)
        res[k] = n - lengths[f"{a_name}-{b_name}"]
        u = d / n
        jac[k, :3] = np.cross(b, u)
        jac[k, 3:] = u
    # damper length constraint
    d = pts["p1"] - config.p2
    n = np.linalg.norm(d)
    res[5] = n - config.damper_length(x_d)
    u = d / n
    if config.p1_attachment == "knuckle":
        jac[5, :3] = np.cross(pts["p1"], u)
        jac[5, 3:] = u
    else:
        # p1 follows s3 linearly with the lca interpolation fraction
        f = config.lca_fraction
        jac[5, :3] = f * np.cross(pts["s3"], u)
        jac[5, 3:] = f * u
    return res, jac, pts


RESIDUAL_TOL = 1e-10
MAX_ITERATIONS = 100
SINGULAR_COND = 1e12


def solve_pose(config: SuspensionConfig, x_a: float, x_d: float,
               initial: SuspensionPose | None = None) -> SuspensionPose:
    """Solve the knuckle rigid-body pose for one (x_a, x_d) input.

    Damped Newton from ``initial`` (warm start) or from the reference
    pose. Raises TravelOutOfRange, KinematicSingularity, or NoConvergence.
    """
    if not config.in_travel_box(x_a, x_d):
        raise TravelOutOfRange(
            f"(x_a={x_a:.4f}, x_d={x_d:.4f}) outside travel box "
            f"(|x_a| <= {config.rack_travel}, |x_d - {config.x_d0}| <= "
            f"{config.spring_travel})")
    if initial is not None:
        rot = initial.rotation.copy()
        trans = initial.translation.copy()
    else:
        rot = np.eye(3)
        trans = np.zeros(3)

    res, jac, pts = _residual_and_jacobian(config, rot, trans, x_a, x_d)
    best = np.max(np.abs(res))
    for iteration in range(1, MAX_ITERATIONS + 1):
        if best <= RESIDUAL_TOL:
            return SuspensionPose(config, x_a, x_d, rot, trans, pts,
                                  iteration - 1, best)
        if np.linalg.cond(jac) > SINGULAR_COND:
            raise KinematicSingularity(
                f"constraint Jacobian condition exceeds {SINGULAR_COND:.0e} "
                f"at (x_a={x_a:.4f}, x_d={x_d:.4f})")
        step = np.linalg.solve(jac, -res)
        scale = 1.0
        for _ in range(9):
            w, dd = scale * step[:3], scale * step[3:]
            r_inc = _rotation_from_vector(w)
            rot_new = r_inc @ rot
            trans_new = r_inc @ trans + dd
            res_new, jac_new, pts_new = _residual_and_jacobian(
                config, rot_new, trans_new, x_a, x_d)
            if np.max(np.abs(res_new)) < best or scale <= 1.0 / 256.0:
                break
            scale *= 0.5
        rot, trans, res, jac, pts = rot_new, trans_new, res_new, jac_new, pts_new
        best = np.max(np.abs(res))
    raise NoConvergence(
        f"pose solve exceeded {MAX_ITERATIONS} iterations at "
        f"(x_a={x_a:.4f}, x_d={x_d:.4f}), residual {best:.3e} m")


def constraint_condition(config: SuspensionConfig, x_a: float,
                         x_d: float) -> float:
    """Condition number of the constraint Jacobian at a solved pose.

    The singularity margin is SINGULAR_COND divided by this value.
    """
    pose = solve_pose(config, x_a, x_d)
    _, jac, _ = _residual_and_jacobian(config, pose.rotation, pose.translation,
                                       x_a, x_d)
    return float(np.linalg.cond(jac))


class PoseSolver:
    """Warm-started pose solver; owns its cache, one instance per task."""

    def __init__(self, config: SuspensionConfig):
        self.config = config
        self._last: SuspensionPose | None = None

    def solve(self, x_a: float, x_d: float) -> SuspensionPose:
        pose = solve_pose(self.config, x_a, x_d, initial=self._last)
        self._last = pose
        return pose

    def reset(self) -> None:
        self._last = None


# ---------------------------------------------------------------------------
# Batched solver. Same constraint system vectorized over N inputs; used by
# the simulator and collocation builder where per-call overhead dominates.

def _batch_rotations(w: np.ndarray) -> np.ndarray:
    """Rodrigues for a batch of rotation vectors, shape (n, 3) -> (n, 3, 3)."""
    n = w.shape[0]
    theta = np.linalg.norm(w, axis=1)
    small = theta < 1e-12
    axis = np.where(small[:, None], 0.0, w / np.where(small, 1.0, theta)[:, None])
    k = np.zeros((n, 3, 3))
    k[:, 0, 1], k[:, 0, 2] = -axis[:, 2], axis[:, 1]
    k[:, 1, 0], k[:, 1, 2] = axis[:, 2], -axis[:, 0]
    k[:, 2, 0], k[:, 2, 1] = -axis[:, 1], axis[:, 0]
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    sin_t = np.sin(theta)[:, None, None]
    cos_t = np.cos(theta)[:, None, None]
    full = eye + sin_t * k + (1.0 - cos_t) * np.matmul(k, k)
    # second-order series keeps tiny steps exact enough
    ks = np.zeros((n, 3, 3))
    ks[:, 0, 1], ks[:, 0, 2] = -w[:, 2], w[:, 1]
    ks[:, 1, 0], ks[:, 1, 2] = w[:, 2], -w[:, 0]
    ks[:, 2, 0], ks[:, 2, 1] = -w[:, 1], w[:, 0]
    series = eye + ks + 0.5 * np.matmul(ks, ks)
    return np.where(small[:, None, None], series, full)


class BatchPoses:
    """Vectorized pose solutions for arrays of (x_a, x_d)."""

    def __init__(self, config: SuspensionConfig, x_a: np.ndarray, x_d: np.ndarray,
                 rotation: np.ndarray, translation: np.ndarray,
                 points: dict[str, np.ndarray], valid: np.ndarray,
                 max_residual: np.ndarray):
        self.config = config
        self.x_a = x_a
        self.x_d = x_d
        self.rotation = rotation
        self.translation = translation
        self.points = points
        self.valid = valid
        self.max_residual = max_residual

    @property
    def cg(self) -> np.ndarray:
        return self.translation

    def position(self, name: str) -> np.ndarray:
        if name == "cg":
            return self.cg
        if name in self.points:
            return self.points[name]
        if name in CHASSIS_POINTS:
            return np.broadcast_to(getattr(self.config, name),
                                   (self.x_a.shape[0], 3))
        raise ValidationError(f"unknown hard point {name!r}")


def _batch_points(config, rot, trans, x_a):
    pts = {}
    for name in KNUCKLE_POINTS:
        pts[name] = np.einsum("nij,j->ni", rot, getattr(config, name)) + trans
    pts["t"] = config.t[None, :] + x_a[:, None] * config.rack_dir[None, :]
    if config.p1_attachment == "knuckle":
        pts["p1"] = np.einsum("nij,j->ni", rot, config.p1) + trans
    else:
        pts["p1"] = config.lca_mid[None, :] + config.lca_fraction * (
            pts["s3"] - config.lca_mid[None, :])
    return pts


def _batch_residual_jacobian(config, rot, trans, x_a, x_d):
    pts = _batch_points(config, rot, trans, x_a)
    lengths = config.link_lengths()
    n = x_a.shape[0]
    res = np.empty((n, 6))
    jac = np.zeros((n, 6, 6))
    for k, (a_name, b_name) in enumerate(LINKS):
        a = pts["t"] if a_name == "t" else getattr(config, a_name)[None, :]
        b = pts[b_name]
        d = b - a
        norm = np.linalg.norm(d, axis=1)
        res[:, k] = norm - lengths[f"{a_name}-{b_name}"]
        u = d / norm[:, None]
        jac[:, k, :3] = np.cross(b, u)
        jac[:, k, 3:] = u
    d = pts["p1"] - config.p2[None, :]
    norm = np.linalg.norm(d, axis=1)
    res[:, 5] = norm - (config.damper_length_ref - (x_d - config.x_d0))
    u = d / norm[:, None]
    if config.p1_attachment == "knuckle":
        jac[:, 5, :3] = np.cross(pts["p1"], u)
        jac[:, 5, 3:] = u
    else:
        f = config.lca_fraction
        jac[:, 5, :3] = f * np.cross(pts["s3"], u)
        jac[:, 5, 3:] = f * u
    return res, jac, pts


def solve_poses(config: SuspensionConfig, x_a: np.ndarray,
                x_d: np.ndarray) -> BatchPoses:
    """Solve many poses at once from the reference start.

    Out-of-travel or non-converged entries are flagged invalid rather than
    raising, so callers can apply their own skip policy.
    """
    x_a = np.asarray(x_a, dtype=np.float64)
    x_d = np.asarray(x_d, dtype=np.float64)
    n = x_a.shape[0]
    in_box = ((np.abs(x_a) <= config.rack_travel + 1e-12)
              & (np.abs(x_d - config.x_d0) <= config.spring_travel + 1e-12))
    rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    trans = np.zeros((n, 3))
    res, jac, pts = _batch_residual_jacobian(config, rot, trans, x_a, x_d)
    best = np.max(np.abs(res), axis=1)
    active = in_box & (best > RESIDUAL_TOL)
    healthy = np.ones(n, dtype=bool)
    for _ in range(MAX_ITERATIONS):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        jac_a = jac[idx]
        cond = np.linalg.cond(jac_a)
        sick = cond > SINGULAR_COND
        if sick.any():
            healthy[idx[sick]] = False
            active[idx[sick]] = False
            idx = idx[~sick]
            if idx.size == 0:
                continue
            jac_a = jac[idx]
        step = np.linalg.solve(jac_a, -res[idx][..., None])[..., 0]
        scale = np.ones(idx.size)
        for _ in range(9):
            w = scale[:, None] * step[:, :3]
            dd = scale[:, None] * step[:, 3:]
            r_inc = _batch_rotations(w)
            rot_new = np.matmul(r_inc, rot[idx])
            trans_new = np.einsum("nij,nj->ni", r_inc, trans[idx]) + dd
            res_new, _, _ = _batch_residual_jacobian(
                config, rot_new, trans_new, x_a[idx], x_d[idx])
            worse = (np.max(np.abs(res_new), axis=1) >= best[idx]) & (scale > 1.0 / 256.0)
            if not worse.any():
                break
            scale = np.where(worse, scale * 0.5, scale)
        rot[idx] = rot_new
        trans[idx] = trans_new
        res_full, jac_full, _ = _batch_residual_jacobian(
            config, rot[idx], trans[idx], x_a[idx], x_d[idx])
        res[idx] = res_full
        jac[idx] = jac_full
        best[idx] = np.max(np.abs(res_full), axis=1)
        active[idx] = best[idx] > RESIDUAL_TOL
    valid = in_box & healthy & (best <= RESIDUAL_TOL)
    pts = _batch_points(config, rot, trans, x_a)
    return BatchPoses(config, x_a, x_d, rot, trans, pts, valid, best)
