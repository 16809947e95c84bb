"""Synthetic driving data generator.

Replaces bench or track data at desk scale: band-limited acceleration and
steering profiles drive a quasi-static load-transfer model, and the spring
travel x_d at each corner is inverse-designed through the linkage solver so
that the stored sensors and ground-truth loads satisfy the corner physics
exactly. Noise is injected into sensor channels only; ground truth and a
clean copy of the sensors stay available for diagnostics.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import CornerPhysics, solve_wheel_loads
from .errors import (
    InversionFailure,
    SchemaMismatch,
    ValidationError,
)
from .frames import CHANNELS

GRAVITY = 9.80665

CORNERS = ("front_left", "front_right", "rear_left", "rear_right")
SENSOR_CHANNELS = ("x_a", "x_d", "xdot_d", "a_ux", "a_uy", "a_uz",
                   "slip_kappa", "slip_alpha")
CSV_COLUMNS = ("t",) + SENSOR_CHANNELS + ("Fz_truth",)

# slip pseudo-channels scale with the acceleration demand
KAPPA_PER_AX = 4.0e-4
ALPHA_PER_AY = 8.0e-4

STYLE_BANDS = {
    # peak |a_y| band (m/s^2), peak |a_x| band, rack amplitude (m), max sine Hz
    "smooth": {"a_y": (1.8, 3.0), "a_x": (0.8, 1.8), "x_a": 0.010, "f_max": 0.7},
    "aggressive": {"a_y": (6.5, 9.8), "a_x": (2.5, 5.5), "x_a": 0.032, "f_max": 1.4},
}


@dataclass(frozen=True)
class Scenario:
    style: str
    seed: int
    duration: float = 20.0
    rate: float = 100.0

    def __post_init__(self):
        if self.style not in STYLE_BANDS:
            raise ValidationError(f"unknown style {self.style!r}")
        n = self.duration * self.rate
        if abs(n - round(n)) > 1e-9:
            raise ValidationError("duration * rate must be integral")


@dataclass(frozen=True)
class Excitation:
    t: np.ndarray
    a_x: np.ndarray
    a_y: np.ndarray
    x_a: np.ndarray
    style: str
    seed: int
    rate: float


@dataclass(frozen=True)
class NoiseSpec:
    """Per-channel Gaussian noise, plus optional spike outliers."""

    x_a: float = 2.0e-4
    x_d: float = 5.0e-4
    xdot_d: float = 5.0e-3
    a_u: float = 0.05
    slip: float = 0.0
    outlier_rate: float = 0.0
    outlier_scale: float = 8.0

    def __post_init__(self):
        for name in ("x_a", "x_d", "xdot_d", "a_u", "slip"):
            if getattr(self, name) < 0:
                raise ValidationError(f"noise std {name} must be >= 0")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValidationError("outlier rate must be in [0, 1)")

    def channel_std(self, channel: str) -> float:
        if channel.startswith("a_u"):
            return self.a_u
        if channel.startswith("slip"):
            return self.slip
        return getattr(self, channel)

    def canonical(self) -> str:
        return ",".join(f"{k}:{getattr(self, k):.17g}" for k in (
            "x_a", "x_d", "xdot_d", "a_u", "slip", "outlier_rate", "outlier_scale"))

    @classmethod
    def from_canonical(cls, text: str) -> "NoiseSpec":
        kwargs = {}
        for item in text.split(","):
            key, value = item.split(":")
            kwargs[key] = float(value)
        return cls(**kwargs)


@dataclass(frozen=True)
class VehicleParams:
    """Whole-vehicle masses and dimensions plus one physics bundle per corner."""

    vehicle_id: str
    m_s: float
    fractions: tuple[float, float, float, float]
    cg_height: float
    track: float
    wheelbase: float
    corners: dict[str, CornerPhysics] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValidationError("static corner fractions must sum to 1")
        for name in ("m_s", "cg_height", "track", "wheelbase"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if set(self.corners) != set(CORNERS):
            raise ValidationError(f"corners must be exactly {CORNERS}")

    @property
    def total_mass(self) -> float:
        return self.m_s + sum(c.body.m_u for c in self.corners.values())

    @property
    def weight(self) -> float:
        return self.total_mass * GRAVITY

    def static_load(self, corner: str) -> float:
        return self.fractions[CORNERS.index(corner)] * self.weight

    def canonical_string(self) -> str:
        parts = [f"id={self.vehicle_id}", f"m_s={self.m_s:.17g}",
                 "fractions=" + ",".join(f"{f:.17g}" for f in self.fractions),
                 f"cg_height={self.cg_height:.17g}", f"track={self.track:.17g}",
                 f"wheelbase={self.wheelbase:.17g}"]
        for corner in CORNERS:
            phys = self.corners[corner]
            cfg = phys.config
            for name in ("u1", "u2", "l1", "l2", "p2", "p1", "s1", "s2", "s3",
                         "t", "rack_dir"):
                vec = getattr(cfg, name)
                parts.append(f"{corner}.{name}=" + ",".join(f"{v:.17g}" for v in vec))
            parts.append(f"{corner}.x_d0={cfg.x_d0:.17g}")
            parts.append(f"{corner}.p1_attachment={cfg.p1_attachment}")
            parts.append(f"{corner}.m_u={phys.body.m_u:.17g}")
            parts.append(f"{corner}.i_u=" + ",".join(
                f"{v:.17g}" for v in phys.body.i_u.ravel()))
            parts.append(f"{corner}.k={phys.curve.k:.17g}")
            parts.append(f"{corner}.preload={phys.curve.preload:.17g}")
            parts.append(f"{corner}.damper=" + ";".join(
                f"{v:.17g},{f:.17g}" for v, f in phys.curve.damper_points))
            parts.append(f"{corner}.tire=" + ",".join(
                f"{getattr(phys.tire, k + '_' + ch):.17g}"
                for ch in ("x", "y") for k in "bcde"))
        return "\n".join(parts)

    def vehicle_hash(self) -> str:
        return hashlib.sha256(self.canonical_string().encode()).hexdigest()[:16]


def corner_transfer_signs(corner: str) -> tuple[float, float]:
    """(longitudinal, lateral) transfer signs; +a_x loads the rear,
    +a_y (leftward acceleration) loads the right side."""
    longitudinal = 1.0 if corner.startswith("rear") else -1.0
    lateral = -1.0 if corner.endswith("left") else 1.0
    return longitudinal, lateral


def quasi_static_load(vehicle: VehicleParams, corner: str, a_x, a_y,
                      symmetric: bool = False) -> np.ndarray:
    """Corner load from static distribution plus load transfer.

    ``symmetric=True`` replaces the configured static fractions with an
    even quarter split (the whole-vehicle baseline assumption).
    """
    fraction = 0.25 if symmetric else vehicle.fractions[CORNERS.index(corner)]
    s_long, s_lat = corner_transfer_signs(corner)
    long_unit = vehicle.m_s * vehicle.cg_height / (4.0 * vehicle.wheelbase)
    lat_unit = vehicle.m_s * vehicle.cg_height / (4.0 * vehicle.track)
    return (fraction * vehicle.weight
            + s_long * long_unit * np.asarray(a_x)
            + s_lat * lat_unit * np.asarray(a_y))


def _band_profile(rng: np.random.Generator, n: int, rate: float, f_max: float,
                  peak: float) -> np.ndarray:
    """Sum of random sines plus smoothed noise, scaled to an exact peak."""
    t = np.arange(n) / rate
    profile = np.zeros(n)
    for _ in range(4):
        amp = rng.uniform(0.3, 1.0)
        freq = rng.uniform(0.05, f_max)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        profile += amp * np.sin(2.0 * np.pi * freq * t + phase)
    window = np.hanning(int(rate))
    window /= window.sum()
    rough = np.convolve(rng.standard_normal(n), window, mode="same")
    rough_peak = np.abs(rough).max()
    if rough_peak > 0:
        profile += 0.25 * np.abs(profile).max() * rough / rough_peak
    return profile * (peak / np.abs(profile).max())


def generate_scenario(style: str, seed: int, duration: float = 20.0,
                      rate: float = 100.0) -> Excitation:
    """Deterministic band-limited excitation for one driving segment."""
    scenario = Scenario(style, seed, duration, rate)
    band = STYLE_BANDS[style]
    rng = np.random.default_rng(np.random.SeedSequence([hash_seed(style), seed]))
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    peak_y = rng.uniform(*band["a_y"])
    peak_x = rng.uniform(*band["a_x"])
    a_y = _band_profile(rng, n, rate, band["f_max"], peak_y)
    a_x = _band_profile(rng, n, rate, band["f_max"], peak_x)
    wiggle = _band_profile(rng, n, rate, band["f_max"], 0.2)
    x_a = band["x_a"] * (0.8 * a_y / peak_y + wiggle)
    x_a = np.clip(x_a, -0.045, 0.045)
    return Excitation(t=t, a_x=a_x, a_y=a_y, x_a=x_a, style=scenario.style,
                      seed=seed, rate=rate)


def hash_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")


@dataclass(frozen=True)
class CornerTruth:
    """Noise-free simulated channels and ground truth for one corner."""

    corner: str
    t: np.ndarray
    fz: np.ndarray
    x_a: np.ndarray
    x_d: np.ndarray
    xdot_d: np.ndarray
    a_u: np.ndarray  # (n, 3)
    slip_kappa: np.ndarray
    slip_alpha: np.ndarray
    clipped: int


def _forward_diff(x: np.ndarray, rate: float) -> np.ndarray:
    v = np.empty_like(x)
    v[-1] = 0.0
    v[:-1] = (x[1:] - x[:-1]) * rate
    return v


def _damper_segments(curve) -> list[tuple[float, float, float, float, float]]:
    """(v_lo, v_hi, v_anchor, f_anchor, slope) per linear damper piece,
    including the two end extrapolation pieces."""
    pts = curve.damper_points
    segments = []
    slope0 = (pts[1][1] - pts[0][1]) / (pts[1][0] - pts[0][0])
    segments.append((-np.inf, pts[0][0], pts[0][0], pts[0][1], slope0))
    for (v0, f0), (v1, f1) in zip(pts[:-1], pts[1:]):
        segments.append((v0, v1, v0, f0, (f1 - f0) / (v1 - v0)))
    slope1 = (pts[-1][1] - pts[-2][1]) / (pts[-1][0] - pts[-2][0])
    segments.append((pts[-1][0], np.inf, pts[-1][0], pts[-1][1], slope1))
    return segments


def _scan_implicit_travel(rhs: np.ndarray, k: float, rate: float,
                          segments, lo: float, hi: float
                          ) -> tuple[np.ndarray, int]:
    """Reverse scan solving -k*x[i] + damper((x[i+1]-x[i])*rate) = rhs[i].

    The damper velocity is the forward difference of the travel, zero at
    the final sample. Scanning backward from the end is the stable
    direction of this inverse problem (each step contracts perturbations
    by c*rate/(k + c*rate)); each step is strictly decreasing in x[i], so
    the solution is unique for any monotone damper. Out-of-travel samples
    are clamped and counted.
    """
    n = rhs.shape[0]
    x = np.empty(n)
    x_last = -rhs[-1] / k
    x[-1] = min(max(x_last, lo), hi)
    clipped = int(x_last < lo or x_last > hi)
    for i in range(n - 2, -1, -1):
        x_next = x[i + 1]
        r = rhs[i]
        xi = None
        for v_lo, v_hi, v_anchor, f_anchor, c in segments:
            # damper(v) = f_anchor + c (v - v_anchor) on this piece
            cand = (f_anchor + c * (x_next * rate - v_anchor) - r) / (k + c * rate)
            v = (x_next - cand) * rate
            if v_lo - 1e-12 <= v <= v_hi + 1e-12:
                xi = cand
                break
        if xi is None:
            xi = x_next
        if xi < lo:
            xi = lo
            clipped += 1
        elif xi > hi:
            xi = hi
            clipped += 1
        x[i] = xi
    return x, clipped


def _invert_corner(physics: CornerPhysics, target, x_a, a_u, kappa, alpha,
                   rate: float, corner: str
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Find x_d(t) whose physics solution reproduces the target loads.

    The stored damper velocity is the forward difference of x_d (zero at
    the last sample), which makes each time step an implicit scalar
    equation solved in closed form; the slowly varying linkage
    coefficients are frozen per outer iteration and re-solved until the
    trajectory is stationary.
    """
    cfg = physics.config
    curve = physics.curve
    lo = cfg.x_d0 - cfg.spring_travel + 1e-9
    hi = cfg.x_d0 + cfg.spring_travel - 1e-9
    segments = _damper_segments(curve)

    def affine_coefficients(xd):
        base = solve_wheel_loads(cfg, physics.body, curve, physics.tire, x_a, xd,
                                 np.zeros_like(xd), a_u, kappa, alpha,
                                 f_p_override=0.0)
        unit = solve_wheel_loads(cfg, physics.body, curve, physics.tire, x_a, xd,
                                 np.zeros_like(xd), a_u, kappa, alpha,
                                 f_p_override=1.0)
        gain = unit["fz_raw"] - base["fz_raw"]
        return gain, base["fz_raw"]

    xd = np.full_like(target, cfg.x_d0)
    clipped = 0
    for _ in range(25):
        gain, offset = affine_coefficients(xd)
        if np.any(gain <= 1e-9):
            raise InversionFailure(f"{corner}: load gain lost positivity")
        # needed axial force, then the damper/spring implicit equation
        rhs = (target - offset) / gain - curve.preload - curve.k * curve.x_d0
        xd_new, clipped = _scan_implicit_travel(
            rhs, curve.k, rate, segments, lo, hi)
        delta = np.abs(xd_new - xd).max()
        xd = xd_new
        if delta < 5e-14:
            break
    else:
        raise InversionFailure(
            f"{corner}: linkage coefficient iteration did not converge")
    if clipped > 0.2 * target.size:
        raise InversionFailure(
            f"{corner}: {clipped}/{target.size} samples outside the achievable "
            "load range; check vehicle configuration")

    xdot = _forward_diff(xd, rate)
    check = solve_wheel_loads(cfg, physics.body, curve, physics.tire,
                              x_a, xd, xdot, a_u, kappa, alpha)
    fz = check["fz"]
    mismatch = np.abs(fz - target)
    if clipped == 0 and mismatch.max() > 1e-6:
        raise InversionFailure(
            f"{corner}: inverse design residual {mismatch.max():.3e} N")
    return xd, xdot, fz, clipped


def simulate_vehicle(vehicle: VehicleParams,
                     excitation: Excitation) -> dict[str, CornerTruth]:
    """Per-corner ground truth consistent with the linkage physics.

    Quasi-static load transfer distributes the demanded accelerations to
    corner loads; x_d is inverse-designed through the linkage so that the
    stored sensors reproduce those loads exactly.
    """
    g_axis = np.full_like(excitation.a_x, GRAVITY)
    a_u = np.column_stack([excitation.a_x, excitation.a_y, g_axis])
    kappa = KAPPA_PER_AX * excitation.a_x
    alpha = ALPHA_PER_AY * excitation.a_y
    result = {}
    for corner in CORNERS:
        physics = vehicle.corners[corner]
        if corner.startswith("front"):
            x_a = excitation.x_a if corner.endswith("left") else -excitation.x_a
        else:
            x_a = np.zeros_like(excitation.x_a)
        target = quasi_static_load(vehicle, corner, excitation.a_x, excitation.a_y)
        xd, xdot, fz, clipped = _invert_corner(
            physics, target, x_a, a_u, kappa, alpha, excitation.rate, corner)
        result[corner] = CornerTruth(
            corner=corner, t=excitation.t.copy(), fz=fz, x_a=np.asarray(x_a),
            x_d=xd, xdot_d=xdot, a_u=a_u, slip_kappa=kappa, slip_alpha=alpha,
            clipped=clipped)
    return result


@dataclass(frozen=True)
class DatasetSegment:
    """One corner's time series for one driving segment."""

    segment_id: str
    corner: str
    style: str
    scenario_seed: int
    noise_seed: int
    vehicle_hash: str
    rate: float
    t: np.ndarray
    sensors: dict[str, np.ndarray]
    fz_truth: np.ndarray
    clean_sensors: dict[str, np.ndarray] | None = None
    noise: NoiseSpec | None = None
    clipped: int = 0

    def __post_init__(self):
        n = self.t.shape[0]
        for name in SENSOR_CHANNELS:
            if name not in self.sensors:
                raise ValidationError(f"segment missing sensor channel {name}")
            if self.sensors[name].shape[0] != n:
                raise ValidationError(f"channel {name} length mismatch")
        if self.fz_truth.shape[0] != n:
            raise ValidationError("ground-truth length mismatch")
        dt = np.diff(self.t)
        if n > 1 and (np.any(dt <= 0)
                      or np.abs(dt - 1.0 / self.rate).max() > 1e-9):
            raise ValidationError("timestamps must increase at the fixed rate")

    @property
    def n_samples(self) -> int:
        return self.t.shape[0]

    def file_name(self) -> str:
        return f"{self.segment_id}__{self.corner}.csv"

    def input_matrix(self, clean: bool = False) -> np.ndarray:
        """(n, 6) matrix of estimator input channels."""
        src = self.clean_sensors if clean else self.sensors
        if src is None:
            raise ValidationError("segment has no clean sensor copy")
        return np.column_stack([src[c] for c in CHANNELS])


def segment_from_truth(truth: CornerTruth, vehicle: VehicleParams,
                       style: str, scenario_seed: int,
                       rate: float) -> DatasetSegment:
    sensors = {
        "x_a": truth.x_a.copy(), "x_d": truth.x_d.copy(),
        "xdot_d": truth.xdot_d.copy(),
        "a_ux": truth.a_u[:, 0].copy(), "a_uy": truth.a_u[:, 1].copy(),
        "a_uz": truth.a_u[:, 2].copy(),
        "slip_kappa": truth.slip_kappa.copy(), "slip_alpha": truth.slip_alpha.copy(),
    }
    segment_id = f"{vehicle.vehicle_id}_{style}_s{scenario_seed}"
    return DatasetSegment(
        segment_id=segment_id, corner=truth.corner, style=style,
        scenario_seed=scenario_seed, noise_seed=-1,
        vehicle_hash=vehicle.vehicle_hash(), rate=rate,
        t=truth.t.copy(), sensors=sensors, fz_truth=truth.fz.copy(),
        clean_sensors={k: v.copy() for k, v in sensors.items()},
        clipped=truth.clipped)


def inject_noise(segment: DatasetSegment, spec: NoiseSpec,
                 seed: int) -> DatasetSegment:
    """Gaussian noise (plus optional spikes) on sensor channels only."""
    clean = segment.clean_sensors or segment.sensors
    rng = np.random.default_rng(np.random.SeedSequence(
        [seed, hash_seed(segment.segment_id), hash_seed(segment.corner)]))
    noisy = {}
    for name in SENSOR_CHANNELS:
        base = clean[name]
        std = spec.channel_std(name)
        values = base + std * rng.standard_normal(base.shape[0])
        if spec.outlier_rate > 0.0 and std > 0.0:
            hits = rng.random(base.shape[0]) < spec.outlier_rate
            values = values + hits * spec.outlier_scale * std \
                * rng.standard_normal(base.shape[0])
        noisy[name] = values
    return replace(segment, sensors=noisy,
                   clean_sensors={k: v.copy() for k, v in clean.items()},
                   noise=spec, noise_seed=seed)


def simulate_segments(vehicle: VehicleParams, scenario: Scenario,
                      noise: NoiseSpec | None = None,
                      noise_seed: int = 0) -> list[DatasetSegment]:
    """All four corner segments for one scenario, noisy when a spec is given."""
    excitation = generate_scenario(scenario.style, scenario.seed,
                                   scenario.duration, scenario.rate)
    truths = simulate_vehicle(vehicle, excitation)
    segments = []
    for corner in CORNERS:
        segment = segment_from_truth(truths[corner], vehicle, scenario.style,
                                     scenario.seed, scenario.rate)
        if noise is not None:
            segment = inject_noise(segment, noise, noise_seed)
        segments.append(segment)
    return segments


# ---------------------------------------------------------------------------
# Dataset files: one CSV per corner segment, 17-significant-digit decimals,
# a .clean.csv sidecar with the noise-free sensors, and a manifest.

def _format_row(values) -> str:
    return ",".join(f"{v:.17g}" for v in values)


def _write_csv(path, t, sensors, fz) -> None:
    columns = [t] + [sensors[c] for c in SENSOR_CHANNELS] + [fz]
    lines = [",".join(CSV_COLUMNS)]
    for row in zip(*columns):
        lines.append(_format_row(row))
    path.write_text("\n".join(lines) + "\n")


def write_dataset(segments: list[DatasetSegment], out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# wheelload-dataset v1"]
    for segment in segments:
        path = out / segment.file_name()
        _write_csv(path, segment.t, segment.sensors, segment.fz_truth)
        if segment.clean_sensors is not None:
            clean_path = out / segment.file_name().replace(".csv", ".clean.csv")
            _write_csv(clean_path, segment.t, segment.clean_sensors,
                       segment.fz_truth)
        noise = segment.noise.canonical() if segment.noise else "-"
        lines.append(
            f"file={segment.file_name()} segment={segment.segment_id} "
            f"corner={segment.corner} style={segment.style} "
            f"scenario_seed={segment.scenario_seed} noise_seed={segment.noise_seed} "
            f"vehicle={segment.vehicle_hash} rate={segment.rate:.17g} "
            f"clipped={segment.clipped} noise={noise}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _read_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray], np.ndarray]:
    text = path.read_text().strip().split("\n")
    header = tuple(text[0].split(","))
    for column in CSV_COLUMNS:
        if column not in header:
            raise SchemaMismatch(f"{path.name}: missing column {column!r}")
    if header != CSV_COLUMNS:
        raise SchemaMismatch(
            f"{path.name}: unexpected column order {header}")
    data = np.array([[float(v) for v in line.split(",")] for line in text[1:]])
    t = data[:, 0]
    sensors = {name: data[:, i + 1] for i, name in enumerate(SENSOR_CHANNELS)}
    return t, sensors, data[:, -1]


def read_dataset(in_dir) -> list[DatasetSegment]:
    from pathlib import Path

    root = Path(in_dir)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise SchemaMismatch(f"no manifest.txt in {root}")
    lines = manifest.read_text().strip().split("\n")
    if not lines or not lines[0].startswith("# wheelload-dataset v1"):
        raise SchemaMismatch("unrecognized dataset manifest version")
    segments = []
    for line in lines[1:]:
        if not line.strip() or line.startswith("#"):
            continue
        meta = dict(item.split("=", 1) for item in line.split(" "))
        t, sensors, fz = _read_csv(root / meta["file"])
        clean_path = root / meta["file"].replace(".csv", ".clean.csv")
        clean = None
        if clean_path.exists():
            _, clean, _ = _read_csv(clean_path)
        noise = None if meta["noise"] == "-" else NoiseSpec.from_canonical(
            meta["noise"])
        segments.append(DatasetSegment(
            segment_id=meta["segment"], corner=meta["corner"],
            style=meta["style"], scenario_seed=int(meta["scenario_seed"]),
            noise_seed=int(meta["noise_seed"]), vehicle_hash=meta["vehicle"],
            rate=float(meta["rate"]), t=t, sensors=sensors, fz_truth=fz,
            clean_sensors=clean, noise=noise, clipped=int(meta["clipped"])))
    return segments


def dataset_hash(segments: list[DatasetSegment]) -> str:
    """Stable identity for a segment collection, for report comparison."""
    parts = []
    for segment in sorted(segments, key=lambda s: (s.segment_id, s.corner)):
        parts.append(f"{segment.segment_id}|{segment.corner}|{segment.n_samples}"
                     f"|{segment.vehicle_hash}|{segment.noise_seed}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]
