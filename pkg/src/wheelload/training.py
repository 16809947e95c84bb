"""Training loop: physics-guided negative-ELBO minimization.

The step objective is the mean data NLL over the batch, plus the mean
physics NLL over a collocation subsample, plus the weight-posterior KL
scaled by one over the training-set size. Collocation targets come from
the linkage physics (or the whole-vehicle baseline in the corresponding
ablation) and are cached constants, so gradients reach the network only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .bnn import NetworkSpec, PriorSpec
from .dynamics import solve_wheel_loads
from .errors import (
    EmptyCollocationSet,
    NanLoss,
    PhysicsUnavailable,
    ShapeMismatch,
    ValidationError,
)
from .estimator import Standardizer, WheelLoadEstimator
from .simulate import DatasetSegment, VehicleParams, quasi_static_load

LOG_2PI = math.log(2.0 * math.pi)


class AblationMode(str, enum.Enum):
    FULL = "full"
    BASIC_MODEL = "basic-model"
    NO_BAYES = "no-bayes"
    NO_DPC = "no-dpc"
    NO_NSDROPOUT = "no-nsdropout"


@dataclass(frozen=True)
class LossWeights:
    """Gaussian scales for the data and physics likelihoods (newtons)."""

    sigma_data: float
    sigma_phy: float

    def __post_init__(self):
        if self.sigma_data <= 0 or self.sigma_phy <= 0:
            raise ValidationError("likelihood scales must be positive")


@dataclass
class CollocationSet:
    """Sampled input points with cached physics targets.

    ``points`` holds raw-unit (current, previous) channel pairs, shape
    (n, 12); ``targets`` are newtons; invalid rows mark failed solves.
    """

    points: np.ndarray
    targets: np.ndarray
    valid: np.ndarray
    failure_ratio: float

    def __post_init__(self):
        if self.points.shape[0] != self.targets.shape[0] \
                or self.points.shape[0] != self.valid.shape[0]:
            raise ValidationError("collocation arrays must align")
        if np.any(~np.isfinite(self.targets[self.valid])):
            raise ValidationError("valid collocation targets must be finite")

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    lr_schedule: str = "cosine"
    seed: int = 0
    mc_samples: int = 1
    eval_samples: int = 64
    ablation: AblationMode = AblationMode.FULL
    corner: str = "front_left"
    hidden: tuple[int, ...] = (64, 64, 64, 64)
    ns_sigma: float = 1.0
    prior_tau: float = 1.0
    sigma_data: float | None = None
    sigma_phy: float | None = None
    use_physics: bool = True
    collocation_count: int = 2048
    collocation_batch: int = 256
    collocation_strategy: str = "halton"
    box_inflation: float = 0.10
    val_fraction: float = 0.3
    split_seed: int = 0
    # tri-state machinery overrides; None defers to the ablation mode, so
    # reductions can be combined (all three off = conventional deterministic
    # network)
    use_bayes: bool | None = None
    use_dpc: bool | None = None
    use_dropout: bool | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.mc_samples <= 0:
            raise ValidationError("counts must be positive")
        if isinstance(self.ablation, str):
            object.__setattr__(self, "ablation", AblationMode(self.ablation))
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValidationError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.collocation_strategy not in ("halton", "uniform"):
            raise ValidationError(
                f"unknown collocation strategy {self.collocation_strategy!r}")


def apply_ablation(mode: AblationMode, config: TrainConfig
                   ) -> tuple[TrainConfig, dict]:
    """Resolve an ablation mode into trainer/model switches.

    no-bayes freezes posterior scales at zero and drops the KL; no-dpc
    forces modulation to the identity with an untrained encoder;
    no-nsdropout replaces masks by one; basic-model swaps the collocation
    targets for the whole-vehicle transfer formula.
    """
    mode = AblationMode(mode)
    flags = {
        "use_bayes": mode != AblationMode.NO_BAYES,
        "use_dpc": mode != AblationMode.NO_DPC,
        "use_dropout": mode != AblationMode.NO_NSDROPOUT,
        "physics_source": ("basic" if mode == AblationMode.BASIC_MODEL
                           else "linkage"),
    }
    for key in ("use_bayes", "use_dpc", "use_dropout"):
        override = getattr(config, key)
        if override is not None:
            flags[key] = flags[key] and override
    return replace(config, ablation=mode), flags


# ---------------------------------------------------------------------------
# Loss terms


def _as_column(values) -> Var:
    if isinstance(values, Var):
        return values
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return Var(arr)


def gaussian_nll(predictions: Var, targets, sigma: float) -> Var:
    """Sum over elements of the Gaussian negative log-likelihood.

    Constants are retained so sweeps over sigma stay comparable.
    """
    targets = _as_column(targets)
    if predictions.value.shape != targets.value.shape:
        raise ShapeMismatch(
            f"predictions {predictions.value.shape} vs targets "
            f"{targets.value.shape}")
    n = targets.value.size
    # numpy scalar so a pathological sigma underflow yields inf, which the
    # trainer converts into NanLoss instead of a bare ZeroDivisionError
    inv = np.float64(1.0) / (2.0 * np.float64(sigma) ** 2)
    quad = ad.mul(ad.vsum(ad.square(ad.sub(predictions, targets))), inv)
    return ad.add(quad, n * (math.log(sigma) + 0.5 * LOG_2PI))


def data_nll(predictions: Var, targets, sigma_data: float) -> Var:
    return gaussian_nll(predictions, targets, sigma_data)


def physics_nll(predictions: Var, cached_targets, sigma_phy: float) -> Var:
    """Physics-residual NLL; the cached targets are constants on the tape."""
    cached = np.asarray(cached_targets, dtype=np.float64)
    if cached.size == 0:
        raise EmptyCollocationSet("physics loss enabled with no valid points")
    return gaussian_nll(predictions, cached, sigma_phy)


def elbo_loss(pred_data: Var, targets_data, pred_phys: Var | None, targets_phys,
              kl: Var, weights: LossWeights, dataset_size: int,
              data_scale: float = 1.0, physics_scale: float = 1.0) -> Var:
    """Negative evidence lower bound for one weight draw.

    data/physics terms are summed NLLs (optionally rescaled for minibatch
    debiasing); the KL regularizer is divided by the dataset size so the
    objective is per-datum.
    """
    loss = ad.mul(data_nll(pred_data, targets_data, weights.sigma_data),
                  data_scale)
    if pred_phys is not None:
        loss = ad.add(loss, ad.mul(
            physics_nll(pred_phys, targets_phys, weights.sigma_phy),
            physics_scale))
    return ad.add(loss, ad.mul(kl, 1.0 / dataset_size))


# ---------------------------------------------------------------------------
# Collocation


_HALTON_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def _van_der_corput(count: int, base: int) -> np.ndarray:
    out = np.zeros(count)
    for i in range(count):
        f, n, x = 1.0, i + 1, 0.0
        while n > 0:
            f /= base
            x += f * (n % base)
            n //= base
        out[i] = x
    return out


def _unit_samples(count: int, dims: int, strategy: str,
                  rng: np.random.Generator) -> np.ndarray:
    if strategy == "uniform":
        return rng.random((count, dims))
    u = np.column_stack([_van_der_corput(count, _HALTON_PRIMES[d])
                         for d in range(dims)])
    return (u + rng.random(dims)) % 1.0  # seeded toroidal shift


def segment_features(segment: DatasetSegment
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(current, previous, label) arrays for one segment."""
    x_cur = segment.input_matrix()
    x_prev = np.vstack([x_cur[:1], x_cur[:-1]])
    return x_cur, x_prev, segment.fz_truth.copy()


def build_collocation(segments: list[DatasetSegment], vehicle: VehicleParams,
                      corner: str, count: int = 2048,
                      strategy: str = "halton", seed: int = 0,
                      inflation: float = 0.10,
                      source: str = "linkage") -> CollocationSet:
    """Sample the operational box and cache physics targets.

    The box spans the training inputs, inflated per axis; previous-frame
    halves are sampled as current + an observed-range step so the
    conditioning pathway stays in distribution. Targets use zero slip.
    Solver failures are flagged, and more than half failing raises.
    """
    if count == 0:
        return CollocationSet(np.empty((0, 12)), np.empty(0),
                              np.empty(0, dtype=bool), 0.0)
    if not segments:
        raise ValidationError("collocation needs at least one training segment")
    current = np.vstack([segment_features(s)[0] for s in segments])
    deltas = np.vstack([np.diff(segment_features(s)[0], axis=0)
                        for s in segments])

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    u = _unit_samples(count, 12, strategy, rng)

    def inflate(lo, hi):
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        half = half * (1.0 + inflation) + 1e-12
        return center - half, center + half

    cur_lo, cur_hi = inflate(current.min(axis=0), current.max(axis=0))
    del_lo, del_hi = inflate(deltas.min(axis=0), deltas.max(axis=0))
    x_cur = cur_lo + u[:, :6] * (cur_hi - cur_lo)
    step = del_lo + u[:, 6:] * (del_hi - del_lo)
    x_prev = x_cur - step
    points = np.concatenate([x_cur, x_prev], axis=1)

    if source == "basic":
        targets = quasi_static_load(vehicle, corner, x_cur[:, 3], x_cur[:, 4],
                                    symmetric=True)
        valid = np.ones(count, dtype=bool)
    else:
        physics = vehicle.corners[corner]
        out = solve_wheel_loads(
            physics.config, physics.body, physics.curve, physics.tire,
            x_cur[:, 0], x_cur[:, 1], x_cur[:, 2], x_cur[:, 3:6])
        targets = out["fz"]
        valid = out["valid"]
    failure_ratio = 1.0 - float(valid.mean())
    if failure_ratio > 0.5:
        raise PhysicsUnavailable(
            f"{failure_ratio:.0%} of collocation points failed the physics "
            "solve; geometry or travel limits look wrong")
    targets = np.where(valid, targets, np.nan)
    return CollocationSet(points, targets, valid, failure_ratio)


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Adaptive moment estimation over a fixed parameter list."""

    def __init__(self, params: list[Var], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self, grads: dict[Var, np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _cosine_lr(base: float, step: int, total: int) -> float:
    if total <= 1:
        return base
    floor = 0.01 * base
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(
        math.pi * step / max(total - 1, 1)))


# ---------------------------------------------------------------------------
# Noise floor and split helpers


def physics_noise_floor(vehicle: VehicleParams, segments: list[DatasetSegment],
                        max_frames: int = 4096) -> float:
    """RMS error of the physics prior evaluated on noisy sensors.

    Uses the retained clean/noisy sensor pairs; frames whose noisy state
    leaves the travel box are skipped (caller-side skip policy).
    """
    errors = []
    used = 0
    for segment in segments:
        if segment.clean_sensors is None:
            continue
        physics = vehicle.corners[segment.corner]
        x = segment.input_matrix(clean=False)
        take = min(segment.n_samples, max(64, max_frames - used))
        x = x[:take]
        out = solve_wheel_loads(
            physics.config, physics.body, physics.curve, physics.tire,
            x[:, 0], x[:, 1], x[:, 2], x[:, 3:6],
            segment.sensors["slip_kappa"][:take],
            segment.sensors["slip_alpha"][:take])
        good = out["valid"]
        errors.append(out["fz"][good] - segment.fz_truth[:take][good])
        used += take
        if used >= max_frames:
            break
    if not errors:
        raise ValidationError("no clean sensor copies available for the floor")
    stacked = np.concatenate(errors)
    return float(np.sqrt(np.mean(stacked ** 2)))


def split_segments(segments: list[DatasetSegment], val_fraction: float,
                   split_seed: int) -> tuple[list[DatasetSegment],
                                             list[DatasetSegment]]:
    """Whole-segment split; never splits inside a segment."""
    ordered = sorted(segments, key=lambda s: s.segment_id)
    rng = np.random.default_rng(np.random.SeedSequence([split_seed, 0x5E]))
    perm = rng.permutation(len(ordered))
    n_val = max(1, int(round(val_fraction * len(ordered))))
    if len(ordered) - n_val < 1:
        raise ValidationError("not enough segments to split")
    val_ids = {ordered[i].segment_id for i in perm[:n_val]}
    train = [s for s in ordered if s.segment_id not in val_ids]
    val = [s for s in ordered if s.segment_id in val_ids]
    return train, val


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    estimator: WheelLoadEstimator
    report: list[dict]
    weights: LossWeights
    collocation: CollocationSet
    train_ids: list[str]
    val_ids: list[str]
    rng_state: dict
    config: TrainConfig
    noise_floor: float | None = None


def _stack_segments(segments: list[DatasetSegment]
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, xps, ys = [], [], []
    for segment in segments:
        x_cur, x_prev, y = segment_features(segment)
        xs.append(x_cur)
        xps.append(x_prev)
        ys.append(y)
    return np.vstack(xs), np.vstack(xps), np.concatenate(ys)


def train(segments: list[DatasetSegment], vehicle: VehicleParams,
          config: TrainConfig) -> TrainResult:
    """Run the full optimization and return the trained estimator.

    Deterministic for a fixed (dataset, config) pair: batching, weight
    draws, masks, and collocation all derive from the configured seed.
    """
    config, flags = apply_ablation(config.ablation, config)
    corner_segments = [s for s in segments if s.corner == config.corner]
    if not corner_segments:
        raise ValidationError(f"no segments for corner {config.corner!r}")
    train_segments, val_segments = split_segments(
        corner_segments, config.val_fraction, config.split_seed)

    x_train, xp_train, y_train = _stack_segments(train_segments)
    n_train = y_train.shape[0]
    scaler = Standardizer.fit(x_train, y_train)

    spec = NetworkSpec(input_width=12, hidden=config.hidden, output_width=1,
                       ns_sigma=config.ns_sigma)
    estimator = WheelLoadEstimator(spec, scaler, config.corner,
                                   config.ablation.value, config.seed,
                                   prior=PriorSpec(tau=config.prior_tau),
                                   use_bayes=flags["use_bayes"],
                                   use_dpc=flags["use_dpc"],
                                   use_dropout=flags["use_dropout"])

    noise_floor = None
    sigma_data = config.sigma_data
    if sigma_data is None:
        try:
            noise_floor = physics_noise_floor(vehicle, train_segments)
            sigma_data = noise_floor
        except ValidationError:
            sigma_data = 0.05 * float(y_train.std())
    sigma_phy = config.sigma_phy if config.sigma_phy is not None \
        else 2.0 * sigma_data
    weights = LossWeights(sigma_data=sigma_data, sigma_phy=sigma_phy)

    use_physics = config.use_physics and config.collocation_count > 0
    if use_physics:
        collocation = build_collocation(
            train_segments, vehicle, config.corner, config.collocation_count,
            config.collocation_strategy, config.seed, config.box_inflation,
            source=flags["physics_source"])
        if collocation.n_valid == 0:
            raise EmptyCollocationSet("no valid collocation points")
        col_idx = np.nonzero(collocation.valid)[0]
        col_cur = scaler.transform_x(collocation.points[col_idx, :6])
        col_prev = scaler.transform_x(collocation.points[col_idx, 6:])
        col_targets = collocation.targets[col_idx]
    else:
        collocation = CollocationSet(np.empty((0, 12)), np.empty(0),
                                     np.empty(0, dtype=bool), 0.0)

    xs_train = scaler.transform_x(x_train)
    xps_train = scaler.transform_x(xp_train)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A]))
    optimizer = Adam(estimator.parameters())
    steps_per_epoch = max(1, math.ceil(n_train / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    y_scale = scaler.y_std
    y_shift = scaler.y_mean

    report: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        epoch_data, epoch_phys, epoch_kl = 0.0, 0.0, 0.0
        for b in range(steps_per_epoch):
            rows = order[b * config.batch_size:(b + 1) * config.batch_size]
            if rows.size == 0:
                continue
            lr = _cosine_lr(config.learning_rate, step, total_steps) \
                if config.lr_schedule == "cosine" else config.learning_rate
            with Tape() as tape:
                kl = estimator.kl() if estimator.use_bayes else Var(0.0)
                data_term, phys_term = None, None
                for _ in range(config.mc_samples):
                    xb = Var(xs_train[rows])
                    xpb = Var(xps_train[rows])
                    out = estimator.forward_std(xb, xpb, rng, mode="sampled")
                    pred = ad.add(ad.mul(out, y_scale), y_shift)
                    d = ad.mul(data_nll(pred, y_train[rows], weights.sigma_data),
                               1.0 / rows.size)
                    data_term = d if data_term is None else ad.add(data_term, d)
                    if use_physics:
                        pick = rng.choice(col_idx.shape[0],
                                          size=min(config.collocation_batch,
                                                   col_idx.shape[0]),
                                          replace=False)
                        cb = Var(col_cur[pick])
                        cpb = Var(col_prev[pick])
                        out_c = estimator.forward_std(cb, cpb, rng,
                                                      mode="sampled")
                        pred_phys = ad.add(ad.mul(out_c, y_scale), y_shift)
                        p = ad.mul(physics_nll(pred_phys, col_targets[pick],
                                               weights.sigma_phy),
                                   1.0 / pick.size)
                        phys_term = p if phys_term is None \
                            else ad.add(phys_term, p)
                if config.mc_samples > 1:
                    data_term = ad.mul(data_term, 1.0 / config.mc_samples)
                    if phys_term is not None:
                        phys_term = ad.mul(phys_term, 1.0 / config.mc_samples)
                loss = ad.add(data_term, ad.mul(kl, 1.0 / n_train))
                if phys_term is not None:
                    loss = ad.add(loss, phys_term)
            if not np.isfinite(loss.value):
                raise NanLoss(f"non-finite loss at epoch {epoch}, batch {b}",
                              batch_index=b)
            grads = ad.backward(tape, loss)
            optimizer.step(grads, lr)
            step += 1
            epoch_data += float(data_term.value)
            if phys_term is not None:
                epoch_phys += float(phys_term.value)
            epoch_kl = float(kl.value)

        val_rmse = _validation_rmse(estimator, val_segments)
        report.append({
            "epoch": epoch,
            "data_nll": epoch_data / steps_per_epoch,
            "physics_nll": epoch_phys / steps_per_epoch,
            "kl": epoch_kl,
            "val_rmse": val_rmse,
            # extra diagnostic, not part of the report CSV schema
            "sigma_mean": posterior_sigma_mean(estimator),
        })

    return TrainResult(
        estimator=estimator, report=report, weights=weights,
        collocation=collocation,
        train_ids=sorted({s.segment_id for s in train_segments}),
        val_ids=sorted({s.segment_id for s in val_segments}),
        rng_state=rng.bit_generator.state, config=config,
        noise_floor=noise_floor)


def posterior_sigma_mean(estimator: WheelLoadEstimator) -> float:
    """Mean posterior scale over all weights (0 for point estimates)."""
    if not estimator.use_bayes:
        return 0.0
    total, count = 0.0, 0
    for layer in estimator.net.layers:
        for rho in (layer.rho_w.value, layer.rho_b.value):
            total += np.logaddexp(0.0, rho).sum()
            count += rho.size
    return total / count


def _validation_rmse(estimator: WheelLoadEstimator,
                     val_segments: list[DatasetSegment]) -> float:
    errors = []
    for segment in val_segments:
        x_cur, x_prev, y = segment_features(segment)
        pred = estimator.predict_mean(x_cur, x_prev)
        errors.append(pred - y)
    if not errors:
        return float("nan")
    stacked = np.concatenate(errors)
    return float(np.sqrt(np.mean(stacked ** 2)))


def write_training_report(path, report: list[dict]) -> None:
    lines = ["epoch,data_nll,physics_nll,kl,val_rmse"]
    for row in report:
        lines.append(f"{row['epoch']},{row['data_nll']:.17g},"
                     f"{row['physics_nll']:.17g},{row['kl']:.17g},"
                     f"{row['val_rmse']:.17g}")
    from pathlib import Path

    Path(path).write_text("\n".join(lines) + "\n")
