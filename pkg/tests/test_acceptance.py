"""Acceptance suite: every release criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one pass/fail
line per criterion. The desk-scale benchmark (3 vehicle variants x 2
styles x 5 scenario seeds, 20 s at 100 Hz, default sensor noise) is
generated once per session; trainings are cached across criteria.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from wheelload import autodiff as ad
from wheelload.autodiff import Var
from wheelload.bnn import (
    BayesianMLP,
    NetworkSpec,
    PriorSpec,
    VariationalLinear,
    ns_dropout_mask,
)
from wheelload.cli import main as cli_main
from wheelload.dpc import DPCEncoder, modulate
from wheelload.dynamics import (
    MagicFormulaParams,
    SpringDamperCurve,
    UnsprungBody,
    equilibrium_residual,
    solve_wheel_load,
    solve_wheel_loads,
    spring_damper_force,
)
from wheelload.evaluate import evaluate
from wheelload.fixtures import fixture_vehicle, reference_corner_config
from wheelload.geometry import LINKS, solve_pose
from wheelload.simulate import (
    CORNERS,
    GRAVITY,
    NoiseSpec,
    Scenario,
    simulate_segments,
)
from wheelload.training import (
    AblationMode,
    LossWeights,
    TrainConfig,
    elbo_loss,
    train,
)

VARIANTS = ("a", "b", "c")
STYLES = ("smooth", "aggressive")
SCENARIO_SEEDS = (0, 1, 2, 3, 4)
TRAIN_SEEDS = (0, 1, 2)
CORNER = "front_left"


def report_line(number: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {number:02d}] {status}  {name}  {detail}")
    assert ok, f"criterion {number}: {name} {detail}"


@pytest.fixture(scope="module")
def bench():
    vehicles = {v: fixture_vehicle(v) for v in VARIANTS}
    datasets = {}
    for variant in VARIANTS:
        segments = []
        for style in STYLES:
            for seed in SCENARIO_SEEDS:
                segments += simulate_segments(
                    vehicles[variant], Scenario(style, seed), NoiseSpec(),
                    noise_seed=100 + seed)
        datasets[variant] = segments
    return vehicles, datasets


@pytest.fixture(scope="module")
def trainer(bench):
    vehicles, datasets = bench
    cache = {}

    def get(variant: str, mode: AblationMode, seed: int, epochs: int = 30):
        key = (variant, mode.value, seed, epochs)
        if key not in cache:
            config = TrainConfig(epochs=epochs, seed=seed, ablation=mode)
            start = time.perf_counter()
            result = train(datasets[variant], vehicles[variant], config)
            elapsed = time.perf_counter() - start
            held = [s for s in datasets[variant]
                    if s.corner == CORNER
                    and s.segment_id in set(result.val_ids)]
            report = evaluate(result.estimator, held, n_samples=64, seed=seed,
                              label=f"{variant}:{mode.value}:s{seed}")
            cache[key] = (result, report, elapsed)
        return cache[key]

    return get


# -------------------------------------------------------------------------
# 1. kinematics correctness


def test_criterion_01_kinematics():
    cfg = reference_corner_config()
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    identity = solve_pose(cfg, 0.0, cfg.x_d0)
    identity_err = max(np.abs(identity.position(n) - getattr(cfg, n)).max()
                       for n in ("s1", "s2", "s3", "p1", "t"))
    lengths = cfg.link_lengths()
    worst_link = 0.0
    for _ in range(1000):
        x_a = rng.uniform(-cfg.rack_travel, cfg.rack_travel)
        x_d = cfg.x_d0 + rng.uniform(-cfg.spring_travel, cfg.spring_travel)
        pose = solve_pose(cfg, x_a, x_d)
        for a, b in LINKS:
            dist = np.linalg.norm(pose.position(b) - pose.position(a))
            worst_link = max(worst_link, abs(dist - lengths[f"{a}-{b}"]))
        worst_link = max(worst_link, abs(
            np.linalg.norm(pose.position("p1") - cfg.p2)
            - cfg.damper_length(x_d)))
    elapsed = time.perf_counter() - start
    ok = worst_link < 1e-8 and identity_err < 1e-9 and elapsed < 5.0
    report_line(1, "kinematics correctness", ok,
                f"link dev {worst_link:.2e} m, identity {identity_err:.2e} m, "
                f"{elapsed:.2f}s")


# -------------------------------------------------------------------------
# 2 + 3. equilibrium oracle equivalence and certificate


def _corner_parts():
    cfg = reference_corner_config()
    body = UnsprungBody(m_u=8.0, i_u=np.diag([0.35, 0.45, 0.35]))
    curve = SpringDamperCurve.from_slopes(30000.0, 650.0, cfg.x_d0,
                                          2500.0, 900.0)
    tire = MagicFormulaParams(b_x=10.0, c_x=1.9, d_x=1.0, e_x=0.97,
                              b_y=8.0, c_y=1.3, d_y=0.9, e_y=-0.5)
    return cfg, body, curve, tire


def test_criterion_02_linear_oracle():
    cfg, body, curve, tire = _corner_parts()
    rng = np.random.default_rng(23)
    start = time.perf_counter()
    worst = 0.0
    axes = (("p2", "p1"), ("u1", "s1"), ("u2", "s1"),
            ("t", "s2"), ("l1", "s3"), ("l2", "s3"))
    attach = ("p2", "u1", "u2", "t", "l1", "l2")
    for _ in range(500):
        x_a = rng.uniform(-0.04, 0.04)
        x_d = cfg.x_d0 + rng.uniform(-0.05, 0.05)
        xdot = rng.uniform(-0.5, 0.5)
        a_u = np.array([rng.uniform(-6, 6), rng.uniform(-9, 9),
                        GRAVITY + rng.uniform(-2, 2)])
        sol = solve_wheel_load(cfg, body, curve, tire, x_a, x_d, xdot, a_u,
                               clamp_negative=False)
        pose = solve_pose(cfg, x_a, x_d)
        dirs, levers = [], []
        for (a, b), att in zip(axes, attach):
            d = pose.position(b) - pose.position(a)
            dirs.append(d / np.linalg.norm(d))
            levers.append(pose.position(att) - pose.cg)
        matrix = np.zeros((6, 6))
        for j in range(1, 6):
            matrix[:3, j - 1] = dirs[j]
            matrix[3:, j - 1] = np.cross(levers[j], dirs[j])
        matrix[2, 5] = 1.0
        f_p = spring_damper_force(curve, x_d, xdot)
        rhs = np.concatenate([body.m_u * a_u - f_p * dirs[0],
                              -f_p * np.cross(levers[0], dirs[0])])
        expected = np.linalg.solve(matrix, rhs)
        got = np.array([sol.f_u1, sol.f_u2, sol.f_t, sol.f_l1, sol.f_l2,
                        sol.f_z_raw])
        scale = max(1.0, np.abs(expected).max())
        worst = max(worst, np.abs(got - expected).max() / scale)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 10.0
    report_line(2, "equilibrium linear-oracle equivalence", ok,
                f"rel dev {worst:.2e}, {elapsed:.2f}s")


def test_criterion_03_equilibrium_certificate():
    cfg, body, curve, tire = _corner_parts()
    rng = np.random.default_rng(29)
    worst_force, worst_moment = 0.0, 0.0
    for _ in range(200):
        x_a = rng.uniform(-0.04, 0.04)
        x_d = cfg.x_d0 + rng.uniform(-0.05, 0.05)
        xdot = rng.uniform(-0.5, 0.5)
        a_u = np.array([rng.uniform(-6, 6), rng.uniform(-9, 9), GRAVITY])
        kappa = rng.uniform(-0.005, 0.005)
        alpha = rng.uniform(-0.01, 0.01)
        sol = solve_wheel_load(cfg, body, curve, tire, x_a, x_d, xdot, a_u,
                               kappa, alpha)
        pose = solve_pose(cfg, x_a, x_d)
        f_res, m_res = equilibrium_residual(pose, body, tire, sol, a_u,
                                            kappa, alpha)
        worst_force = max(worst_force, f_res)
        worst_moment = max(worst_moment, m_res)
    ok = worst_force <= 1e-6 and worst_moment <= 1e-6
    report_line(3, "equilibrium certificate", ok,
                f"force {worst_force:.2e} N, moment {worst_moment:.2e} N m")


# -------------------------------------------------------------------------
# 4. gradient suite


def _bounded(rng, shape):
    return rng.uniform(0.5, 1.5, shape) * np.where(rng.random(shape) < 0.5,
                                                   -1.0, 1.0)


# probes are scaled to |f| ~ 1e-4 so the h = 1e-6 central differences keep
# their rounding noise far below the 1e-8 denominator floor; gradient bugs
# still surface at full relative size
PROBE_SCALE = 1e-4


def _check_variational(rng) -> float:
    layer = VariationalLinear(3, 2, rng)
    eps_w = _bounded(rng, (3, 2))
    eps_b = _bounded(rng, 2)
    x0 = rng.standard_normal((4, 3))

    def with_mu(v):
        w = ad.add(v, ad.mul(ad.softplus(layer.rho_w), Var(eps_w)))
        b = ad.add(layer.mu_b, ad.mul(ad.softplus(layer.rho_b), Var(eps_b)))
        return ad.mul(ad.vmean(ad.tanh(ad.add(ad.matmul(Var(x0), w), b))),
                      PROBE_SCALE)

    def with_rho(v):
        w = ad.add(layer.mu_w, ad.mul(ad.softplus(v), Var(eps_w)))
        b = ad.add(layer.mu_b, ad.mul(ad.softplus(layer.rho_b), Var(eps_b)))
        return ad.mul(ad.vmean(ad.tanh(ad.add(ad.matmul(Var(x0), w), b))),
                      PROBE_SCALE)

    return max(ad.finite_diff_check(with_mu, layer.mu_w.value),
               ad.finite_diff_check(with_rho, layer.rho_w.value))


def _check_ns_dropout(rng) -> float:
    mask = ns_dropout_mask((3, 4), 1.0, rng)
    x0 = rng.standard_normal((3, 4))

    def f(v):
        return ad.mul(ad.vmean(ad.square(ad.mul(v, Var(mask)))), PROBE_SCALE)

    return ad.finite_diff_check(f, x0)


def _check_film(rng) -> float:
    f0 = rng.standard_normal((2, 5))
    g0 = 1.0 + 0.3 * rng.standard_normal((2, 5))
    b0 = 0.3 * rng.standard_normal((2, 5))
    checks = [
        ad.finite_diff_check(
            lambda v: ad.mul(ad.vmean(ad.square(modulate(v, Var(g0), Var(b0)))),
                             PROBE_SCALE), f0),
        ad.finite_diff_check(
            lambda v: ad.mul(ad.vmean(ad.square(modulate(Var(f0), v, Var(b0)))),
                             PROBE_SCALE), g0),
        ad.finite_diff_check(
            lambda v: ad.mul(ad.vmean(ad.square(modulate(Var(f0), Var(g0), v))),
                             PROBE_SCALE), b0),
    ]
    return max(checks)


def _check_dpc(rng) -> float:
    enc = DPCEncoder((3,), rng, state_width=2, repr_width=4, hidden=(4,))
    enc.head.w.value = 0.3 * rng.standard_normal(enc.head.w.value.shape)
    x = rng.standard_normal((3, 2))
    prev = rng.standard_normal((3, 2))
    feat = rng.standard_normal((3, 3))

    def f(v):
        saved = enc.head.w
        enc.head.w = v
        gamma, beta = enc.encode(Var(x), Var(prev))[0]
        out = ad.mul(ad.vmean(ad.square(modulate(Var(feat), gamma, beta))),
                     PROBE_SCALE)
        enc.head.w = saved
        return out

    return ad.finite_diff_check(f, enc.head.w.value)


def _check_elbo(rng) -> float:
    spec = NetworkSpec(input_width=2, hidden=(4,), output_width=1)
    net = BayesianMLP(spec, rng)
    eps = [( _bounded(rng, layer.mu_w.value.shape),
             _bounded(rng, layer.mu_b.value.shape)) for layer in net.layers]
    mask = ns_dropout_mask((5, 4), 1.0, rng)
    x = rng.standard_normal((5, 2))
    y = rng.standard_normal(5)
    xc = rng.standard_normal((3, 2))
    yc = rng.standard_normal(3)
    weights = LossWeights(sigma_data=0.8, sigma_phy=1.6)
    target = net.layers[0]

    def forward(v, inputs):
        h = Var(inputs)
        for i, layer in enumerate(net.layers[:-1]):
            mu_w = v if i == 0 else layer.mu_w
            w = ad.add(mu_w, ad.mul(ad.softplus(layer.rho_w), Var(eps[i][0])))
            b = ad.add(layer.mu_b,
                       ad.mul(ad.softplus(layer.rho_b), Var(eps[i][1])))
            h = ad.tanh(ad.add(ad.matmul(h, w), b))
            if inputs is x:
                h = ad.mul(h, Var(mask))
        last = net.layers[-1]
        w = ad.add(last.mu_w, ad.mul(ad.softplus(last.rho_w),
                                     Var(eps[-1][0])))
        return ad.add(ad.matmul(h, w), last.mu_b)

    def f(v):
        kl = None
        for i, layer in enumerate(net.layers):
            mu_w = v if i == 0 else layer.mu_w
            sigma = ad.softplus(layer.rho_w)
            term = ad.vsum(ad.sub(ad.add(
                ad.sub(Var(0.0), ad.log(sigma)),
                ad.mul(ad.add(ad.square(sigma), ad.square(mu_w)), 0.5)), 0.5))
            kl = term if kl is None else ad.add(kl, term)
        return ad.mul(
            elbo_loss(forward(v, x), y, forward(v, xc), yc, kl, weights,
                      dataset_size=50, data_scale=1.0 / 5,
                      physics_scale=1.0 / 3),
            PROBE_SCALE * 0.1)

    return ad.finite_diff_check(f, target.mu_w.value)


def test_criterion_04_gradient_suite():
    start = time.perf_counter()
    worst = {"variational": 0.0, "ns-dropout": 0.0, "film": 0.0,
             "dpc": 0.0, "elbo": 0.0}
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        worst["variational"] = max(worst["variational"], _check_variational(rng))
        worst["ns-dropout"] = max(worst["ns-dropout"], _check_ns_dropout(rng))
        worst["film"] = max(worst["film"], _check_film(rng))
        worst["dpc"] = max(worst["dpc"], _check_dpc(rng))
        worst["elbo"] = max(worst["elbo"], _check_elbo(rng))
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-5 for v in worst.values()) and elapsed < 60.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report_line(4, "gradient suite (100 seeds)", ok,
                f"{detail}, {elapsed:.1f}s")


# -------------------------------------------------------------------------
# 5 + 6. stochastic regularizer statistics and KL properties


def test_criterion_05_mask_statistics():
    ok = True
    details = []
    for sigma in (0.5, 1.0, 2.0):
        rng = np.random.default_rng(int(sigma * 1000))
        mask = ns_dropout_mask((1_000_000,), sigma, rng)
        ok &= mask.min() > 0.5 and mask.max() < 1.0
        details.append(f"sigma {sigma}: [{mask.min():.4f}, {mask.max():.4f}] "
                       f"mean {mask.mean():.5f}")
        if sigma == 1.0:
            ok &= abs(mask.mean() - 0.75) < 0.002
    report_line(5, "bounded-mask statistics", ok, "; ".join(details))


def test_criterion_06_kl_properties():
    dev = np.random.default_rng(41)
    mu = dev.normal(0.0, 2.0, 10_000)
    sigma = dev.uniform(0.05, 3.0, 10_000)
    tau = dev.uniform(0.2, 3.0, 10_000)
    kl = np.log(tau / sigma) + (sigma ** 2 + mu ** 2) / (2 * tau ** 2) - 0.5
    non_negative = kl.min() > -1e-12

    layer = VariationalLinear(4, 4, np.random.default_rng(0),
                              prior=PriorSpec(1.0))
    layer.mu_w.value[:] = 0.0
    layer.mu_b.value[:] = 0.0
    layer.rho_w.value[:] = np.log(np.expm1(1.0))
    layer.rho_b.value[:] = np.log(np.expm1(1.0))
    at_prior = abs(layer.kl(PriorSpec(1.0)).value)

    single = VariationalLinear(1, 1, np.random.default_rng(0))
    single.mu_w.value = np.array([[1.0]])
    single.rho_w.value = np.array([[np.log(np.expm1(1.0))]])
    single.mu_b.value = np.array([0.0])
    single.rho_b.value = np.array([np.log(np.expm1(1.0))])
    analytic = abs(single.kl(PriorSpec(1.0)).value - 0.5)

    ok = non_negative and at_prior < 1e-12 and analytic < 1e-12
    report_line(6, "KL properties", ok,
                f"min {kl.min():.1e}, at-prior {at_prior:.1e}, "
                f"analytic dev {analytic:.1e}")


# -------------------------------------------------------------------------
# 7. conditioning identity at init


def test_criterion_07_identity_at_init():
    spec = NetworkSpec()
    net = BayesianMLP(spec, np.random.default_rng(7))
    enc = DPCEncoder(spec.hidden, np.random.default_rng(8))
    x = np.random.default_rng(9).standard_normal((32, 12))
    film = enc.encode(Var(x[:, :6]), Var(x[:, 6:]))
    conditioned = net.forward(Var(x), film=film, mode="mean")
    plain = net.forward(Var(x), film=None, mode="mean")
    ok = np.array_equal(conditioned.value, plain.value)
    report_line(7, "conditioning identity at init", ok, "bit-for-bit")


# -------------------------------------------------------------------------
# 8. simulator consistency


def test_criterion_08_simulator_consistency(bench):
    vehicles, datasets = bench
    worst_consistency = 0.0
    worst_conservation = 0.0
    for variant in VARIANTS:
        vehicle = vehicles[variant]
        by_scenario = {}
        for segment in datasets[variant]:
            physics = vehicle.corners[segment.corner]
            x = segment.input_matrix(clean=True)
            out = solve_wheel_loads(
                physics.config, physics.body, physics.curve, physics.tire,
                x[:, 0], x[:, 1], x[:, 2], x[:, 3:6],
                segment.clean_sensors["slip_kappa"],
                segment.clean_sensors["slip_alpha"])
            assert out["valid"].all()
            worst_consistency = max(
                worst_consistency, np.abs(out["fz"] - segment.fz_truth).max())
            by_scenario.setdefault(segment.segment_id, []).append(
                segment.fz_truth)
        for segment_id, loads in by_scenario.items():
            assert len(loads) == len(CORNERS)
            total = np.sum(loads, axis=0)
            worst_conservation = max(worst_conservation,
                                     np.abs(total - vehicle.weight).max())
    ok = worst_consistency < 1e-3 and worst_conservation < 1e-3
    report_line(8, "simulator consistency", ok,
                f"physics dev {worst_consistency:.2e} N, "
                f"conservation dev {worst_conservation:.2e} N")


# -------------------------------------------------------------------------
# 9. end-to-end training quality


def _held_out_floor(vehicle, result, segments) -> float:
    """Noise floor oracle: physics on noisy sensors vs clean truth."""
    errors = []
    for segment in segments:
        if segment.corner != CORNER \
                or segment.segment_id not in set(result.val_ids):
            continue
        physics = vehicle.corners[CORNER]
        x = segment.input_matrix(clean=False)
        out = solve_wheel_loads(
            physics.config, physics.body, physics.curve, physics.tire,
            x[:, 0], x[:, 1], x[:, 2], x[:, 3:6],
            segment.sensors["slip_kappa"], segment.sensors["slip_alpha"])
        good = out["valid"]
        errors.append(out["fz"][good] - segment.fz_truth[good])
    stacked = np.concatenate(errors)
    return float(np.sqrt(np.mean(stacked ** 2)))


def _pooled_rmse(reports) -> float:
    num, count = 0.0, 0
    for report in reports:
        num += report.rmse ** 2 * report.sample_count
        count += report.sample_count
    return float(np.sqrt(num / count))


def test_criterion_09_end_to_end_training(bench, trainer):
    vehicles, datasets = bench
    ok = True
    details = []
    for seed in TRAIN_SEEDS:
        trained_reports, untrained_reports, floors, times = [], [], [], []
        for variant in VARIANTS:
            result, report, elapsed = trainer(variant, AblationMode.FULL, seed)
            trained_reports.append(report)
            times.append(elapsed)
            floors.append(_held_out_floor(vehicles[variant], result,
                                          datasets[variant]))
            result0, report0, _ = trainer(variant, AblationMode.FULL, seed,
                                          epochs=0)
            untrained_reports.append(report0)
        rmse_trained = _pooled_rmse(trained_reports)
        rmse_untrained = _pooled_rmse(untrained_reports)
        floor = float(np.sqrt(np.mean(np.square(floors))))
        seed_ok = (rmse_trained <= 1.5 * floor
                   and rmse_trained <= 0.5 * rmse_untrained
                   and max(times) <= 600.0)
        ok &= seed_ok
        details.append(
            f"seed {seed}: RMSE {rmse_trained:.2f} N (floor {floor:.2f}, "
            f"untrained {rmse_untrained:.2f}, max {max(times):.0f}s)")
    report_line(9, "end-to-end training quality", ok, "; ".join(details))


# -------------------------------------------------------------------------
# 10. ablation direction


def test_criterion_10_ablation_direction(trainer):
    start = time.perf_counter()
    wins_basic, wins_nodpc = 0, 0
    rows = []
    for seed in TRAIN_SEEDS:
        full = trainer("a", AblationMode.FULL, seed)[1].rmse
        basic = trainer("a", AblationMode.BASIC_MODEL, seed)[1].rmse
        nodpc = trainer("a", AblationMode.NO_DPC, seed)[1].rmse
        nobayes = trainer("a", AblationMode.NO_BAYES, seed)[1].rmse
        nodrop = trainer("a", AblationMode.NO_NSDROPOUT, seed)[1].rmse
        wins_basic += full <= basic
        wins_nodpc += full <= nodpc
        rows.append(f"seed {seed}: full {full:.2f} basic {basic:.2f} "
                    f"no-dpc {nodpc:.2f} no-bayes {nobayes:.2f} "
                    f"no-nsdropout {nodrop:.2f}")
    elapsed = time.perf_counter() - start
    ok = wins_basic >= 2 and wins_nodpc >= 2 and elapsed < 2.5 * 3600
    report_line(10, "ablation direction", ok,
                f"full<=basic {wins_basic}/3, full<=no-dpc {wins_nodpc}/3; "
                + "; ".join(rows))


# -------------------------------------------------------------------------
# 11. uncertainty sanity


def test_criterion_11_uncertainty(trainer):
    ok = True
    details = []
    for seed in TRAIN_SEEDS:
        stds, covered, total = [], 0, 0
        for variant in VARIANTS:
            _, report, _ = trainer(variant, AblationMode.FULL, seed)
            for data in report.series.values():
                stds.append(data["std"].min())
            covered += sum(
                np.sum(np.abs(d["mean"] - d["truth"]) <= 2 * d["std"])
                for d in report.series.values())
            total += report.sample_count
        coverage = covered / total
        seed_ok = min(stds) > 0.0 and coverage >= 0.80
        ok &= seed_ok
        details.append(f"seed {seed}: min std {min(stds):.3f} N, "
                       f"coverage {coverage:.3f}")
    report_line(11, "uncertainty sanity", ok, "; ".join(details))


# -------------------------------------------------------------------------
# 12. pipeline bit-reproducibility


def test_criterion_12_pipeline_determinism(tmp_path):
    config_src = Path(__file__).resolve().parent.parent / "configs" / "fsae_a.cfg"
    text = config_src.read_text().split("[train]")[0]
    text += ("[train]\nepochs = 4\nbatch_size = 128\ncorner = front_left\n"
             "collocation_count = 256\ncollocation_batch = 128\n"
             "hidden = [32, 32]\n")
    cfg = tmp_path / "vehicle.cfg"
    cfg.write_text(text)

    trees = []
    for name in ("one", "two"):
        root = tmp_path / name
        data = root / "data"
        ckpt = root / "model.json"
        report = root / "report"
        cmp_dir = root / "cmp"
        assert cli_main(["simulate", "--vehicle", str(cfg), "--style",
                         "aggressive", "--segments", "3", "--duration", "6",
                         "--out", str(data)]) == 0
        assert cli_main(["train", "--data", str(data), "--config", str(cfg),
                         "--seed", "2", "--out", str(ckpt)]) == 0
        assert cli_main(["evaluate", "--checkpoint", str(ckpt), "--data",
                         str(data), "--samples", "16", "--out",
                         str(report)]) == 0
        assert cli_main(["compare", "--reports", str(report), "--out",
                         str(cmp_dir)]) == 0
        trees.append(root)

    mismatches = []
    files_a = sorted(p for p in trees[0].rglob("*") if p.is_file())
    files_b = sorted(p for p in trees[1].rglob("*") if p.is_file())
    names_a = [p.relative_to(trees[0]) for p in files_a]
    names_b = [p.relative_to(trees[1]) for p in files_b]
    if names_a != names_b:
        mismatches.append("file lists differ")
    else:
        for rel, pa, pb in zip(names_a, files_a, files_b):
            if pa.read_bytes() != pb.read_bytes():
                mismatches.append(str(rel))
    ok = not mismatches
    report_line(12, "pipeline bit-reproducibility", ok,
                f"{len(files_a)} files compared"
                + (f", mismatches: {mismatches[:3]}" if mismatches else ""))
