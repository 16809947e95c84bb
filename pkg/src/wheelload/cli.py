"""Command-line surface tying the toolkit together.

Subcommands: geometry, physics, simulate, train, evaluate, compare,
ablate. Exit codes: 0 success, 2 validation/schema error, 3 numerical
failure. Set WHEELLOAD_VERBOSE=1 for progress chatter on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .config import (
    config_hash,
    load_config,
    noise_from_config,
    train_config_from_config,
    vehicle_from_config,
)
from .dynamics import solve_wheel_loads
from .errors import NumericalError, ValidationError
from .evaluate import (
    ablation_suite,
    ablation_table,
    compare,
    evaluate_checkpoint,
    read_report,
    write_report,
    write_run_manifest,
)
from .geometry import SINGULAR_COND, constraint_condition
from .simulate import (
    CORNERS,
    Scenario,
    dataset_hash,
    read_dataset,
    simulate_segments,
    write_dataset,
)
from .simulate import _read_csv  # frames share the dataset schema
from .training import AblationMode, train, write_training_report


def _verbose() -> bool:
    return os.environ.get("WHEELLOAD_VERBOSE", "0") not in ("", "0")


def _log(message: str) -> None:
    if _verbose():
        print(message, file=sys.stderr)


def _cmd_geometry(args) -> int:
    cfg = load_config(args.config)
    vehicle = vehicle_from_config(cfg)
    geo = vehicle.corners[args.corner].config
    print(f"derived link lengths for corner {args.corner}:")
    for name, length in geo.link_lengths().items():
        print(f"  {name:8s} {length:.6f} m")
    cond_ref = constraint_condition(geo, 0.0, geo.x_d0)
    worst = cond_ref
    grid = np.linspace(-1.0, 1.0, args.grid)
    for fx in grid:
        for fd in grid:
            worst = max(worst, constraint_condition(
                geo, fx * geo.rack_travel * 0.98,
                geo.x_d0 + fd * geo.spring_travel * 0.98))
    print(f"constraint condition number: {cond_ref:.1f} at reference, "
          f"{worst:.1f} worst over travel")
    print(f"singularity margin: {SINGULAR_COND / worst:.2e}x below the "
          "failure threshold")
    return 0


def _cmd_physics(args) -> int:
    cfg = load_config(args.config)
    vehicle = vehicle_from_config(cfg)
    physics = vehicle.corners[args.corner]
    t, sensors, _ = _read_csv(Path(args.input))
    out = solve_wheel_loads(
        physics.config, physics.body, physics.curve, physics.tire,
        sensors["x_a"], sensors["x_d"], sensors["xdot_d"],
        np.column_stack([sensors["a_ux"], sensors["a_uy"], sensors["a_uz"]]),
        sensors["slip_kappa"], sensors["slip_alpha"])
    lines = ["t,fz,fz_raw,f_p,f_u1,f_u2,f_t,f_l1,f_l2,"
             "force_residual,moment_residual,valid"]
    mags = out["magnitudes"]
    for i in range(t.shape[0]):
        lines.append(",".join(
            [f"{t[i]:.17g}", f"{out['fz'][i]:.17g}", f"{out['fz_raw'][i]:.17g}"]
            + [f"{mags[i, j]:.17g}" for j in range(6)]
            + [f"{out['force_residual'][i]:.17g}",
               f"{out['moment_residual'][i]:.17g}",
               str(int(out["valid"][i]))]))
    Path(args.output).write_text("\n".join(lines) + "\n")
    n_bad = int((~out["valid"]).sum())
    print(f"solved {t.shape[0]} frames ({n_bad} invalid) -> {args.output}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = load_config(args.vehicle)
    vehicle = vehicle_from_config(cfg)
    if args.noise is not None:
        noise = noise_from_config(load_config(args.noise))
    else:
        noise = noise_from_config(cfg)
    segments = []
    for seed in range(args.seed0, args.seed0 + args.segments):
        _log(f"simulating {vehicle.vehicle_id} {args.style} seed {seed}")
        scenario = Scenario(args.style, seed, duration=args.duration,
                            rate=args.rate)
        segments += simulate_segments(vehicle, scenario, noise,
                                      noise_seed=args.noise_seed + seed)
    write_dataset(segments, args.out)
    print(f"wrote {len(segments)} corner segments "
          f"({args.segments} scenarios x {len(CORNERS)} corners) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    vehicle = vehicle_from_config(cfg)
    config = train_config_from_config(
        cfg, ablation=AblationMode(args.ablation), seed=args.seed)
    segments = read_dataset(args.data)
    _log(f"training on {len(segments)} segments, corner {config.corner}")
    result = train(segments, vehicle, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, result.estimator, rng_state=result.rng_state,
                    extra={"train_ids": result.train_ids,
                           "val_ids": result.val_ids,
                           "sigma_data": result.weights.sigma_data,
                           "sigma_phy": result.weights.sigma_phy,
                           "noise_floor": result.noise_floor})
    report_path = out.with_suffix(".report.csv")
    write_training_report(report_path, result.report)
    manifest_path = out.with_suffix(".manifest.txt")
    write_run_manifest(manifest_path, {
        "tool_version": __version__,
        "config_hash": config_hash(args.config),
        "seed": args.seed,
        "split_seed": config.split_seed,
        "ablation": config.ablation.value,
        "corner": config.corner,
        "dataset_hash": dataset_hash(segments),
        "dataset_manifest_path": str(Path(args.data) / "manifest.txt"),
        "checkpoint_path": str(out),
        "report_path": str(report_path),
    })
    final = result.report[-1]["val_rmse"] if result.report else float("nan")
    print(f"trained {config.ablation.value} seed {args.seed}: "
          f"val RMSE {final:.2f} N -> {out}")
    return 0


def _cmd_evaluate(args) -> int:
    segments = read_dataset(args.data)
    report = evaluate_checkpoint(args.checkpoint, segments,
                                 n_samples=args.samples, seed=args.seed,
                                 only_val=args.only_val, label=args.label)
    write_report(report, args.out)
    print(f"{report.label}: RMSE {report.rmse:.2f} N, "
          f"MaxError {report.max_error:.2f} N, "
          f"2-sigma coverage {report.coverage_2sigma:.1%} -> {args.out}")
    return 0


def _cmd_compare(args) -> int:
    reports = [read_report(path) for path in args.reports]
    rows = compare(reports, args.out)
    for row in rows:
        print(f"{row['label']:<16} RMSE {row['rmse']:.2f} N  "
              f"MaxError {row['max_error']:.2f} N")
    print(f"comparison table and overlays -> {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    vehicle = vehicle_from_config(cfg)
    config = train_config_from_config(cfg)
    segments = read_dataset(args.data)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = ablation_suite(segments, vehicle, config, seeds,
                          n_samples=args.samples)
    table = ablation_table(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["mode,seed,rmse,max_error,failed"]
    for row in rows:
        lines.append(f"{row['mode']},{row['seed']},{row['rmse']:.17g},"
                     f"{row['max_error']:.17g},{int(row['failed'])}")
    (out / "ablation_runs.csv").write_text("\n".join(lines) + "\n")
    lines = ["mode,rmse,max_error,seeds_ok,seeds_failed"]
    print(f"{'mode':<16}{'RMSE(N)':>12}{'MaxError(N)':>14}{'ok':>4}")
    for row in table:
        lines.append(f"{row['mode']},{row['rmse']:.17g},"
                     f"{row['max_error']:.17g},{row['seeds_ok']},"
                     f"{row['seeds_failed']}")
        print(f"{row['mode']:<16}{row['rmse']:>12.3f}{row['max_error']:>14.3f}"
              f"{row['seeds_ok']:>4}")
    (out / "ablation_table.csv").write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wheelload",
        description="Suspension-physics wheel-load estimation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geometry", help="geometry checks")
    geo_sub = p.add_subparsers(dest="geometry_command", required=True)
    chk = geo_sub.add_parser("check", help="print link lengths and margins")
    chk.add_argument("--config", required=True)
    chk.add_argument("--corner", default="front_left", choices=CORNERS)
    chk.add_argument("--grid", type=int, default=5)
    chk.set_defaults(func=_cmd_geometry)

    p = sub.add_parser("physics", help="batch physics evaluation")
    phys_sub = p.add_subparsers(dest="physics_command", required=True)
    run = phys_sub.add_parser("run", help="solve wheel loads for a frames CSV")
    run.add_argument("--config", required=True)
    run.add_argument("--corner", default="front_left", choices=CORNERS)
    run.add_argument("--input", required=True)
    run.add_argument("--output", required=True)
    run.set_defaults(func=_cmd_physics)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--vehicle", required=True, help="vehicle config file")
    p.add_argument("--style", required=True, choices=("smooth", "aggressive"))
    p.add_argument("--segments", type=int, default=5)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--noise", default=None, help="noise spec config file")
    p.add_argument("--noise-seed", type=int, default=1000)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train an estimator")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--ablation", default="full",
                   choices=[m.value for m in AblationMode])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only-val", action="store_true",
                   help="restrict to the checkpoint's held-out segments")
    p.add_argument("--label", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="compare evaluation reports")
    p.add_argument("--reports", nargs="+", required=True,
                   help="report directories from `evaluate`")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("ablate", help="run the ablation suite")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
