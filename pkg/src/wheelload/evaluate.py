"""Metrics and experiment orchestration.

RMSE is pooled over samples; the max-error metric is the mean over
segments of each segment's maximum absolute error. Evaluation runs the
Monte-Carlo predictive posterior per frame and scores its mean, dumping
(t, mean, std, truth) per segment for plotting and re-derivation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import svgplot
from .checkpoint import load_checkpoint
from .errors import DatasetMismatch, EmptySeries, ValidationError
from .estimator import WheelLoadEstimator
from .simulate import DatasetSegment, VehicleParams, dataset_hash
from .training import (
    TrainConfig,
    apply_ablation,
    segment_features,
    train,
)


def rmse(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.size == 0 or targets.size == 0:
        raise EmptySeries("rmse over an empty series")
    if predictions.shape != targets.shape:
        raise ValidationError(
            f"rmse length mismatch: {predictions.shape} vs {targets.shape}")
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


def max_error(segment_pairs) -> float:
    """Mean over segments of the within-segment max absolute error."""
    maxima = []
    for predictions, targets in segment_pairs:
        predictions = np.asarray(predictions, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if predictions.size == 0:
            raise EmptySeries("max_error over an empty segment")
        maxima.append(float(np.max(np.abs(predictions - targets))))
    if not maxima:
        raise EmptySeries("max_error needs at least one segment")
    return float(np.mean(maxima))


@dataclass
class MetricsReport:
    label: str
    corner: str
    dataset_hash: str
    rmse: float
    max_error: float
    coverage_2sigma: float
    sample_count: int
    per_segment: list[dict]
    per_corner: dict[str, float]
    series: dict[str, dict] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.per_segment:
            maxima = [row["max_abs_error"] for row in self.per_segment]
            if not (min(maxima) - 1e-9 <= self.max_error <= max(maxima) + 1e-9):
                raise ValidationError(
                    "aggregate max error must lie within the per-segment range")
        if self.rmse < 0:
            raise ValidationError("rmse must be non-negative")


def evaluate(estimator: WheelLoadEstimator, segments: list[DatasetSegment],
             n_samples: int = 64, seed: int = 0,
             label: str | None = None) -> MetricsReport:
    """Score the posterior-mean prediction on every matching segment."""
    matching = sorted((s for s in segments if s.corner == estimator.corner),
                      key=lambda s: s.segment_id)
    if not matching:
        raise ValidationError(
            f"no segments for corner {estimator.corner!r} to evaluate")
    per_segment = []
    series = {}
    pooled_pred, pooled_truth = [], []
    covered, total = 0, 0
    pairs = []
    for index, segment in enumerate(matching):
        x_cur, x_prev, truth = segment_features(segment)
        rng = np.random.default_rng(np.random.SeedSequence(
            [seed, 0xE7, index]))
        mean, std = estimator.predictive_posterior(x_cur, x_prev, n_samples, rng)
        per_segment.append({
            "segment_id": segment.segment_id,
            "style": segment.style,
            "rmse": rmse(mean, truth),
            "max_abs_error": float(np.max(np.abs(mean - truth))),
            "n": int(truth.shape[0]),
        })
        series[segment.segment_id] = {
            "t": segment.t.copy(), "mean": mean, "std": std, "truth": truth,
        }
        pooled_pred.append(mean)
        pooled_truth.append(truth)
        pairs.append((mean, truth))
        covered += int(np.sum(np.abs(mean - truth) <= 2.0 * std))
        total += truth.shape[0]
    pooled_pred = np.concatenate(pooled_pred)
    pooled_truth = np.concatenate(pooled_truth)
    aggregate_rmse = rmse(pooled_pred, pooled_truth)
    return MetricsReport(
        label=label or estimator.ablation,
        corner=estimator.corner,
        dataset_hash=dataset_hash(matching),
        rmse=aggregate_rmse,
        max_error=max_error(pairs),
        coverage_2sigma=covered / total,
        sample_count=total,
        per_segment=per_segment,
        per_corner={estimator.corner: aggregate_rmse},
        series=series,
    )


def evaluate_checkpoint(checkpoint_path, segments, n_samples: int = 64,
                        seed: int = 0, only_val: bool = False,
                        label: str | None = None) -> MetricsReport:
    estimator, payload = load_checkpoint(checkpoint_path)
    if only_val:
        val_ids = set(payload.get("extra", {}).get("val_ids", []))
        if not val_ids:
            raise ValidationError(
                "checkpoint records no validation split to filter by")
        segments = [s for s in segments if s.segment_id in val_ids]
    return evaluate(estimator, segments, n_samples, seed, label)


# ---------------------------------------------------------------------------
# Report files


def write_report(report: MetricsReport, out_dir) -> None:
    """report.json plus one per-sample CSV per segment."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series_files = {}
    for segment_id, data in sorted(report.series.items()):
        name = f"series_{segment_id}__{report.corner}.csv"
        lines = ["t,mean,std,truth"]
        for row in zip(data["t"], data["mean"], data["std"], data["truth"]):
            lines.append(",".join(f"{v:.17g}" for v in row))
        (out / name).write_text("\n".join(lines) + "\n")
        series_files[segment_id] = name
    payload = {
        "label": report.label,
        "corner": report.corner,
        "dataset_hash": report.dataset_hash,
        "rmse": report.rmse,
        "max_error": report.max_error,
        "coverage_2sigma": report.coverage_2sigma,
        "sample_count": report.sample_count,
        "per_segment": report.per_segment,
        "per_corner": report.per_corner,
        "series_files": series_files,
    }
    (out / "report.json").write_text(json.dumps(payload, sort_keys=True,
                                                indent=1) + "\n")


def read_report(report_dir) -> MetricsReport:
    root = Path(report_dir)
    payload = json.loads((root / "report.json").read_text())
    series = {}
    for segment_id, name in payload["series_files"].items():
        rows = (root / name).read_text().strip().split("\n")[1:]
        data = np.array([[float(v) for v in line.split(",")] for line in rows])
        series[segment_id] = {"t": data[:, 0], "mean": data[:, 1],
                              "std": data[:, 2], "truth": data[:, 3]}
    return MetricsReport(
        label=payload["label"], corner=payload["corner"],
        dataset_hash=payload["dataset_hash"], rmse=payload["rmse"],
        max_error=payload["max_error"],
        coverage_2sigma=payload["coverage_2sigma"],
        sample_count=payload["sample_count"],
        per_segment=payload["per_segment"], per_corner=payload["per_corner"],
        series=series)


def compare(reports: list[MetricsReport], out_dir) -> list[dict]:
    """Side-by-side table (text + CSV) and per-segment overlay charts."""
    if not reports:
        raise ValidationError("nothing to compare")
    reference = reports[0].dataset_hash
    for report in reports[1:]:
        if report.dataset_hash != reference:
            raise DatasetMismatch(
                f"report {report.label!r} was computed on a different dataset")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = [{
        "label": r.label, "rmse": r.rmse, "max_error": r.max_error,
        "coverage_2sigma": r.coverage_2sigma, "sample_count": r.sample_count,
    } for r in sorted(reports, key=lambda r: r.rmse)]
    csv_lines = ["label,rmse,max_error,coverage_2sigma,sample_count"]
    text_lines = [f"{'label':<16}{'RMSE(N)':>12}{'MaxError(N)':>14}"
                  f"{'cov2s':>8}{'n':>9}"]
    for row in rows:
        csv_lines.append(f"{row['label']},{row['rmse']:.17g},"
                         f"{row['max_error']:.17g},"
                         f"{row['coverage_2sigma']:.17g},{row['sample_count']}")
        text_lines.append(f"{row['label']:<16}{row['rmse']:>12.3f}"
                          f"{row['max_error']:>14.3f}"
                          f"{row['coverage_2sigma']:>8.3f}"
                          f"{row['sample_count']:>9}")
    (out / "comparison.csv").write_text("\n".join(csv_lines) + "\n")
    (out / "comparison.txt").write_text("\n".join(text_lines) + "\n")

    shared = set(reports[0].series)
    for report in reports[1:]:
        shared &= set(report.series)
    for segment_id in sorted(shared):
        base = reports[0].series[segment_id]
        series = [{"name": "truth", "x": base["t"], "y": base["truth"]}]
        for report in reports:
            data = report.series[segment_id]
            series.append({"name": report.label, "x": data["t"],
                           "y": data["mean"]})
        first = reports[0].series[segment_id]
        band = {"x": first["t"], "lo": first["mean"] - 2 * first["std"],
                "hi": first["mean"] + 2 * first["std"],
                "name": f"{reports[0].label} 2 sigma"}
        svgplot.line_chart(
            out / f"overlay_{segment_id}.svg",
            f"{segment_id} ({reports[0].corner})", "time (s)",
            "wheel load (N)", series, band)
    return rows


def ablation_suite(segments: list[DatasetSegment], vehicle: VehicleParams,
                   base_config: TrainConfig, seeds: list[int],
                   n_samples: int = 64) -> list[dict]:
    """Train and score every ablation mode per seed.

    Failures are recorded and the remaining modes continue. Scores use
    each run's held-out split (identical across modes by construction).
    """
    from .training import AblationMode

    rows = []
    for seed in seeds:
        for mode in AblationMode:
            config, _ = apply_ablation(mode, base_config)
            config = _with_seed(config, seed)
            row = {"mode": mode.value, "seed": seed, "failed": False,
                   "rmse": float("nan"), "max_error": float("nan")}
            try:
                result = train(segments, vehicle, config)
                held_out = [s for s in segments
                            if s.segment_id in set(result.val_ids)
                            and s.corner == config.corner]
                report = evaluate(result.estimator, held_out,
                                  n_samples=n_samples, seed=seed,
                                  label=mode.value)
                row["rmse"] = report.rmse
                row["max_error"] = report.max_error
            except Exception as exc:  # keep going, mark the failure
                row["failed"] = True
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    return rows


def ablation_table(rows: list[dict]) -> list[dict]:
    """Aggregate suite rows into one line per mode (mean over seeds)."""
    bymode: dict[str, list[dict]] = {}
    for row in rows:
        bymode.setdefault(row["mode"], []).append(row)
    table = []
    for mode, entries in bymode.items():
        ok = [e for e in entries if not e["failed"]]
        table.append({
            "mode": mode,
            "rmse": float(np.mean([e["rmse"] for e in ok])) if ok else float("nan"),
            "max_error": (float(np.mean([e["max_error"] for e in ok]))
                          if ok else float("nan")),
            "seeds_ok": len(ok),
            "seeds_failed": len(entries) - len(ok),
        })
    table.sort(key=lambda row: (np.isnan(row["rmse"]), row["rmse"]))
    return table


def _with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    from dataclasses import replace

    return replace(config, seed=seed)


def write_run_manifest(path, entries: dict) -> None:
    """Plain-text run manifest; every referenced file must exist.

    Referenced files are written relative to the manifest location so a
    rerun into a different directory produces identical bytes.
    """
    import os

    path = Path(path)
    rendered = {}
    for key, value in entries.items():
        if key.endswith("_path") and value is not None:
            if not Path(value).exists():
                raise ValidationError(f"manifest references missing file: {value}")
            value = os.path.relpath(Path(value).resolve(),
                                    path.resolve().parent)
        rendered[key] = value
    lines = [f"{key}={value}" for key, value in sorted(rendered.items())]
    path.write_text("\n".join(lines) + "\n")
