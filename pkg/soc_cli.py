#!/usr/bin/env python3
"""
soc_cli.py — simulate hybrid-pack datasets, train NARX / ANN SOC estimators,
run closed-loop estimation and compare models.

Every JSON artefact carries the seed and a checksum of the configuration that
produced it, and is written with sorted keys and no timestamps, so two runs of
the same experiment produce byte-identical files.  Timing goes to the log and
to the metrics file of ``estimate`` only.

Usage:
    python soc_cli.py simulate --preset sc_25f --profile cccv --out runs/sc
    python soc_cli.py train --data runs/sc/sc_25f_cccv_sc.csv --out runs/sc
    python soc_cli.py train --data runs/sc/sc_25f_cccv_sc.csv --model ann --out runs/sc
    python soc_cli.py estimate --bundle runs/sc/sc_25f_cccv_sc.narx.bundle.json \\
        --data runs/sc/sc_25f_cccv_sc.csv --out runs/sc
    python soc_cli.py compare --preset udds_pack --jobs 4 --out runs/udds
    python soc_cli.py selftest

Exit codes: 0 success, 2 usage / configuration error, 3 data error,
4 training failure or a failed selftest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.checks import run_selftest
from core.errors import InvalidSpec, SelftestFailed, SocError
from core.narx import NarxConfig
from core.pipeline import (
    EstimatorBundle,
    Soc0Policy,
    estimate_soc_detailed,
    fit_estimator,
    holdout_window,
    metrics_report,
)
from core.presets import ExperimentSpec, Preset, load_experiment, load_preset
from core.series import Device, SampleSeries
from core.trainer import TrainConfig, TrainReport
from sources.csv_file import CsvSource, read_series_csv, series_to_csv
from sources.simulated import SimulatedSource

log = logging.getLogger("cli")

MODEL_LABELS = {"narx": "NARXNN", "ann": "ANN"}


# ---------------------------------------------------------------------------
# Artefact helpers
# ---------------------------------------------------------------------------

def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def config_checksum(config: Dict[str, Any]) -> str:
    return sha256_text(json.dumps(config, sort_keys=True, separators=(",", ":")))


def write_atomic(path: Path, text: str) -> Path:
    """Write through a temp file in the target directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.info("wrote %s", path)
    return path


# ---------------------------------------------------------------------------
# Experiment resolution
# ---------------------------------------------------------------------------

_OVERRIDES = ("preset", "profile", "model", "seed", "dt", "name")


def resolve_spec(args: argparse.Namespace, config: Optional[Path] = None) -> ExperimentSpec:
    """Experiment file (if any) with command-line flags layered on top."""
    spec = load_experiment(config) if config else ExperimentSpec()
    update: Dict[str, Any] = {k: getattr(args, k) for k in _OVERRIDES if getattr(args, k, None) is not None}
    if getattr(args, "noiseless", False):
        update["noiseless"] = True
    if getattr(args, "epochs", None) is not None:
        update["train"] = {**spec.train, "max_epochs": args.epochs}
    return ExperimentSpec.model_validate({**spec.model_dump(), **update})


def resolve_preset(spec: ExperimentSpec) -> Tuple[ExperimentSpec, Preset]:
    if not spec.preset:
        raise InvalidSpec("no preset given (use --preset or a --config file)")
    preset = load_preset(spec.preset)
    return spec.model_copy(update={"profile": spec.profile or preset.default_profile}), preset


def experiment_configs(spec: ExperimentSpec, preset: Optional[Preset]) -> Tuple[NarxConfig, TrainConfig]:
    if preset is not None:
        return preset.narx_config(spec.narx), preset.train_config(spec.seed, spec.train)
    return NarxConfig.from_dict(spec.narx), TrainConfig.from_dict({**spec.train, "seed": spec.seed})


def run_config(spec: ExperimentSpec, narx_cfg: NarxConfig, train_cfg: TrainConfig) -> Dict[str, Any]:
    return {
        "preset": spec.preset,
        "profile": spec.profile,
        "model": spec.model,
        "dt": spec.dt,
        "noiseless": spec.noiseless,
        "narx": narx_cfg.to_dict(),
        "train": train_cfg.to_dict(),
    }


# ---------------------------------------------------------------------------
# Building blocks (shared by the subcommands)
# ---------------------------------------------------------------------------

def simulate_experiment(spec: ExperimentSpec, preset: Preset, out: Path) -> Tuple[List[SampleSeries], Dict[str, Any]]:
    source = SimulatedSource(preset, spec.profile, spec.seed, spec.dt, spec.noiseless)
    datasets = source.load()
    files: Dict[str, str] = {}
    for series in datasets:
        text = series_to_csv(series)
        path = write_atomic(out / f"{spec.label}_{series.meta['name']}.csv", text)
        files[path.name] = sha256_text(text)
    manifest = {
        **source.manifest(),
        "name": spec.label,
        "seed": spec.seed,
        "config_checksum": config_checksum(spec.model_dump()),
        "files": files,
    }
    write_atomic(out / f"{spec.label}.manifest.json", dump_json(manifest))
    return datasets, manifest


def train_dataset(
    series: SampleSeries,
    spec: ExperimentSpec,
    preset: Optional[Preset],
    out: Path,
    stem: str,
) -> Tuple[EstimatorBundle, Dict[str, TrainReport]]:
    narx_cfg, train_cfg = experiment_configs(spec, preset)
    checksum = config_checksum(run_config(spec, narx_cfg, train_cfg))
    bundle, reports = fit_estimator(series, narx_cfg=narx_cfg, train_cfg=train_cfg, model=spec.model)

    bundle_doc = {
        **bundle.to_dict(),
        "config_checksum": checksum,
        "train_config": train_cfg.to_dict(),
    }
    report_doc = {
        "model": MODEL_LABELS[bundle.model],
        "device": bundle.device.value,
        "seed": spec.seed,
        "config_checksum": checksum,
        "bundle_checksum": bundle.checksum(),
        "reports": {name: r.to_dict() for name, r in sorted(reports.items())},
    }
    write_atomic(out / f"{stem}.{bundle.model}.bundle.json", dump_json(bundle_doc))
    write_atomic(out / f"{stem}.{bundle.model}.report.json", dump_json(report_doc))
    return bundle, reports


def load_bundle(path: Path) -> Tuple[EstimatorBundle, Dict[str, Any]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return EstimatorBundle.from_dict(doc), doc


def estimate_dataset(
    bundle: EstimatorBundle,
    series: SampleSeries,
    soc0: List[float],
    train_cfg: TrainConfig,
) -> Tuple[pd.DataFrame, Optional[Dict[str, Any]], float]:
    """Closed-loop estimate; metrics only when the dataset carries ground truth."""
    started = time.perf_counter()
    estimate, segments = estimate_soc_detailed(bundle, series, soc0)
    elapsed = time.perf_counter() - started
    log.info("estimated %d samples in %.3f s", len(series), elapsed)

    frame: Dict[str, Any] = {"t": series.t}
    metrics = None
    if series.has_soc:
        frame["soc_true"] = series.soc
        frame["soc_est"] = estimate
        frame["abs_err"] = np.abs(series.soc - estimate)
        metrics = metrics_report(
            series.soc,
            estimate,
            segments,
            clamp_count=int(series.meta.get("clamp_count", 0)),
            window=holdout_window(len(series), train_cfg),
            exclude_warmup=bundle.config.max_lag,
        )
    else:
        frame["soc_est"] = estimate
    return pd.DataFrame(frame), metrics, elapsed


def frame_to_csv(df: pd.DataFrame, meta: Dict[str, Any]) -> str:
    lines = [f"# {k}={v}" for k, v in sorted(meta.items())]
    return "\n".join(lines + [df.to_csv(index=False, float_format="%.15g", lineterminator="\n")])


def initial_soc(series: SampleSeries, soc0: Optional[str]) -> List[float]:
    if soc0:
        return [float(v) for v in soc0.split(",")]
    if series.has_soc:
        return [float(series.soc[0])]
    if "soc_init" in series.meta:
        return [float(series.meta["soc_init"])]
    raise InvalidSpec("dataset has no soc column; pass --soc0")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    spec, preset = resolve_preset(resolve_spec(args, args.config))
    datasets, _ = simulate_experiment(spec, preset, args.out)
    for series in datasets:
        log.info("%s: %d samples, soc %.3f -> %.3f", series.meta["name"], len(series), series.soc[0], series.soc[-1])
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    spec = resolve_spec(args, args.config)
    preset = load_preset(spec.preset) if spec.preset else None
    capacity_c = args.capacity_ah * 3600.0 if args.capacity_ah else None
    source = CsvSource([args.data], Device(args.device) if args.device else None, capacity_c, args.soc_init)
    (series,) = source.load()
    bundle, reports = train_dataset(series, spec, preset, args.out, args.data.stem)
    for name, report in sorted(reports.items()):
        log.info("%s/%s: %s, test mse %.3e", MODEL_LABELS[bundle.model], name, report.stop_reason.value, report.final_test_mse)
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    bundle, doc = load_bundle(args.bundle)
    series = read_series_csv(args.data, bundle.device)
    soc0 = initial_soc(series, args.soc0)
    if len(soc0) > 1:
        bundle.soc0_policy = Soc0Policy.PROVIDED
    train_cfg = TrainConfig.from_dict(doc.get("train_config", {}))

    df, metrics, elapsed = estimate_dataset(bundle, series, soc0, train_cfg)
    stem = f"{args.data.stem}.{bundle.model}"
    meta = {"bundle_checksum": bundle.checksum(), "seed": bundle.seed, "config_checksum": doc.get("config_checksum", "")}
    write_atomic(args.out / f"{stem}.estimate.csv", frame_to_csv(df, meta))
    if metrics is None:
        log.info("dataset has no soc column: estimate written, metrics skipped")
        return 0
    write_atomic(args.out / f"{stem}.metrics.json", dump_json({**meta, **metrics, "elapsed_s": elapsed}))
    log.info("MAE %.4f %%  RMSE %.4f %%", metrics["mae_pct"], metrics["rmse_pct"])
    return 0


def _compare_job(spec: ExperimentSpec, preset: Preset, series: SampleSeries, model: str, out: Path) -> Dict[str, Any]:
    job_spec = spec.model_copy(update={"model": model})
    stem = f"{spec.label}_{series.meta['name']}"
    bundle, _ = train_dataset(series, job_spec, preset, out, stem)
    _, train_cfg = experiment_configs(job_spec, preset)
    df, metrics, _ = estimate_dataset(bundle, series, [float(series.soc[0])], train_cfg)
    write_atomic(out / f"{stem}.{model}.estimate.csv", frame_to_csv(df, {"bundle_checksum": bundle.checksum(), "seed": spec.seed}))
    return {
        "experiment": spec.label,
        "device": series.meta["name"],
        "device_kind": series.device.value,
        "model": MODEL_LABELS[model],
        "mae_pct": metrics["window"]["mae_pct"],
        "rmse_pct": metrics["window"]["rmse_pct"],
        "full_mae_pct": metrics["mae_pct"],
        "full_rmse_pct": metrics["rmse_pct"],
        "bundle_checksum": bundle.checksum(),
    }


def render_table(rows: List[Dict[str, Any]]) -> str:
    df = pd.DataFrame(rows, columns=["experiment", "device", "model", "mae_pct", "rmse_pct"])
    return df.to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n"


def cmd_compare(args: argparse.Namespace) -> int:
    configs = args.config or [None]
    jobs = []
    specs: List[Dict[str, Any]] = []
    for config in configs:
        spec, preset = resolve_preset(resolve_spec(args, config))
        exp_out = args.out / spec.label
        datasets, manifest = simulate_experiment(spec, preset, exp_out)
        specs.append({"name": spec.label, "seed": spec.seed, "config_checksum": manifest["config_checksum"]})
        for series in datasets:
            for model in MODEL_LABELS:
                jobs.append((spec, preset, series, model, exp_out))

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        rows = list(pool.map(lambda job: _compare_job(*job), jobs))

    table = {"experiments": specs, "rows": rows}
    write_atomic(args.out / "compare.json", dump_json(table))
    text = render_table(rows)
    write_atomic(args.out / "compare.txt", text)
    sys.stdout.write(text)
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_selftest()
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise SelftestFailed(f"checks failed: {', '.join(failed)}")
    log.info("selftest passed (%d checks)", len(results))
    return 0


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="Preset name (see presets/)")
    p.add_argument("--profile", choices=["cccv", "udds"], help="Current profile (default: the preset's)")
    p.add_argument("--model", choices=list(MODEL_LABELS), help="Estimator model (default: narx)")
    p.add_argument("--seed", type=int, help="Seed for noise, drive cycle and weight init (default: 42)")
    p.add_argument("--dt", type=float, help="Sample period in seconds (default: the preset's)")
    p.add_argument("--noiseless", action="store_true", help="Disable sensor noise")
    p.add_argument("--epochs", type=int, help="Override max training epochs")
    p.add_argument("--name", help="Experiment name used for output file names")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="NARX SOC estimation for hybrid battery / supercapacitor packs")
    parser.add_argument("-v", "--verbose", action="store_true", help="Per-epoch training log")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Generate device CSVs from a preset")
    p.add_argument("--config", type=Path, help="Experiment JSON file")
    _add_experiment_flags(p)
    p.add_argument("--out", type=Path, default=Path("."), help="Output directory")

    p = sub.add_parser("train", help="Fit an estimator bundle on a dataset CSV")
    p.add_argument("--data", type=Path, required=True, help="Dataset CSV")
    p.add_argument("--config", type=Path, help="Experiment JSON file")
    p.add_argument("--device", choices=[d.value for d in Device], help="Override the CSV's device")
    p.add_argument("--capacity-ah", type=float, help="Nominal capacity for coulomb counting when the CSV has no soc")
    p.add_argument("--soc-init", type=float, default=1.0, help="Initial SOC for coulomb counting (default: 1.0)")
    _add_experiment_flags(p)
    p.add_argument("--out", type=Path, default=Path("."), help="Output directory")

    p = sub.add_parser("estimate", help="Closed-loop SOC estimate with a trained bundle")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--soc0", help="Initial SOC; comma-separated values give one per regime segment")
    p.add_argument("--out", type=Path, default=Path("."))

    p = sub.add_parser("compare", help="Train and evaluate NARXNN and ANN per device")
    p.add_argument("--config", type=Path, action="append", help="Experiment JSON file (repeatable)")
    _add_experiment_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="Parallel train/estimate jobs")
    p.add_argument("--out", type=Path, default=Path("."))

    sub.add_parser("selftest", help="Run the invariant suite on the built-in presets")
    return parser.parse_args(argv)


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "selftest": cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="[%(name)s] %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except SocError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
