"""Experiment execution: single runs and sigma/lambda sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, parse_config_dict
from .errors import ConfigError, DatasetError, NumericalAbort
from .report import render_curves_svg, write_atomic, write_metrics_csv
from .training.data import load_dataset
from .training.loop import MetricsRecord, fit

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
SWEEP_AXES = ("sigma", "lambda_l1")
SWEEP_FIELDS = ("axis", "value", "status", "exit_code", "final_train_loss", "final_valid_loss",
                "final_accuracy", "final_mean_abs_v", "output_dir", "error")


def version_string() -> str:
    """``git describe``-style identifier, falling back to the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--tags", "--long", "--always", "--dirty"],
                             cwd=here, capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    desc = out.stdout.strip()
    if out.returncode != 0 or not desc:
        return f"v{__version__}"
    if "-g" not in desc:
        desc = f"v{__version__}-0-g{desc}"
    return desc


def _resolve_paths(cfg: ExperimentConfig) -> dict:
    base = cfg.source.parent if cfg.source else Path.cwd()
    paths = {}
    for key in ("images", "labels", "corpus"):
        if cfg.data.get(key):
            p = Path(cfg.data[key])
            paths[key] = str(p if p.is_absolute() else base / p)
    return paths


def final_metrics(records: list[MetricsRecord]) -> dict:
    train = [r for r in records if r.split == "train"]
    valid = [r for r in records if r.split == "valid"]
    out: dict = {}
    if train:
        last_epoch = train[-1].epoch
        tail = [r for r in train if r.epoch == last_epoch]
        out["train"] = train[-1].as_row()
        out["train_last_epoch_mean"] = {
            "loss": float(np.mean([r.loss for r in tail])),
            "accuracy": float(np.mean([r.accuracy for r in tail])),
            "mean_abs_v": float(np.mean([r.mean_abs_v for r in tail])),
        }
    if valid:
        out["valid"] = valid[-1].as_row()
    return out


def _write_outputs(cfg: ExperimentConfig, records, summary: dict) -> None:
    out = cfg.output_dir
    write_metrics_csv(records, out / "metrics.csv")
    write_atomic(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    rows = [r.as_row() for r in records]
    write_atomic(out / "curves.svg", render_curves_svg(rows, cfg.conventions))


def execute(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Run one experiment and write its artifacts; returns ``(exit_code, summary)``."""
    t0 = time.perf_counter()
    summary = {"config": cfg.to_dict(), "conventions": cfg.conventions, "version": version_string()}
    try:
        data = load_dataset(cfg.data, _resolve_paths(cfg), seed=cfg.train.seed)
        model = cfg.model_config(data)
    except (ConfigError, DatasetError) as exc:
        summary.update(status="config_error", exit_code=EXIT_CONFIG, error=str(exc))
        log.error("config error: %s", exc)
        return EXIT_CONFIG, summary
    summary["dataset"] = {"kind": data.handle.kind, "count": data.handle.count, "source": data.handle.source,
                          "train": len(data.handle.train_idx), "valid": len(data.handle.valid_idx)}
    try:
        _, records = fit(model, data, cfg.train)
        code = EXIT_OK
        summary.update(status="ok")
    except NumericalAbort as exc:
        records = exc.records
        code = EXIT_NUMERICAL
        summary.update(status="numerical_abort", diagnostics=exc.diagnostics)
        log.error("numerical abort: %s", exc)
    summary.update(exit_code=code, final=final_metrics(records), wall_seconds=time.perf_counter() - t0)
    _write_outputs(cfg, records, summary)
    return code, summary


def run(config) -> int:
    """Run from an :class:`ExperimentConfig` or a config path; returns the process exit code."""
    try:
        cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    return execute(cfg)[0]


def _child(payload: tuple) -> dict:
    doc, source, axis, value, out_dir = payload
    row = {"axis": axis, "value": value, "output_dir": out_dir, "error": ""}
    try:
        cfg = parse_config_dict(doc, Path(source) if source else None)
    except ConfigError as exc:
        return {**row, "status": "config_error", "exit_code": EXIT_CONFIG, "error": str(exc)}
    code, summary = execute(cfg)
    final = summary.get("final", {})
    tail = final.get("train_last_epoch_mean", {})
    row.update(
        status=summary["status"], exit_code=code,
        final_train_loss=tail.get("loss", ""),
        final_valid_loss=final.get("valid", {}).get("loss", ""),
        final_accuracy=final.get("valid", {}).get("accuracy", tail.get("accuracy", "")),
        final_mean_abs_v=tail.get("mean_abs_v", ""),
        error=summary.get("error") or json.dumps(summary.get("diagnostics", "")) if code else "",
    )
    return row


def _fmt_value(v: float) -> str:
    return repr(float(v))


def sweep(config, axis: str, values, jobs: int = 1, output_dir=None) -> tuple[int, list[dict]]:
    """One independent run per value (shared seed); writes ``sweep.csv`` under the output directory.

    Exit code is 0 if any child succeeded, otherwise 1.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}", "axis")
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value", "values")
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    base = Path(output_dir) if output_dir else cfg.output_dir
    payloads = []
    for v in values:
        doc = cfg.to_dict()
        doc["train"][axis] = v
        child_dir = base / f"{axis}={_fmt_value(v)}"
        doc["output_dir"] = str(child_dir)
        payloads.append((doc, str(cfg.source) if cfg.source else None, axis, v, str(child_dir)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_child, payloads))
    else:
        rows = [_child(p) for p in payloads]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\r\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (_fmt_value(row[k]) if isinstance(row.get(k), float) else row.get(k, "")) for k in SWEEP_FIELDS})
    write_atomic(base / "sweep.csv", buf.getvalue())
    write_atomic(base / "sweep.json", json.dumps({"axis": axis, "values": values, "conventions": cfg.conventions,
                                                  "rows": rows}, indent=2, sort_keys=True) + "\n")
    ok = any(r["exit_code"] == EXIT_OK for r in rows)
    return (EXIT_OK if ok else EXIT_FAILED), rows
