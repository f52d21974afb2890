"""Consolidated report bundle of a finished run."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import jsonschema

from ..errors import FormatError, IncompleteRunError
from ..learn.checkpoint import load_checkpoint
from .runner import SWEEP_HEADERS, SWEEP_KINDS, read_csv, write_csv
from .serialize import atomic_write, canonical_json

BUNDLE_VERSION = 1

_METRICS = {
    "type": "object",
    "required": ["accuracy", "classes", "confusion", "per_class_recall", "config_hash", "seed", "task", "n_test"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "classes": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "confusion": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
        "per_class_recall": {"type": "object"},
        "config_hash": {"type": "string"},
        "seed": {"type": "integer"},
        "task": {"enum": ["app_id", "activity"]},
        "n_test": {"type": "integer", "minimum": 1},
    },
}

BUNDLE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "emanate report bundle",
    "type": "object",
    "additionalProperties": False,
    "required": ["format_version", "plan", "config_hash", "seed", "metrics", "training", "sweeps", "artifacts"],
    "properties": {
        "format_version": {"const": BUNDLE_VERSION},
        "plan": {"type": "object", "required": ["name", "format_version"]},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
        "seed": {"type": "integer", "minimum": 0},
        "metrics": {"type": "object", "additionalProperties": _METRICS, "minProperties": 1},
        "training": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["epoch", "train_loss", "val_accuracy", "selected"],
                },
            },
        },
        "sweeps": {
            "type": "object",
            "propertyNames": {"enum": list(SWEEP_KINDS)},
            "additionalProperties": {"type": "array", "items": {"type": "object"}},
        },
        "artifacts": {
            "type": "object",
            "additionalProperties": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        },
    },
}

__all__ = ["BUNDLE_SCHEMA", "build_report", "required_artifacts"]


def required_artifacts(run_dir: Path, tasks) -> list[Path]:
    paths = [run_dir / "run.json", run_dir / "dataset" / "manifest.json"]
    for t in tasks:
        paths += [
            run_dir / "models" / f"{t}.emsl",
            run_dir / "metrics" / f"{t}.json",
            run_dir / "metrics" / f"{t}_confusion.csv",
        ]
    return paths


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_report(run_dir) -> dict:
    """Merge metrics, training logs, sweep curves and artifact hashes of ``run_dir``.

    Writes ``report/bundle.json`` and ``report/bundle.csv``.  The bundle
    contains no timestamps or absolute paths, so rebuilding it from the same
    artifacts yields the same bytes.
    """
    run_dir = Path(run_dir)
    run_json = run_dir / "run.json"
    if not run_json.exists():
        raise IncompleteRunError(f"{run_dir}: missing artifacts: run.json", [str(run_json)])
    run = json.loads(run_json.read_text())
    tasks = run["plan"]["tasks"]
    missing = [p for p in required_artifacts(run_dir, tasks) if not p.exists()]
    if missing:
        names = ", ".join(str(p.relative_to(run_dir)) for p in missing)
        raise IncompleteRunError(f"{run_dir}: missing artifacts: {names}", [str(p) for p in missing])

    metrics, training = {}, {}
    for t in tasks:
        metrics[t] = json.loads((run_dir / "metrics" / f"{t}.json").read_text())
        _, meta = load_checkpoint(run_dir / "models" / f"{t}.emsl")
        training[t] = meta.get("history", [])
    sweeps = {}
    for kind in SWEEP_KINDS:
        path = run_dir / "sweeps" / f"{kind}.csv"
        if path.exists():
            sweeps[kind] = read_csv(path)
    tracked = required_artifacts(run_dir, tasks)[1:] + sorted((run_dir / "sweeps").glob("*.csv"))
    artifacts = {p.relative_to(run_dir).as_posix(): _sha256(p) for p in tracked}
    bundle = {
        "format_version": BUNDLE_VERSION,
        "plan": run["plan"],
        "config_hash": run["config_hash"],
        "seed": run["seed"],
        "metrics": metrics,
        "training": training,
        "sweeps": sweeps,
        "artifacts": artifacts,
    }
    try:
        jsonschema.validate(bundle, BUNDLE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"{run_dir}: report bundle fails its schema at {where}: {exc.message}") from None

    atomic_write(run_dir / "report" / "bundle.json", canonical_json(bundle))
    rows = [["metrics", t, "accuracy", m["accuracy"]] for t, m in sorted(metrics.items())]
    for kind, curve in sorted(sweeps.items()):
        x_col = SWEEP_HEADERS[kind][0]
        y_col = "accuracy" if "accuracy" in SWEEP_HEADERS[kind] else "mean_usnr_db"
        for r in curve:
            label = f"{x_col}={r[x_col]}" + (f",task={r['task']}" if "task" in r else "")
            rows.append(["sweep:" + kind, label, y_col, float(r[y_col])])
    write_csv(run_dir / "report" / "bundle.csv", ["section", "key", "field", "value"], rows)
    return bundle
