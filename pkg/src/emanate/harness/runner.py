"""Run steps behind the CLI: dataset store, training, evaluation, sweeps.

Run directory layout::

    run.json                    resolved plan, config hash, seed
    dataset/manifest.json       split manifest per task
    dataset/<task>.npz          features, labels, capture seeds, split part
    models/<task>.emsl          checkpoint (scaler and history in metadata)
    models/<task>_history.csv
    metrics/<task>.json         accuracy, confusion, per-class recall
    metrics/<task>_confusion.csv
    sweeps/<kind>.csv
    report/bundle.json, report/bundle.csv
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from pathlib import Path

import numpy as np

from ..dsp import process_band, usnr
from ..emanation import ActivityPhase, emanation_spectrum_analytic
from ..errors import FormatError, IncompleteRunError, InvalidArgumentError
from ..learn.checkpoint import checkpoint_bytes, load_checkpoint
from ..learn.data import DatasetSplit, LabeledExample, Task, build_datasets, split_dataset
from ..learn.estimator import ResidualSpectralClassifier, SpectralScaler
from ..learn.train import Metrics
from ..scene import capture_pair, default_obfuscation
from .plan import ExperimentPlan
from .serialize import atomic_write, canonical_json

log = logging.getLogger(__name__)

SWEEP_KINDS = ("bands", "duration", "distance", "orientation", "obfuscation")
_PARTS = ("train", "validation", "test")

__all__ = [
    "SWEEP_KINDS",
    "load_split",
    "mean_usnr",
    "run_dataset",
    "run_eval",
    "run_sweep",
    "run_train",
    "write_csv",
]


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return atomic_write(path, buf.getvalue())


def _cell(v):
    if isinstance(v, float):
        if not math.isfinite(v):
            return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
        return repr(round(v, 10))
    return v


def _stamp(plan: ExperimentPlan) -> dict:
    return {"config_hash": plan.config_hash(), "seed": plan.seed, "plan_name": plan.name}


def write_run_json(plan: ExperimentPlan, out: Path) -> None:
    atomic_write(out / "run.json", canonical_json({**_stamp(plan), "plan": plan.doc}))


# -- dataset store -----------------------------------------------------------
def _save_npz(path: Path, **arrays) -> None:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(path, buf.getvalue())


def run_dataset(plan: ExperimentPlan, out, force: bool = False) -> dict:
    """Materialize features and splits for every task of the plan.

    An existing store built from the same config hash is reused, so an
    interrupted run resumes at training.
    """
    out = Path(out)
    store = out / "dataset"
    manifest_path = store / "manifest.json"
    if not force and manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("config_hash") == plan.config_hash() and all(
            (store / f"{t}.npz").exists() for t in plan.tasks
        ):
            log.info("reusing dataset store %s", store)
            return manifest
    write_run_json(plan, out)
    examples = build_datasets(
        plan.captures(), plan.tasks, plan.pipeline(), plan.chunk_size, freq_pool=plan.freq_pool
    )
    ratios = tuple(plan.doc["split"]["ratios"])
    split_seed = int(plan.doc["split"]["seed"])
    manifest = {**_stamp(plan), "bands_hz": plan.bands, "tasks": {}}
    for task, exs in examples.items():
        split = split_dataset(exs, ratios, split_seed)
        part_of = {}
        for pi, part in enumerate(_PARTS):
            for s in split.seeds(part):
                part_of[s] = pi
        _save_npz(
            store / f"{task.value}.npz",
            X=np.stack([e.features for e in exs]),
            y=np.array([e.label for e in exs]),
            seed=np.array([e.meta["seed"] for e in exs], dtype=np.int64),
            chunk=np.array([e.meta["chunk"] for e in exs], dtype=np.int64),
            part=np.array([part_of[e.meta["seed"]] for e in exs], dtype=np.int64),
        )
        manifest["tasks"][task.value] = {
            "feature_shape": list(exs[0].features.shape),
            "n_examples": len(exs),
            "classes": sorted({e.label for e in exs}),
            "ratios": list(ratios),
            "split_seed": split_seed,
            "captures": {p: sorted(split.seeds(p)) for p in _PARTS},
            "examples": {p: len(getattr(split, p)) for p in _PARTS},
        }
    atomic_write(manifest_path, canonical_json(manifest))
    return manifest


def load_split(out, task) -> DatasetSplit:
    task = Task(task)
    path = Path(out) / "dataset" / f"{task.value}.npz"
    if not path.exists():
        raise IncompleteRunError(f"{path} is missing; run the dataset step first", [str(path)])
    with np.load(path) as d:
        X, y, seed, chunk, part = d["X"], d["y"], d["seed"], d["chunk"], d["part"]
    parts: list[list] = [[], [], []]
    for i in range(len(y)):
        parts[int(part[i])].append(LabeledExample(X[i], str(y[i]), {"seed": int(seed[i]), "chunk": int(chunk[i])}))
    return DatasetSplit(*parts)


def _select_bands(split: DatasetSplit, task: Task, n_bands: int, fft_size: int) -> DatasetSplit:
    """Keep only the lowest ``n_bands`` tiles.  Tiles are processed independently, so
    slicing the stored features equals rebuilding them from fewer bands."""

    def cut(e: LabeledExample) -> LabeledExample:
        f = e.features[:, : n_bands * fft_size] if task is Task.APP_ID else e.features[:n_bands]
        return LabeledExample(f, e.label, e.meta)

    return DatasetSplit(*([cut(e) for e in getattr(split, p)] for p in _PARTS), ratios=split.ratios)


# -- training / evaluation ---------------------------------------------------
def _fit(plan: ExperimentPlan, split: DatasetSplit):
    x_tr, y_tr = split.arrays("train")
    x_va, y_va = split.arrays("validation")
    scaler = SpectralScaler().fit(x_tr)
    tc = plan.train_config()
    clf = ResidualSpectralClassifier(
        widths=plan.widths,
        learning_rate=tc.learning_rate,
        batch_size=tc.batch_size,
        epochs=tc.epochs,
        weight_decay=tc.weight_decay,
        momentum=tc.momentum,
        seed=tc.seed,
    )
    clf.fit(scaler.transform(x_tr), y_tr, scaler.transform(x_va), y_va)
    return scaler, clf


def _metrics(scaler: SpectralScaler, clf: ResidualSpectralClassifier, examples) -> Metrics:
    X = np.stack([e.features for e in examples])
    return clf.metrics(scaler.transform(X), [e.label for e in examples])


def run_train(plan: ExperimentPlan, out) -> dict:
    out = Path(out)
    result = {}
    for task in plan.tasks:
        split = load_split(out, task)
        scaler, clf = _fit(plan, split)
        history = [
            {**row, "train_loss": round(row["train_loss"], 10), "val_accuracy": round(row["val_accuracy"], 10)}
            for row in clf.history_
        ]
        meta = {
            **_stamp(plan),
            "task": task,
            "scaler": {"mean": scaler.mean_, "scale": scaler.scale_},
            "history": history,
        }
        atomic_write(out / "models" / f"{task}.emsl", checkpoint_bytes(clf.model_, json.loads(canonical_json(meta))))
        write_csv(
            out / "models" / f"{task}_history.csv",
            ["epoch", "train_loss", "val_accuracy", "selected", "config_hash", "seed"],
            [[r["epoch"], r["train_loss"], r["val_accuracy"], int(r["selected"]), plan.config_hash(), plan.seed]
             for r in history],
        )
        result[task] = history
    return result


def load_model(out, task):
    path = Path(out) / "models" / f"{task}.emsl"
    if not path.exists():
        raise IncompleteRunError(f"{path} is missing; run the train step first", [str(path)])
    model, meta = load_checkpoint(path)
    scaler = SpectralScaler()
    scaler.mean_, scaler.scale_ = meta["scaler"]["mean"], meta["scaler"]["scale"]
    scaler.n_features_in_ = int(np.prod(model.input_shape))
    return scaler, ResidualSpectralClassifier.from_model(model), meta


def _write_metrics(plan: ExperimentPlan, out: Path, task: str, m: Metrics) -> dict:
    doc = {**_stamp(plan), "task": task, "n_test": int(m.confusion.sum()), **m.to_dict()}
    atomic_write(out / "metrics" / f"{task}.json", canonical_json(doc))
    write_csv(
        out / "metrics" / f"{task}_confusion.csv",
        ["true\\predicted", *m.classes],
        [[c, *m.confusion[i].tolist()] for i, c in enumerate(m.classes)],
    )
    return doc


def run_eval(plan: ExperimentPlan, out) -> dict:
    out = Path(out)
    result = {}
    for task in plan.tasks:
        scaler, clf, _ = load_model(out, task)
        m = _metrics(scaler, clf, load_split(out, task).test)
        result[task] = _write_metrics(plan, out, task, m)
    return result


# -- USNR studies --------------------------------------------------------------
def usnr_lines(plan: ExperimentPlan) -> list[float]:
    """Baseband offsets of the strongest analytic lines of the sweep app in the sweep tile."""
    sw = plan.sweeps
    sig = plan.catalog()[sw["usnr_app"]]
    mags: dict[float, float] = {}
    for src in sig.sources(ActivityPhase.RUNNING, sw["usnr_band_hz"]):
        for f, a in emanation_spectrum_analytic(src.clock, src.wave):
            key = round(abs(f), 3)
            mags[key] = mags.get(key, 0.0) + a
    top = sorted(mags.items(), key=lambda kv: (-kv[1], kv[0]))[: int(sw["usnr_lines"])]
    return sorted(f for f, _ in top)


def mean_usnr(plan: ExperimentPlan, distance=1.0, orientation=90.0, durations=None, n_seeds=None, obf=None):
    """Mean USNR (dB) over the strongest lines and ``n_seeds`` captures.

    With ``durations`` the capture is cut to each duration and averaged over
    all frames it holds; returns one value per duration.  Otherwise returns a
    single value at the plan's averaging length.
    """
    sw = plan.sweeps
    sig = plan.catalog()[sw["usnr_app"]]
    band = float(sw["usnr_band_hz"])
    n_seeds = int(n_seeds or sw["usnr_seeds"])
    cfg = plan.pipeline()
    lines = usnr_lines(plan)
    dur_list = list(durations) if durations is not None else [None]
    total = max(d for d in dur_list if d is not None) if durations is not None else None
    values = np.zeros((len(dur_list), n_seeds))
    for s in range(n_seeds):
        seed = plan.capture_seed(7919, s)
        scene = plan.scene(sig, ActivityPhase.RUNNING, band, seed, distance, orientation, duration=total)
        active, idle = capture_pair(scene, obf)
        for di, d in enumerate(dur_list):
            if d is None:
                a, i, c = active, idle, cfg
            else:
                n = int(round(d * scene.sample_rate))
                k = n // cfg.fft_size
                if k < 1:
                    raise InvalidArgumentError(f"duration {d} s holds less than one {cfg.fft_size}-point frame")
                a, i = active.with_samples(active.samples[:n]), idle.with_samples(idle.samples[:n])
                c = dataclasses.replace(cfg, avg_frames=k)
            res = process_band(a, i, c)
            values[di, s] = np.mean([usnr(res, band + f, cfg.movmedian_len).usnr_db for f in lines])
    means = values.mean(axis=1)
    return [float(v) for v in means] if durations is not None else float(means[0])


# -- sweeps ------------------------------------------------------------------
SWEEP_HEADERS = {
    "bands": ["bands", "task", "accuracy", "config_hash", "seed"],
    "duration": ["duration_s", "avg_frames", "mean_usnr_db", "config_hash", "seed"],
    "distance": ["distance_m", "mean_usnr_db", "config_hash", "seed"],
    "orientation": ["orientation_deg", "mean_usnr_db", "config_hash", "seed"],
    "obfuscation": ["power_db", "task", "accuracy", "config_hash", "seed"],
}


def _obfuscated_test(plan: ExperimentPlan, out: Path, power_db: float) -> dict[str, list]:
    """Rebuild the test captures of every task with the obfuscation daemon running."""
    wanted: set = set()
    tests = {t: load_split(out, t).test for t in plan.tasks}
    for exs in tests.values():
        wanted |= {e.meta["seed"] for e in exs}
    captures = [c for c in plan.captures() if c[0].seed in wanted]
    built = build_datasets(
        captures, plan.tasks, plan.pipeline(), plan.chunk_size, default_obfuscation(power_db), plan.freq_pool
    )
    result = {}
    for t in plan.tasks:
        seeds = {e.meta["seed"] for e in tests[t]}
        result[t] = [e for e in built[Task(t)] if e.meta["seed"] in seeds]
    return result


def run_sweep(plan: ExperimentPlan, out, kind: str, values=None) -> list[list]:
    """Run one study and write ``sweeps/<kind>.csv``; ``values`` overrides the plan's points."""
    if kind not in SWEEP_KINDS:
        raise InvalidArgumentError(f"unknown sweep kind {kind!r}; choose from {', '.join(SWEEP_KINDS)}")
    out = Path(out)
    sw = plan.sweeps
    stamp = [plan.config_hash(), plan.seed]
    rows: list[list] = []
    if kind == "bands":
        fft = plan.pipeline().fft_size
        for task in plan.tasks:
            split = load_split(out, task)
            for n in values or sw["bands"]:
                sub = _select_bands(split, Task(task), int(n), fft)
                scaler, clf = _fit(plan, sub)
                rows.append([int(n), task, _metrics(scaler, clf, sub.test).accuracy, *stamp])
    elif kind == "duration":
        durations = [float(d) for d in (values or sw["durations_s"])]
        fft = plan.pipeline().fft_size
        means = mean_usnr(plan, durations=durations)
        sr = float(plan.doc["capture"]["sample_rate_hz"])
        for d, m in zip(durations, means):
            rows.append([d, int(round(d * sr)) // fft, m, *stamp])
    elif kind == "distance":
        for d in values or sw["distances_m"]:
            rows.append([float(d), mean_usnr(plan, distance=float(d)), *stamp])
    elif kind == "orientation":
        for o in values or sw["orientations_deg"]:
            rows.append([float(o), mean_usnr(plan, orientation=float(o)), *stamp])
    else:
        models = {t: load_model(out, t) for t in plan.tasks}
        for p in values if values is not None else sw["obfuscation_db"]:
            p = float(p)
            if p == -math.inf:
                # a silent daemon adds exact zeros, so the stored features are the answer
                tests = {t: load_split(out, t).test for t in plan.tasks}
            else:
                tests = _obfuscated_test(plan, out, p)
            for t in plan.tasks:
                scaler, clf, _ = models[t]
                rows.append([p, t, _metrics(scaler, clf, tests[t]).accuracy, *stamp])
    write_csv(out / "sweeps" / f"{kind}.csv", SWEEP_HEADERS[kind], rows)
    return rows


def read_csv(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError:
        raise IncompleteRunError(f"{path} is missing", [str(path)]) from None
    except csv.Error as exc:
        raise FormatError(f"{path}: {exc}") from None
