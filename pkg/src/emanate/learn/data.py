"""Labeled datasets built from simulated captures, and capture-disjoint splits."""

from __future__ import annotations

import enum
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .. import dsp
from ..emanation import IQRecording
from ..errors import InvalidArgumentError
from ..scene import ObfuscationSpec, SceneConfig, capture_pair

log = logging.getLogger(__name__)

__all__ = ["DatasetSplit", "LabeledExample", "Task", "build_dataset", "build_datasets", "split_dataset"]


class Task(str, enum.Enum):
    APP_ID = "app_id"
    ACTIVITY = "activity"


@dataclass(eq=False)
class LabeledExample:
    features: np.ndarray
    label: str
    meta: dict = field(default_factory=dict)


@dataclass(eq=False)
class DatasetSplit:
    train: list
    validation: list
    test: list
    ratios: tuple = (0.70, 0.15, 0.15)

    def arrays(self, part: str) -> tuple[np.ndarray, list]:
        examples = getattr(self, part)
        if not examples:
            return np.empty((0,)), []
        return np.stack([e.features for e in examples]), [e.label for e in examples]

    def seeds(self, part: str) -> set:
        return {e.meta["seed"] for e in getattr(self, part)}


def _chunks(iq: IQRecording, chunk_size: int):
    for start in range(0, len(iq) - chunk_size + 1, chunk_size):
        yield iq.with_samples(iq.samples[start : start + chunk_size])


def _pool_bins(power: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return power
    n = power.shape[-1] // factor * factor
    return power[..., :n].reshape(*power.shape[:-1], n // factor, factor).mean(axis=-1)


def activity_features(active: IQRecording, idle: IQRecording, cfg: dsp.PipelineConfig, freq_pool: int = 16) -> np.ndarray:
    """Idle-referenced STFT spectrogram (dB) with frequency bins pooled by ``freq_pool``."""
    spec = dsp.stft_spectrogram(active, cfg)
    ref = dsp.psd_matrix(idle, cfg.stft_window_len, window="hamming").mean(axis=0)
    num = _pool_bins(10 ** (spec.power_db / 10), freq_pool)
    den = _pool_bins(ref, freq_pool)
    return dsp.to_db(num) - dsp.to_db(den)[None, :]


def _label(scene: SceneConfig, task: Task) -> str:
    return scene.signature.app_id if task is Task.APP_ID else scene.phase.value


def capture_features(
    bands: list[SceneConfig],
    tasks,
    pipeline: dsp.PipelineConfig,
    chunk_size: int,
    obf: ObfuscationSpec | None = None,
    freq_pool: int = 16,
) -> dict[Task, list[np.ndarray]]:
    """Per-chunk feature arrays for one capture observed in one or more tiles."""
    tasks = [Task(t) for t in tasks]
    per_band: dict[Task, list] = {t: [] for t in tasks}
    for scene in bands:
        active, idle = capture_pair(scene, obf)
        pairs = list(zip(_chunks(active, chunk_size), _chunks(idle, chunk_size)))
        if Task.APP_ID in per_band:
            per_band[Task.APP_ID].append([dsp.process_band(a, i, pipeline) for a, i in pairs])
        if Task.ACTIVITY in per_band:
            per_band[Task.ACTIVITY].append([activity_features(a, i, pipeline, freq_pool) for a, i in pairs])
    out: dict[Task, list[np.ndarray]] = {}
    for task, rows in per_band.items():
        if task is Task.APP_ID:
            out[task] = [dsp.concat_bands(chunk).astype(np.float32)[None, :] for chunk in zip(*rows)]
        else:
            out[task] = [np.stack(chunk).astype(np.float32) for chunk in zip(*rows)]
    return out


def build_datasets(
    captures,
    tasks,
    pipeline: dsp.PipelineConfig,
    chunk_size: int = 50_000,
    obf: ObfuscationSpec | None = None,
    freq_pool: int = 16,
) -> dict[Task, list[LabeledExample]]:
    """Like ``build_dataset`` for several tasks at once, sharing the scene synthesis."""
    tasks = [Task(t) for t in tasks]
    min_len = max(pipeline.fft_size * pipeline.avg_frames, pipeline.stft_window_len)
    if chunk_size < min_len:
        raise InvalidArgumentError(
            f"chunk_size {chunk_size} is shorter than the {min_len} samples one example needs"
        )
    out: dict[Task, list[LabeledExample]] = {t: [] for t in tasks}
    skipped = 0
    for item in captures:
        bands = [item] if isinstance(item, SceneConfig) else list(item)
        first = bands[0]
        for s in bands[1:]:
            if (s.signature.app_id, s.phase, s.seed) != (first.signature.app_id, first.phase, first.seed):
                raise InvalidArgumentError("all tiles of one capture must share app, phase and seed")
        n = first.n_samples
        skipped += n % chunk_size > 0
        if n < chunk_size:
            continue
        feats = capture_features(bands, tasks, pipeline, chunk_size, obf, freq_pool)
        meta = {
            "seed": first.seed,
            "app": first.signature.app_id,
            "phase": first.phase.value,
            "distance": first.channel.distance,
            "orientation": first.channel.orientation_deg,
            "bands": [s.band_center_hz for s in bands],
        }
        for task in tasks:
            for k, f in enumerate(feats[task]):
                out[task].append(LabeledExample(f, _label(first, task), {**meta, "chunk": k}))
    if skipped:
        warnings.warn(f"{skipped} capture(s) left a partial chunk that was skipped", stacklevel=2)
    return out


def build_dataset(
    captures,
    task,
    pipeline: dsp.PipelineConfig,
    chunk_size: int = 50_000,
    obf: ObfuscationSpec | None = None,
    freq_pool: int = 16,
) -> list[LabeledExample]:
    """Chunk every capture and turn each chunk into one labeled example.

    ``captures`` holds either single ``SceneConfig`` objects or sequences of
    them (one per tile, same app, phase and seed).  App identification
    features are the concatenated per-tile residual spectra, shape
    ``(1, bands*fft_size)``; activity features are idle-referenced
    spectrograms stacked per tile, shape ``(bands, frames, bins)``.

    Features are returned unscaled; see ``SpectralScaler`` for
    standardization fitted on the training split only.
    """
    return build_datasets(captures, [task], pipeline, chunk_size, obf, freq_pool)[Task(task)]


def split_dataset(examples, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> DatasetSplit:
    """Capture-disjoint split, stratified by label.

    All chunks sharing a capture seed land in the same part.  Within each
    label, captures are shuffled with ``seed`` and cut at
    ``round(ratio * count)``.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise InvalidArgumentError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    by_seed: dict = defaultdict(list)
    for e in examples:
        by_seed[e.meta["seed"]].append(e)
    by_label: dict = defaultdict(list)
    for s, group in by_seed.items():
        by_label[group[0].label].append(s)
    rng = np.random.default_rng(seed)
    parts: tuple[list, list, list] = ([], [], [])
    for label in sorted(by_label):
        seeds = sorted(by_label[label])
        order = [seeds[i] for i in rng.permutation(len(seeds))]
        n_tr = int(round(ratios[0] * len(order)))
        n_va = int(round(ratios[1] * len(order)))
        cuts = (order[:n_tr], order[n_tr : n_tr + n_va], order[n_tr + n_va :])
        for part, chosen in zip(parts, cuts):
            for s in sorted(chosen):
                part.extend(by_seed[s])
    for name, part in zip(("train", "validation", "test"), parts):
        if not part:
            raise InvalidArgumentError(f"too few captures ({len(by_seed)}) for a non-empty {name} split")
    return DatasetSplit(*parts, ratios=ratios)
