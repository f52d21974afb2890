"""IQ recordings on disk: raw interleaved float32 plus a JSON sidecar.

``<stem>.cf32`` holds I, Q, I, Q, ... as little-endian float32.  ``<stem>.json``
holds sample rate, center frequency, duration, seed, the scene document the
capture was generated from and its SHA-256 fingerprint.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..emanation import IQRecording
from ..errors import FormatError
from .serialize import atomic_write, canonical_json, fingerprint

FORMAT_VERSION = 1
DATA_SUFFIX = ".cf32"
SIDECAR_SUFFIX = ".json"

__all__ = ["FORMAT_VERSION", "read_iq", "read_sidecar", "write_iq"]

_REQUIRED = ("format_version", "sample_rate_hz", "center_frequency_hz", "duration_s", "seed", "n_samples")


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (DATA_SUFFIX, SIDECAR_SUFFIX) else p
    return stem.with_suffix(DATA_SUFFIX), stem.with_suffix(SIDECAR_SUFFIX)


def write_iq(path, rec: IQRecording, scene_doc: dict | None = None, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``rec`` and its sidecar; returns ``(data_path, sidecar_path)``."""
    data_path, meta_path = _paths(path)
    inter = np.empty(2 * len(rec), dtype="<f4")
    inter[0::2] = rec.samples.real
    inter[1::2] = rec.samples.imag
    meta = {
        "format_version": FORMAT_VERSION,
        "sample_rate_hz": rec.sample_rate,
        "center_frequency_hz": rec.center_frequency,
        "duration_s": len(rec) / rec.sample_rate,
        "n_samples": len(rec),
        "seed": rec.seed,
        "scene": scene_doc,
        "scene_fingerprint": fingerprint(scene_doc) if scene_doc is not None else None,
        **(extra or {}),
    }
    atomic_write(data_path, inter.tobytes())
    atomic_write(meta_path, canonical_json(meta))
    return data_path, meta_path


def read_sidecar(path) -> dict:
    _, meta_path = _paths(path)
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise FormatError(f"{meta_path}: sidecar not found") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    missing = [k for k in _REQUIRED if k not in meta]
    if missing:
        raise FormatError(f"{meta_path}: missing fields {missing}")
    if meta["format_version"] != FORMAT_VERSION:
        raise FormatError(f"{meta_path}: format_version {meta['format_version']} is not supported")
    return meta


def read_iq(path) -> tuple[IQRecording, dict]:
    """Load and validate a recording.

    Checks that the sample count agrees with ``duration_s * sample_rate_hz``
    to within one sample and that the embedded scene document still hashes
    to ``scene_fingerprint``.
    """
    data_path, meta_path = _paths(path)
    meta = read_sidecar(path)
    try:
        raw = np.fromfile(data_path, dtype="<f4")
    except FileNotFoundError:
        raise FormatError(f"{data_path}: data file not found") from None
    if raw.size % 2:
        raise FormatError(f"{data_path}: odd number of float32 values ({raw.size}); I/Q pairs are incomplete")
    n = raw.size // 2
    expected = meta["duration_s"] * meta["sample_rate_hz"]
    if not math.isfinite(expected) or abs(n - expected) > 1:
        raise FormatError(
            f"{meta_path}: duration_s={meta['duration_s']} at sample_rate_hz={meta['sample_rate_hz']} "
            f"implies {expected:.0f} samples but {data_path.name} holds {n}"
        )
    if meta["n_samples"] != n:
        raise FormatError(f"{meta_path}: n_samples={meta['n_samples']} but {data_path.name} holds {n}")
    if meta.get("scene") is not None and fingerprint(meta["scene"]) != meta.get("scene_fingerprint"):
        raise FormatError(f"{meta_path}: scene_fingerprint does not match the embedded scene document")
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    rec = IQRecording(samples, float(meta["sample_rate_hz"]), float(meta["center_frequency_hz"]), int(meta["seed"]))
    return rec, meta
