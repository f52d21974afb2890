"""Plain-document forms of scenes, canonical JSON, hashing and atomic writes."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..catalog import signature_from_dict, signature_to_dict
from ..emanation import ActivityWave, ClockSpec
from ..errors import FormatError
from ..scene import Carrier, ChannelSpec, InterferenceSpec, NoiseSpec, ObfuscationSpec, SceneConfig

__all__ = [
    "atomic_write",
    "canonical_json",
    "fingerprint",
    "obfuscation_from_dict",
    "obfuscation_to_dict",
    "scene_from_dict",
    "scene_to_dict",
]


def _plain(value):
    """Recursively convert to JSON-safe values; non-finite floats become strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def canonical_json(doc, indent: int | None = 2) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=indent, allow_nan=False) + "\n"


def fingerprint(doc) -> str:
    return hashlib.sha256(canonical_json(doc, indent=None).encode()).hexdigest()


def atomic_write(path, data: str | bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _clock_to_dict(c: ClockSpec) -> dict:
    return {
        "f0": c.f0,
        "fm": c.fm,
        "delta_f": c.delta_f,
        "n_harmonics": c.n_harmonics,
        "amplitude_profile": list(c.amplitude_profile),
    }


def obfuscation_to_dict(obf: ObfuscationSpec | None) -> dict | None:
    if obf is None:
        return None
    return {
        "daemon_clocks": [_clock_to_dict(c) for c in obf.daemon_clocks],
        "daemon_waves": [asdict(w) for w in obf.daemon_waves],
        "power_db": obf.power_db,
        "randomize_per_capture": obf.randomize_per_capture,
        "jitter": obf.jitter,
    }


def obfuscation_from_dict(doc: dict | None, where: str = "obfuscation") -> ObfuscationSpec | None:
    if doc is None:
        return None
    try:
        clocks = tuple(
            ClockSpec(**{**c, "amplitude_profile": tuple(c["amplitude_profile"])}) for c in doc["daemon_clocks"]
        )
        waves = tuple(ActivityWave(**w) for w in doc["daemon_waves"])
        return ObfuscationSpec(
            clocks, waves, float(doc["power_db"]), bool(doc["randomize_per_capture"]), float(doc["jitter"])
        )
    except KeyError as exc:
        raise FormatError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from None


def scene_to_dict(scene: SceneConfig) -> dict:
    return {
        "signature": signature_to_dict(scene.signature),
        "phase": scene.phase.value,
        "channel": asdict(scene.channel),
        "interference": {
            "carriers": [asdict(c) for c in scene.interference.carriers],
            "drift_rate": scene.interference.drift_rate,
        },
        "noise": asdict(scene.noise),
        "sample_rate": scene.sample_rate,
        "duration": scene.duration,
        "band_center_hz": scene.band_center_hz,
        "seed": scene.seed,
    }


def scene_from_dict(doc: dict, where: str = "scene") -> SceneConfig:
    try:
        return SceneConfig(
            signature=signature_from_dict(doc["signature"], where=f"{where}.signature"),
            phase=doc["phase"],
            channel=ChannelSpec(**doc["channel"]),
            interference=InterferenceSpec(
                tuple(Carrier(**c) for c in doc["interference"]["carriers"]),
                doc["interference"]["drift_rate"],
            ),
            noise=NoiseSpec(
                float(doc["noise"]["noise_power_db"]), doc["noise"]["floor_tilt_db_per_band"]
            ),
            sample_rate=doc["sample_rate"],
            duration=doc["duration"],
            band_center_hz=doc["band_center_hz"],
            seed=doc["seed"],
        )
    except KeyError as exc:
        raise FormatError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from None
