"""Experiment plans: every tunable of a run in one YAML document.

A plan is validated against ``PLAN_SCHEMA`` (JSON Schema) so that errors
name the offending field path.  Two presets exist: ``desk`` (2.5 MHz,
CI-sized) and ``paper`` (25 MHz, 500K-sample chunks).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from ..catalog import APP_NAMES, BAND_CENTERS_HZ, default_catalog, load_catalog
from ..dsp import PipelineConfig
from ..emanation import ActivityPhase, AppSignature
from ..errors import FormatError, InvalidArgumentError
from ..learn.train import TrainConfig
from ..scene import ChannelSpec, NoiseSpec, SceneConfig
from .serialize import fingerprint

FORMAT_VERSION = 1

_NUM = {"type": "number"}
_NUM_OR_NEG_INF = {"anyOf": [{"type": "number"}, {"const": "-inf"}]}
_POS_INT = {"type": "integer", "minimum": 1}

PLAN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["format_version", "name"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "name": {"type": "string", "minLength": 1},
        "seed": {"type": "integer", "minimum": 0},
        "catalog": {"type": ["string", "null"]},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "apps": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "phases": {
                    "type": "array",
                    "items": {"enum": [p.value for p in ActivityPhase]},
                    "minItems": 1,
                },
                "distances_m": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "orientations_deg": {"type": "array", "items": _NUM, "minItems": 1},
                "seeds_per_cell": _POS_INT,
            },
        },
        "capture": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bands_hz": {"type": "array", "items": _NUM, "minItems": 1},
                "sample_rate_hz": {"type": "number", "exclusiveMinimum": 0},
                "duration_s": {"type": "number", "exclusiveMinimum": 0},
                "chunk_size": _POS_INT,
                "noise_power_db": _NUM_OR_NEG_INF,
                "floor_tilt_db_per_band": _NUM,
                "path_loss_exponent": _NUM,
                "antenna_gain_dbi": _NUM,
                "head_blockage_db": _NUM,
                "side_floor_db": _NUM,
            },
        },
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fft_size": _POS_INT,
                "avg_frames": _POS_INT,
                "movmedian_len": _POS_INT,
                "spike_threshold_db": _NUM,
                "stft_window_len": _POS_INT,
                "stft_hop": _POS_INT,
                "freq_pool": _POS_INT,
            },
        },
        "tasks": {
            "type": "array",
            "items": {"enum": ["app_id", "activity"]},
            "minItems": 1,
            "uniqueItems": True,
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ratios": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate": {"type": "number", "minimum": 0},
                "batch_size": _POS_INT,
                "epochs": _POS_INT,
                "seed": {"type": "integer", "minimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "widths": {"type": "array", "items": _POS_INT, "minItems": 1},
            },
        },
        "sweeps": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bands": {"type": "array", "items": _POS_INT, "minItems": 1},
                "durations_s": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "distances_m": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "orientations_deg": {"type": "array", "items": _NUM, "minItems": 1},
                "obfuscation_db": {"type": "array", "items": _NUM_OR_NEG_INF, "minItems": 1},
                "usnr_seeds": _POS_INT,
                "usnr_app": {"type": "string"},
                "usnr_band_hz": _NUM,
                "usnr_lines": _POS_INT,
            },
        },
    },
}


def _desk() -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "name": "desk",
        "seed": 0,
        "catalog": None,
        "grid": {
            "apps": list(APP_NAMES),
            "phases": [p.value for p in ActivityPhase],
            "distances_m": [1.0],
            "orientations_deg": [90.0],
            "seeds_per_cell": 5,
        },
        "capture": {
            "bands_hz": list(BAND_CENTERS_HZ),
            "sample_rate_hz": 2.5e6,
            "duration_s": 0.1,
            "chunk_size": 50_000,
            "noise_power_db": -10.0,
            "floor_tilt_db_per_band": 3.0,
            "path_loss_exponent": 2.0,
            "antenna_gain_dbi": 6.0,
            "head_blockage_db": 8.0,
            "side_floor_db": -26.0,
        },
        "pipeline": {
            "fft_size": 1024,
            "avg_frames": 48,
            "movmedian_len": 65,
            "spike_threshold_db": 6.0,
            "stft_window_len": 1024,
            "stft_hop": 1024,
            "freq_pool": 16,
        },
        "tasks": ["app_id", "activity"],
        "split": {"ratios": [0.70, 0.15, 0.15], "seed": 0},
        "train": {
            "learning_rate": 0.02,
            "batch_size": 32,
            "epochs": 12,
            "seed": 0,
            "weight_decay": 1e-4,
            "momentum": 0.9,
            "widths": [16, 32, 64],
        },
        "sweeps": {
            "bands": [1, 2, 3, 4, 5],
            "durations_s": [0.005, 0.01, 0.02, 0.04, 0.08],
            "distances_m": [0.5, 1.0, 2.0, 4.0],
            "orientations_deg": [45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0, 360.0],
            "obfuscation_db": ["-inf", -10.0, -5.0, 0.0],
            "usnr_seeds": 20,
            "usnr_app": APP_NAMES[0],
            "usnr_band_hz": BAND_CENTERS_HZ[2],
            "usnr_lines": 8,
        },
    }


def _paper() -> dict:
    doc = _desk()
    doc["name"] = "paper"
    doc["capture"].update(sample_rate_hz=25e6, duration_s=0.5, chunk_size=500_000)
    doc["pipeline"].update(
        fft_size=8192, avg_frames=61, movmedian_len=301, stft_window_len=10240, stft_hop=10240, freq_pool=160
    )
    doc["sweeps"]["durations_s"] = [0.05, 0.1, 0.2, 0.4]
    return doc


PROFILES = {"desk": _desk, "paper": _paper}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(v) -> float:
    return -math.inf if v == "-inf" else float(v)


@dataclass(frozen=True)
class ExperimentPlan:
    """A validated, fully resolved plan document plus typed accessors."""

    doc: dict
    base_dir: Path = Path(".")

    @classmethod
    def from_profile(cls, profile: str = "desk", overrides: dict | None = None, base_dir=".") -> "ExperimentPlan":
        if profile not in PROFILES:
            raise InvalidArgumentError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        return cls.from_dict(_merge(PROFILES[profile](), overrides or {}), base_dir=base_dir)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".", source: str = "plan") -> "ExperimentPlan":
        errors = sorted(jsonschema.Draft202012Validator(PLAN_SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
        if errors:
            lines = [f"{source}: {'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors]
            raise FormatError("invalid plan\n  " + "\n  ".join(lines))
        plan = cls(doc, Path(base_dir))
        plan._check()
        return plan

    @classmethod
    def load(cls, path, profile: str | None = None) -> "ExperimentPlan":
        """Read a YAML plan.  Missing sections are filled from ``profile`` (default: desk)."""
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" line {mark.line + 1} column {mark.column + 1}" if mark else ""
            raise FormatError(f"{path}:{where} YAML syntax error") from None
        if not isinstance(doc, dict):
            raise FormatError(f"{path}: a plan must be a mapping")
        base = PROFILES[profile or "desk"]()
        merged = _merge(base, doc)
        return cls.from_dict(merged, base_dir=path.parent, source=str(path))

    def _check(self):
        try:
            self.pipeline()
            self.train_config()
        except InvalidArgumentError as exc:
            raise FormatError(f"plan {self.name!r}: {exc}") from None
        catalog = self.catalog()
        unknown = [a for a in self.doc["grid"]["apps"] if a not in catalog]
        if unknown:
            raise FormatError(f"plan {self.name!r}: grid/apps: unknown app ids {unknown}")
        if self.doc["sweeps"]["usnr_app"] not in catalog:
            raise FormatError(f"plan {self.name!r}: sweeps/usnr_app: unknown app id")
        cap = self.doc["capture"]
        if float(self.doc["sweeps"]["usnr_band_hz"]) not in [float(b) for b in cap["bands_hz"]]:
            raise FormatError(f"plan {self.name!r}: sweeps/usnr_band_hz must be one of capture/bands_hz")
        if cap["chunk_size"] > round(cap["duration_s"] * cap["sample_rate_hz"]):
            raise FormatError(f"plan {self.name!r}: capture/chunk_size exceeds the capture length")
        if max(self.doc["sweeps"]["bands"]) > len(cap["bands_hz"]):
            raise FormatError(f"plan {self.name!r}: sweeps/bands asks for more bands than capture/bands_hz")

    # -- accessors -----------------------------------------------------------
    @property
    def name(self) -> str:
        return self.doc["name"]

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def tasks(self) -> list[str]:
        return list(self.doc["tasks"])

    @property
    def bands(self) -> list[float]:
        return [float(b) for b in self.doc["capture"]["bands_hz"]]

    @property
    def chunk_size(self) -> int:
        return int(self.doc["capture"]["chunk_size"])

    @property
    def freq_pool(self) -> int:
        return int(self.doc["pipeline"]["freq_pool"])

    @property
    def sweeps(self) -> dict:
        s = dict(self.doc["sweeps"])
        s["obfuscation_db"] = [_num(v) for v in s["obfuscation_db"]]
        return s

    def with_seed(self, seed: int) -> "ExperimentPlan":
        return ExperimentPlan.from_dict({**self.doc, "seed": int(seed)}, base_dir=self.base_dir)

    def config_hash(self) -> str:
        return fingerprint(self.doc)[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.doc, sort_keys=True)

    def pipeline(self) -> PipelineConfig:
        p = {k: v for k, v in self.doc["pipeline"].items() if k != "freq_pool"}
        return PipelineConfig(**p)

    def train_config(self) -> TrainConfig:
        t = {k: v for k, v in self.doc["train"].items() if k != "widths"}
        return TrainConfig(**t)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(self.doc["train"]["widths"])

    def catalog(self) -> dict[str, AppSignature]:
        path = self.doc.get("catalog")
        if path:
            return load_catalog(self.base_dir / path)
        return default_catalog(tuple(self.bands))

    def noise(self) -> NoiseSpec:
        c = self.doc["capture"]
        return NoiseSpec(_num(c["noise_power_db"]), float(c["floor_tilt_db_per_band"]))

    def channel(self, distance: float = 1.0, orientation: float = 90.0) -> ChannelSpec:
        c = self.doc["capture"]
        return ChannelSpec(
            distance=float(distance),
            path_loss_exponent=float(c["path_loss_exponent"]),
            antenna_gain_dbi=float(c["antenna_gain_dbi"]),
            orientation_deg=float(orientation),
            head_blockage_db=float(c["head_blockage_db"]),
            side_floor_db=float(c["side_floor_db"]),
        )

    def capture_seed(self, *key) -> int:
        """Stable 31-bit seed for one capture, derived from the plan seed and a key."""
        words = [self.seed] + [int(k) for k in key]
        return int(np.random.SeedSequence(words).generate_state(1)[0] & 0x7FFFFFFF)

    def scene(self, sig: AppSignature, phase, band: float, seed: int, distance=1.0, orientation=90.0,
              duration: float | None = None) -> SceneConfig:
        c = self.doc["capture"]
        return SceneConfig(
            signature=sig,
            phase=phase,
            channel=self.channel(distance, orientation),
            noise=self.noise(),
            sample_rate=float(c["sample_rate_hz"]),
            duration=float(duration if duration is not None else c["duration_s"]),
            band_center_hz=band,
            seed=seed,
        )

    def captures(self) -> list[list[SceneConfig]]:
        """The dataset grid: one entry per capture, each a list of per-band scenes.

        Capture seeds are unique across the grid so that seed-grouped splits
        never leak chunks between parts.
        """
        g = self.doc["grid"]
        catalog = self.catalog()
        out = []
        for ai, app in enumerate(g["apps"]):
            for pi, phase in enumerate(g["phases"]):
                for di, dist in enumerate(g["distances_m"]):
                    for oi, orient in enumerate(g["orientations_deg"]):
                        for r in range(int(g["seeds_per_cell"])):
                            seed = self.capture_seed(ai, pi, di, oi, r)
                            out.append([self.scene(catalog[app], phase, b, seed, dist, orient) for b in self.bands])
        return out
