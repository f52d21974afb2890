"""Built-in app signature catalog and its YAML representation."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .emanation import ActivityPhase, ActivityWave, AppSignature, ClockSpec, EmanationSource
from .errors import FormatError, InvalidArgumentError

APP_NAMES = (
    "aim",
    "bait",
    "epic",
    "slupies",
    "vspeedway",
    "beast",
    "duck",
    "stable",
    "master",
    "tennis",
    "cosmicflow",
    "openbrush",
    "hyperdash",
    "maestro",
    "conjure_cards",
)

# five contiguous 10 MHz tiles covering 580-630 MHz
BAND_CENTERS_HZ = (585e6, 595e6, 605e6, 615e6, 625e6)

# app pairs that emit identical sources in the first tile, so one tile alone
# cannot tell them apart
SHARED_FIRST_TILE = ((0, 1), (2, 3), (4, 5))

CATALOG_SEED = 20240601


def _random_source(rng: np.random.Generator, band_center_hz: float) -> EmanationSource:
    # ranges keep every retained line inside (50 kHz, 1.15 MHz), which fits
    # the 2.5 MHz desk rate as well as the 25 MHz full rate
    fm = float(np.round(rng.uniform(40e3, 100e3), -2))
    beta = float(rng.uniform(0.3, 1.0))
    clock = ClockSpec(
        f0=float(np.round(rng.uniform(400e3, 800e3), -2)),
        fm=fm,
        delta_f=float(np.round(beta * fm, -1)),
        n_harmonics=2,
    )
    wave = ActivityWave(
        f_sq=float(np.round(rng.uniform(8e3, 25e3), -2)),
        a_sq=float(np.round(rng.uniform(0.6, 1.2), 3)),
        n_terms=3,
    )
    return EmanationSource(clock, wave, band_center_hz)


def default_catalog(
    band_centers_hz=BAND_CENTERS_HZ,
    sources_per_band: int = 2,
    seed: int = CATALOG_SEED,
) -> dict[str, AppSignature]:
    """Fifteen app signatures with distinct line sets in every tile.

    Every phase of an app reuses the same sources; phases differ only through
    the time envelope applied at synthesis.
    """
    rng = np.random.default_rng(seed)
    per_app: list[list[EmanationSource]] = [[] for _ in APP_NAMES]
    for b, center in enumerate(band_centers_hz):
        for i in range(len(APP_NAMES)):
            per_app[i].extend(_random_source(rng, center) for _ in range(sources_per_band))
    if band_centers_hz:
        first = band_centers_hz[0]
        for a, b in SHARED_FIRST_TILE:
            shared = [s for s in per_app[a] if s.band_center_hz == first]
            per_app[b] = shared + [s for s in per_app[b] if s.band_center_hz != first]
    return {
        name: AppSignature(name, {p: tuple(srcs) for p in ActivityPhase})
        for name, srcs in zip(APP_NAMES, per_app)
    }


def _source_to_dict(src: EmanationSource) -> dict:
    c, w = src.clock, src.wave
    return {
        "band_center_hz": src.band_center_hz,
        "clock": {
            "f0": c.f0,
            "fm": c.fm,
            "delta_f": c.delta_f,
            "n_harmonics": c.n_harmonics,
            "amplitude_profile": list(c.amplitude_profile),
        },
        "wave": {"f_sq": w.f_sq, "a_sq": w.a_sq, "n_terms": w.n_terms},
    }


def signature_to_dict(sig: AppSignature) -> dict:
    return {
        "app_id": sig.app_id,
        "envelope_period": sig.envelope_period,
        "phases": {p.value: [_source_to_dict(s) for s in srcs] for p, srcs in sig.phases.items()},
    }


def signature_from_dict(doc: dict, where: str = "signature") -> AppSignature:
    try:
        phases = {}
        for phase, sources in doc["phases"].items():
            parsed = []
            for s in sources:
                clock = dict(s["clock"])
                if clock.get("amplitude_profile") is not None:
                    clock["amplitude_profile"] = tuple(clock["amplitude_profile"])
                parsed.append(EmanationSource(ClockSpec(**clock), ActivityWave(**s["wave"]), s.get("band_center_hz")))
            phases[ActivityPhase(phase)] = tuple(parsed)
        return AppSignature(doc["app_id"], phases, doc.get("envelope_period", 4e-3))
    except KeyError as exc:
        raise FormatError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from None


def save_catalog(catalog: dict[str, AppSignature], path) -> None:
    doc = {"format_version": 1, "apps": [signature_to_dict(s) for s in catalog.values()]}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_catalog(path) -> dict[str, AppSignature]:
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict) or "apps" not in doc:
        raise FormatError(f"{path}: expected a mapping with an 'apps' list")
    catalog: dict[str, AppSignature] = {}
    for i, entry in enumerate(doc["apps"]):
        sig = signature_from_dict(entry, where=f"{path}: apps[{i}]")
        if sig.app_id in catalog:
            raise InvalidArgumentError(f"{path}: apps[{i}]: duplicate app_id {sig.app_id!r}")
        catalog[sig.app_id] = sig
    return catalog
