"""Simulated eavesdropping scene: channel, ambient interference, noise, obfuscation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .emanation import (
    ActivityPhase,
    ActivityWave,
    AppSignature,
    ClockSpec,
    IQRecording,
    _n_samples,
    _tone,
    modulate,
    synth_app_emanation,
    synth_clock,
    synth_square,
)
from .errors import InvalidArgumentError

__all__ = [
    "Carrier",
    "ChannelSpec",
    "InterferenceSpec",
    "NoiseSpec",
    "ObfuscationSpec",
    "SceneConfig",
    "State",
    "capture",
    "capture_pair",
    "channel_gain",
    "default_interference",
    "default_obfuscation",
    "gen_interference",
    "gen_noise",
    "gen_obfuscation",
    "orientation_gain",
]


class State(str, enum.Enum):
    ACTIVE = "active"
    IDLE = "idle"


@dataclass(frozen=True)
class ChannelSpec:
    distance: float = 1.0
    path_loss_exponent: float = 2.0
    antenna_gain_dbi: float = 6.0
    orientation_deg: float = 90.0
    head_blockage_db: float = 8.0
    side_floor_db: float = -26.0

    def __post_init__(self):
        if not self.distance > 0:
            raise InvalidArgumentError(f"distance must be positive, got {self.distance}")
        if not 1.5 <= self.path_loss_exponent <= 4.0:
            raise InvalidArgumentError(f"path_loss_exponent must be in [1.5, 4], got {self.path_loss_exponent}")
        if self.head_blockage_db < 0:
            raise InvalidArgumentError("head_blockage_db must be >= 0")
        if self.side_floor_db > 0:
            raise InvalidArgumentError("side_floor_db must be <= 0")
        object.__setattr__(self, "orientation_deg", float(self.orientation_deg) % 360.0)


def orientation_gain(theta_deg: float, side_floor_db: float = -26.0, head_blockage_db: float = 8.0) -> float:
    """Amplitude factor of the antenna pointing at the headset from angle ``theta_deg``.

    Raised-cosine lobe: 1 when facing the front (90 deg) or the back (270 deg),
    ``side_floor_db`` at the sides (0/180 deg).  The rear half (180, 360) is
    further attenuated by the head.
    """
    theta = float(theta_deg) % 360.0
    floor = 10 ** (side_floor_db / 20)
    lobe = 0.5 * (1.0 + math.cos(math.radians(2.0 * (theta - 90.0))))
    g = floor + (1.0 - floor) * lobe
    if 180.0 < theta < 360.0:
        g *= 10 ** (-head_blockage_db / 20)
    return g


def channel_gain(chan: ChannelSpec) -> float:
    return (
        10 ** (chan.antenna_gain_dbi / 20)
        * chan.distance ** (-chan.path_loss_exponent / 2)
        * orientation_gain(chan.orientation_deg, chan.side_floor_db, chan.head_blockage_db)
    )


@dataclass(frozen=True)
class Carrier:
    offset_hz: float
    power_db: float
    bandwidth_hz: float = 0.0

    def __post_init__(self):
        if self.bandwidth_hz < 0:
            raise InvalidArgumentError(f"bandwidth_hz must be >= 0, got {self.bandwidth_hz}")


@dataclass(frozen=True)
class InterferenceSpec:
    carriers: tuple = ()
    drift_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "carriers", tuple(c if isinstance(c, Carrier) else Carrier(*c) for c in self.carriers)
        )
        if not math.isfinite(self.drift_rate):
            raise InvalidArgumentError("drift_rate must be finite")


def default_interference() -> InterferenceSpec:
    return InterferenceSpec(
        carriers=(
            Carrier(-900e3, 25.0, 60e3),
            Carrier(150e3, 30.0, 0.0),
            Carrier(980e3, 20.0, 150e3),
            Carrier(-350e3, 15.0, 20e3),
        ),
        drift_rate=0.002,
    )


@dataclass(frozen=True)
class NoiseSpec:
    noise_power_db: float = -10.0
    floor_tilt_db_per_band: float = 3.0

    def __post_init__(self):
        if math.isnan(self.noise_power_db) or self.noise_power_db == math.inf:
            raise InvalidArgumentError("noise_power_db must be finite or -inf")
        if not math.isfinite(self.floor_tilt_db_per_band):
            raise InvalidArgumentError("floor_tilt_db_per_band must be finite")


@dataclass(frozen=True)
class ObfuscationSpec:
    daemon_clocks: tuple = ()
    daemon_waves: tuple = ()
    power_db: float = 0.0
    randomize_per_capture: bool = True
    jitter: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "daemon_clocks", tuple(self.daemon_clocks))
        object.__setattr__(self, "daemon_waves", tuple(self.daemon_waves))
        if not 0 <= self.jitter < 1:
            raise InvalidArgumentError("jitter must be in [0, 1)")


def default_obfuscation(power_db: float = 0.0, randomize_per_capture: bool = True) -> ObfuscationSpec:
    clocks = (
        ClockSpec(450e3, 60e3, 30e3),
        ClockSpec(560e3, 80e3, 60e3),
        ClockSpec(670e3, 50e3, 40e3),
        ClockSpec(760e3, 90e3, 45e3),
    )
    waves = (ActivityWave(12e3), ActivityWave(17e3), ActivityWave(9e3), ActivityWave(21e3))
    return ObfuscationSpec(clocks, waves, power_db, randomize_per_capture)


@dataclass(frozen=True)
class SceneConfig:
    signature: AppSignature
    phase: ActivityPhase = ActivityPhase.RUNNING
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    interference: InterferenceSpec = field(default_factory=default_interference)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sample_rate: float = 2.5e6
    duration: float = 0.1
    band_center_hz: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phase", ActivityPhase(self.phase))
        if self.phase not in self.signature.phases:
            raise InvalidArgumentError(f"{self.signature.app_id} has no {self.phase.value!r} phase")
        _n_samples(self.sample_rate, self.duration)

    @property
    def n_samples(self) -> int:
        return _n_samples(self.sample_rate, self.duration)

    def with_(self, **changes) -> "SceneConfig":
        return replace(self, **changes)


def _band_spectrum(n: int, sample_rate: float, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    """FFT-domain coefficients of unit-power complex noise occupying [lo, hi] Hz."""
    freqs = np.fft.fftfreq(n, 1.0 / sample_rate)
    idx = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    if idx.size == 0:
        idx = np.array([int(np.argmin(np.abs(freqs - 0.5 * (lo + hi))))])
    spec = np.zeros(n, dtype=np.complex128)
    spec[idx] = rng.standard_normal(idx.size) + 1j * rng.standard_normal(idx.size)
    # ifft(spec) then has mean power sum|spec|^2 / n^2
    spec *= n / math.sqrt(np.sum(np.abs(spec) ** 2))
    return spec


def gen_interference(spec: InterferenceSpec, sample_rate: float, duration: float, seed: int) -> IQRecording:
    """Narrowband ambient carriers with slow, bounded power drift.

    Carrier ``i`` has power ``10**(power_db/10)`` at ``t=0`` and its power
    changes linearly by at most ``drift_rate*duration`` (relative) over the
    recording.
    """
    n = _n_samples(sample_rate, duration)
    t = np.arange(n) / sample_rate
    tones = {1.0: np.zeros(n, dtype=np.complex128), -1.0: np.zeros(n, dtype=np.complex128)}
    spectra = {1.0: None, -1.0: None}
    for i, c in enumerate(spec.carriers):
        lo, hi = c.offset_hz - c.bandwidth_hz / 2, c.offset_hz + c.bandwidth_hz / 2
        if lo < -sample_rate / 2 or hi > sample_rate / 2:
            raise InvalidArgumentError(
                f"carriers[{i}] spans [{lo:g}, {hi:g}] Hz, outside +/-{sample_rate / 2:g} Hz"
            )
        rng = np.random.default_rng([seed & 0xFFFFFFFF, 101, i])
        amp = 10 ** (c.power_db / 20)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if c.bandwidth_hz == 0:
            tones[sign] += amp * _tone(c.offset_hz, n, sample_rate, rng.uniform(0, 2 * np.pi))
        else:
            band = amp * _band_spectrum(n, sample_rate, lo, hi, rng)
            spectra[sign] = band if spectra[sign] is None else spectra[sign] + band
    out = np.zeros(n, dtype=np.complex128)
    for sign in (1.0, -1.0):
        x = tones[sign]
        if spectra[sign] is not None:
            x = x + np.fft.ifft(spectra[sign])
        if spec.drift_rate:
            x = x * np.sqrt(np.clip(1.0 + sign * spec.drift_rate * t, 0.0, None))
        out += x
    return IQRecording(out, sample_rate, 0.0, seed)


def gen_noise(spec: NoiseSpec, n: int, sample_rate: float, seed: int) -> np.ndarray:
    """Complex white Gaussian noise with a linear-in-dB tilt across the band."""
    if spec.noise_power_db == -math.inf:
        return np.zeros(n, dtype=np.complex128)
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 202])
    power = 10 ** (spec.noise_power_db / 10)
    w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    if spec.floor_tilt_db_per_band:
        # shape in the frequency domain; w is already white there
        f = np.fft.fftfreq(n)  # cycles/sample in [-0.5, 0.5)
        gain = 10 ** (spec.floor_tilt_db_per_band * f / 20)
        gain /= math.sqrt(np.mean(gain**2))
        w = np.fft.ifft(w * gain) * math.sqrt(n)
    return w * math.sqrt(power / 2)


def _safe_f0(clock: ClockSpec, wave: ActivityWave, f0: float, sample_rate: float) -> float:
    reach = clock.bandwidth + wave.highest_harmonic
    lo = reach + 0.01 * sample_rate
    hi = 0.49 * sample_rate - reach
    if hi <= lo:
        raise InvalidArgumentError(
            f"daemon source with comb half-width {reach:g} Hz does not fit at {sample_rate:g} Hz"
        )
    return float(min(max(f0, lo), hi))


def gen_obfuscation(obf: ObfuscationSpec, sample_rate: float, duration: float, seed: int) -> IQRecording:
    """Daemon emanation at mean power ``10**(power_db/10)``.

    Clocks and waves are paired index-wise (the shorter list cycles).  With
    ``randomize_per_capture`` each capture seed jitters every frequency by up
    to ``+/-jitter`` (relative).
    """
    if not obf.daemon_clocks or not obf.daemon_waves:
        raise InvalidArgumentError("obfuscation needs at least one daemon clock and one daemon wave")
    n = _n_samples(sample_rate, duration)
    if obf.power_db == -math.inf:
        return IQRecording(np.zeros(n), sample_rate, 0.0, seed)
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 303])
    out = np.zeros(n, dtype=np.complex128)
    for i in range(max(len(obf.daemon_clocks), len(obf.daemon_waves))):
        clock = obf.daemon_clocks[i % len(obf.daemon_clocks)]
        wave = obf.daemon_waves[i % len(obf.daemon_waves)]
        if obf.randomize_per_capture:
            j = rng.uniform(1 - obf.jitter, 1 + obf.jitter, size=3)
            fm = clock.fm * j[1]
            clock = replace(clock, fm=fm, delta_f=clock.modulation_index * fm)
            wave = replace(wave, f_sq=wave.f_sq * j[2])
            clock = replace(clock, f0=_safe_f0(clock, wave, clock.f0 * j[0], sample_rate))
        else:
            clock = replace(clock, f0=_safe_f0(clock, wave, clock.f0, sample_rate))
        phi = rng.uniform(0, 2 * np.pi, size=2)
        clk = synth_clock(clock, sample_rate, duration, phase=phi[0])
        sq = synth_square(wave, sample_rate, duration, phase=phi[1])
        out += modulate(clk, sq).samples
    p = np.mean(np.abs(out) ** 2)
    if p > 0:
        out *= math.sqrt(10 ** (obf.power_db / 10) / p)
    return IQRecording(out, sample_rate, 0.0, seed)


def _emanation(scene: SceneConfig, obf: ObfuscationSpec | None) -> np.ndarray:
    em = synth_app_emanation(
        scene.signature,
        scene.phase,
        scene.sample_rate,
        scene.duration,
        scene.seed,
        band_center_hz=scene.band_center_hz,
    ).samples
    if obf is not None:
        ref = float(np.mean(np.abs(em) ** 2)) or 1.0
        band_tag = 0 if scene.band_center_hz is None else int(scene.band_center_hz) // 1000
        daemon = gen_obfuscation(obf, scene.sample_rate, scene.duration, _mix(scene.seed, band_tag))
        em = em + daemon.samples * math.sqrt(ref)
    return channel_gain(scene.channel) * em


def _mix(seed: int, tag) -> int:
    tags = tag if isinstance(tag, tuple) else (tag,)
    words = [seed & 0xFFFFFFFF] + [t & 0xFFFFFFFF for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def capture(
    scene: SceneConfig, state=State.ACTIVE, obf: ObfuscationSpec | None = None, realization: int = 0
) -> IQRecording:
    """One eavesdropped recording of ``scene`` in the given device state.

    Idle and Active captures of the same scene share the interference
    realization; only the receiver noise differs.  A non-zero
    ``realization`` draws fresh receiver noise (e.g. a second idle
    reference) while keeping everything else.
    """
    state = State(state)
    tag = _STATE_TAG[state] if realization == 0 else (_STATE_TAG[state], int(realization))
    interference = gen_interference(scene.interference, scene.sample_rate, scene.duration, scene.seed).samples
    x = interference + gen_noise(scene.noise, scene.n_samples, scene.sample_rate, _mix(scene.seed, tag))
    if state is State.ACTIVE:
        x = x + _emanation(scene, obf)
    center = scene.band_center_hz if scene.band_center_hz is not None else 0.0
    return IQRecording(x, scene.sample_rate, center, scene.seed)


def capture_pair(scene: SceneConfig, obf: ObfuscationSpec | None = None) -> tuple[IQRecording, IQRecording]:
    """``(active, idle)`` captures; same result as two ``capture`` calls, one interference synthesis."""
    interference = gen_interference(scene.interference, scene.sample_rate, scene.duration, scene.seed).samples
    n = scene.n_samples
    center = scene.band_center_hz if scene.band_center_hz is not None else 0.0
    idle = interference + gen_noise(scene.noise, n, scene.sample_rate, _mix(scene.seed, _STATE_TAG[State.IDLE]))
    active = (
        interference
        + gen_noise(scene.noise, n, scene.sample_rate, _mix(scene.seed, _STATE_TAG[State.ACTIVE]))
        + _emanation(scene, obf)
    )
    return (
        IQRecording(active, scene.sample_rate, center, scene.seed),
        IQRecording(idle, scene.sample_rate, center, scene.seed),
    )


_STATE_TAG = {State.ACTIVE: 1, State.IDLE: 2}
