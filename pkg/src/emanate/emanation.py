"""Clock/activity emanation synthesis and the matching analytic line spectra.

An emanation is an FM clock carrier ``cos(2*pi*f0*t + (df/fm)*sin(2*pi*fm*t))``
multiplied by an odd-harmonic square wave standing in for a periodic
computational workload.  The product is a comb of lines at
``f0 + n*fm +/- (2m-1)*f_sq``.

All waveforms are real valued but carried in complex arrays (imaginary part
zero) so the channel and noise stages can treat every signal as complex
baseband.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import AliasingError, InvalidArgumentError

__all__ = [
    "ActivityPhase",
    "ActivityWave",
    "AppSignature",
    "ClockSpec",
    "EmanationSource",
    "IQRecording",
    "clock_spectrum_analytic",
    "emanation_spectrum_analytic",
    "modulate",
    "phase_envelope",
    "synth_app_emanation",
    "synth_clock",
    "synth_square",
]


class ActivityPhase(str, enum.Enum):
    ENTERING = "entering"
    CONFIGURING = "configuring"
    RUNNING = "running"
    EXITING = "exiting"


def default_amplitude_profile(n_harmonics: int) -> tuple[float, ...]:
    # sideband strength falls off with order
    return tuple(1.0 / (1.0 + n) for n in range(n_harmonics + 1))


@dataclass(frozen=True)
class ClockSpec:
    """FM clock parameters.

    ``amplitude_profile[n]`` scales the order-``n`` sideband pair
    (``n = 0..n_harmonics``).  ``None`` selects ``1/(1+n)``.
    """

    f0: float
    fm: float
    delta_f: float = 0.0
    n_harmonics: int = 2
    amplitude_profile: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.f0 > 0:
            raise InvalidArgumentError(f"f0 must be positive, got {self.f0}")
        if not self.fm > 0:
            raise InvalidArgumentError(f"fm must be positive, got {self.fm}")
        if not self.delta_f >= 0:
            raise InvalidArgumentError(f"delta_f must be >= 0, got {self.delta_f}")
        if int(self.n_harmonics) != self.n_harmonics or self.n_harmonics < 1:
            raise InvalidArgumentError(f"n_harmonics must be an integer >= 1, got {self.n_harmonics}")
        profile = self.amplitude_profile
        if profile is None:
            profile = default_amplitude_profile(int(self.n_harmonics))
        profile = tuple(float(a) for a in profile)
        if len(profile) != self.n_harmonics + 1:
            raise InvalidArgumentError(
                f"amplitude_profile needs {self.n_harmonics + 1} entries (n=0..{self.n_harmonics}), "
                f"got {len(profile)}"
            )
        if not all(math.isfinite(a) and a >= 0 for a in profile):
            raise InvalidArgumentError("amplitude_profile entries must be finite and >= 0")
        object.__setattr__(self, "n_harmonics", int(self.n_harmonics))
        object.__setattr__(self, "amplitude_profile", profile)

    @property
    def modulation_index(self) -> float:
        return self.delta_f / self.fm

    @property
    def has_unit_profile(self) -> bool:
        return all(a == 1.0 for a in self.amplitude_profile)

    @property
    def bandwidth(self) -> float:
        """Half-width of the retained sideband comb around ``f0``."""
        return self.n_harmonics * self.fm


@dataclass(frozen=True)
class ActivityWave:
    f_sq: float
    a_sq: float = 1.0
    n_terms: int = 3

    def __post_init__(self):
        if not self.f_sq > 0:
            raise InvalidArgumentError(f"f_sq must be positive, got {self.f_sq}")
        if not self.a_sq > 0:
            raise InvalidArgumentError(f"a_sq must be positive, got {self.a_sq}")
        if int(self.n_terms) != self.n_terms or self.n_terms < 1:
            raise InvalidArgumentError(f"n_terms must be an integer >= 1, got {self.n_terms}")
        object.__setattr__(self, "n_terms", int(self.n_terms))

    @property
    def highest_harmonic(self) -> float:
        return (2 * self.n_terms - 1) * self.f_sq


@dataclass(frozen=True)
class EmanationSource:
    """One (clock, activity) pair.

    ``band_center_hz`` pins the source to one receiver tile; frequencies in
    ``clock`` are then offsets from that tile's center.  ``None`` means the
    source shows up in whatever tile is being captured.
    """

    clock: ClockSpec
    wave: ActivityWave
    band_center_hz: float | None = None


@dataclass(frozen=True)
class AppSignature:
    app_id: str
    phases: dict = field(default_factory=dict)  # ActivityPhase -> tuple[EmanationSource, ...]
    envelope_period: float = 4e-3

    def __post_init__(self):
        if not self.app_id:
            raise InvalidArgumentError("app_id must be non-empty")
        phases = {}
        for key, sources in self.phases.items():
            phase = ActivityPhase(key)
            sources = tuple(sources)
            if not sources:
                raise InvalidArgumentError(f"{self.app_id}: phase {phase.value!r} has no sources")
            phases[phase] = sources
        object.__setattr__(self, "phases", phases)
        if not self.envelope_period > 0:
            raise InvalidArgumentError("envelope_period must be positive")

    def sources(self, phase, band_center_hz: float | None = None) -> list[EmanationSource]:
        phase = ActivityPhase(phase)
        if phase not in self.phases:
            raise InvalidArgumentError(f"{self.app_id} has no {phase.value!r} phase")
        return [
            s
            for s in self.phases[phase]
            if band_center_hz is None or s.band_center_hz is None or s.band_center_hz == band_center_hz
        ]


@dataclass(eq=False)
class IQRecording:
    samples: np.ndarray
    sample_rate: float
    center_frequency: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InvalidArgumentError("samples must be a non-empty 1-D sequence")
        if not self.sample_rate > 0:
            raise InvalidArgumentError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "IQRecording":
        return IQRecording(samples, self.sample_rate, self.center_frequency, self.seed)


def _n_samples(sample_rate: float, duration: float) -> int:
    if not sample_rate > 0:
        raise InvalidArgumentError(f"sample_rate must be positive, got {sample_rate}")
    if not duration > 0:
        raise InvalidArgumentError(f"duration must be positive, got {duration}")
    n = int(round(duration * sample_rate))
    if n < 2:
        raise InvalidArgumentError(f"duration*sample_rate must be >= 2, got {duration * sample_rate:g}")
    return n


def _tone(freq: float, n: int, sample_rate: float, phase: float = 0.0) -> np.ndarray:
    """``exp(1j*(2*pi*freq*k/sample_rate + phase))`` for ``k = 0..n-1``.

    Built as an outer product of a coarse and a fine table, so the cost is one
    complex multiply per sample instead of a transcendental call.
    """
    block = max(1, int(math.isqrt(n)))
    rows = -(-n // block)
    w = 2.0 * math.pi * freq / sample_rate
    fine = np.exp(1j * w * np.arange(block))
    coarse = np.exp(1j * (w * block * np.arange(rows) + phase))
    return np.multiply.outer(coarse, fine).ravel()[:n]


def synth_clock(
    spec: ClockSpec,
    sample_rate: float,
    duration: float,
    *,
    phase: float = 0.0,
    center_frequency: float = 0.0,
    seed: int = 0,
) -> IQRecording:
    """Synthesize the FM clock waveform.

    With a unit amplitude profile this evaluates the closed-form FM cosine
    directly.  Otherwise it sums the Bessel-weighted sideband lines with the
    profile applied per order, which is what the analytic spectrum describes.
    """
    n = _n_samples(sample_rate, duration)
    nyquist = sample_rate / 2
    if spec.f0 >= nyquist:
        raise AliasingError(f"f0={spec.f0:g} Hz is at or above Nyquist ({nyquist:g} Hz)")
    beta = spec.modulation_index
    if spec.has_unit_profile:
        t = np.arange(n) / sample_rate
        x = np.cos(2 * np.pi * spec.f0 * t + phase + beta * np.sin(2 * np.pi * spec.fm * t))
    else:
        if spec.f0 + spec.bandwidth >= nyquist:
            raise AliasingError(
                f"sidebands up to {spec.f0 + spec.bandwidth:g} Hz exceed Nyquist ({nyquist:g} Hz)"
            )
        carrier = _tone(spec.f0, n, sample_rate, phase)
        mod = _tone(spec.fm, n, sample_rate)
        acc = np.full(n, spec.amplitude_profile[0] * special.jv(0, beta), dtype=np.complex128)
        up = np.ones(n, dtype=np.complex128)
        for order in range(1, spec.n_harmonics + 1):
            up *= mod
            jn = special.jv(order, beta) * spec.amplitude_profile[order]
            # J_{-n} = (-1)^n J_n; conj(mod)^n gives the lower sideband
            acc += jn * up + ((-1) ** order) * jn * np.conj(up)
        x = (carrier * acc).real
    return IQRecording(x.astype(np.complex128), sample_rate, center_frequency, seed)


def clock_spectrum_analytic(spec: ClockSpec) -> list[tuple[float, float]]:
    """Sideband lines ``f0 + n*fm`` with magnitudes ``|J_n(df/fm)| * A(|n|)``."""
    beta = spec.modulation_index
    lines = []
    for order in range(-spec.n_harmonics, spec.n_harmonics + 1):
        k = abs(order)
        mag = abs(float(special.jv(k, beta))) * spec.amplitude_profile[k]
        lines.append((spec.f0 + order * spec.fm, mag))
    return lines


def synth_square(
    wave: ActivityWave,
    sample_rate: float,
    duration: float,
    *,
    phase: float = 0.0,
    center_frequency: float = 0.0,
    seed: int = 0,
) -> IQRecording:
    n = _n_samples(sample_rate, duration)
    if wave.highest_harmonic >= sample_rate / 2:
        raise AliasingError(
            f"harmonic {2 * wave.n_terms - 1} of f_sq={wave.f_sq:g} Hz "
            f"({wave.highest_harmonic:g} Hz) exceeds Nyquist ({sample_rate / 2:g} Hz)"
        )
    c = _tone(wave.f_sq, n, sample_rate, phase).real
    # Chebyshev recurrence: cos((k+1)x) = 2cos(x)cos(kx) - cos((k-1)x)
    prev, cur = np.ones(n), c
    acc = c.copy()
    for k in range(2, 2 * wave.n_terms):
        prev, cur = cur, 2.0 * c * cur - prev
        if k % 2 == 1:
            acc += cur / k
    x = (2.0 * wave.a_sq / np.pi) * acc
    return IQRecording(x.astype(np.complex128), sample_rate, center_frequency, seed)


def modulate(clock: IQRecording, activity: IQRecording) -> IQRecording:
    if len(clock) != len(activity):
        raise InvalidArgumentError(f"length mismatch: clock {len(clock)} vs activity {len(activity)}")
    if clock.sample_rate != activity.sample_rate:
        raise InvalidArgumentError(
            f"sample_rate mismatch: clock {clock.sample_rate:g} vs activity {activity.sample_rate:g}"
        )
    return clock.with_samples(clock.samples * activity.samples)


def emanation_spectrum_analytic(spec: ClockSpec, wave: ActivityWave) -> list[tuple[float, float]]:
    """Mixing-product lines of a clock and an activity square wave.

    Every clock line ``f_clk`` with magnitude ``A`` yields lines at
    ``f_clk +/- (2m-1)*f_sq`` of magnitude ``A*a_sq/((2m-1)*pi)``.  Lines that
    land on the same frequency are merged by adding magnitudes, and zero
    magnitude lines are dropped.  Frequencies keep their sign; a negative
    entry is a real cosine that folds to ``abs(f)``.
    """
    merged: dict[float, float] = {}
    for f_clk, a_clk in clock_spectrum_analytic(spec):
        for m in range(1, wave.n_terms + 1):
            k = 2 * m - 1
            mag = a_clk * wave.a_sq / (k * np.pi)
            for f in (f_clk - k * wave.f_sq, f_clk + k * wave.f_sq):
                key = round(f, 6)
                merged[key] = merged.get(key, 0.0) + mag
    return sorted((f, a) for f, a in merged.items() if a > 0)


def phase_envelope(phase, n: int, sample_rate: float, period: float) -> np.ndarray:
    """Time gating applied to the activity square wave for each app phase.

    entering: rising ramp then silence; exiting: falling ramp then silence;
    configuring: two short bursts per period; running: always on.
    """
    phase = ActivityPhase(phase)
    if phase is ActivityPhase.RUNNING:
        return np.ones(n)
    u = np.mod(np.arange(n) / (sample_rate * period), 1.0)
    if phase is ActivityPhase.ENTERING:
        return np.where(u < 0.6, u / 0.6, 0.0)
    if phase is ActivityPhase.EXITING:
        return np.where(u < 0.6, 1.0 - u / 0.6, 0.0)
    burst = (u < 0.1) | ((u >= 0.5) & (u < 0.6))
    return burst.astype(float)


def synth_app_emanation(
    sig: AppSignature,
    phase,
    sample_rate: float,
    duration: float,
    seed: int,
    *,
    band_center_hz: float | None = None,
) -> IQRecording:
    """Sum of modulated (clock, gated square wave) pairs for one app phase.

    The seed only draws the initial phase of each clock and square wave.
    Pairs pinned to another tile than ``band_center_hz`` are skipped; if none
    remain the result is all zeros.
    """
    phase = ActivityPhase(phase)
    if phase not in sig.phases:
        raise InvalidArgumentError(f"{sig.app_id} has no {phase.value!r} phase")
    n = _n_samples(sample_rate, duration)
    center = band_center_hz if band_center_hz is not None else 0.0
    out = np.zeros(n, dtype=np.complex128)
    env = None
    for index, src in enumerate(sig.phases[phase]):
        if not (band_center_hz is None or src.band_center_hz is None or src.band_center_hz == band_center_hz):
            continue
        if env is None:
            env = phase_envelope(phase, n, sample_rate, sig.envelope_period)
        rng = np.random.default_rng([seed & 0xFFFFFFFF, index])
        phi_clk, phi_sq = rng.uniform(0, 2 * np.pi, size=2)
        clk = synth_clock(src.clock, sample_rate, duration, phase=phi_clk)
        sq = synth_square(src.wave, sample_rate, duration, phase=phi_sq)
        out += modulate(clk, sq.with_samples(sq.samples * env)).samples
    return IQRecording(out, sample_rate, center, seed)
