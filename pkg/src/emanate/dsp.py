"""Spectral processing chain: averaged periodograms, Active-minus-Idle
subtraction, moving-median floor removal, spike/USNR extraction, state
detection and STFT spectrograms."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import signal

from .emanation import IQRecording
from .errors import InvalidArgumentError
from .scene import State

__all__ = [
    "DB_FLOOR",
    "PipelineConfig",
    "Spectrogram",
    "SpectrumFrame",
    "StreamingStateDetector",
    "UsnrReport",
    "concat_bands",
    "detect_spikes",
    "detect_state",
    "movmedian_smooth",
    "noncoherent_average",
    "process_band",
    "psd_frames",
    "spectrum_subtract",
    "stft_spectrogram",
    "usnr",
]

DB_FLOOR = -300.0
_LIN_FLOOR = 10 ** (DB_FLOOR / 10)


def to_db(power) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(np.asarray(power, dtype=float), _LIN_FLOOR))


@dataclass(frozen=True)
class PipelineConfig:
    fft_size: int = 1024
    avg_frames: int = 48
    movmedian_len: int = 65
    spike_threshold_db: float = 6.0
    stft_window_len: int = 1024
    stft_hop: int = 1024

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise InvalidArgumentError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.avg_frames < 1:
            raise InvalidArgumentError(f"avg_frames must be >= 1, got {self.avg_frames}")
        if self.movmedian_len < 1 or self.movmedian_len % 2 == 0:
            raise InvalidArgumentError(f"movmedian_len must be odd, got {self.movmedian_len}")
        if self.stft_window_len < 2:
            raise InvalidArgumentError("stft_window_len must be >= 2")
        if not 1 <= self.stft_hop <= self.stft_window_len:
            raise InvalidArgumentError(f"stft_hop must be in [1, stft_window_len], got {self.stft_hop}")


@dataclass(eq=False)
class SpectrumFrame:
    freqs: np.ndarray
    power_db: np.ndarray
    band_center_hz: float
    fft_size: int

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.power_db = np.asarray(self.power_db, dtype=float)
        if self.freqs.shape != self.power_db.shape or self.freqs.ndim != 1:
            raise InvalidArgumentError("freqs and power_db must be 1-D arrays of equal length")

    @property
    def bin_width(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if self.freqs.size > 1 else math.nan

    @property
    def linear(self) -> np.ndarray:
        return 10 ** (self.power_db / 10)

    def same_axis(self, other: "SpectrumFrame") -> bool:
        return (
            self.fft_size == other.fft_size
            and self.freqs.shape == other.freqs.shape
            and np.allclose(self.freqs, other.freqs, rtol=0, atol=1e-6 * max(1.0, abs(self.bin_width)))
        )

    def with_power(self, power_db) -> "SpectrumFrame":
        return SpectrumFrame(self.freqs, power_db, self.band_center_hz, self.fft_size)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["freq_hz", "power_db"])
        w.writerows((f"{f:.3f}", f"{p:.6f}") for f, p in zip(self.freqs, self.power_db))
        return buf.getvalue()


@dataclass(eq=False)
class Spectrogram:
    times: np.ndarray
    freqs: np.ndarray
    power_db: np.ndarray  # (time, freq)
    window: tuple
    hop: int

    def __post_init__(self):
        if self.power_db.shape != (self.times.size, self.freqs.size):
            raise InvalidArgumentError("spectrogram matrix does not match its axes")
        if not 1 <= self.hop <= self.window[1]:
            raise InvalidArgumentError("hop must be in [1, window length]")

    def to_csv(self) -> str:
        """Header row carries the frequency axis, first column the time axis."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s\\freq_hz"] + [f"{f:.3f}" for f in self.freqs])
        for t, row in zip(self.times, self.power_db):
            w.writerow([f"{t:.9f}"] + [f"{p:.6f}" for p in row])
        return buf.getvalue()


@dataclass(frozen=True)
class UsnrReport:
    spike_freq: float
    usnr_db: float
    floor_db: float
    peak_db: float


def _freq_axis(n: int, sample_rate: float, center: float) -> np.ndarray:
    return center + (np.arange(n) - n // 2) * (sample_rate / n)


def _window(name: str, n: int) -> np.ndarray:
    return signal.get_window(name, n, fftbins=True)


def psd_matrix(iq: IQRecording, fft_size: int, window: str = "hann") -> np.ndarray:
    """Linear periodogram power of non-overlapping frames, shape (frames, fft_size), DC centered."""
    if len(iq) < fft_size:
        raise InvalidArgumentError(f"recording has {len(iq)} samples, fewer than fft_size={fft_size}")
    n_frames = len(iq) // fft_size
    frames = iq.samples[: n_frames * fft_size].reshape(n_frames, fft_size)
    spec = np.fft.fft(frames * _window(window, fft_size), axis=1)
    return np.fft.fftshift(np.abs(spec) ** 2 / fft_size, axes=1)


def psd_frames(iq: IQRecording, fft_size: int, window: str = "hann") -> list[SpectrumFrame]:
    power = psd_matrix(iq, fft_size, window)
    freqs = _freq_axis(fft_size, iq.sample_rate, iq.center_frequency)
    return [SpectrumFrame(freqs, to_db(row), iq.center_frequency, fft_size) for row in power]


def averaged_psd(iq: IQRecording, fft_size: int, k: int | None = None, window: str = "hann") -> SpectrumFrame:
    """Shortcut for ``noncoherent_average(psd_frames(iq, fft_size), k)``; ``k=None`` uses every frame."""
    power = psd_matrix(iq, fft_size, window)
    k = power.shape[0] if k is None else k
    if power.shape[0] < k:
        raise InvalidArgumentError(f"need {k} frames, recording yields {power.shape[0]}")
    freqs = _freq_axis(fft_size, iq.sample_rate, iq.center_frequency)
    return SpectrumFrame(freqs, to_db(power[:k].mean(axis=0)), iq.center_frequency, fft_size)


def noncoherent_average(frames, k: int) -> SpectrumFrame:
    frames = list(frames)
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if len(frames) < k:
        raise InvalidArgumentError(f"need {k} frames, got {len(frames)}")
    first = frames[0]
    for i, f in enumerate(frames[1:k], start=1):
        if not first.same_axis(f):
            raise InvalidArgumentError(f"frame {i} has a different frequency axis")
    power = np.mean([f.linear for f in frames[:k]], axis=0)
    return first.with_power(to_db(power))


def movmedian_smooth(frame: SpectrumFrame, window_len: int) -> tuple[SpectrumFrame, SpectrumFrame]:
    """Moving-median noise floor and the floor-removed spectrum.

    The window is centered and shrinks at the edges (no padding).
    """
    if window_len < 1 or window_len % 2 == 0:
        raise InvalidArgumentError(f"window_len must be odd, got {window_len}")
    if window_len > frame.power_db.size:
        raise InvalidArgumentError(f"window_len {window_len} exceeds {frame.power_db.size} bins")
    floor = pd.Series(frame.power_db).rolling(window_len, center=True, min_periods=1).median().to_numpy()
    return frame.with_power(floor), frame.with_power(frame.power_db - floor)


def spectrum_subtract(active: SpectrumFrame, idle: SpectrumFrame) -> SpectrumFrame:
    if not active.same_axis(idle):
        raise InvalidArgumentError("active and idle spectra have different frequency axes")
    return active.with_power(np.maximum(active.power_db - idle.power_db, DB_FLOOR))


def process_band(active_iq: IQRecording, idle_iq: IQRecording, cfg: PipelineConfig) -> SpectrumFrame:
    """Average, subtract the idle reference, then remove the residual floor."""
    active = averaged_psd(active_iq, cfg.fft_size, cfg.avg_frames)
    idle = averaged_psd(idle_iq, cfg.fft_size, cfg.avg_frames)
    _, detrended = movmedian_smooth(spectrum_subtract(active, idle), min(cfg.movmedian_len, cfg.fft_size - 1))
    return detrended


def detect_spikes(frame: SpectrumFrame, threshold_db: float) -> list[tuple[float, float]]:
    peaks, _ = signal.find_peaks(frame.power_db, height=threshold_db)
    return [(float(frame.freqs[i]), float(frame.power_db[i])) for i in peaks]


def usnr(frame: SpectrumFrame, spike_freq: float, movmedian_len: int = 65) -> UsnrReport:
    """Peak power near ``spike_freq`` over the local median floor, in dB."""
    half_bin = 0.5 * frame.bin_width
    if not frame.freqs[0] - half_bin <= spike_freq <= frame.freqs[-1] + half_bin:
        raise InvalidArgumentError(
            f"{spike_freq:g} Hz is outside the axis [{frame.freqs[0]:g}, {frame.freqs[-1]:g}] Hz"
        )
    p = frame.power_db
    i = int(np.argmin(np.abs(frame.freqs - spike_freq)))
    lo, hi = max(0, i - 1), min(p.size, i + 2)
    k = lo + int(np.argmax(p[lo:hi]))
    near = np.arange(max(0, k - movmedian_len), min(p.size, k + movmedian_len + 1))
    near = near[np.abs(near - k) > 3]
    floor = float(np.median(p[near])) if near.size else float(np.median(p))
    return UsnrReport(float(frame.freqs[k]), float(p[k] - floor), floor, float(p[k]))


def detect_state(frames, reference_idle: SpectrumFrame, threshold_db: float) -> State:
    """Active when the averaged frames show at least one spike over the idle reference."""
    frames = list(frames)
    avg = noncoherent_average(frames, len(frames))
    residual = spectrum_subtract(avg, reference_idle)
    return State.ACTIVE if detect_spikes(residual, threshold_db) else State.IDLE


class StreamingStateDetector:
    """Sliding-window state detection over consecutive capture windows.

    The idle reference is replaced by every window classified Idle.  Holds
    mutable state: confine an instance to one worker.
    """

    def __init__(self, reference_idle: SpectrumFrame, threshold_db: float = 6.0):
        self.reference_idle = reference_idle
        self.threshold_db = threshold_db

    def update(self, frames) -> State:
        frames = list(frames)
        state = detect_state(frames, self.reference_idle, self.threshold_db)
        if state is State.IDLE:
            self.reference_idle = noncoherent_average(frames, len(frames))
        return state


def stft_spectrogram(iq: IQRecording, cfg: PipelineConfig, window: str = "hamming") -> Spectrogram:
    L, hop = cfg.stft_window_len, cfg.stft_hop
    n = len(iq)
    if n < L:
        raise InvalidArgumentError(f"recording has {n} samples, fewer than stft_window_len={L}")
    n_frames = (n - L) // hop + 1
    idx = np.arange(L)[None, :] + hop * np.arange(n_frames)[:, None]
    spec = np.fft.fft(iq.samples[idx] * _window(window, L), axis=1)
    power = np.fft.fftshift(np.abs(spec) ** 2 / L, axes=1)
    times = (hop * np.arange(n_frames) + L / 2) / iq.sample_rate
    freqs = _freq_axis(L, iq.sample_rate, iq.center_frequency)
    return Spectrogram(times, freqs, to_db(power), (window, L), hop)


def concat_bands(frames) -> np.ndarray:
    """Per-bin dB values of several tiles, ordered by band center."""
    frames = sorted(frames, key=lambda f: f.band_center_hz)
    if not frames:
        raise InvalidArgumentError("no bands to concatenate")
    size = frames[0].fft_size
    for a, b in zip(frames, frames[1:]):
        if b.fft_size != size:
            raise InvalidArgumentError("bands have different fft_size")
        if b.freqs[0] <= a.freqs[-1]:
            raise InvalidArgumentError(
                f"bands centered at {a.band_center_hz:g} and {b.band_center_hz:g} Hz overlap"
            )
    return np.concatenate([f.power_db for f in frames])
