import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from conftest import line_amplitude
from emanate.catalog import (
    APP_NAMES,
    BAND_CENTERS_HZ,
    SHARED_FIRST_TILE,
    default_catalog,
    load_catalog,
    save_catalog,
)
from emanate.dsp import PipelineConfig, averaged_psd, stft_spectrogram
from emanate.emanation import (
    ActivityPhase,
    ActivityWave,
    AppSignature,
    ClockSpec,
    EmanationSource,
    IQRecording,
    clock_spectrum_analytic,
    emanation_spectrum_analytic,
    modulate,
    phase_envelope,
    synth_app_emanation,
    synth_clock,
    synth_square,
)
from emanate.errors import AliasingError, FormatError, InvalidArgumentError


def bessel_series(n: int, x: float, terms: int = 30) -> float:
    """J_n(x) from its power series, independent of scipy."""
    return sum((-1) ** k / (math.factorial(k) * math.factorial(k + n)) * (x / 2) ** (2 * k + n) for k in range(terms))


# -- types ---------------------------------------------------------------------
class TestTypes:
    def test_four_phases(self):
        assert [p.value for p in ActivityPhase] == ["entering", "configuring", "running", "exiting"]

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(f0=0, fm=1),
            dict(f0=1, fm=0),
            dict(f0=1, fm=1, delta_f=-1),
            dict(f0=1, fm=1, n_harmonics=0),
            dict(f0=1, fm=1, n_harmonics=1, amplitude_profile=(1.0,)),
            dict(f0=1, fm=1, n_harmonics=1, amplitude_profile=(1.0, -0.1)),
            dict(f0=1, fm=1, n_harmonics=1, amplitude_profile=(1.0, float("inf"))),
        ],
    )
    def test_clock_spec_rejects(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            ClockSpec(**kwargs)

    def test_default_profile_decays(self):
        spec = ClockSpec(1e3, 100.0, 50.0, n_harmonics=3)
        assert spec.amplitude_profile == (1.0, 0.5, 1 / 3, 0.25)

    @pytest.mark.parametrize("kwargs", [dict(f_sq=0), dict(f_sq=1, a_sq=0), dict(f_sq=1, n_terms=0)])
    def test_activity_wave_rejects(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            ActivityWave(**kwargs)

    def test_signature_needs_sources_per_phase(self):
        src = EmanationSource(ClockSpec(1e3, 1e2), ActivityWave(10.0))
        with pytest.raises(InvalidArgumentError):
            AppSignature("x", {"running": ()})
        sig = AppSignature("x", {"running": (src,)})
        assert sig.sources("running") == [src]
        with pytest.raises(InvalidArgumentError):
            sig.sources("exiting")

    def test_iq_recording(self):
        rec = IQRecording([1, 2, 3, 4], 2.0)
        assert rec.samples.dtype == np.complex128
        assert rec.duration == 2.0
        with pytest.raises(InvalidArgumentError):
            IQRecording([], 1.0)
        with pytest.raises(InvalidArgumentError):
            IQRecording([1, 2], 0.0)


# -- synth_clock -------------------------------------------------------------------
class TestSynthClock:
    def test_pure_cosine_when_no_deviation(self):
        rec = synth_clock(ClockSpec(1e3, 100.0, 0.0, amplitude_profile=(1, 1, 1)), 10e3, 1.0)
        assert np.all(rec.samples.imag == 0)
        mag = np.abs(np.fft.rfft(rec.samples.real))
        peak = int(np.argmax(mag))
        assert peak == 1000  # 1 Hz bins over 1 s
        others = np.delete(mag, peak)
        assert 20 * np.log10(others.max() / mag[peak]) <= -60

    def test_matches_closed_form(self):
        spec = ClockSpec(1e3, 100.0, 50.0, amplitude_profile=(1, 1, 1))
        rec = synth_clock(spec, 10e3, 0.1)
        t = np.arange(1000) / 10e3
        ref = np.cos(2 * np.pi * 1e3 * t + 0.5 * np.sin(2 * np.pi * 100 * t))
        np.testing.assert_allclose(rec.samples.real, ref, atol=1e-12)

    def test_first_sidebands_follow_bessel(self):
        spec = ClockSpec(1e3, 100.0, 50.0, n_harmonics=6, amplitude_profile=(1,) * 7)
        x = synth_clock(spec, 10e3, 1.0).samples.real
        j1 = bessel_series(1, 0.5)
        for f in (900.0, 1100.0):
            assert line_amplitude(x, 10e3, f) == pytest.approx(j1, rel=0.01)

    def test_profile_weighted_lines(self):
        spec = ClockSpec(200e3, 20e3, 14e3, n_harmonics=2)  # default 1/(1+n)
        x = synth_clock(spec, 2.5e6, 0.01).samples.real
        for f, mag in clock_spectrum_analytic(spec):
            assert line_amplitude(x, 2.5e6, f) == pytest.approx(mag, rel=1e-6)

    @pytest.mark.parametrize("dur", [0.0, -1.0])
    def test_rejects_bad_duration(self, dur):
        with pytest.raises(InvalidArgumentError):
            synth_clock(ClockSpec(1e3, 100.0), 10e3, dur)

    def test_rejects_bad_rate(self):
        with pytest.raises(InvalidArgumentError):
            synth_clock(ClockSpec(1e3, 100.0), 0.0, 1.0)

    def test_aliasing(self):
        with pytest.raises(AliasingError):
            synth_clock(ClockSpec(5e3, 100.0), 10e3, 1.0)
        with pytest.raises(AliasingError):
            synth_clock(ClockSpec(4.9e3, 100.0, 50.0), 10e3, 1.0)  # sidebands cross Nyquist

    def test_aliasing_error_is_invalid_argument(self):
        assert issubclass(AliasingError, InvalidArgumentError)


# -- analytic spectra --------------------------------------------------------------
class TestClockSpectrum:
    def test_zero_index(self):
        lines = clock_spectrum_analytic(ClockSpec(1e3, 100.0, 0.0, amplitude_profile=(1, 1, 1)))
        nonzero = [(f, a) for f, a in lines if a > 0]
        assert nonzero == [(1e3, 1.0)]

    def test_bessel_magnitudes(self):
        lines = clock_spectrum_analytic(ClockSpec(1e3, 100.0, 50.0, amplitude_profile=(1, 1, 1)))
        assert len(lines) == 5
        mags = dict(lines)
        for n, expected in enumerate((0.9385, 0.2423, 0.0306)):
            assert mags[1e3 + n * 100] == pytest.approx(expected, abs=5e-5)
            assert mags[1e3 - n * 100] == pytest.approx(bessel_series(n, 0.5), rel=1e-9)

    @given(
        f0=st.floats(1e3, 1e6),
        fm=st.floats(10.0, 1e4),
        beta=st.floats(0.0, 3.0),
        n=st.integers(1, 6),
    )
    def test_spacing_is_fm_and_sorted(self, f0, fm, beta, n):
        lines = clock_spectrum_analytic(ClockSpec(f0, fm, beta * fm, n_harmonics=n))
        freqs = np.array([f for f, _ in lines])
        assert len(lines) == 2 * n + 1
        np.testing.assert_allclose(np.diff(freqs), fm, rtol=1e-9)
        assert all(a >= 0 for _, a in lines)


class TestEmanationSpectrum:
    def test_single_mixing_pair(self):
        lines = emanation_spectrum_analytic(ClockSpec(10e3, 100.0, 0.0, n_harmonics=1), ActivityWave(1e3, 1.0, 1))
        assert [f for f, _ in lines] == [9e3, 11e3]
        for _, a in lines:
            assert a == pytest.approx(1 / np.pi)

    def test_linear_in_amplitude(self):
        clock = ClockSpec(10e3, 300.0, 200.0)
        a = emanation_spectrum_analytic(clock, ActivityWave(700.0, 0.8, 3))
        b = emanation_spectrum_analytic(clock, ActivityWave(700.0, 1.6, 3))
        assert [f for f, _ in a] == [f for f, _ in b]
        np.testing.assert_allclose([m for _, m in b], 2 * np.array([m for _, m in a]))

    def test_coinciding_lines_are_summed(self):
        # f_sq = fm / 1 makes f0 + fm - f_sq coincide with f0
        lines = dict(emanation_spectrum_analytic(ClockSpec(10e3, 100.0, 50.0, n_harmonics=1), ActivityWave(100.0, 1.0, 1)))
        j0, j1 = special.jv(0, 0.5), special.jv(1, 0.5) * 0.5
        assert lines[10e3] == pytest.approx((j1 + j1) / np.pi)
        assert lines[10e3 + 100] == pytest.approx(j0 / np.pi)

    def test_product_fft_matches_analytic(self):
        sr, dur = 1e6, 0.1  # 10 Hz bins
        clock = ClockSpec(200e3, 5e3, 4e3, n_harmonics=2)
        wave = ActivityWave(1.3e3, 0.9, 3)
        x = modulate(synth_clock(clock, sr, dur), synth_square(wave, sr, dur)).samples.real
        for f, mag in emanation_spectrum_analytic(clock, wave):
            assert line_amplitude(x, sr, f) == pytest.approx(mag, rel=0.01)


# -- synth_square / modulate ----------------------------------------------------------
class TestSquareAndModulate:
    def test_single_term_is_unit_cosine(self):
        x = synth_square(ActivityWave(50.0, np.pi / 2, 1), 1e3, 1.0).samples.real
        np.testing.assert_allclose(x, np.cos(2 * np.pi * 50 * np.arange(1000) / 1e3), atol=1e-9)

    def test_odd_harmonic_ratios(self):
        x = synth_square(ActivityWave(50.0, 1.0, 3), 1e3, 1.0).samples.real
        a1, a3, a5 = (line_amplitude(x, 1e3, f) for f in (50, 150, 250))
        assert a1 == pytest.approx(2 / np.pi)
        assert a3 / a1 == pytest.approx(1 / 3)
        assert a5 / a1 == pytest.approx(1 / 5)
        assert line_amplitude(x, 1e3, 100) < 1e-9

    def test_many_terms_alias(self):
        with pytest.raises(AliasingError):
            synth_square(ActivityWave(100.0, 1.0, 50), 10e3, 0.1)

    def test_product_to_sum(self):
        sr = 1e3
        t = np.arange(1000) / sr
        a = IQRecording(np.cos(2 * np.pi * 100 * t), sr)
        b = IQRecording(np.cos(2 * np.pi * 30 * t), sr)
        x = modulate(a, b).samples.real
        assert line_amplitude(x, sr, 70) == pytest.approx(0.5)
        assert line_amplitude(x, sr, 130) == pytest.approx(0.5)

    def test_identity_activity(self):
        a = synth_clock(ClockSpec(100.0, 10.0, 5.0), 1e3, 0.5, center_frequency=7.0, seed=3)
        out = modulate(a, IQRecording(np.ones(len(a)), 1e3))
        np.testing.assert_array_equal(out.samples, a.samples)
        assert (out.center_frequency, out.seed) == (7.0, 3)

    def test_mismatch(self):
        a = IQRecording(np.ones(10), 1e3)
        with pytest.raises(InvalidArgumentError):
            modulate(a, IQRecording(np.ones(11), 1e3))
        with pytest.raises(InvalidArgumentError):
            modulate(a, IQRecording(np.ones(10), 2e3))

    @settings(max_examples=25, deadline=None)
    @given(f_sq=st.floats(5.0, 60.0), n_terms=st.integers(1, 4), a=st.floats(0.1, 3.0))
    def test_parseval(self, f_sq, n_terms, a):
        x = modulate(
            synth_clock(ClockSpec(300.0, 20.0, 10.0), 2e3, 0.25), synth_square(ActivityWave(f_sq, a, n_terms), 2e3, 0.25)
        ).samples
        spec = np.fft.fft(x)
        assert np.sum(np.abs(spec) ** 2) / x.size == pytest.approx(np.sum(np.abs(x) ** 2), rel=1e-6)


# -- app emanations -------------------------------------------------------------------
def _sig(app_id, f0s, envelope_period=4e-3):
    srcs = tuple(EmanationSource(ClockSpec(f0, 50e3, 25e3), ActivityWave(10e3, 1.0, 3)) for f0 in f0s)
    return AppSignature(app_id, {p: srcs for p in ActivityPhase}, envelope_period)


class TestAppEmanation:
    def test_deterministic(self):
        sig = _sig("a", [300e3])
        a = synth_app_emanation(sig, "running", 2.5e6, 0.01, seed=5)
        b = synth_app_emanation(sig, "running", 2.5e6, 0.01, seed=5)
        np.testing.assert_array_equal(a.samples, b.samples)
        c = synth_app_emanation(sig, "running", 2.5e6, 0.01, seed=6)
        assert not np.array_equal(a.samples, c.samples)

    def test_missing_phase(self):
        src = EmanationSource(ClockSpec(1e3, 1e2), ActivityWave(10.0))
        with pytest.raises(InvalidArgumentError):
            synth_app_emanation(AppSignature("x", {"running": (src,)}), "entering", 1e4, 0.1, 0)

    def test_disjoint_clocks_give_disjoint_peaks(self):
        sr = 2.5e6
        peaks = []
        for sig in (_sig("a", [300e3, 600e3]), _sig("b", [450e3, 800e3])):
            psd = averaged_psd(synth_app_emanation(sig, "running", sr, 0.05, 1), 1024)
            order = np.argsort(psd.power_db)[::-1][:8]
            peaks.append(set(np.round(np.abs(psd.freqs[order]), -4)))
        assert not peaks[0] & peaks[1]

    def test_phases_share_lines_but_not_spectrograms(self):
        sr = 2.5e6
        sig = _sig("a", [500e3])
        cfg = PipelineConfig(fft_size=1024, avg_frames=16, stft_window_len=1024, stft_hop=1024)
        run = synth_app_emanation(sig, "running", sr, 0.05, 2)
        conf = synth_app_emanation(sig, "configuring", sr, 0.05, 2)
        top = [
            set(np.argsort(averaged_psd(r, 1024).power_db)[::-1][:6]) for r in (run, conf)
        ]
        assert top[0] == top[1]
        sr_run = stft_spectrogram(run, cfg).power_db
        sr_conf = stft_spectrogram(conf, cfg).power_db
        k = int(np.argmax(sr_run.mean(axis=0)))
        assert np.std(sr_conf[:, k]) > 3 * np.std(sr_run[:, k])

    def test_band_pinning(self):
        src_a = EmanationSource(ClockSpec(300e3, 50e3, 25e3), ActivityWave(10e3), band_center_hz=585e6)
        src_b = EmanationSource(ClockSpec(500e3, 50e3, 25e3), ActivityWave(10e3), band_center_hz=595e6)
        sig = AppSignature("x", {"running": (src_a, src_b)})
        only_a = synth_app_emanation(sig, "running", 2.5e6, 0.01, 0, band_center_hz=585e6)
        both = synth_app_emanation(sig, "running", 2.5e6, 0.01, 0)
        assert only_a.center_frequency == 585e6
        assert not np.array_equal(only_a.samples, both.samples)
        none = synth_app_emanation(sig, "running", 2.5e6, 0.01, 0, band_center_hz=605e6)
        assert not np.any(none.samples)

    @pytest.mark.parametrize("phase", list(ActivityPhase))
    def test_envelopes_bounded_and_periodic(self, phase):
        env = phase_envelope(phase, 20000, 1e6, 4e-3)
        assert env.min() >= 0 and env.max() <= 1
        np.testing.assert_allclose(env[:4000], env[4000:8000])


# -- catalog ---------------------------------------------------------------------------
class TestCatalog:
    def test_fifteen_apps_all_phases(self, catalog):
        assert tuple(catalog) == APP_NAMES and len(APP_NAMES) == 15
        for sig in catalog.values():
            assert set(sig.phases) == set(ActivityPhase)
            for band in BAND_CENTERS_HZ:
                assert len(sig.sources("running", band)) == 2

    def test_lines_fit_desk_rate(self, catalog):
        for sig in catalog.values():
            for src in sig.phases[ActivityPhase.RUNNING]:
                for f, _ in emanation_spectrum_analytic(src.clock, src.wave):
                    assert 0 < abs(f) < 1.25e6

    def test_first_tile_shared_pairs(self, catalog):
        names = list(catalog)
        for a, b in SHARED_FIRST_TILE:
            sa, sb = catalog[names[a]], catalog[names[b]]
            assert sa.sources("running", BAND_CENTERS_HZ[0]) == sb.sources("running", BAND_CENTERS_HZ[0])
            assert sa.sources("running", BAND_CENTERS_HZ[1]) != sb.sources("running", BAND_CENTERS_HZ[1])

    def test_yaml_round_trip(self, catalog, tmp_path):
        save_catalog(catalog, tmp_path / "cat.yaml")
        assert load_catalog(tmp_path / "cat.yaml") == catalog

    def test_duplicate_and_missing_fields(self, catalog, tmp_path):
        save_catalog(catalog, tmp_path / "cat.yaml")
        text = (tmp_path / "cat.yaml").read_text()
        (tmp_path / "dup.yaml").write_text(text.replace("app_id: bait", "app_id: aim"))
        with pytest.raises(InvalidArgumentError, match="duplicate"):
            load_catalog(tmp_path / "dup.yaml")
        (tmp_path / "bad.yaml").write_text(text.replace("f_sq:", "fsq:", 1))
        with pytest.raises(FormatError, match=r"apps\[0\]"):
            load_catalog(tmp_path / "bad.yaml")

    def test_catalog_seeded(self):
        assert default_catalog(seed=1) != default_catalog(seed=2)
        assert default_catalog(seed=1) == default_catalog(seed=1)
