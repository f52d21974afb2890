import numpy as np
import pytest

from emanate.catalog import default_catalog


def line_amplitude(x: np.ndarray, sample_rate: float, freq: float, window: str = "rect") -> float:
    """Cosine amplitude at ``freq`` read from the FFT of a real signal (bin-centered tones)."""
    n = x.size
    w = np.ones(n) if window == "rect" else np.hanning(n + 1)[:-1]
    spec = np.fft.fft(x * w)
    k = int(round(freq * n / sample_rate)) % n
    return 2.0 * abs(spec[k]) / w.sum()


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
