"""Simulation and analysis of electromagnetic emanations from VR headsets.

Submodules:

- ``emanation``: clock, activity wave and app signature synthesis
- ``scene``: channel, interference, noise and obfuscation around a source
- ``dsp``: averaged PSD, subtraction, smoothing, spikes, USNR, STFT
- ``learn``: datasets, numpy residual CNN, training and evaluation
- ``harness``: experiment plans, IQ files, reports and the ``emanate`` CLI
"""

from .errors import (
    AliasingError,
    EmanateError,
    FormatError,
    IncompleteRunError,
    InvalidArgumentError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "AliasingError",
    "EmanateError",
    "FormatError",
    "IncompleteRunError",
    "InvalidArgumentError",
    "TrainingError",
    "__version__",
]
