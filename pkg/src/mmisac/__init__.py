"""Simulation toolkit for joint mmWave communication and sensing on phased
arrays: channel generation, beam training, Tx-interference cancellation,
beam-compatible scheduling and multi-view sensing fusion."""

__version__ = "0.1.0"

from . import array, cancellation, channel, errors, fusion, io, probing, scheduling, sim  # noqa: E402

__all__ = [
    "array", "cancellation", "channel", "errors", "fusion", "io", "probing", "scheduling", "sim",
    "__version__",
]
