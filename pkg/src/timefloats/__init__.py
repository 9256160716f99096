"""Bit-accurate behavioral simulator of a time-domain FP8 train-in-memory MAC."""

__version__ = "0.1.0"

from .fp8 import Fp8, decode, encode, oracle_dot  # noqa: E402
from .pipeline import MacTrace, PipelineConfig, mac  # noqa: E402

__all__ = ["Fp8", "MacTrace", "PipelineConfig", "__version__", "decode", "encode", "mac", "oracle_dot"]
