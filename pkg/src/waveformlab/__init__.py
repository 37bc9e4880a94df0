"""Effective-channel analysis of OFDM, DFT-s-OFDM, AFDM and OTFS over non-stationary doubly dispersive channels."""

from .chanmodel import ChannelConfig, ChannelRealization, segment_regions
from .linksim import CsiMode, Equalizer, LinkConfig, Regime, run_ber
from .transforms import Waveform, WaveformSpec, build_kernel, effective_channel

__all__ = [
    "ChannelConfig",
    "ChannelRealization",
    "CsiMode",
    "Equalizer",
    "LinkConfig",
    "Regime",
    "Waveform",
    "WaveformSpec",
    "build_kernel",
    "effective_channel",
    "run_ber",
    "segment_regions",
]
__version__ = "0.1.0"
