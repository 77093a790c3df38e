"""Quantum key growing with encrypted basis sifting: simulator and analysis."""

from .keybits import BitString, RngHandle, SharedSecret, hamming_fraction, random_bits, xor_mask
from .channel import ChannelConfig, Pulse
from .protocol import (RawKeyList, SessionConfig, SessionRngs, SessionTranscript, SiftedKey,
                       SiftMode, run_session)

__version__ = "0.1.0"

__all__ = [
    "BitString",
    "RngHandle",
    "SharedSecret",
    "hamming_fraction",
    "random_bits",
    "xor_mask",
    "ChannelConfig",
    "Pulse",
    "RawKeyList",
    "SessionConfig",
    "SessionRngs",
    "SessionTranscript",
    "SiftedKey",
    "SiftMode",
    "run_session",
]
