"""Pulse-level stochastic model of the BB84 quantum channel.

For two mutually unbiased qubit bases the outcome statistics reduce to:
a compatible measurement returns the prepared value (flipped with the
intrinsic error probability), an incompatible one returns a fair coin.
No state vectors are simulated and every pulse is detected.

Both a per-pulse API (``measure``, ``transmit``) and array-based batch
variants are provided; they consume randomness identically, one uniform
draw per measured pulse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .keybits import RngHandle

__all__ = [
    "Pulse",
    "ChannelConfig",
    "Interceptor",
    "measure",
    "measure_batch",
    "transmit",
    "transmit_batch",
]


@dataclass(frozen=True)
class Pulse:
    basis: int
    value: int
    index: int = 0


@dataclass(frozen=True)
class ChannelConfig:
    """Channel parameters.

    ``intrinsic_flip_prob`` is the probability that a compatible-basis
    measurement at the legitimate receiver returns the flipped bit.
    """

    intrinsic_flip_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.intrinsic_flip_prob <= 0.5:
            raise ValueError("intrinsic_flip_prob must lie in [0, 0.5]")


class Interceptor(Protocol):
    """Adversary hook installed on the quantum channel.

    An interceptor measures each pulse in a basis of its choosing and
    re-emits a pulse prepared in that basis with its measured value.
    """

    def intercept(self, pulse: Pulse, rng: RngHandle) -> Pulse: ...

    def intercept_batch(self, bases: np.ndarray, values: np.ndarray,
                        rng: RngHandle) -> tuple[np.ndarray, np.ndarray]: ...


def measure(pulse: Pulse, measurement_basis: int, cfg: ChannelConfig, rng: RngHandle) -> int:
    u = rng.uniform()
    if measurement_basis == pulse.basis:
        return pulse.value ^ int(u < cfg.intrinsic_flip_prob)
    return int(u < 0.5)


def measure_batch(bases: np.ndarray, values: np.ndarray, measurement_bases: np.ndarray,
                  cfg: ChannelConfig, rng: RngHandle) -> np.ndarray:
    """Vectorised :func:`measure` over aligned pulse arrays."""
    u = rng.uniform(len(bases))
    same = bases == measurement_bases
    flipped = (values ^ (u < cfg.intrinsic_flip_prob)).astype(np.uint8)
    coin = (u < 0.5).astype(np.uint8)
    return np.where(same, flipped, coin).astype(np.uint8)


def transmit(pulse: Pulse, interceptor: Optional[Interceptor], cfg: ChannelConfig,
             rng: RngHandle) -> Pulse:
    """Carry one pulse from sender to receiver.

    Without an interceptor the pulse passes unchanged; noise is applied
    later, at measurement.  ``rng`` is handed to the interceptor.
    """
    if interceptor is None:
        return pulse
    out = interceptor.intercept(pulse, rng)
    return Pulse(out.basis, out.value, pulse.index)


def transmit_batch(bases: np.ndarray, values: np.ndarray, interceptor: Optional[Interceptor],
                   cfg: ChannelConfig, rng: RngHandle) -> tuple[np.ndarray, np.ndarray]:
    if interceptor is None:
        return bases, values
    return interceptor.intercept_batch(bases, values, rng)
