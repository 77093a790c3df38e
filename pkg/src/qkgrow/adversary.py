"""Eavesdropper models.

* ``InterceptResend`` measures every pulse in a uniformly chosen basis
  (same two bases as the legitimate parties) and re-emits its result.
* ``oracle_raw_key`` hands Eve a perfect copy of Alice's raw key, the
  idealised maximal adversary of the plaintext attack.
* The plaintext attack recovers the sifted key through the Vernam
  relation and counts the sifting functions still consistent with it.
* ``tamper_masked_message`` flips bits of a masked basis message in
  transit.

A sifting function is an order-preserving selection of positions from
the raw key.  Counting the consistent ones is the number of ways the
known sifted key occurs as a subsequence of Eve's raw values.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from math import comb
from typing import Optional

import numpy as np

from .analysis import most_likely_raw_position
from .channel import ChannelConfig, Pulse, measure, measure_batch
from .keybits import BitString, RngHandle, xor_mask
from .protocol import RawKeyList, TamperSpec, apply_tamper

__all__ = [
    "AdversaryRecord",
    "InterceptResend",
    "GuessStrategy",
    "TamperSpec",
    "BruteForceGuardError",
    "intercept_resend",
    "oracle_raw_key",
    "plaintext_recover_key",
    "count_consistent_sifting_functions",
    "enumerate_consistent_sifting_functions",
    "count_consistent_any_length",
    "tamper_masked_message",
    "eve_guess_sifted_key",
]

BRUTE_FORCE_MAX_N = 26
ENUMERATION_MAX_N = 16

_IDEAL = ChannelConfig(0.0)


class BruteForceGuardError(ValueError):
    """Raised when exact counting is requested beyond the brute-force guard."""


@dataclass
class AdversaryRecord:
    """Eve's raw key and the results of her analysis of it."""

    bases: BitString
    values: BitString
    strategy: str
    known_sifted: Optional[BitString] = None
    consistent_function_count: Optional[int] = None

    def __post_init__(self):
        if len(self.bases) != len(self.values):
            raise ValueError("bases and values must have equal length")

    def __len__(self) -> int:
        return len(self.values)


def intercept_resend(pulse: Pulse, rng: RngHandle) -> tuple[Pulse, tuple[int, int]]:
    """Measure one pulse in a random basis and re-emit the result."""
    basis = int(rng.bits(1)[0])
    value = measure(pulse, basis, _IDEAL, rng)
    return Pulse(basis, value, pulse.index), (basis, value)


@dataclass
class InterceptResend:
    """Channel interceptor logging every pulse it measures."""

    strategy: str = "intercept_resend"
    _bases: list = field(default_factory=list, repr=False)
    _values: list = field(default_factory=list, repr=False)

    def intercept(self, pulse: Pulse, rng: RngHandle) -> Pulse:
        out, (basis, value) = intercept_resend(pulse, rng)
        self._bases.append(np.array([basis], dtype=np.uint8))
        self._values.append(np.array([value], dtype=np.uint8))
        return out

    def intercept_batch(self, bases: np.ndarray, values: np.ndarray,
                        rng: RngHandle) -> tuple[np.ndarray, np.ndarray]:
        eve_bases = rng.bits(len(bases))
        eve_values = measure_batch(bases, values, eve_bases, _IDEAL, rng)
        self._bases.append(eve_bases)
        self._values.append(eve_values)
        return eve_bases, eve_values

    @property
    def record(self) -> AdversaryRecord:
        cat = lambda parts: BitString(np.concatenate(parts) if parts else [])  # noqa: E731
        return AdversaryRecord(cat(self._bases), cat(self._values), self.strategy)


def oracle_raw_key(alice: RawKeyList) -> AdversaryRecord:
    """Give Eve Alice's complete raw key."""
    return AdversaryRecord(alice.bases, alice.values, "oracle_plaintext")


def plaintext_recover_key(ciphertext: BitString, plaintext: BitString) -> BitString:
    return xor_mask(ciphertext, plaintext)


def count_consistent_sifting_functions(eve_raw_values: BitString,
                                       known_sifted: BitString) -> int:
    """Number of order-preserving selections of raw values equal to the sifted key.

    Uses the subsequence-counting recurrence with exact integers.

    Raises
    ------
    BruteForceGuardError
        If the raw key is longer than ``BRUTE_FORCE_MAX_N``; use the
        closed-form estimate from :mod:`qkgrow.analysis` instead.
    """
    n, m = len(eve_raw_values), len(known_sifted)
    if n > BRUTE_FORCE_MAX_N:
        raise BruteForceGuardError(
            f"n={n} exceeds the brute-force guard of {BRUTE_FORCE_MAX_N}; "
            "use analysis.surviving_functions_bound as an estimator")
    if m > n:
        raise ValueError("sifted key longer than raw key")
    target = list(known_sifted)
    # ways[j]: selections so far that reproduce the first j sifted bits
    ways = [1] + [0] * m
    for v in eve_raw_values:
        for j in range(m, 0, -1):
            if target[j - 1] == v:
                ways[j] += ways[j - 1]
    return ways[m]


def enumerate_consistent_sifting_functions(eve_raw_values: BitString,
                                           known_sifted: BitString) -> int:
    """Literal enumeration of all position subsets; independent check of the DP."""
    n, m = len(eve_raw_values), len(known_sifted)
    if n > ENUMERATION_MAX_N:
        raise BruteForceGuardError(f"enumeration limited to n <= {ENUMERATION_MAX_N}")
    raw = list(eve_raw_values)
    target = tuple(known_sifted)
    return sum(1 for subset in itertools.combinations(range(n), m)
               if tuple(raw[i] for i in subset) == target)


def count_consistent_any_length(eve_raw_values: BitString, known_sifted: BitString,
                                lengths=None) -> dict[int, int]:
    """Experimental: consistent counts when the sifted length is secret.

    Eve only sees a prefix of the final key, so every candidate length
    ``L >= len(known_sifted)`` contributes the selections of ``L`` raw
    positions whose first ``len(known_sifted)`` values match.  Returns a
    count per length; no bound is claimed for the total.
    """
    n, m = len(eve_raw_values), len(known_sifted)
    if n > BRUTE_FORCE_MAX_N:
        raise BruteForceGuardError(f"n={n} exceeds the brute-force guard")
    raw = list(eve_raw_values)
    target = list(known_sifted)
    # prefix[i][j]: ways to match the first j target bits within raw[:i]
    prefix = [[1] + [0] * m for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            prefix[i][j] = prefix[i - 1][j]
            if raw[i - 1] == target[j - 1]:
                prefix[i][j] += prefix[i - 1][j - 1]
    out = {}
    for total in (range(m, n + 1) if lengths is None else lengths):
        if m == 0:
            out[total] = comb(n, total)
            continue
        # last known bit taken from raw index i-1; the rest are free picks after it
        out[total] = sum(prefix[i - 1][m - 1] * comb(n - i, total - m)
                         for i in range(1, n + 1) if raw[i - 1] == target[m - 1])
    return out


def tamper_masked_message(message: BitString, tamper: TamperSpec) -> BitString:
    """Flip the listed bits of a masked basis message."""
    return apply_tamper(message, tamper)


class GuessStrategy(str, Enum):
    WITH_BASIS_INFO = "with_basis_info"
    UNIFORM_SIFT_GUESS = "uniform_sift_guess"
    MAXIMUM_LIKELIHOOD_POSITION = "maximum_likelihood_position"


def eve_guess_sifted_key(record: AdversaryRecord, strategy, *,
                         kept_indices=None, sifted_length: Optional[int] = None,
                         rng: Optional[RngHandle] = None) -> BitString:
    """Eve's reconstruction of the sifted key from her raw record.

    ``with_basis_info`` needs the true ``kept_indices`` (the BB84 case,
    where bases are public).  The other strategies only need the sifted
    length, which is public once the key is used.  ``uniform_sift_guess``
    needs ``rng``; ``maximum_likelihood_position`` needs it only when the
    sifted key is long enough to run past the end of the raw key.
    """
    strategy = GuessStrategy(strategy)
    raw = record.values.to_array()
    if strategy is GuessStrategy.WITH_BASIS_INFO:
        if kept_indices is None:
            raise ValueError("with_basis_info requires the true kept_indices")
        return BitString(raw[np.asarray(kept_indices, dtype=np.int64)])

    if sifted_length is None:
        if kept_indices is None:
            raise ValueError(f"{strategy.value} requires the sifted length")
        sifted_length = len(kept_indices)
    if sifted_length > len(raw):
        raise ValueError("sifted length exceeds raw key length")

    if strategy is GuessStrategy.UNIFORM_SIFT_GUESS:
        if rng is None:
            raise ValueError("uniform_sift_guess requires an rng")
        picks = np.sort(rng.generator.choice(len(raw), size=sifted_length, replace=False))
        return BitString(raw[picks])

    positions = most_likely_raw_position(np.arange(1, sifted_length + 1)) - 1
    inside = positions < len(raw)
    guess = np.empty(sifted_length, dtype=np.uint8)
    guess[inside] = raw[positions[inside]]
    if not inside.all():
        if rng is None:
            raise ValueError("maximum_likelihood_position needs an rng past the raw key end")
        guess[~inside] = rng.bits(int((~inside).sum()))
    return BitString(guess)
