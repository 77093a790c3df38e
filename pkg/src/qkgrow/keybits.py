"""Bit-sequence types and the seedable randomness source.

Bases are encoded as a single bit: 0 is the rectilinear basis and 1 the
diagonal basis.

The random source is a seeded, deterministic numpy generator.  It exists
for reproducible simulation and is not suitable for producing real key
material.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

import numpy as np

__all__ = [
    "BitString",
    "SharedSecret",
    "RngHandle",
    "xor_mask",
    "random_bits",
    "hamming_fraction",
]

_LEN_FIELD = struct.Struct("<Q")


class BitString:
    """Immutable fixed-length sequence of bits.

    Bits are stored packed, eight per byte, first bit in the least
    significant position of byte 0.  Padding bits in the last byte are
    always zero.

    Parameters
    ----------
    bits : iterable of int, numpy array, or str
        Bit values.  A ``str`` must contain only ``'0'`` and ``'1'``.
    """

    __slots__ = ("_packed", "_length", "_unpacked")

    def __init__(self, bits: Union[Iterable[int], np.ndarray, str] = ()):
        if isinstance(bits, str):
            arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
        else:
            arr = np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits)
        arr = arr.ravel()
        if arr.size and (arr.dtype == bool):
            arr = arr.astype(np.uint8)
        if arr.size and not np.all((arr == 0) | (arr == 1)):
            raise ValueError("bit values must be 0 or 1")
        arr = arr.astype(np.uint8, copy=False)
        self._length = int(arr.size)
        self._packed = _freeze(np.packbits(arr, bitorder="little"))
        self._unpacked = None

    @classmethod
    def _from_packed(cls, packed: np.ndarray, length: int) -> "BitString":
        obj = cls.__new__(cls)
        packed = np.array(packed, dtype=np.uint8, copy=True)
        tail = length % 8
        if tail and packed.size:
            packed[-1] &= (1 << tail) - 1
        obj._packed = _freeze(packed)
        obj._length = length
        obj._unpacked = None
        return obj

    @classmethod
    def zeros(cls, length: int) -> "BitString":
        return cls._from_packed(np.zeros((length + 7) // 8, dtype=np.uint8), length)

    @classmethod
    def ones(cls, length: int) -> "BitString":
        return cls._from_packed(np.full((length + 7) // 8, 0xFF, dtype=np.uint8), length)

    @classmethod
    def from_str(cls, text: str) -> "BitString":
        """Parse the canonical ASCII form, first bit leftmost."""
        if text.strip("01"):
            raise ValueError("bit string text may only contain '0' and '1'")
        return cls(text)

    @classmethod
    def from_bytes(cls, payload: bytes, length: int) -> "BitString":
        """Build from little-endian packed bytes holding ``length`` bits."""
        if length < 0:
            raise ValueError("length must be non-negative")
        if len(payload) != (length + 7) // 8:
            raise ValueError(
                f"payload of {len(payload)} bytes cannot hold exactly {length} bits"
            )
        return cls._from_packed(np.frombuffer(payload, dtype=np.uint8), length)

    @classmethod
    def deserialize(cls, data: bytes) -> "BitString":
        """Inverse of :meth:`serialize`."""
        if len(data) < _LEN_FIELD.size:
            raise ValueError("truncated bit string encoding")
        (length,) = _LEN_FIELD.unpack_from(data)
        return cls.from_bytes(data[_LEN_FIELD.size:], length)

    @classmethod
    def concat(cls, parts: Iterable["BitString"]) -> "BitString":
        arrays = [p.to_array() for p in parts]
        if not arrays:
            return cls()
        return cls(np.concatenate(arrays))

    def to_bytes(self) -> bytes:
        return self._packed.tobytes()

    def serialize(self) -> bytes:
        """Canonical binary form: 64-bit little-endian bit count, then packed bytes."""
        return _LEN_FIELD.pack(self._length) + self.to_bytes()

    def to_array(self) -> np.ndarray:
        """Read-only ``uint8`` array with one element per bit."""
        if self._unpacked is None:
            self._unpacked = _freeze(
                np.unpackbits(self._packed, count=self._length, bitorder="little")
            )
        return self._unpacked

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    def count_ones(self) -> int:
        return int(np.bitwise_count(self._packed).sum())

    def __len__(self) -> int:
        return self._length

    def __iter__(self) -> Iterator[int]:
        return (int(b) for b in self.to_array())

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            return int(self.to_array()[key])
        return BitString(self.to_array()[key])

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return self._length == other._length and np.array_equal(self._packed, other._packed)

    def __hash__(self) -> int:
        return hash((self._length, self.to_bytes()))

    def __xor__(self, other: "BitString") -> "BitString":
        return xor_mask(self, other)

    def __invert__(self) -> "BitString":
        return BitString._from_packed(~self._packed, self._length)

    def __str__(self) -> str:
        return (self.to_array() + ord("0")).tobytes().decode("ascii")

    def __repr__(self) -> str:
        text = str(self)
        if len(text) > 40:
            text = text[:37] + "..."
        return f"BitString('{text}', length={self._length})"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass
class RngHandle:
    """Deterministic random stream identified by ``(seed, stream_id)``.

    Handles are single-owner: drawing from one advances its state.  Use a
    distinct ``stream_id`` for every party or worker that needs its own
    stream.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.stream_id < 0:
            raise ValueError("stream_id must be non-negative")
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def bits(self, count: int) -> np.ndarray:
        """Draw ``count`` uniform bits as a ``uint8`` array."""
        raw = self.generator.integers(0, 256, size=(count + 7) // 8, dtype=np.uint8)
        return np.unpackbits(raw, count=count, bitorder="little")

    def uniform(self, count: int | None = None):
        return self.generator.random(count)


@dataclass(frozen=True)
class SharedSecret:
    """Preshared 2n-bit string split into an Alice half and a Bob half."""

    alice_half: BitString
    bob_half: BitString

    def __post_init__(self):
        if len(self.alice_half) != len(self.bob_half):
            raise ValueError("secret halves must have equal length")

    @classmethod
    def from_parent(cls, parent: BitString) -> "SharedSecret":
        if len(parent) % 2:
            raise ValueError("parent secret must have even length")
        n = len(parent) // 2
        return cls(parent[:n], parent[n:])

    @classmethod
    def generate(cls, rng: RngHandle, n: int) -> "SharedSecret":
        secret = cls.from_parent(random_bits(rng, 2 * n))
        if n and secret.alice_half == secret.bob_half:
            warnings.warn("secret halves collide; Alice and Bob must use different parts",
                          RuntimeWarning, stacklevel=2)
        return secret

    @property
    def n(self) -> int:
        return len(self.alice_half)

    @property
    def parent(self) -> BitString:
        return BitString.concat([self.alice_half, self.bob_half])


def xor_mask(data: BitString, mask: BitString) -> BitString:
    """Bitwise XOR of two equal-length bit strings.

    Raises
    ------
    ValueError
        If the lengths differ.  Inputs are never truncated.
    """
    if len(data) != len(mask):
        raise ValueError(f"length mismatch: {len(data)} != {len(mask)}")
    return BitString._from_packed(np.bitwise_xor(data.packed, mask.packed), len(data))


def random_bits(rng: RngHandle, count: int) -> BitString:
    if count < 0:
        raise ValueError("count must be non-negative")
    return BitString(rng.bits(count))


def hamming_fraction(a: BitString, b: BitString) -> float:
    """Fraction of positions at which ``a`` and ``b`` differ."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} != {len(b)}")
    if len(a) == 0:
        raise ValueError("hamming_fraction of empty strings is undefined")
    return xor_mask(a, b).count_ones() / len(a)
