"""Alice and Bob: raw key production, encrypted sifting and key growing.

A session runs::

    produce_raw_keys -> masked basis exchange -> unmask -> sift
        -> estimate_qber -> refresh_secret

In encrypted mode each party XORs its basis list with its half of the
preshared secret before sending it; the peer removes the mask with the
same half.  ``plain_bb84`` sends the bases in clear and spends nothing on
refreshing the secret.

Error correction is not performed.  The positions disclosed during QBER
estimation are dropped from the key ("sacrifice and verify").
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

import numpy as np

from .channel import ChannelConfig, Interceptor, measure_batch, transmit_batch
from .framing import Message, MsgType, Party, decode_message, encode_message
from .keybits import BitString, RngHandle, SharedSecret, hamming_fraction, xor_mask

__all__ = [
    "SiftMode",
    "SessionConfig",
    "SessionRngs",
    "RawKeyList",
    "SiftedKey",
    "RefreshOutcome",
    "SessionTranscript",
    "produce_raw_keys",
    "masked_basis_message",
    "unmask_basis_message",
    "sift",
    "estimate_qber",
    "refresh_secret",
    "run_session",
    "grow_key",
]

DEFAULT_ABORT_THRESHOLD = 0.12
_STREAMS_PER_SESSION = 8


class SiftMode(str, Enum):
    ENCRYPTED = "encrypted"
    PLAIN_BB84 = "plain_bb84"


@dataclass(frozen=True)
class SessionConfig:
    """Parameters of one protocol run.

    Attributes
    ----------
    n : int
        Raw key length (pulses sent).
    sacrifice_fraction : float
        Share of the sifted key publicly compared for QBER estimation.
        ``1.0`` compares the whole sifted key.
    refresh_fraction : float
        Refresh budget per raw pulse of the next session.  ``0.5`` is the
        worst-case leakage bound for an adversary knowing the full raw key.
    next_n : int, optional
        Raw length of the next session, if it differs from ``n``.
    """

    n: int
    channel: ChannelConfig = ChannelConfig()
    sift_mode: SiftMode = SiftMode.ENCRYPTED
    sacrifice_fraction: float = 0.1
    refresh_fraction: float = 0.5
    abort_threshold: float = DEFAULT_ABORT_THRESHOLD
    next_n: Optional[int] = None

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        object.__setattr__(self, "sift_mode", SiftMode(self.sift_mode))
        if not 0.0 < self.sacrifice_fraction <= 1.0:
            raise ValueError("sacrifice_fraction must lie in (0, 1]")
        if not 0.0 <= self.refresh_fraction <= 1.0:
            raise ValueError("refresh_fraction must lie in [0, 1]")
        if not 0.0 <= self.abort_threshold <= 1.0:
            raise ValueError("abort_threshold must lie in [0, 1]")
        if self.next_n is not None and self.next_n <= 0:
            raise ValueError("next_n must be positive")


@dataclass
class SessionRngs:
    """Independent random streams for every actor in one session."""

    seed: int
    session_index: int
    alice: RngHandle
    bob: RngHandle
    channel: RngHandle
    eve: RngHandle
    sampler: RngHandle

    @classmethod
    def from_seed(cls, seed: int, session_index: int = 0) -> "SessionRngs":
        base = session_index * _STREAMS_PER_SESSION
        return cls(seed, session_index,
                   *(RngHandle(seed, base + k) for k in range(5)))

    def extra(self, slot: int) -> RngHandle:
        """Spare stream for experiment-level draws (secrets, tamper positions)."""
        if not 0 <= slot < _STREAMS_PER_SESSION - 5:
            raise ValueError("no such spare stream")
        return RngHandle(self.seed, self.session_index * _STREAMS_PER_SESSION + 5 + slot)


@dataclass(frozen=True)
class RawKeyList:
    """One party's raw key: a basis bit and a value bit per pulse."""

    bases: BitString
    values: BitString

    def __post_init__(self):
        if len(self.bases) != len(self.values):
            raise ValueError("bases and values must have equal length")

    @property
    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.bases, self.values))

    def __len__(self) -> int:
        return len(self.bases)


@dataclass(frozen=True, eq=False)
class SiftedKey:
    bits: BitString
    kept_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.kept_indices, dtype=np.int64)
        if idx.ndim != 1 or len(idx) != len(self.bits):
            raise ValueError("kept_indices must be 1-D and match the key length")
        if len(idx) > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("kept_indices must be strictly increasing")
        idx.flags.writeable = False
        object.__setattr__(self, "kept_indices", idx)

    def __len__(self) -> int:
        return len(self.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiftedKey):
            return NotImplemented
        return self.bits == other.bits and np.array_equal(self.kept_indices, other.kept_indices)

    def without(self, raw_indices) -> "SiftedKey":
        """Drop the entries whose raw position is in ``raw_indices``."""
        keep = ~np.isin(self.kept_indices, np.asarray(raw_indices, dtype=np.int64))
        return SiftedKey(BitString(self.bits.to_array()[keep]), self.kept_indices[keep])


def produce_raw_keys(cfg: SessionConfig, interceptor: Optional[Interceptor] = None,
                     rngs: Optional[SessionRngs] = None) -> tuple[RawKeyList, RawKeyList]:
    """Prepare, transmit and measure ``cfg.n`` pulses."""
    rngs = rngs or SessionRngs.from_seed(0)
    n = cfg.n
    a_bases = rngs.alice.bits(n)
    a_values = rngs.alice.bits(n)
    tx_bases, tx_values = transmit_batch(a_bases, a_values, interceptor, cfg.channel, rngs.eve)
    b_bases = rngs.bob.bits(n)
    b_values = measure_batch(tx_bases, tx_values, b_bases, cfg.channel, rngs.channel)
    alice = RawKeyList(BitString(a_bases), BitString(a_values))
    bob = RawKeyList(BitString(b_bases), BitString(b_values))
    return alice, bob


def masked_basis_message(raw: RawKeyList, secret_half: BitString) -> BitString:
    if len(secret_half) and secret_half.count_ones() == 0:
        warnings.warn("all-zero secret half: basis message is sent in clear",
                      RuntimeWarning, stacklevel=2)
    return xor_mask(raw.bases, secret_half)


def unmask_basis_message(message: BitString, secret_half: BitString) -> BitString:
    return xor_mask(message, secret_half)


def sift(own: RawKeyList, own_bases: BitString, peer_bases: BitString) -> SiftedKey:
    """Keep the positions of ``own`` where the two basis lists agree."""
    if not len(own) == len(own_bases) == len(peer_bases):
        raise ValueError("raw key and basis lists must have equal length")
    kept = np.flatnonzero(~xor_mask(own_bases, peer_bases).to_array().astype(bool))
    return SiftedKey(BitString(own.values.to_array()[kept]), kept)


def _subset_size(fraction: float, length: int) -> int:
    return min(length, math.ceil(round(fraction * length, 9)))


def estimate_qber(alice: SiftedKey, bob: SiftedKey, sacrifice_fraction: float,
                  rng: RngHandle, bob_raw: Optional[RawKeyList] = None
                  ) -> tuple[float, np.ndarray]:
    """Publicly compare a random subset of the sifted key.

    Alice announces ``ceil(sacrifice_fraction * len)`` positions of her
    sifted key (by raw index) and both reveal their values there.  Bob
    answers from his raw table when ``bob_raw`` is given; otherwise his
    sifted key must cover the same raw indices.

    Returns
    -------
    qber : float
        Fraction of disagreeing values on the compared subset.
    sacrificed : ndarray
        Sorted positions within Alice's sifted key that were disclosed.
    """
    if len(alice) == 0:
        raise ValueError("sifted key is empty")
    count = _subset_size(sacrifice_fraction, len(alice))
    if count <= 0:
        raise ValueError("sacrifice subset is empty")
    if count == len(alice):
        sacrificed = np.arange(len(alice))
    else:
        sacrificed = np.sort(rng.generator.choice(len(alice), size=count, replace=False))
    raw_idx = alice.kept_indices[sacrificed]
    if bob_raw is not None:
        bob_vals = bob_raw.values.to_array()[raw_idx]
    else:
        if not np.array_equal(alice.kept_indices, bob.kept_indices):
            raise ValueError("sifted keys cover different raw positions; pass bob_raw")
        bob_vals = bob.bits.to_array()[sacrificed]
    alice_vals = alice.bits.to_array()[sacrificed]
    return hamming_fraction(BitString(alice_vals), BitString(bob_vals)), sacrificed


@dataclass(frozen=True)
class RefreshOutcome:
    new_secret: SharedSecret
    net_key: BitString
    budget: int
    sufficient: bool
    next_offset: int


def refresh_secret(old: SharedSecret, sifted_remainder: BitString, refresh_fraction: float,
                   next_n: Optional[int] = None, offset: int = 0) -> RefreshOutcome:
    """Spend fresh sifted bits on the preshared secret.

    The first ``budget = ceil(refresh_fraction * next_n)`` remainder bits
    are XORed, each exactly once, into the 2n-bit secret at positions
    ``offset, offset + 1, ...`` (mod 2n).  The offset returned in the
    outcome rotates the refreshed window so every position is refreshed
    over successive sessions.  Leftover bits form the net key.

    If the remainder is shorter than the budget the secret is left
    untouched, the net key is empty and ``sufficient`` is False; the
    session has to be rerun before the secret is reused.
    """
    if not 0.0 <= refresh_fraction <= 1.0:
        raise ValueError("refresh_fraction must lie in [0, 1]")
    n_next = old.n if next_n is None else next_n
    budget = _subset_size(refresh_fraction, n_next) if n_next else 0
    parent_len = 2 * old.n
    if budget > len(sifted_remainder):
        return RefreshOutcome(old, BitString(), budget, False, offset)
    if budget > parent_len:
        raise ValueError("refresh budget exceeds secret length")
    remainder = sifted_remainder.to_array()
    parent = old.parent.to_array().copy()
    if budget:
        positions = (offset + np.arange(budget)) % parent_len
        parent[positions] ^= remainder[:budget]
    new_secret = SharedSecret.from_parent(BitString(parent))
    next_offset = (offset + budget) % parent_len if parent_len else 0
    return RefreshOutcome(new_secret, BitString(remainder[budget:]), budget, True, next_offset)


@dataclass(frozen=True)
class TamperSpec:
    """Bits to flip in one masked basis message while it is in transit."""

    flip_positions: tuple[int, ...]
    target: str = "bob_msg"

    def __post_init__(self):
        if self.target not in ("alice_msg", "bob_msg"):
            raise ValueError("target must be 'alice_msg' or 'bob_msg'")
        object.__setattr__(self, "flip_positions",
                           tuple(sorted(set(int(p) for p in self.flip_positions))))


def apply_tamper(message: BitString, tamper: TamperSpec) -> BitString:
    arr = message.to_array().copy()
    pos = np.asarray(tamper.flip_positions, dtype=np.int64)
    if len(pos) and (pos.min() < 0 or pos.max() >= len(arr)):
        raise IndexError("tamper position out of range")
    arr[pos] ^= 1
    return BitString(arr)


@dataclass
class SessionTranscript:
    """Complete record of one protocol run.

    ``sacrificed_indices`` are positions within Alice's sifted key.
    ``net_key_bits`` equals ``len(sifted_alice) - len(sacrificed_indices)
    - refresh_budget_bits`` floored at zero, except for aborted sessions
    whose key is discarded.
    """

    session_id: int
    seed: int
    session_index: int
    n: int
    sift_mode: str
    epsilon: float
    adversary: str
    sacrifice_fraction: float
    refresh_fraction: float
    abort_threshold: float
    secret_alice: BitString
    secret_bob: BitString
    alice_raw: RawKeyList
    bob_raw: RawKeyList
    masked_alice: BitString
    masked_bob: BitString
    tampered_alice: tuple[int, ...]
    tampered_bob: tuple[int, ...]
    sifted_alice: SiftedKey
    sifted_bob: SiftedKey
    qber_estimate: Optional[float]
    sacrificed_indices: np.ndarray
    refresh_budget_bits: int
    refresh_offset: int
    next_offset: int
    net_key_bits: int
    net_key: BitString
    next_secret: SharedSecret
    secrets_agree: bool
    aborted: bool
    insufficient_yield: bool
    next_n: Optional[int] = None
    extra: dict = field(default_factory=dict)

    @property
    def kept_indices(self) -> np.ndarray:
        return self.sifted_alice.kept_indices


def _exchange(session_id: int, party: Party, msg_type: MsgType, bits: BitString,
              tamper: Optional[TamperSpec], target: str) -> BitString:
    """Push one basis message through the wire codec, tampering if asked."""
    wire = encode_message(Message(session_id, party, msg_type, bits))
    received, _ = decode_message(wire)
    if tamper is not None and tamper.target == target:
        return apply_tamper(received.bits, tamper)
    return received.bits


def run_session(cfg: SessionConfig, secret: SharedSecret,
                interceptor: Optional[Interceptor] = None,
                rngs: Optional[SessionRngs] = None, *,
                session_id: int = 0, tamper: Optional[TamperSpec] = None,
                refresh_offset: int = 0) -> SessionTranscript:
    if secret.n != cfg.n:
        raise ValueError(f"secret halves have length {secret.n}, expected {cfg.n}")
    rngs = rngs or SessionRngs.from_seed(0)
    alice, bob = produce_raw_keys(cfg, interceptor, rngs)

    encrypted = cfg.sift_mode is SiftMode.ENCRYPTED
    if encrypted:
        msg_type = MsgType.MASKED_BASES
        sent_a = masked_basis_message(alice, secret.alice_half)
        sent_b = masked_basis_message(bob, secret.bob_half)
    else:
        msg_type = MsgType.CLEAR_BASES
        sent_a, sent_b = alice.bases, bob.bases
    recv_a = _exchange(session_id, Party.ALICE, msg_type, sent_a, tamper, "alice_msg")
    recv_b = _exchange(session_id, Party.BOB, msg_type, sent_b, tamper, "bob_msg")
    if encrypted:
        alice_bases_at_bob = unmask_basis_message(recv_a, secret.alice_half)
        bob_bases_at_alice = unmask_basis_message(recv_b, secret.bob_half)
    else:
        alice_bases_at_bob, bob_bases_at_alice = recv_a, recv_b

    sifted_a = sift(alice, alice.bases, bob_bases_at_alice)
    sifted_b = sift(bob, alice_bases_at_bob, bob.bases)

    qber: Optional[float] = None
    sacrificed = np.zeros(0, dtype=np.int64)
    if len(sifted_a):
        qber, sacrificed = estimate_qber(sifted_a, sifted_b, cfg.sacrifice_fraction,
                                         rngs.sampler, bob_raw=bob)
    aborted = qber is None or qber > cfg.abort_threshold

    disclosed_raw = sifted_a.kept_indices[sacrificed]
    rem_a = sifted_a.without(disclosed_raw)
    rem_b = sifted_b.without(disclosed_raw)
    fraction = cfg.refresh_fraction if encrypted else 0.0
    out_a = refresh_secret(secret, rem_a.bits, fraction, cfg.next_n, refresh_offset)
    out_b = refresh_secret(secret, rem_b.bits, fraction, cfg.next_n, refresh_offset)

    if aborted:
        next_secret, next_offset, net_key = secret, refresh_offset, BitString()
    else:
        next_secret, next_offset, net_key = out_a.new_secret, out_a.next_offset, out_a.net_key

    flipped = tamper.flip_positions if tamper is not None else ()
    tampered_a = flipped if tamper is not None and tamper.target == "alice_msg" else ()
    tampered_b = flipped if tamper is not None and tamper.target == "bob_msg" else ()
    return SessionTranscript(
        session_id=session_id,
        seed=rngs.seed,
        session_index=rngs.session_index,
        n=cfg.n,
        sift_mode=cfg.sift_mode.value,
        epsilon=cfg.channel.intrinsic_flip_prob,
        adversary=getattr(interceptor, "strategy", "none") if interceptor else "none",
        sacrifice_fraction=cfg.sacrifice_fraction,
        refresh_fraction=cfg.refresh_fraction,
        abort_threshold=cfg.abort_threshold,
        secret_alice=secret.alice_half,
        secret_bob=secret.bob_half,
        alice_raw=alice,
        bob_raw=bob,
        masked_alice=sent_a,
        masked_bob=sent_b,
        tampered_alice=tampered_a,
        tampered_bob=tampered_b,
        sifted_alice=sifted_a,
        sifted_bob=sifted_b,
        qber_estimate=qber,
        sacrificed_indices=sacrificed,
        refresh_budget_bits=out_a.budget,
        refresh_offset=refresh_offset,
        next_offset=next_offset,
        net_key_bits=len(net_key),
        net_key=net_key,
        next_secret=next_secret,
        secrets_agree=out_a.new_secret == out_b.new_secret,
        aborted=aborted,
        insufficient_yield=not out_a.sufficient,
        next_n=cfg.next_n,
    )


def grow_key(cfg: SessionConfig, secret: SharedSecret, sessions: int, seed: int,
             interceptor_factory=None) -> Iterator[SessionTranscript]:
    """Run successive sessions, each reusing the secret refreshed by the last.

    Aborted or low-yield sessions keep the old secret, so the next run
    reuses it unchanged.
    """
    offset = 0
    for k in range(sessions):
        interceptor = interceptor_factory() if interceptor_factory else None
        tr = run_session(cfg, secret, interceptor, SessionRngs.from_seed(seed, k),
                         session_id=k, refresh_offset=offset)
        yield tr
        if not tr.aborted and not tr.insufficient_yield:
            secret, offset = tr.next_secret, tr.next_offset
