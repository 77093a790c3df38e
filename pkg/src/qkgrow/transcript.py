"""Transcript files: one JSON record per session, replayable offline.

The first line is a header carrying the format tag and a creation
timestamp; every following line is a session record with a fixed field
order.  Bit strings use their ASCII form.  Given identical configuration
and seed, the record lines are byte-identical across runs.
"""

from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from typing import Iterable, Optional

import numpy as np

from .keybits import BitString, SharedSecret, hamming_fraction
from .protocol import (RawKeyList, SessionTranscript, SiftedKey, TamperSpec, _subset_size,
                       apply_tamper, refresh_secret, sift, unmask_basis_message)

__all__ = ["FORMAT_TAG", "to_record", "from_record", "write_transcripts",
           "read_transcripts", "verify_transcript"]

FORMAT_TAG = "qkgrow-transcript"
FORMAT_VERSION = 1


def _bits(b: BitString) -> str:
    return str(b)


def _ints(a) -> list[int]:
    return [int(x) for x in a]


def to_record(tr: SessionTranscript) -> dict:
    return {
        "session_id": tr.session_id,
        "seed": tr.seed,
        "session_index": tr.session_index,
        "n": tr.n,
        "sift_mode": tr.sift_mode,
        "epsilon": tr.epsilon,
        "adversary": tr.adversary,
        "sacrifice_fraction": tr.sacrifice_fraction,
        "refresh_fraction": tr.refresh_fraction,
        "abort_threshold": tr.abort_threshold,
        "secret_alice": _bits(tr.secret_alice),
        "secret_bob": _bits(tr.secret_bob),
        "alice_bases": _bits(tr.alice_raw.bases),
        "alice_values": _bits(tr.alice_raw.values),
        "bob_bases": _bits(tr.bob_raw.bases),
        "bob_values": _bits(tr.bob_raw.values),
        "masked_alice": _bits(tr.masked_alice),
        "masked_bob": _bits(tr.masked_bob),
        "tampered_alice": list(tr.tampered_alice),
        "tampered_bob": list(tr.tampered_bob),
        "kept_indices_alice": _ints(tr.sifted_alice.kept_indices),
        "kept_indices_bob": _ints(tr.sifted_bob.kept_indices),
        "sifted_alice": _bits(tr.sifted_alice.bits),
        "sifted_bob": _bits(tr.sifted_bob.bits),
        "qber_estimate": tr.qber_estimate,
        "sacrificed_indices": _ints(tr.sacrificed_indices),
        "refresh_budget_bits": tr.refresh_budget_bits,
        "refresh_offset": tr.refresh_offset,
        "next_offset": tr.next_offset,
        "net_key_bits": tr.net_key_bits,
        "net_key": _bits(tr.net_key),
        "next_secret_alice": _bits(tr.next_secret.alice_half),
        "next_secret_bob": _bits(tr.next_secret.bob_half),
        "secrets_agree": tr.secrets_agree,
        "aborted": tr.aborted,
        "insufficient_yield": tr.insufficient_yield,
        "next_n": tr.next_n,
    }


def from_record(rec: dict) -> SessionTranscript:
    b = BitString.from_str
    return SessionTranscript(
        session_id=rec["session_id"],
        seed=rec["seed"],
        session_index=rec["session_index"],
        n=rec["n"],
        sift_mode=rec["sift_mode"],
        epsilon=rec["epsilon"],
        adversary=rec["adversary"],
        sacrifice_fraction=rec["sacrifice_fraction"],
        refresh_fraction=rec["refresh_fraction"],
        abort_threshold=rec["abort_threshold"],
        secret_alice=b(rec["secret_alice"]),
        secret_bob=b(rec["secret_bob"]),
        alice_raw=RawKeyList(b(rec["alice_bases"]), b(rec["alice_values"])),
        bob_raw=RawKeyList(b(rec["bob_bases"]), b(rec["bob_values"])),
        masked_alice=b(rec["masked_alice"]),
        masked_bob=b(rec["masked_bob"]),
        tampered_alice=tuple(rec["tampered_alice"]),
        tampered_bob=tuple(rec["tampered_bob"]),
        sifted_alice=SiftedKey(b(rec["sifted_alice"]), rec["kept_indices_alice"]),
        sifted_bob=SiftedKey(b(rec["sifted_bob"]), rec["kept_indices_bob"]),
        qber_estimate=rec["qber_estimate"],
        sacrificed_indices=np.asarray(rec["sacrificed_indices"], dtype=np.int64),
        refresh_budget_bits=rec["refresh_budget_bits"],
        refresh_offset=rec["refresh_offset"],
        next_offset=rec["next_offset"],
        net_key_bits=rec["net_key_bits"],
        net_key=b(rec["net_key"]),
        next_secret=SharedSecret(b(rec["next_secret_alice"]), b(rec["next_secret_bob"])),
        secrets_agree=rec["secrets_agree"],
        aborted=rec["aborted"],
        insufficient_yield=rec["insufficient_yield"],
        next_n=rec["next_n"],
    )


def dumps_record(tr: SessionTranscript) -> str:
    return json.dumps(to_record(tr), separators=(",", ":"))


def write_transcripts(path, transcripts: Iterable[SessionTranscript],
                      created: Optional[str] = None) -> int:
    """Write a header line and one record per session; returns the record count."""
    created = created or datetime.now(timezone.utc).isoformat(timespec="seconds")
    header = {"format": FORMAT_TAG, "version": FORMAT_VERSION, "created": created}
    count = 0
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for tr in transcripts:
            fh.write(dumps_record(tr) + "\n")
            count += 1
    return count


def read_transcripts(path) -> list[SessionTranscript]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT_TAG:
            raise ValueError(f"{path}: not a {FORMAT_TAG} file")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')}")
        return [from_record(json.loads(line)) for line in fh if line.strip()]


def verify_transcript(tr: SessionTranscript) -> list[str]:
    """Recompute sifting, QBER and refresh accounting from the stored data.

    Returns a list of discrepancies; an empty list means the transcript
    replays cleanly.
    """
    problems = []
    n = tr.n
    encrypted = tr.sift_mode == "encrypted"
    for name in ("masked_alice", "masked_bob", "secret_alice", "secret_bob"):
        if len(getattr(tr, name)) != n:
            problems.append(f"{name} has length {len(getattr(tr, name))}, expected {n}")
    if problems:
        return problems

    expect_a = tr.alice_raw.bases ^ tr.secret_alice if encrypted else tr.alice_raw.bases
    expect_b = tr.bob_raw.bases ^ tr.secret_bob if encrypted else tr.bob_raw.bases
    if tr.masked_alice != expect_a:
        problems.append("Alice's basis message does not match her bases and secret")
    if tr.masked_bob != expect_b:
        problems.append("Bob's basis message does not match his bases and secret")

    recv_a, recv_b = tr.masked_alice, tr.masked_bob
    if tr.tampered_alice:
        recv_a = apply_tamper(recv_a, TamperSpec(tr.tampered_alice, "alice_msg"))
    if tr.tampered_bob:
        recv_b = apply_tamper(recv_b, TamperSpec(tr.tampered_bob, "bob_msg"))
    if encrypted:
        recv_a = unmask_basis_message(recv_a, tr.secret_alice)
        recv_b = unmask_basis_message(recv_b, tr.secret_bob)
    if sift(tr.alice_raw, tr.alice_raw.bases, recv_b) != tr.sifted_alice:
        problems.append("Alice's sifted key does not replay")
    if sift(tr.bob_raw, recv_a, tr.bob_raw.bases) != tr.sifted_bob:
        problems.append("Bob's sifted key does not replay")

    m = len(tr.sifted_alice)
    sac = np.asarray(tr.sacrificed_indices, dtype=np.int64)
    if m == 0:
        if tr.qber_estimate is not None or not tr.aborted:
            problems.append("empty sifted key must abort without a QBER estimate")
        return problems
    if len(sac) != _subset_size(tr.sacrifice_fraction, m):
        problems.append(f"{len(sac)} positions sacrificed, expected "
                        f"{_subset_size(tr.sacrifice_fraction, m)}")
    if len(sac) and (np.any(np.diff(sac) <= 0) or sac[0] < 0 or sac[-1] >= m):
        problems.append("sacrificed positions are not sorted positions of the sifted key")
        return problems
    raw_idx = tr.sifted_alice.kept_indices[sac]
    qber = hamming_fraction(tr.sifted_alice.bits[sac],
                            BitString(tr.bob_raw.values.to_array()[raw_idx]))
    if tr.qber_estimate is None or not math.isclose(qber, tr.qber_estimate, abs_tol=1e-15):
        problems.append(f"QBER replays as {qber}, transcript says {tr.qber_estimate}")
    if tr.aborted != (qber > tr.abort_threshold):
        problems.append("abort flag inconsistent with QBER and threshold")

    secret = SharedSecret(tr.secret_alice, tr.secret_bob)
    fraction = tr.refresh_fraction if encrypted else 0.0
    remainder = tr.sifted_alice.without(raw_idx).bits
    out = refresh_secret(secret, remainder, fraction, tr.next_n, tr.refresh_offset)
    if out.budget != tr.refresh_budget_bits:
        problems.append("refresh budget does not replay")
    if tr.insufficient_yield == out.sufficient:
        problems.append("insufficient-yield flag does not replay")
    if tr.net_key_bits != len(tr.net_key):
        problems.append("net_key_bits disagrees with the stored net key")
    if not tr.aborted:
        if tr.net_key != out.net_key or tr.next_secret != out.new_secret:
            problems.append("net key or refreshed secret does not replay")
        if tr.net_key_bits != max(0, m - len(sac) - tr.refresh_budget_bits):
            problems.append("net key accounting does not balance")
    elif tr.net_key_bits != 0 or tr.next_secret != secret:
        problems.append("aborted session must discard its key and keep the old secret")
    return problems
