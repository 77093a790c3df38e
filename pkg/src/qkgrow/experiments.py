"""Monte-Carlo experiments comparing simulated sessions with closed forms.

Each function is deterministic given its seed and returns plain result
objects carrying means, standard errors and trial counts.  The CLI and
the acceptance suite are thin layers over these.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .adversary import (AdversaryRecord, GuessStrategy, InterceptResend,
                        count_consistent_sifting_functions, eve_guess_sifted_key, oracle_raw_key,
                        plaintext_recover_key)
from .analysis import log2_exact, mutual_information_per_bit, surviving_functions_bound
from .channel import ChannelConfig
from .keybits import SharedSecret, random_bits
from .protocol import (SessionConfig, SessionRngs, SessionTranscript, SiftMode, TamperSpec,
                       produce_raw_keys, refresh_secret, run_session, sift)
from .reports import Estimate

__all__ = [
    "session_secret",
    "run_sessions",
    "masking_transparency",
    "sifted_length_study",
    "InterceptResult",
    "intercept_resend_study",
    "SurvivingCountResult",
    "surviving_count_study",
    "TamperResult",
    "tamper_study",
    "KeyGrowingResult",
    "key_growing_accounting",
    "information_trend",
]


def session_secret(seed: int, session_index: int, n: int) -> SharedSecret:
    """Preshared secret for a session, from that session's spare stream 0."""
    return SharedSecret.generate(SessionRngs.from_seed(seed, session_index).extra(0), n)


def run_sessions(cfg: SessionConfig, sessions: int, seed: int, *, adversary: str = "none",
                 workers: int = 1, tamper_flips: int = 0) -> list[SessionTranscript]:
    """Run independent sessions, fanned out over ``workers`` threads.

    Results are ordered by session index whatever the scheduling, and
    each session only touches its own random streams.
    """
    def one(k: int) -> SessionTranscript:
        rngs = SessionRngs.from_seed(seed, k)
        secret = session_secret(seed, k, cfg.n)
        interceptor = InterceptResend() if adversary == "intercept_resend" else None
        tamper = None
        if tamper_flips:
            picks = rngs.extra(1).generator.choice(cfg.n, size=min(tamper_flips, cfg.n),
                                                   replace=False)
            tamper = TamperSpec(tuple(picks), "bob_msg")
        tr = run_session(cfg, secret, interceptor, rngs, session_id=k, tamper=tamper)
        if interceptor is not None:
            tr.extra["eve_record"] = interceptor.record
        return tr

    if workers <= 1:
        return [one(k) for k in range(sessions)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(sessions)))


def masking_transparency(n: int, sessions: int, epsilons: Sequence[float], seed: int) -> int:
    """Count sessions where encrypted and plain sifting disagree (expected 0)."""
    mismatches = 0
    for eps in epsilons:
        enc = run_sessions(SessionConfig(n, ChannelConfig(eps), SiftMode.ENCRYPTED,
                                         abort_threshold=1.0), sessions, seed)
        plain = run_sessions(SessionConfig(n, ChannelConfig(eps), SiftMode.PLAIN_BB84,
                                           abort_threshold=1.0), sessions, seed)
        for a, b in zip(enc, plain):
            mismatches += not (a.sifted_alice == b.sifted_alice
                               and a.sifted_bob == b.sifted_bob)
    return mismatches


def sifted_length_study(n: int, sessions: int, seed: int) -> Estimate:
    cfg = SessionConfig(n)
    lengths = []
    for k in range(sessions):
        alice, bob = produce_raw_keys(cfg, None, SessionRngs.from_seed(seed, k))
        lengths.append(len(sift(alice, alice.bases, bob.bases)))
    return Estimate.from_samples(lengths)


@dataclass
class InterceptResult:
    """Full intercept-resend on every pulse of one long session.

    The ``*_agreement`` estimates are per sifted bit, against Alice's
    sifted key.  ``*_gap`` are paired differences from with_basis_info.
    """

    n: int
    sifted_length: int
    qber: Estimate
    with_basis_info: Estimate
    uniform_sift_guess: Estimate
    maximum_likelihood_position: Estimate
    uniform_gap: Estimate
    ml_gap: Estimate


def intercept_resend_study(n: int, seed: int, epsilon: float = 0.0,
                           intercept: bool = True) -> InterceptResult:
    cfg = SessionConfig(n, ChannelConfig(epsilon), sacrifice_fraction=1.0, abort_threshold=1.0)
    rngs = SessionRngs.from_seed(seed)
    eve = InterceptResend()
    tr = run_session(cfg, session_secret(seed, 0, n), eve if intercept else None, rngs)
    truth = tr.sifted_alice.bits.to_array()
    m = len(truth)
    errors = tr.sifted_alice.bits.to_array() != tr.sifted_bob.bits.to_array()

    if intercept:
        record = eve.record
    else:
        # no interception: Eve holds coin flips unrelated to the key
        eve_rng = rngs.extra(1)
        record = AdversaryRecord(random_bits(eve_rng, n), random_bits(eve_rng, n), "none")
    guess_rng = rngs.extra(2)
    hits = {}
    for strategy in GuessStrategy:
        guess = eve_guess_sifted_key(record, strategy, kept_indices=tr.kept_indices,
                                     sifted_length=m, rng=guess_rng)
        hits[strategy] = (guess.to_array() == truth).astype(float)
    basis = hits[GuessStrategy.WITH_BASIS_INFO]
    return InterceptResult(
        n=n,
        sifted_length=m,
        qber=Estimate.from_proportion(int(errors.sum()), m),
        with_basis_info=Estimate.from_samples(basis),
        uniform_sift_guess=Estimate.from_samples(hits[GuessStrategy.UNIFORM_SIFT_GUESS]),
        maximum_likelihood_position=Estimate.from_samples(
            hits[GuessStrategy.MAXIMUM_LIKELIHOOD_POSITION]),
        uniform_gap=Estimate.from_samples(basis - hits[GuessStrategy.UNIFORM_SIFT_GUESS]),
        ml_gap=Estimate.from_samples(basis - hits[GuessStrategy.MAXIMUM_LIKELIHOOD_POSITION]),
    )


@dataclass
class SurvivingCountResult:
    """Consistent sifting-function counts for an oracle Eve.

    Only sessions whose sifted key has exactly n/2 bits are kept;
    ``acceptance_rate`` is the share of drawn sessions that qualified.
    ``mean_log2_count`` is the entropy left to Eve averaged over realised
    keys, to set against ``log2(predicted)``.
    """

    n: int
    predicted: float
    count: Estimate
    mean_log2_count: Estimate
    acceptance_rate: float
    min_count: int

    @property
    def ratio(self) -> float:
        return self.count.mean / self.predicted


def surviving_count_study(n: int, sessions: int, seed: int) -> SurvivingCountResult:
    cfg = SessionConfig(n)
    counts = []
    drawn = 0
    while len(counts) < sessions:
        rngs = SessionRngs.from_seed(seed, drawn)
        drawn += 1
        alice, bob = produce_raw_keys(cfg, None, rngs)
        sifted = sift(alice, alice.bases, bob.bases)
        if len(sifted) != n // 2:
            continue
        # Eve intercepts a Vernam ciphertext whose plaintext she knows
        plaintext = random_bits(rngs.extra(1), len(sifted))
        ciphertext = plaintext ^ sifted.bits
        known = plaintext_recover_key(ciphertext, plaintext)
        eve = oracle_raw_key(alice)
        eve.known_sifted = known
        eve.consistent_function_count = count_consistent_sifting_functions(eve.values, known)
        counts.append(eve.consistent_function_count)
    return SurvivingCountResult(
        n=n,
        predicted=surviving_functions_bound(n).value,
        count=Estimate.from_samples(counts),
        mean_log2_count=Estimate.from_samples([log2_exact(c) for c in counts]),
        acceptance_rate=sessions / drawn,
        min_count=min(counts),
    )


@dataclass
class TamperResult:
    baseline_qber: Estimate
    tampered_qber: Estimate
    paired_increase: Estimate

    @property
    def decreased(self) -> bool:
        """One-sided 3-sigma evidence that tampering lowered the QBER."""
        d = self.paired_increase
        se = d.stderr if d.stderr == d.stderr else 0.0
        return d.mean + 3 * se < 0


def tamper_study(n: int, sessions: int, flips: int, seed: int,
                 epsilon: float = 0.0, sacrifice_fraction: float = 1.0) -> TamperResult:
    cfg = SessionConfig(n, ChannelConfig(epsilon), sacrifice_fraction=sacrifice_fraction,
                        abort_threshold=1.0)
    base = run_sessions(cfg, sessions, seed)
    tampered = run_sessions(cfg, sessions, seed, tamper_flips=flips)
    qb = np.array([t.qber_estimate for t in base], dtype=float)
    qt = np.array([t.qber_estimate for t in tampered], dtype=float)
    return TamperResult(Estimate.from_samples(qb), Estimate.from_samples(qt),
                        Estimate.from_samples(qt - qb))


@dataclass
class KeyGrowingResult:
    n: int
    refresh_fraction: float
    net_key: Estimate
    budget: int
    insufficient: int


def key_growing_accounting(n: int, sessions: int, refresh_fraction: float, seed: int,
                           exact_half: bool = False) -> KeyGrowingResult:
    """Net key left after refreshing the secret from the whole sifted key.

    With ``exact_half`` only sessions sifting exactly n/2 bits are used.
    """
    cfg = SessionConfig(n)
    nets = []
    budget = 0
    insufficient = 0
    drawn = 0
    while len(nets) < sessions:
        rngs = SessionRngs.from_seed(seed, drawn)
        drawn += 1
        alice, bob = produce_raw_keys(cfg, None, rngs)
        sifted = sift(alice, alice.bases, bob.bases)
        if exact_half and len(sifted) != n // 2:
            continue
        out = refresh_secret(session_secret(seed, drawn - 1, n), sifted.bits, refresh_fraction)
        budget = out.budget
        insufficient += not out.sufficient
        nets.append(len(out.net_key))
    return KeyGrowingResult(n, refresh_fraction, Estimate.from_samples(nets), budget,
                            insufficient)


def information_trend(ns: Sequence[int], seed: int, min_bits: int = 100_000
                      ) -> list[tuple[int, Estimate, float]]:
    """Eve's position-guess agreement and information per bit against raw length.

    For each n enough sessions are pooled to cover ``min_bits`` sifted
    bits.  Returns ``(n, agreement, mutual information per bit)``.
    """
    out = []
    for n in ns:
        cfg = SessionConfig(n, sacrifice_fraction=1.0, abort_threshold=1.0)
        hits = []
        k = 0
        while sum(len(h) for h in hits) < min_bits:
            rngs = SessionRngs.from_seed(seed + n, k)
            eve = InterceptResend()
            tr = run_session(cfg, session_secret(seed + n, k, n), eve, rngs, session_id=k)
            k += 1
            if not len(tr.sifted_alice):
                continue
            guess = eve_guess_sifted_key(eve.record, GuessStrategy.MAXIMUM_LIKELIHOOD_POSITION,
                                         sifted_length=len(tr.sifted_alice), rng=rngs.extra(2))
            hits.append(guess.to_array() == tr.sifted_alice.bits.to_array())
        agreement = Estimate.from_samples(np.concatenate(hits).astype(float))
        out.append((n, agreement, mutual_information_per_bit(agreement.mean)))
    return out
