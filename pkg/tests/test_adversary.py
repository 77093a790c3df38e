import itertools
import math
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qkgrow.adversary import (BRUTE_FORCE_MAX_N, AdversaryRecord, BruteForceGuardError,
                              GuessStrategy, InterceptResend, count_consistent_any_length,
                              count_consistent_sifting_functions,
                              enumerate_consistent_sifting_functions, eve_guess_sifted_key,
                              intercept_resend, oracle_raw_key, plaintext_recover_key,
                              tamper_masked_message)
from qkgrow.channel import Pulse
from qkgrow.experiments import (intercept_resend_study, session_secret, surviving_count_study,
                                tamper_study)
from qkgrow.keybits import BitString, RngHandle, random_bits, xor_mask
from qkgrow.protocol import (SessionConfig, SessionRngs, TamperSpec, produce_raw_keys, run_session,
                             sift)

B = BitString.from_str


class TestCounting:
    @pytest.mark.parametrize("raw, key, expected", [
        ("0101", "11", 1),
        ("0000", "00", 6),
        ("0000", "11", 0),
        ("0110", "", 1),
        ("", "", 1),
        ("101", "101", 1),
    ])
    def test_examples(self, raw, key, expected):
        assert count_consistent_sifting_functions(B(raw), B(key)) == expected
        assert enumerate_consistent_sifting_functions(B(raw), B(key)) == expected

    @settings(max_examples=300)
    @given(st.lists(st.integers(0, 1), max_size=12), st.data())
    def test_dp_matches_enumeration(self, raw, data):
        key = data.draw(st.lists(st.integers(0, 1), max_size=len(raw)))
        assert (count_consistent_sifting_functions(BitString(raw), BitString(key))
                == enumerate_consistent_sifting_functions(BitString(raw), BitString(key)))

    def test_constant_key_counts_all_functions(self):
        for n in range(2, 21, 2):
            assert count_consistent_sifting_functions(BitString.zeros(n),
                                                      BitString.zeros(n // 2)) == comb(n, n // 2)

    def test_sum_over_keys_is_total(self):
        # every selection reproduces exactly one key of its length
        raw = random_bits(RngHandle(1, 0), 10)
        keys = [BitString([(k >> j) & 1 for j in range(5)]) for k in range(32)]
        total = sum(count_consistent_sifting_functions(raw, key) for key in keys)
        assert total == comb(10, 5)

    def test_guards(self):
        with pytest.raises(BruteForceGuardError, match="estimator"):
            count_consistent_sifting_functions(BitString.zeros(BRUTE_FORCE_MAX_N + 2),
                                               BitString.zeros(3))
        with pytest.raises(BruteForceGuardError):
            enumerate_consistent_sifting_functions(BitString.zeros(18), BitString.zeros(9))
        with pytest.raises(ValueError):
            count_consistent_sifting_functions(B("01"), B("010"))

    def test_true_selection_always_counted(self):
        for k in range(50):
            cfg = SessionConfig(16)
            a, b = produce_raw_keys(cfg, None, SessionRngs.from_seed(2, k))
            key = sift(a, a.bases, b.bases)
            eve = oracle_raw_key(a)
            assert count_consistent_sifting_functions(eve.values, key.bits) >= 1

    # Exact E[count] over uniform raw keys and uniform true selections of n/2
    # positions, from an independent pair-of-selections union-find computation.
    EXACT_MEAN = {4: Fraction(35, 12), 6: Fraction(483, 80), 8: Fraction(7179, 560)}

    @pytest.mark.parametrize("n", [4, 6])
    def test_mean_count_exhaustive(self, n):
        total, cases = 0, 0
        for mask in range(2**n):
            raw = BitString([(mask >> j) & 1 for j in range(n)])
            for picks in itertools.combinations(range(n), n // 2):
                total += count_consistent_sifting_functions(raw, BitString([raw[i] for i in picks]))
                cases += 1
        assert Fraction(total, cases) == self.EXACT_MEAN[n]

    def test_mean_count_monte_carlo_n8(self):
        res = surviving_count_study(8, 1000, seed=12)
        exact = float(self.EXACT_MEAN[8])
        assert abs(res.count.mean - exact) <= 3 * res.count.stderr
        assert res.predicted == 4.375

    def test_any_length_sums_match_brute_force(self):
        raw, key = B("0110101"), B("10")
        counts = count_consistent_any_length(raw, key)
        for total, c in counts.items():
            brute = sum(1 for sub in itertools.combinations(range(7), total)
                        if tuple(raw[i] for i in sub[:2]) == (1, 0))
            assert c == brute
        assert count_consistent_any_length(raw, key, lengths=[2])[2] == \
            count_consistent_sifting_functions(raw, key)


class TestRecords:
    def test_oracle_copy(self):
        a, _ = produce_raw_keys(SessionConfig(64), None, SessionRngs.from_seed(3))
        rec = oracle_raw_key(a)
        assert rec.values == a.values and len(rec) == 64

    def test_oracle_sift_with_true_secret_reproduces_key(self):
        n = 200
        secret = session_secret(4, 0, n)
        tr = run_session(SessionConfig(n), secret, None, SessionRngs.from_seed(4))
        eve = oracle_raw_key(tr.alice_raw)
        bob_bases = xor_mask(tr.masked_bob, secret.bob_half)
        recovered = sift(tr.alice_raw, eve.bases, bob_bases)
        assert recovered == tr.sifted_alice

    def test_record_length_checked(self):
        with pytest.raises(ValueError):
            AdversaryRecord(B("01"), B("0"), "x")


class TestInterceptResend:
    def test_compatible_measurement_logs_sent_value(self):
        rng = RngHandle(5, 0)
        for k in range(400):
            p = Pulse(k % 2, (k // 3) % 2, k)
            out, (basis, value) = intercept_resend(p, rng)
            assert out == Pulse(basis, value, k)
            if basis == p.basis:
                assert value == p.value

    def test_scalar_and_batch_record_lengths(self):
        eve = InterceptResend()
        rng = RngHandle(6, 0)
        eve.intercept(Pulse(0, 1), rng)
        eve.intercept_batch(np.zeros(5, np.uint8), np.ones(5, np.uint8), rng)
        assert len(eve.record) == 6

    def test_logged_value_agreement(self):
        n = 10**6
        eve = InterceptResend()
        a, _ = produce_raw_keys(SessionConfig(n), eve, SessionRngs.from_seed(7))
        agree = np.mean(eve.record.values.to_array() == a.values.to_array())
        assert abs(agree - 0.75) <= 0.0013


class TestPlaintext:
    def test_example(self):
        assert plaintext_recover_key(B("110"), B("011")) == B("101")

    def test_equal_texts_give_zero_key(self):
        assert plaintext_recover_key(B("1011"), B("1011")) == BitString.zeros(4)

    def test_vernam_roundtrip(self):
        key = random_bits(RngHandle(8, 0), 300)
        plain = random_bits(RngHandle(8, 1), 300)
        assert plaintext_recover_key(xor_mask(plain, key), plain) == key

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            plaintext_recover_key(B("10"), B("1"))


class TestTamper:
    def test_empty_flip_set(self):
        m = B("10110")
        assert tamper_masked_message(m, TamperSpec(())) == m

    def test_flip_all(self):
        m = B("10110")
        assert tamper_masked_message(m, TamperSpec(range(5))) == ~m

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            tamper_masked_message(B("10"), TamperSpec((5,)))

    def test_noiseless_tampering_does_not_lower_qber(self):
        res = tamper_study(n=400, sessions=100, flips=20, seed=9, epsilon=0.0)
        assert res.baseline_qber.mean == 0.0
        assert res.tampered_qber.mean > 0.0
        assert not res.decreased


class TestGuessing:
    def test_missing_inputs_raise(self):
        rec = oracle_raw_key(produce_raw_keys(SessionConfig(10), None, SessionRngs.from_seed(1))[0])
        with pytest.raises(ValueError, match="kept_indices"):
            eve_guess_sifted_key(rec, "with_basis_info")
        with pytest.raises(ValueError, match="rng"):
            eve_guess_sifted_key(rec, GuessStrategy.UNIFORM_SIFT_GUESS, sifted_length=5)
        with pytest.raises(ValueError):
            eve_guess_sifted_key(rec, "psychic", sifted_length=5)
        with pytest.raises(ValueError):
            eve_guess_sifted_key(rec, "maximum_likelihood_position", sifted_length=11)

    def test_maximum_likelihood_positions(self):
        rec = oracle_raw_key(produce_raw_keys(SessionConfig(8), None, SessionRngs.from_seed(1))[0])
        raw = rec.values.to_array()
        guess = eve_guess_sifted_key(rec, "maximum_likelihood_position", sifted_length=4)
        # sifted bit l is guessed from raw position 2l-1 (1-based)
        assert guess.to_array().tolist() == raw[[0, 2, 4, 6]].tolist()

    def test_ml_falls_back_to_coin_past_raw_end(self):
        rec = oracle_raw_key(produce_raw_keys(SessionConfig(8), None, SessionRngs.from_seed(1))[0])
        guess = eve_guess_sifted_key(rec, "maximum_likelihood_position", sifted_length=6,
                                     rng=RngHandle(1, 1))
        assert len(guess) == 6

    def test_uniform_guess_length(self):
        rec = oracle_raw_key(produce_raw_keys(SessionConfig(30), None, SessionRngs.from_seed(1))[0])
        assert len(eve_guess_sifted_key(rec, "uniform_sift_guess", sifted_length=12,
                                        rng=RngHandle(2, 2))) == 12

    def test_no_interception_gives_coin_agreement(self):
        res = intercept_resend_study(4 * 10**5, seed=10, intercept=False)
        band = 3 * math.sqrt(0.25 / res.sifted_length)
        for est in (res.with_basis_info, res.uniform_sift_guess, res.maximum_likelihood_position):
            assert abs(est.mean - 0.5) <= band
