"""End-to-end acceptance criteria.

Each test prints one ``PASS``/``FAIL`` line and then asserts the same
verdict; the lines are also gathered into an "acceptance criteria"
section of the pytest summary.  Runtime limits are part of each
criterion and are measured around the work itself.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from qkgrow.adversary import (count_consistent_sifting_functions,
                              enumerate_consistent_sifting_functions)
from qkgrow.analysis import (gaussian_comparison, info_gain_oracle_eve, provenance_distribution,
                             provenance_empirical, surviving_functions_bound)
from qkgrow.channel import ChannelConfig
from qkgrow.experiments import (intercept_resend_study, key_growing_accounting,
                                masking_transparency, run_sessions, sifted_length_study,
                                surviving_count_study, tamper_study)
from qkgrow.keybits import BitString, RngHandle
from qkgrow.protocol import SessionConfig
from qkgrow.transcript import dumps_record, read_transcripts, verify_transcript, write_transcripts

from conftest import CRITERION_LINES

pytestmark = pytest.mark.acceptance


class Timer:
    elapsed = 0.0


@contextmanager
def timed():
    t = Timer()
    start = time.perf_counter()
    yield t
    t.elapsed = time.perf_counter() - start


def verdict(number: int, title: str, checks: dict, elapsed: float, limit: float) -> None:
    """Print the criterion line and fail the test if any check failed."""
    checks = {**checks, f"runtime {elapsed:.2f}s < {limit:g}s": elapsed < limit}
    ok = all(checks.values())
    detail = "; ".join(f"{name}: {'ok' if good else 'FAILED'}" for name, good in checks.items())
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} ({title}): {detail}"
    CRITERION_LINES.append(line)
    print("\n" + line)
    assert ok, detail


def test_01_masking_transparency():
    with timed() as t:
        mismatches = masking_transparency(n=1000, sessions=100, epsilons=(0.0, 0.05), seed=101)
    verdict(1, "masking transparency", {f"{mismatches} of 200 sessions differ": mismatches == 0},
            t.elapsed, 5)


def test_02_sifted_length():
    n, sessions = 10**4, 200
    with timed() as t:
        est = sifted_length_study(n, sessions, seed=102)
    z = (est.mean - n / 2) / est.stderr
    verdict(2, "sifted length", {f"mean {est.mean:.2f} is {z:+.2f} SE from {n // 2}": abs(z) <= 3},
            t.elapsed, 10)


def test_03_intercept_resend_signature():
    with timed() as t:
        res = intercept_resend_study(10**6, seed=2026)
    qber, agree = res.qber.mean, res.with_basis_info.mean
    verdict(3, "intercept-resend signature", {
        f"QBER {qber:.5f} in [0.2487, 0.2513]": 0.2487 <= qber <= 0.2513,
        f"with_basis_info {agree:.5f} in [0.7487, 0.7513]": 0.7487 <= agree <= 0.7513,
    }, t.elapsed, 30)


def test_04_information_gain_identity():
    with timed() as t:
        worst = max(abs(info_gain_oracle_eve(n).info_gain_bits - n / 2)
                    for n in range(2, 10**4 + 1, 2))
    verdict(4, "information gain n/2", {f"max |error| {worst:.3g} < 1e-12": worst < 1e-12},
            t.elapsed, 1)


def test_05_surviving_function_count():
    checks = {}
    with timed() as t:
        for n in (8, 12):
            res = surviving_count_study(n, 2000, seed=105)
            k_max = surviving_functions_bound(n).value
            ratio = res.count.mean / k_max
            checks[f"n={n}: mean {res.count.mean:.3f} vs k_max {k_max:g}, ratio {ratio:.2f}"] = \
                0.5 <= ratio <= 2.0
    verdict(5, "surviving-function count", checks, t.elapsed, 20)


def test_06_oracle_equivalence():
    rng = RngHandle(106, 0)
    gen = rng.generator
    mismatches = 0
    with timed() as t:
        for n in (6, 8, 10, 12, 14):
            for k in range(200):
                raw = BitString(rng.bits(n))
                if k % 2:
                    # genuine subsequence, so the count is at least one
                    picks = np.sort(gen.choice(n, size=n // 2, replace=False))
                    key = BitString(raw.to_array()[picks])
                else:
                    key = BitString(rng.bits(int(gen.integers(0, n + 1))))
                mismatches += (count_consistent_sifting_functions(raw, key)
                               != enumerate_consistent_sifting_functions(raw, key))
    verdict(6, "DP equals enumeration", {f"{mismatches} of 1000 instances differ": mismatches == 0},
            t.elapsed, 30)


def test_07_provenance_distribution():
    with timed() as t:
        worst_norm = 0.0
        bad_modes = []
        for l in range(1, 1001):
            dist = provenance_distribution(l)
            worst_norm = max(worst_norm, abs(dist.tabulated_mass + dist.tail_mass - 1.0))
            if l >= 2 and dist.mode not in (2 * l - 2, 2 * l - 1):
                bad_modes.append(l)
        tvs = {}
        for l in (1, 5, 20):
            emp = provenance_empirical(l, None, 10**6, RngHandle(107, l))
            tvs[l] = emp.tv_distance(provenance_distribution(l))
    checks = {f"max |sum - 1| {worst_norm:.2g} < 1e-9": worst_norm < 1e-9,
              f"{len(bad_modes)} modes outside {{2l-2, 2l-1}}": not bad_modes}
    for l, tv in tvs.items():
        checks[f"TV(l={l}) {tv:.4f} < 0.01"] = tv < 0.01
    verdict(7, "provenance distribution", checks, t.elapsed, 60)


def test_08_gaussian_approximation():
    with timed() as t:
        rep = gaussian_comparison(50)
        devs = [gaussian_comparison(l).max_abs_deviation for l in (10, 25, 50, 100)]
    predicted = round(rep.gaussian_fwhm)
    shrinking = all(a > b for a, b in zip(devs, devs[1:]))
    verdict(8, "Gaussian approximation", {
        f"l=50 FWHM count {rep.exact_fwhm_count} within 2 of {predicted}":
            abs(rep.exact_fwhm_count - predicted) <= 2,
        "max deviation " + " > ".join(f"{d:.4f}" for d in devs): shrinking,
    }, t.elapsed, 5)


def test_09_eve_handicap():
    with timed() as t:
        # about 1.05e5 sifted bits
        res = intercept_resend_study(210_000, seed=109)
    checks = {f"sifted bits {res.sifted_length} >= 1e5": res.sifted_length >= 10**5}
    for name, gap in (("uniform_sift_guess", res.uniform_gap),
                      ("maximum_likelihood_position", res.ml_gap)):
        checks[f"{name} gap {gap.mean:.4f} > 3 x {gap.stderr:.4f}"] = gap.mean > 3 * gap.stderr
    verdict(9, "Eve handicap", checks, t.elapsed, 30)


def test_10_tamper_never_lowers_qber():
    checks = {}
    with timed() as t:
        for eps, flips in ((0.0, 50), (0.05, 1), (0.05, 50)):
            res = tamper_study(n=1000, sessions=500, flips=flips, seed=110, epsilon=eps)
            d = res.paired_increase
            checks[f"eps={eps} flips={flips}: increase {d.mean:+.4f} +/- {d.stderr:.4f}"] = \
                not res.decreased
    verdict(10, "tampering", checks, t.elapsed, 20)


def test_11_key_growing_accounting():
    n = 10**4
    with timed() as t:
        half = key_growing_accounting(n, 50, 0.5, seed=111, exact_half=True)
        quarter = key_growing_accounting(n, 200, 0.25, seed=112)
    band = 3 * math.sqrt(n * 0.25) / math.sqrt(quarter.net_key.trials)
    verdict(11, "key-growing accounting", {
        f"net key at f=0.5, sifted n/2: mean {half.net_key.mean:g}":
            half.net_key.mean == 0 and half.insufficient == 0,
        f"net key at f=0.25: {quarter.net_key.mean:.1f} vs {n / 4:g} +/- {band:.1f}":
            abs(quarter.net_key.mean - n / 4) <= band,
    }, t.elapsed, 5)


def test_12_determinism_and_replay(tmp_path):
    cfg = SessionConfig(500, ChannelConfig(0.02), refresh_fraction=0.2)
    with timed() as t:
        paths = []
        for k, workers in enumerate((1, 4)):
            path = tmp_path / f"run{k}.jsonl"
            write_transcripts(path, run_sessions(cfg, 100, seed=112, workers=workers),
                              created="2026-01-01T00:00:00+00:00")
            paths.append(path)
        identical = paths[0].read_bytes() == paths[1].read_bytes()
        stored = read_transcripts(paths[0])
        failures = sum(bool(verify_transcript(tr)) for tr in stored)
        reserialised = [dumps_record(tr) for tr in stored] == \
            paths[0].read_text().splitlines()[1:]
    verdict(12, "determinism and replay", {
        "transcript files byte-identical": identical,
        "records re-serialise identically": reserialised,
        f"{failures} of {len(stored)} stored sessions fail replay": failures == 0
        and len(stored) == 100,
    }, t.elapsed, 5)
