"""Closed-form combinatorics, entropies and provenance statistics.

Counts are exact Python integers and ratios are ``Fraction``; floats only
appear in returned reports.  The provenance distribution describes, for a
fixed sifted position ``l`` (1-based), which raw position ``i`` it came
from when every raw position survives sifting independently with
probability 1/2::

    P(i | l) = C(i - 1, l - 1) / 2**i,    i >= l

This is a negative binomial law: it sums to one over ``i``, has mean
``2l`` and variance ``2l``, and is maximal at both ``i = 2l - 2`` and
``i = 2l - 1`` (for ``l >= 2``).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .keybits import RngHandle

__all__ = [
    "total_sifting_functions",
    "SurvivingBound",
    "surviving_functions_bound",
    "GrowthFit",
    "fit_growth_rate",
    "log2_exact",
    "shannon_entropy",
    "shannon_entropy_uniform",
    "EntropyReport",
    "info_gain_oracle_eve",
    "provenance_prob",
    "provenance_prob_exact",
    "ProvenanceDistribution",
    "provenance_distribution",
    "most_likely_raw_position",
    "EmpiricalProvenance",
    "provenance_empirical",
    "default_empirical_length",
    "total_variation",
    "GaussianReport",
    "gaussian_comparison",
    "binary_entropy",
    "mutual_information_per_bit",
]


def _require_even(n: int, minimum: int = 0) -> None:
    if n < minimum:
        raise ValueError(f"n must be >= {minimum}")
    if n % 2:
        raise ValueError("n must be even: the half-length sifted key needs an even raw length")


# C(2k, k) for k < len(_CENTRAL), grown on demand.  math.comb recomputes
# each coefficient from scratch, which dominates sweeps over many n.
_CENTRAL = [1]
_CENTRAL_LOCK = threading.Lock()
_CENTRAL_CACHE_MAX_K = 10_000


def _central_binomial(k: int) -> int:
    if k > _CENTRAL_CACHE_MAX_K:
        return math.comb(2 * k, k)
    if k >= len(_CENTRAL):
        with _CENTRAL_LOCK:
            for j in range(len(_CENTRAL), k + 1):
                _CENTRAL.append(_CENTRAL[-1] * 2 * (2 * j - 1) // j)
    return _CENTRAL[k]


def total_sifting_functions(n: int) -> int:
    """C(n, n/2): selections of a half-length sifted key from n raw bits."""
    _require_even(n)
    return _central_binomial(n // 2)


@dataclass(frozen=True)
class SurvivingBound:
    n: int
    exact: Fraction

    @property
    def value(self) -> float:
        return float(self.exact)


def surviving_functions_bound(n: int) -> SurvivingBound:
    """Sifting functions left after matching a known half-length key.

    ``C(n, n/2) / 2**(n/2)``: each wrong selection is assumed to reproduce
    the known key with probability 2**(-n/2).
    """
    _require_even(n, 2)
    return SurvivingBound(n, Fraction(total_sifting_functions(n), 2 ** (n // 2)))


@dataclass(frozen=True)
class GrowthFit:
    """Least-squares fit ``ln k_max(n) ~ alpha * n + intercept``."""

    alpha: float
    intercept: float
    ns: tuple[int, ...]


def fit_growth_rate(ns: Iterable[int]) -> GrowthFit:
    ns = tuple(ns)
    if len(ns) < 2:
        raise ValueError("need at least two values of n")
    logs = [log2_exact(surviving_functions_bound(n).exact) * math.log(2) for n in ns]
    alpha, intercept = np.polyfit(np.asarray(ns, dtype=float), np.asarray(logs), 1)
    return GrowthFit(float(alpha), float(intercept), ns)


def _log2_int(k: int) -> float:
    if k <= 0:
        raise ValueError("log2 of a non-positive number")
    if k & (k - 1) == 0:
        return float(k.bit_length() - 1)
    return math.log2(k)


def log2_exact(x: Union[int, Fraction]) -> float:
    """log2 of an exact positive integer or rational.

    Powers of two, including power-of-two denominators, are handled
    exactly, so ``log2(a / 2**k) == log2(a) - k`` holds bit for bit.
    """
    x = Fraction(x)
    return _log2_int(x.numerator) - _log2_int(x.denominator)


def shannon_entropy(probs: Sequence[float]) -> float:
    """H = -sum p log2 p over the non-zero probabilities."""
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("probabilities must be non-negative and sum to 1")
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def shannon_entropy_uniform(count: int) -> float:
    """Entropy in bits of ``count`` equally likely hypotheses."""
    if count < 1:
        raise ValueError("entropy of an empty hypothesis set is undefined")
    return log2_exact(count)


@dataclass(frozen=True)
class EntropyReport:
    """Entropy of the sifting function before and after an attack.

    ``info_gain_bits`` is taken from the exact ratio of the two hypothesis
    counts, so it carries no rounding from subtracting the two entropies.
    """

    n: int
    apriori_bits: float
    aposteriori_bits: float
    info_gain_bits: float


def info_gain_oracle_eve(n: int) -> EntropyReport:
    """Entropy of the sifting function before and after the plaintext attack.

    Before: all C(n, n/2) functions equally likely.  After: the expected
    number of survivors ``C(n, n/2) / 2**(n/2)``, as if equally likely.
    The gain is n/2 bits.
    """
    _require_even(n, 2)
    total = total_sifting_functions(n)
    survivors = surviving_functions_bound(n).exact
    return EntropyReport(n, log2_exact(total), log2_exact(survivors),
                         log2_exact(Fraction(total) / survivors))


def provenance_prob_exact(l: int, i: int) -> Fraction:
    if l < 1:
        raise ValueError("sifted position l is 1-based")
    if i < l:
        return Fraction(0)
    return Fraction(math.comb(i - 1, l - 1), 2**i)


def provenance_prob(l: int, i: int) -> float:
    """Probability that sifted bit ``l`` came from raw bit ``i`` (both 1-based).

    Zero for ``i < l``: a raw position cannot feed a later sifted slot.
    """
    return float(provenance_prob_exact(l, i))


def most_likely_raw_position(l):
    """A mode of P(i | l): raw position ``2l - 1`` (ties with ``2l - 2``)."""
    l = np.asarray(l)
    if np.any(l < 1):
        raise ValueError("sifted position l is 1-based")
    return 2 * l - 1


@dataclass(frozen=True, eq=False)
class ProvenanceDistribution:
    """Tabulated P(i | l) for ``i = l, l+1, ...`` up to a tail cutoff.

    ``tail_mass`` is the exact mass beyond the last tabulated ``i``.
    """

    l: int
    masses: np.ndarray
    tail_mass: float
    gaussian_center: float
    gaussian_sigma: float

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.l, self.l + len(self.masses))

    @property
    def mode(self) -> int:
        return int(self.support[int(np.argmax(self.masses))])

    @property
    def tabulated_mass(self) -> float:
        return float(math.fsum(self.masses))

    def pmf(self, i) -> np.ndarray:
        i = np.asarray(i)
        out = np.zeros(i.shape, dtype=float)
        inside = (i >= self.l) & (i < self.l + len(self.masses))
        out[inside] = self.masses[i[inside] - self.l]
        return out


def provenance_distribution(l: int, mass_cutoff: float = 1e-12) -> ProvenanceDistribution:
    """Tabulate P(i | l) until the untabulated tail falls below ``mass_cutoff``.

    Mass and tail are tracked with exact integers, so the tail reported
    is the true remaining probability, not a float residue.
    """
    if l < 1:
        raise ValueError("sifted position l is 1-based")
    if not 0 < mass_cutoff <= 1e-6:
        raise ValueError("mass_cutoff must lie in (0, 1e-6]")
    masses = []
    i = l
    coeff = 1            # C(i-1, l-1)
    scaled_sum = 0       # 2**i * sum_{j<=i} P(j | l)
    cutoff = Fraction(mass_cutoff)
    while True:
        scaled_sum = 2 * scaled_sum + coeff
        masses.append(coeff / 2**i)
        # tail = (2**i - scaled_sum) / 2**i, compared against the cutoff in integers
        if (2**i - scaled_sum) * cutoff.denominator < cutoff.numerator * 2**i:
            break
        coeff = coeff * i // (i - l + 1)
        i += 1
    return ProvenanceDistribution(
        l=l,
        masses=np.asarray(masses),
        tail_mass=(2**i - scaled_sum) / 2**i,
        gaussian_center=2.0 * l,
        gaussian_sigma=math.sqrt(2 * l) / 2,
    )


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two aligned mass vectors."""
    size = max(len(p), len(q))
    p = np.pad(np.asarray(p, dtype=float), (0, size - len(p)))
    q = np.pad(np.asarray(q, dtype=float), (0, size - len(q)))
    return 0.5 * float(np.abs(p - q).sum())


@dataclass(frozen=True, eq=False)
class EmpiricalProvenance:
    """Observed raw position of sifted slot ``l`` over ``trials`` simulated siftings.

    ``counts[k]`` counts raw position ``k + 1``.  Trials whose sifted key
    was shorter than ``l`` were redrawn; ``redraws`` records how many.
    """

    l: int
    n: int
    trials: int
    counts: np.ndarray
    redraws: int

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.trials

    @property
    def conditioning_rate(self) -> float:
        """Share of simulated siftings that yielded at least ``l`` bits."""
        return self.trials / (self.trials + self.redraws)

    def tv_distance(self, exact: ProvenanceDistribution) -> float:
        support = np.arange(1, self.n + 1)
        exact_masses = exact.pmf(support)
        beyond = 1.0 - math.fsum(exact_masses)
        return total_variation(np.append(exact_masses, beyond),
                               np.append(self.frequencies, 0.0))


def default_empirical_length(l: int, truncation: float = 1e-6) -> int:
    """Smallest raw length leaving less than ``truncation`` of P(. | l) beyond it."""
    dist = provenance_distribution(l, min(truncation, 1e-6))
    cum = np.cumsum(dist.masses)
    beyond = 1.0 - cum
    last = int(np.flatnonzero(beyond < truncation)[0])
    return max(2 * l, int(dist.support[last]))


def provenance_empirical(l: int, n: Optional[int], trials: int, rng: RngHandle,
                         chunk_elems: int = 4_000_000) -> EmpiricalProvenance:
    """Monte-Carlo estimate of P(i | l).

    Each trial draws independent uniform basis lists of length ``n`` for
    Alice and Bob, sifts, and records the raw position that became sifted
    slot ``l``.
    """
    if l < 1:
        raise ValueError("sifted position l is 1-based")
    n = default_empirical_length(l) if n is None else n
    if n < 2 * l:
        raise ValueError("n must be at least 2l")
    if trials < 1:
        raise ValueError("trials must be positive")
    counts = np.zeros(n, dtype=np.int64)
    collected = redraws = 0
    rows = max(1, chunk_elems // n)
    dtype = np.int16 if n < 2**15 else np.int32
    while collected < trials:
        batch = min(rows, trials - collected)
        alice = rng.bits(batch * n).reshape(batch, n)
        bob = rng.bits(batch * n).reshape(batch, n)
        kept = np.cumsum(alice == bob, axis=1, dtype=dtype)
        ok = kept[:, -1] >= l
        redraws += int(batch - ok.sum())
        pos = np.argmax(kept[ok] >= l, axis=1)
        counts += np.bincount(pos, minlength=n)
        collected += int(ok.sum())
    return EmpiricalProvenance(l, n, trials, counts, redraws)


@dataclass(frozen=True)
class GaussianReport:
    """Exact provenance distribution against its Gaussian approximation.

    The Gaussian is centred at ``2l`` with ``sigma = sqrt(2l) / 2``.
    ``exact_sigma`` is the true standard deviation ``sqrt(2l)``.  The
    ``fixed_index_*`` fields describe the transposed view: for a fixed raw
    position ``i = 2l``, the spread of P(i | l') over sifted positions l',
    which is binomial with standard deviation close to ``sqrt(i) / 2``.
    """

    l: int
    center: float
    sigma: float
    exact_sigma: float
    exact_mode: int
    max_abs_deviation: float
    exact_fwhm_count: int
    gaussian_fwhm: float
    fixed_index_fwhm_count: int
    fixed_index_gaussian_fwhm: float


_FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def _fwhm_count(masses: np.ndarray) -> int:
    return int(np.count_nonzero(masses >= masses.max() / 2))


def gaussian_comparison(l: int) -> GaussianReport:
    if l < 1:
        raise ValueError("sifted position l is 1-based")
    dist = provenance_distribution(l)
    center, sigma = dist.gaussian_center, dist.gaussian_sigma
    i = dist.support.astype(float)
    density = np.exp(-0.5 * ((i - center) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    # over the tabulated support; the untabulated tail is below 1e-12
    deviation = float(np.max(np.abs(dist.masses - density)))

    fixed_i = 2 * l
    over_l = np.array([math.comb(fixed_i - 1, k - 1) for k in range(1, fixed_i + 1)], dtype=float)
    return GaussianReport(
        l=l,
        center=center,
        sigma=sigma,
        exact_sigma=math.sqrt(2 * l),
        exact_mode=dist.mode,
        max_abs_deviation=deviation,
        exact_fwhm_count=_fwhm_count(dist.masses),
        gaussian_fwhm=_FWHM_PER_SIGMA * sigma,
        fixed_index_fwhm_count=_fwhm_count(over_l),
        fixed_index_gaussian_fwhm=_FWHM_PER_SIGMA * math.sqrt(fixed_i) / 2,
    )


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def mutual_information_per_bit(agreement_prob: float) -> float:
    """Bits of information per key bit for a guess agreeing with probability ``agreement_prob``.

    Binary symmetric channel capacity ``1 - h(1 - agreement)``; symmetric
    about 0.5 because a consistently wrong guess is as informative as a
    right one.
    """
    return 1.0 - binary_entropy(1.0 - agreement_prob)
