import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qkgrow.analysis import (binary_entropy, default_empirical_length, fit_growth_rate,
                             gaussian_comparison, info_gain_oracle_eve, log2_exact,
                             most_likely_raw_position, mutual_information_per_bit,
                             provenance_distribution, provenance_empirical, provenance_prob,
                             provenance_prob_exact, shannon_entropy, shannon_entropy_uniform,
                             surviving_functions_bound, total_sifting_functions, total_variation)
from qkgrow.keybits import RngHandle


class TestCombinatorics:
    @pytest.mark.parametrize("n, expected", [(0, 1), (2, 2), (4, 6), (68, math.comb(68, 34))])
    def test_total_functions(self, n, expected):
        assert total_sifting_functions(n) == expected

    def test_total_functions_match_math_comb(self):
        for n in list(range(0, 600, 2)) + [20_000, 20_002, 20_004]:
            assert total_sifting_functions(n) == math.comb(n, n // 2)

    def test_odd_n_rejected(self):
        with pytest.raises(ValueError, match="even"):
            total_sifting_functions(5)
        with pytest.raises(ValueError):
            surviving_functions_bound(0)

    @pytest.mark.parametrize("n, expected", [(4, Fraction(3, 2)), (8, Fraction(35, 8)),
                                             (12, Fraction(231, 16))])
    def test_bound_exact(self, n, expected):
        bound = surviving_functions_bound(n)
        assert bound.exact == expected
        assert bound.value == float(expected)

    def test_bound_n12_decimal(self):
        assert surviving_functions_bound(12).value == 14.4375

    def test_bound_monotone_from_four(self):
        values = [surviving_functions_bound(n).exact for n in range(4, 202, 2)]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_growth_rate(self):
        # C(n, n/2) ~ 2**n / sqrt(n), so k_max grows like 2**(n/2): alpha -> ln(2)/2
        fit = fit_growth_rate(range(200, 1001, 50))
        assert abs(fit.alpha - math.log(2) / 2) < 0.005
        with pytest.raises(ValueError):
            fit_growth_rate([10])


class TestEntropy:
    @pytest.mark.parametrize("count, bits", [(1, 0.0), (2, 1.0), (6, 2.584962500721156)])
    def test_uniform(self, count, bits):
        assert shannon_entropy_uniform(count) == bits

    def test_uniform_empty(self):
        with pytest.raises(ValueError):
            shannon_entropy_uniform(0)

    def test_general_entropy_matches_uniform(self):
        assert math.isclose(shannon_entropy([1 / 6] * 6), math.log2(6), rel_tol=1e-15)
        assert shannon_entropy([1.0, 0.0]) == 0.0
        with pytest.raises(ValueError):
            shannon_entropy([0.5, 0.6])

    def test_log2_exact_on_powers_of_two(self):
        assert log2_exact(2**5000) == 5000.0
        assert log2_exact(Fraction(3, 2**40)) == math.log2(3) - 40

    @pytest.mark.parametrize("n, gain", [(2, 1.0), (4, 2.0), (100, 50.0)])
    def test_info_gain_examples(self, n, gain):
        assert info_gain_oracle_eve(n).info_gain_bits == gain

    def test_info_gain_n2_parts(self):
        rep = info_gain_oracle_eve(2)
        assert rep.apriori_bits == 1.0 and rep.aposteriori_bits == 0.0

    def test_info_gain_large_n(self):
        rep = info_gain_oracle_eve(10**4)
        assert rep.info_gain_bits == 5000.0
        assert rep.apriori_bits > 9990


class TestProvenance:
    @pytest.mark.parametrize("l, i, p", [(1, 1, 0.5), (1, 2, 0.25), (2, 2, 0.25), (3, 2, 0.0)])
    def test_examples(self, l, i, p):
        assert provenance_prob(l, i) == p

    def test_exact_matches_negative_binomial(self):
        # P(i | l) is the probability that the l-th success of a fair coin lands on trial i
        for l in (1, 3, 5):
            for i in range(l, 15):
                hits = sum(1 for mask in range(2**i)
                           if mask >> (i - 1) & 1 and bin(mask).count("1") == l)
                assert provenance_prob_exact(l, i) == Fraction(hits, 2**i)

    def test_invalid_l(self):
        with pytest.raises(ValueError):
            provenance_prob(0, 3)

    def test_geometric_at_l1(self):
        dist = provenance_distribution(1)
        expected = 0.5 ** np.arange(1, len(dist.masses) + 1)
        assert np.array_equal(dist.masses, expected)

    @pytest.mark.parametrize("l", [1, 2, 10, 137, 500, 1000])
    def test_normalisation(self, l):
        dist = provenance_distribution(l)
        assert dist.support[0] == l
        assert dist.tail_mass < 1e-12
        assert abs(dist.tabulated_mass + dist.tail_mass - 1.0) < 1e-9

    def test_mode_l50(self):
        assert provenance_distribution(50).mode in (98, 99)

    def test_mode_ties(self):
        # C(i-1, l-1) / 2**i takes equal values at i = 2l-2 and 2l-1
        for l in (2, 9, 40):
            assert provenance_prob_exact(l, 2 * l - 2) == provenance_prob_exact(l, 2 * l - 1)
            assert most_likely_raw_position(l) == 2 * l - 1

    def test_mean_and_variance(self):
        dist = provenance_distribution(30)
        i = dist.support
        mean = float(np.sum(i * dist.masses))
        var = float(np.sum((i - mean) ** 2 * dist.masses))
        assert abs(mean - 60) < 1e-6 and abs(var - 60) < 1e-4

    def test_cutoff_range(self):
        with pytest.raises(ValueError):
            provenance_distribution(5, mass_cutoff=0.1)

    def test_total_variation(self):
        assert total_variation([0.5, 0.5], [0.5, 0.5]) == 0.0
        assert total_variation([1.0], [0.0, 1.0]) == 1.0


class TestEmpirical:
    def test_first_position_frequency(self):
        emp = provenance_empirical(1, 40, 10**6, RngHandle(21, 0))
        assert abs(emp.frequencies[0] - 0.5) <= 0.0015
        assert emp.counts.sum() == 10**6

    def test_mode_with_sampling_slack(self):
        emp = provenance_empirical(20, None, 2 * 10**5, RngHandle(22, 0))
        assert int(np.argmax(emp.counts)) + 1 in (38, 39, 40)
        assert emp.tv_distance(provenance_distribution(20)) < 0.02

    def test_conditioning_reported(self):
        emp = provenance_empirical(10, 20, 10**4, RngHandle(23, 0))
        assert 0 < emp.conditioning_rate < 1
        assert emp.redraws > 0

    def test_default_length_covers_distribution(self):
        n = default_empirical_length(20)
        assert sum(provenance_prob(20, i) for i in range(20, n + 1)) > 1 - 1e-6

    def test_argument_checks(self):
        with pytest.raises(ValueError):
            provenance_empirical(10, 15, 100, RngHandle(1, 0))
        with pytest.raises(ValueError):
            provenance_empirical(1, 10, 0, RngHandle(1, 0))


class TestGaussian:
    def test_report_fields(self):
        rep = gaussian_comparison(50)
        assert rep.center == 100 and rep.sigma == math.sqrt(100) / 2
        assert rep.gaussian_fwhm == pytest.approx(2 * math.sqrt(2 * math.log(2)) * 5)
        assert rep.exact_sigma == pytest.approx(10.0)

    def test_deviation_shrinks(self):
        devs = [gaussian_comparison(l).max_abs_deviation for l in (10, 25, 50, 100)]
        assert all(a > b for a, b in zip(devs, devs[1:]))

    def test_center(self):
        for l in range(10, 101):
            assert abs(gaussian_comparison(l).exact_mode - 2 * l) <= 2

    def test_fixed_index_view_has_half_root_width(self):
        rep = gaussian_comparison(50)
        assert abs(rep.fixed_index_fwhm_count - rep.fixed_index_gaussian_fwhm) <= 2


class TestMutualInformation:
    @pytest.mark.parametrize("p, bits", [(0.5, 0.0), (1.0, 1.0), (0.75, 0.18872187554086717)])
    def test_examples(self, p, bits):
        assert mutual_information_per_bit(p) == pytest.approx(bits, abs=1e-15)

    @given(st.floats(0.0, 1.0))
    def test_symmetric(self, p):
        assert mutual_information_per_bit(p) == pytest.approx(mutual_information_per_bit(1 - p),
                                                              abs=1e-12)

    def test_convex_on_upper_half(self):
        p = np.linspace(0.5, 1.0, 201)
        f = np.array([mutual_information_per_bit(x) for x in p])
        assert np.all(f[:-2] + f[2:] - 2 * f[1:-1] >= -1e-12)

    def test_binary_entropy_range(self):
        assert binary_entropy(0.5) == 1.0
        with pytest.raises(ValueError):
            binary_entropy(1.5)
