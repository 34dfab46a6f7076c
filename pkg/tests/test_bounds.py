import random
from fractions import Fraction

import pytest

from csbuflo.bounds import (
    INFEASIBLE,
    Infeasible,
    SiteSizes,
    brute_force_min_cost,
    is_subsequence,
    lower_bound_bw_ratio,
    min_cost_nonuniform,
    min_cost_uniform,
    scs_01_superseq,
    tradeoff_curve,
)


def sizes(*vals):
    return SiteSizes(tuple(vals))


class TestSiteSizes:
    def test_sorted_on_construction(self):
        assert sizes(8, 1, 4, 2).sizes == (1, 2, 4, 8)

    def test_rejects_empty_and_nonpositive(self):
        with pytest.raises(ValueError):
            SiteSizes(())
        with pytest.raises(ValueError):
            sizes(3, 0)

    def test_duplicates_accepted(self):
        assert sizes(5, 5, 5).sizes == (5, 5, 5)


class TestMinCostNonuniform:
    def test_k2_worked(self):
        cost, part = min_cost_nonuniform(sizes(1, 2, 4, 8), 2)
        assert cost == 20
        assert part.boundaries == ((0, 2), (2, 4))

    def test_k1_is_n_times_max(self):
        cost, _ = min_cost_nonuniform(sizes(1, 2, 4, 8), 1)
        assert cost == 32

    def test_k_equals_n_is_identity(self):
        cost, part = min_cost_nonuniform(sizes(1, 2, 4, 8), 4)
        assert cost == 15
        assert part.nonuniform_security == 1

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            min_cost_nonuniform(sizes(1, 2), 0)
        with pytest.raises(ValueError):
            min_cost_nonuniform(sizes(1, 2), 3)

    def test_non_increasing_in_k(self):
        s = sizes(3, 7, 9, 20, 21, 40)
        costs = [min_cost_nonuniform(s, k)[0] for k in range(1, 7)]
        assert costs == sorted(costs, reverse=True)

    def test_partition_self_consistent(self):
        rng = random.Random(11)
        for _ in range(100):
            vals = [rng.randint(1, 64) for _ in range(rng.randint(1, 9))]
            s = SiteSizes(tuple(vals))
            k = rng.randint(1, len(s))
            cost, part = min_cost_nonuniform(s, k)
            recomputed = sum((e - b) * s.sizes[e - 1]
                             for b, e in part.boundaries)
            assert recomputed == cost == part.cost
            assert part.boundaries[0][0] == 0
            assert part.boundaries[-1][1] == len(s)
            assert all(b2 == e1 for (_, e1), (b2, _) in
                       zip(part.boundaries, part.boundaries[1:]))
            assert part.nonuniform_security == Fraction(len(part.sizes_f), len(s))
            assert part.uniform_security == max(
                Fraction(1, nb) for nb in part.sizes_f.values())


class TestMinCostUniform:
    def test_half_worked(self):
        cost, part = min_cost_uniform(sizes(1, 2, 4, 8), Fraction(1, 2))
        assert cost == 20
        assert all(e - b >= 2 for b, e in part.boundaries)

    def test_eps_one_allows_singletons(self):
        cost, _ = min_cost_uniform(sizes(1, 2, 4, 8), 1)
        assert cost == 15

    def test_infeasible(self):
        result = min_cost_uniform(sizes(1, 2), Fraction(1, 4))
        assert isinstance(result, Infeasible)
        assert result is INFEASIBLE

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            min_cost_uniform(sizes(1, 2), Fraction(3, 2))
        with pytest.raises(ValueError):
            min_cost_uniform(sizes(1, 2), 0)

    def test_non_increasing_in_epsilon(self):
        s = sizes(3, 7, 9, 20, 21, 40)
        costs = []
        for m in range(len(s), 0, -1):  # epsilon = 1/m increasing
            result = min_cost_uniform(s, Fraction(1, m))
            assert not isinstance(result, Infeasible)
            costs.append(result[0])
        assert costs == sorted(costs, reverse=True)


class TestBruteForce:
    def test_worked(self):
        assert brute_force_min_cost(sizes(1, 2, 4, 8), 2) == 20

    def test_single_site(self):
        assert brute_force_min_cost(sizes(5), 1) == 5

    def test_equal_singletons(self):
        assert brute_force_min_cost(sizes(1, 1, 1), 3) == 3

    def test_refuses_large_inputs(self):
        with pytest.raises(ValueError, match="limited"):
            brute_force_min_cost(SiteSizes(tuple(range(1, 18))), 2)

    def test_dp_matches_oracle_randomized(self):
        rng = random.Random(7)
        for _ in range(150):
            n = rng.randint(1, 9)
            s = SiteSizes(tuple(rng.randint(1, 32) for _ in range(n)))
            for k in range(1, n + 1):
                assert min_cost_nonuniform(s, k)[0] == \
                    brute_force_min_cost(s, k)
            for m in range(1, n + 1):
                eps = Fraction(1, m)
                dp = min_cost_uniform(s, eps)
                assert not isinstance(dp, Infeasible)
                assert dp[0] == brute_force_min_cost(s, eps, uniform=True)


class TestMonotoneRearrangement:
    def test_rearrangement_never_costs_more(self):
        # arbitrary partition vs the contiguous one with equal group sizes
        rng = random.Random(13)
        for _ in range(1000):
            n = rng.randint(2, 12)
            vals = sorted(rng.randint(1, 1000) for _ in range(n))
            labels = [rng.randrange(rng.randint(1, n)) for _ in range(n)]
            groups: dict[int, list[int]] = {}
            for idx, g in enumerate(labels):
                groups.setdefault(g, []).append(vals[idx])
            original = sum(max(g) * len(g) for g in groups.values())
            ordered = sorted(groups.values(), key=max)
            cost = 0
            pos = 0
            for g in ordered:
                pos += len(g)
                cost += vals[pos - 1] * len(g)
            assert cost <= original


class TestRatiosAndCurve:
    def test_ratio_worked(self):
        s = sizes(1, 2, 4, 8)
        assert lower_bound_bw_ratio(s, 2) == Fraction(20, 15)
        assert lower_bound_bw_ratio(s, 4) == 1
        assert lower_bound_bw_ratio(sizes(8, 8, 8, 8), 1) == 1

    def test_curve_worked(self):
        curve = tradeoff_curve(sizes(1, 2, 4, 8), [1, 2, 4])
        assert curve == [(Fraction(1, 4), Fraction(32, 15)),
                         (Fraction(1, 2), Fraction(4, 3)),
                         (Fraction(1, 1), Fraction(1))]

    def test_singleton_curve(self):
        assert tradeoff_curve(sizes(9), [1]) == [(Fraction(1), Fraction(1))]

    def test_curve_non_increasing_random(self):
        rng = random.Random(17)
        for _ in range(100):
            n = rng.randint(1, 10)
            s = SiteSizes(tuple(rng.randint(1, 500) for _ in range(n)))
            ratios = [r for _, r in tradeoff_curve(s, range(1, n + 1))]
            assert ratios == sorted(ratios, reverse=True)
            assert ratios[-1] >= 1 or s.sizes.count(s.sizes[0]) == n


class TestScs:
    def test_both_contained(self):
        out = scs_01_superseq(["01", "10"])
        assert out == "0101"
        assert is_subsequence("01", out) and is_subsequence("10", out)

    def test_approximation_gap(self):
        out = scs_01_superseq(["111"])
        assert out == "010101"
        assert is_subsequence("111", out)

    def test_empty_input(self):
        assert scs_01_superseq([]) == ""

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            scs_01_superseq(["01", "2"])

    def test_superseq_property_random(self):
        rng = random.Random(23)
        for _ in range(500):
            strings = ["".join(rng.choice("01")
                               for _ in range(rng.randint(0, 12)))
                       for _ in range(rng.randint(0, 6))]
            out = scs_01_superseq(strings)
            longest = max((len(s) for s in strings), default=0)
            assert len(out) <= 2 * longest
            assert all(is_subsequence(s, out) for s in strings)
