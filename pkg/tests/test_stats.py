import math
import unittest

import numpy as np
from scipy import stats as sps

from rae import config, stats
from rae.errors import AllTies, ConstantInput, EmptyGroup


def _brute_force_u(a, b):
    return sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a for y in b)


def _brute_force_mid_ranks(values):
    values = list(values)
    return [sum(1 for v in values if v < x) + (sum(1 for v in values if v == x) + 1) / 2.0 for x in values]


class PublishedIdentityTests(unittest.TestCase):
    def test_h4_effect_sizes(self):
        for z, r in ((-10.66, 0.822), (-10.49, 0.809), (-11.13, 0.859)):
            self.assertAlmostEqual(stats.effect_size_r(z, 168), r, delta=0.001)

    def test_kruskal_chi_square_tails(self):
        self.assertLess(stats.chi2_tail(93.15, 9), 0.001)
        self.assertLess(stats.chi2_tail(33.34, 9), 0.001)
        p = stats.chi2_tail(25.10, 9)
        self.assertGreaterEqual(p, 0.0025)
        self.assertLessEqual(p, 0.0035)

    def test_bonferroni_caps_at_one(self):
        self.assertAlmostEqual(stats.bonferroni(0.01, 15), 0.15)
        self.assertEqual(stats.bonferroni(0.2, 15), 1.0)
        np.testing.assert_allclose(stats.bonferroni([0.001, 0.5], 3), [0.003, 1.0])


class KruskalWallisTests(unittest.TestCase):
    def test_matches_scipy_and_brute_force_ranks(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            groups = [rng.integers(1, 6, size=int(rng.integers(2, 9))) for _ in range(int(rng.integers(2, 5)))]
            if len(np.unique(np.concatenate(groups))) < 2:
                continue
            res = stats.kruskal_wallis(groups)
            ref = sps.kruskal(*groups)
            self.assertAlmostEqual(res.statistic, ref.statistic, places=9)
            self.assertAlmostEqual(res.p_value, ref.pvalue, places=9)
            pooled = np.concatenate(groups)
            ranks = _brute_force_mid_ranks(pooled)
            start = 0
            for g, mean_rank in zip(groups, res.mean_ranks):
                self.assertAlmostEqual(mean_rank, float(np.mean(ranks[start:start + g.size])), places=12)
                start += g.size

    def test_all_tied_gives_zero_statistic(self):
        res = stats.kruskal_wallis([[3, 3], [3, 3, 3]])
        self.assertEqual(res.statistic, 0.0)
        self.assertEqual(res.p_value, 1.0)

    def test_empty_group_raises(self):
        with self.assertRaises(EmptyGroup):
            stats.kruskal_wallis([[1, 2], []])
        with self.assertRaises(EmptyGroup):
            stats.kruskal_wallis([[1, 2]])

    def test_df_and_n(self):
        res = stats.kruskal_wallis([[1, 2, 3], [4, 5], [2, 2]])
        self.assertEqual(res.df, 2)
        self.assertEqual(res.n_effective, 7)


class MannWhitneyTests(unittest.TestCase):
    def test_u_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = rng.integers(1, 6, size=int(rng.integers(1, 10)))
            b = rng.integers(1, 6, size=int(rng.integers(1, 10)))
            res = stats.mann_whitney_u(a, b)
            self.assertAlmostEqual(res.statistic, _brute_force_u(a, b), places=9)
            self.assertAlmostEqual(res.statistic + res.extras["u_b"], a.size * b.size, places=9)

    def test_matches_scipy_asymptotic(self):
        a = [1, 2, 2, 3, 4, 4, 5, 5, 5]
        b = [1, 1, 2, 2, 2, 3, 3, 4]
        res = stats.mann_whitney_u(a, b)
        ref = sps.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        self.assertAlmostEqual(res.statistic, ref.statistic)
        self.assertAlmostEqual(res.p_value, ref.pvalue, places=9)

    def test_bonferroni_and_effects(self):
        a = [5, 5, 4, 5, 4, 5, 4, 5]
        b = [1, 2, 1, 2, 3, 1, 2, 2]
        res = stats.mann_whitney_u(a, b, adjust=45)
        self.assertEqual(res.direction, "a>b")
        self.assertEqual(res.cles, 1.0)
        self.assertEqual(res.rank_biserial, 1.0)
        self.assertAlmostEqual(res.p_value, min(res.p_raw * 45, 1.0))
        self.assertAlmostEqual(res.effect_r, abs(res.z) / math.sqrt(16))

    def test_identical_constant_samples(self):
        res = stats.mann_whitney_u([3, 3], [3, 3, 3])
        self.assertEqual(res.z, 0.0)
        self.assertEqual(res.p_value, 1.0)
        self.assertEqual(res.direction, "a=b")

    def test_empty_sample_raises(self):
        with self.assertRaises(EmptyGroup):
            stats.mann_whitney_u([], [1, 2])


class WilcoxonTests(unittest.TestCase):
    def test_zero_differences_dropped(self):
        res = stats.wilcoxon_signed_rank([3, 4, 5, 3, 2], [3, 3, 3, 3, 3], mode="paired")
        self.assertEqual(res.n_effective, 3)
        self.assertEqual(res.n_total, 5)
        self.assertTrue(res.exact)
        self.assertEqual(res.extras["w_plus"] + res.extras["w_minus"], 6.0)

    def test_all_zero_differences(self):
        with self.assertRaises(AllTies):
            stats.wilcoxon_signed_rank([3, 3, 3], [3, 3, 3])

    def test_statistic_is_smaller_rank_sum_and_z_non_positive(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.normal(size=30)
            res = stats.wilcoxon_signed_rank(x, 0.0, mode="one-sample")
            self.assertEqual(res.statistic, min(res.extras["w_plus"], res.extras["w_minus"]))
            self.assertLessEqual(res.z, 0.0)
            self.assertFalse(res.exact)

    def test_exact_matches_scipy(self):
        x = [1.3, -0.4, 2.2, 0.9, 1.7, -1.1, 0.5, 2.9]
        res = stats.wilcoxon_signed_rank(x, 0.0, mode="one-sample")
        ref = sps.wilcoxon(x, method="exact")
        self.assertEqual(res.statistic, ref.statistic)
        self.assertAlmostEqual(res.p_value, ref.pvalue, places=12)

    def test_normal_approximation_close_to_exact(self):
        rng = np.random.default_rng(4)
        for n in range(8, config.EXACT_WILCOXON_MAX_N + 1):
            worst = 0.0
            for _ in range(400):
                d = rng.normal(loc=rng.uniform(-1.0, 1.0), size=n)
                for alternative in stats.ALTERNATIVES:
                    res = stats.wilcoxon_signed_rank(d, 0.0, mode="one-sample", alternative=alternative)
                    worst = max(worst, abs(res.p_exact - res.p_approx))
            self.assertLess(worst, 0.02, msg=f"n'={n}")

    def test_kurtosis_term_tightens_small_samples(self):
        # n' = 8, W = 13: exact two-sided p is 70/128
        d = np.array([-1, -2, -3, -7, 4, 5, 6, 8], dtype=float)
        res = stats.wilcoxon_signed_rank(d, 0.0, mode="one-sample")
        self.assertEqual(res.statistic, 13.0)
        self.assertAlmostEqual(res.p_exact, 70 / 128)
        plain = 2.0 * sps.norm.cdf((13.0 - 18.0 + 0.5) / math.sqrt(51.0))
        self.assertGreater(abs(res.p_exact - plain), 0.015)
        self.assertLess(abs(res.p_exact - res.p_approx), 0.002)

    def test_one_sample_against_midpoint(self):
        ratings = [4, 5, 4, 3, 2, 5, 4, 4, 5, 3, 4, 5, 1, 4]
        res = stats.wilcoxon_signed_rank(ratings, 3, mode="one-sample")
        self.assertEqual(res.test, "wilcoxon_one_sample")
        self.assertEqual(res.n_total, 14)
        self.assertEqual(res.n_effective, 12)
        self.assertAlmostEqual(res.cles, res.extras["w_plus"] / (res.extras["w_plus"] + res.extras["w_minus"]))
        self.assertGreater(res.rank_biserial, 0.0)

    def test_effect_size_bases(self):
        ratings = [4, 5, 4, 3, 3, 5, 4, 4, 5, 3, 4, 5, 2, 4, 3, 5] * 3
        total = stats.wilcoxon_signed_rank(ratings, 3, mode="one-sample")
        nonzero = stats.wilcoxon_signed_rank(ratings, 3, mode="one-sample", r_basis="nonzero")
        self.assertAlmostEqual(total.effect_r, abs(total.z) / math.sqrt(48))
        self.assertAlmostEqual(nonzero.effect_r, abs(total.z) / math.sqrt(total.n_effective))
        self.assertGreater(nonzero.effect_r, total.effect_r)

    def test_one_sided_alternatives(self):
        x = [0.8, 1.2, 0.3, 1.9, -0.2, 1.1, 0.7, 1.5, 0.4, 2.0, 0.9, 1.4, 0.6]
        greater = stats.wilcoxon_signed_rank(x, 0.0, mode="one-sample", alternative="greater")
        less = stats.wilcoxon_signed_rank(x, 0.0, mode="one-sample", alternative="less")
        self.assertLess(greater.p_value, 0.01)
        self.assertGreater(less.p_value, 0.9)

    def test_rejects_bad_arguments(self):
        with self.assertRaises(ValueError):
            stats.wilcoxon_signed_rank([1, 2], [1], mode="paired")
        with self.assertRaises(ValueError):
            stats.wilcoxon_signed_rank([1, 2], 0, mode="one-sample", alternative="bigger")


class SpearmanTests(unittest.TestCase):
    def test_matches_scipy(self):
        x = [1, 2, 2, 3, 5, 4, 4, 5, 1, 3]
        y = [2.0, 2.5, 3.0, 3.0, 4.5, 4.0, 3.5, 5.0, 1.0, 2.0]
        res = stats.spearman(x, y)
        ref = sps.spearmanr(x, y)
        self.assertAlmostEqual(res.statistic, ref.statistic, places=12)
        self.assertAlmostEqual(res.p_value, ref.pvalue, places=9)
        self.assertEqual(res.df, 8)

    def test_perfect_correlation(self):
        res = stats.spearman([1, 2, 3, 4], [10, 20, 30, 40])
        self.assertEqual(res.statistic, 1.0)
        self.assertEqual(res.p_value, 0.0)

    def test_constant_input(self):
        with self.assertRaises(ConstantInput):
            stats.spearman([3, 3, 3, 3], [1, 2, 3, 4])

    def test_too_few_pairs(self):
        with self.assertRaises(ValueError):
            stats.spearman([1, 2], [2, 1])


class BenjaminiHochbergTests(unittest.TestCase):
    def test_fixture_adjusts_to_upper_bound(self):
        adjusted, reject = stats.benjamini_hochberg([0.01, 0.02, 0.03, 0.04, 0.05])
        np.testing.assert_allclose(adjusted, [0.05] * 5)
        self.assertTrue(reject.all())

    def test_input_order_kept_and_monotone(self):
        p = [0.04, 0.001, 0.3, 0.02]
        adjusted, _ = stats.benjamini_hochberg(p)
        np.testing.assert_allclose(adjusted, [0.0533333333, 0.004, 0.3, 0.04], rtol=1e-8)
        order = np.argsort(p)
        self.assertTrue(np.all(np.diff(adjusted[order]) >= 0))

    def test_matches_scipy(self):
        rng = np.random.default_rng(6)
        p = rng.uniform(size=30) ** 3
        adjusted, _ = stats.benjamini_hochberg(p)
        np.testing.assert_allclose(adjusted, sps.false_discovery_control(p, method="bh"))

    def test_empirical_fdr_under_full_null(self):
        rng = np.random.default_rng(20250101)
        false_discoveries = 0
        reps = 500
        for _ in range(reps):
            _, reject = stats.benjamini_hochberg(rng.uniform(size=30), 0.05)
            false_discoveries += int(reject.any())
        self.assertLessEqual(false_discoveries / reps, 0.05 + 0.03)

    def test_rejects_invalid_p(self):
        with self.assertRaises(ValueError):
            stats.benjamini_hochberg([0.1, 1.2])
        adjusted, reject = stats.benjamini_hochberg([])
        self.assertEqual(adjusted.size, 0)
        self.assertEqual(reject.size, 0)


if __name__ == "__main__":
    unittest.main()
