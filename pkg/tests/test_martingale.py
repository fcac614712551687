import math

import numpy as np
import pytest

from lilavg.harmonic import GraphDomain
from lilavg.martingale import (
    DyadicInterval,
    HaarExpansion,
    LiBounds,
    MartingaleTable,
    bloch_to_martingale,
    chain_quadratic,
    conditional_expectation,
    dyadic_table_from_expansion,
    expansion_from_csv,
    expansion_l2_identity,
    expansion_to_csv,
    haar_analyze,
    haar_synthesize,
    haar_value,
    li_bounds_check,
    martingale_lil_statistic,
    quadratic_function,
    quadratic_function_brute,
    superdyadic_table_from_expansion,
    table_from_csv,
    table_to_csv,
    tower_defect,
)
from lilavg.util import trend_free
from lilavg.weights import power_weight, scale_sequence


def psi(t):
    """The mother Haar wavelet on (0, 1]."""
    return haar_value(DyadicInterval(0, 0), t)


class TestDyadicInterval:
    def test_geometry(self):
        iv = DyadicInterval(3, 5)
        assert iv.lo == pytest.approx(0.625) and iv.hi == pytest.approx(0.75)
        assert iv.center == pytest.approx(0.6875)
        assert iv.length == 0.125

    def test_parent_child(self):
        iv = DyadicInterval(4, 9)
        assert iv.parent() == DyadicInterval(3, 4)
        left, right = iv.parent().children()
        assert left == DyadicInterval(4, 8) and right == iv

    def test_from_point_half_open(self):
        assert DyadicInterval.from_point(0.5, 1) == DyadicInterval(1, 0)
        assert DyadicInterval.from_point(0.5 + 1e-12, 1) == DyadicInterval(1, 1)
        assert DyadicInterval.from_point(1.0, 3) == DyadicInterval(3, 7)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            DyadicInterval(2, 4)
        with pytest.raises(ValueError):
            DyadicInterval.from_point(0.0, 2)


class TestHaarAnalyze:
    def test_mother_wavelet_isolated(self):
        e = haar_analyze(psi, 4)
        assert e.mean == pytest.approx(0.0, abs=1e-14)
        assert e.coefficient(DyadicInterval(0, 0)) == pytest.approx(1.0, abs=1e-13)
        others = [b for iv, b in e.coeffs.items() if iv != DyadicInterval(0, 0)]
        assert all(abs(b) < 1e-13 for b in others)

    def test_constant(self):
        e = haar_analyze(lambda t: np.ones_like(np.asarray(t, dtype=float)), 4)
        assert e.mean == pytest.approx(1.0, rel=1e-14)
        assert all(abs(b) < 1e-14 for b in e.coeffs.values())

    def test_identity_function_coefficients(self):
        # brute-force per-interval oracle: b_I = (1/|I|) integral of t psi_I(t)
        e = haar_analyze(lambda t: np.asarray(t, dtype=float), 6)
        assert e.mean == pytest.approx(0.5, abs=1e-14)
        rng = np.random.default_rng(2)
        for _ in range(20):
            rank = rng.integers(0, 7)
            idx = rng.integers(0, 1 << rank)
            iv = DyadicInterval(int(rank), int(idx))
            mid = 0.5 * (iv.lo + iv.hi)
            left = np.linspace(iv.lo, mid, 10001)
            right = np.linspace(mid, iv.hi, 10001)
            oracle = (np.trapezoid(right, right) - np.trapezoid(left, left)) / iv.length
            assert e.coefficient(iv) == pytest.approx(iv.length / 4.0, rel=1e-12)
            assert e.coefficient(iv) == pytest.approx(oracle, rel=1e-6)


class TestHaarSynthesize:
    def test_mother_wavelet_pointwise(self):
        e = haar_analyze(psi, 4)
        assert haar_synthesize(e, 0, 0.75) == pytest.approx(1.0, abs=1e-13)
        assert haar_synthesize(e, 0, 0.25) == pytest.approx(-1.0, abs=1e-13)

    def test_empty_coeffs_give_mean(self):
        e = HaarExpansion(mean=2.5, coeffs={}, max_rank=5)
        assert haar_synthesize(e, 3, 0.3) == 2.5
        assert haar_synthesize(e, -1, 0.3) == 2.5

    def test_identity_function_sup_error(self):
        e = haar_analyze(lambda t: np.asarray(t, dtype=float), 6)
        ts = np.linspace(0.0005, 1.0, 1999)
        worst = max(abs(haar_synthesize(e, 6, t) - t) for t in ts)
        assert worst <= 2.0 ** -7 + 1e-9

    def test_round_trip_exact(self):
        rng = np.random.default_rng(7)
        coeffs = {}
        for rank in range(5):
            for i in range(1 << rank):
                coeffs[DyadicInterval(rank, i)] = float(rng.normal())
        e = HaarExpansion(mean=float(rng.normal()), coeffs=coeffs, max_rank=4)
        resolution = 6
        n = 1 << resolution
        mids = (np.arange(n) + 0.5) / n
        vals = np.array([haar_synthesize(e, 4, t) for t in mids])
        from lilavg.martingale import cell_means_to_expansion
        back = cell_means_to_expansion(vals, resolution - 1)
        assert back.mean == pytest.approx(e.mean, abs=1e-12)
        for iv, b in coeffs.items():
            assert back.coefficient(iv) == pytest.approx(b, abs=1e-12)

    def test_rank_beyond_depth(self):
        e = haar_analyze(psi, 3)
        with pytest.raises(ValueError):
            haar_synthesize(e, 4, 0.5)


class TestParseval:
    def test_identity_function(self):
        e = haar_analyze(lambda t: np.asarray(t, dtype=float), 8)
        for k in (0, 3, 8):
            lhs, rhs = expansion_l2_identity(e, k)
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_random_expansion(self):
        rng = np.random.default_rng(3)
        coeffs = {DyadicInterval(r, i): float(rng.normal())
                  for r in range(6) for i in range(1 << r)}
        e = HaarExpansion(mean=0.7, coeffs=coeffs, max_rank=5)
        lhs, rhs = expansion_l2_identity(e, 5)
        assert lhs == pytest.approx(rhs, abs=1e-10)


class TestMartingaleTable:
    def test_tower_property_dyadic(self):
        e = haar_analyze(lambda t: np.sin(3.0 * np.asarray(t, dtype=float)), 7)
        table = dyadic_table_from_expansion(e, 7)
        for k in range(table.depth - 1):
            assert tower_defect(table, k) < 1e-10

    def test_conditional_expectation_two_level(self):
        table = MartingaleTable(filtration=(0, 1),
                                levels=(np.array([0.0]), np.array([1.0, -1.0])))
        assert conditional_expectation(table, 0, DyadicInterval(0, 0)) == pytest.approx(0.0)

    def test_conditional_expectation_matches_level(self):
        e = haar_analyze(lambda t: np.asarray(t, dtype=float) ** 2, 6)
        table = dyadic_table_from_expansion(e, 6)
        for k in (0, 2, 4):
            r = table.filtration[k]
            for idx in (0, (1 << r) - 1):
                iv = DyadicInterval(r, idx)
                got = conditional_expectation(table, k, iv)
                assert got == pytest.approx(table.value_on(k, iv), abs=1e-10)

    def test_rank_mismatch_rejected(self):
        e = haar_analyze(psi, 3)
        table = dyadic_table_from_expansion(e, 3)
        with pytest.raises(ValueError):
            conditional_expectation(table, 1, DyadicInterval(3, 0))


class TestQuadraticFunction:
    def test_single_coefficient(self):
        e = HaarExpansion(mean=0.0, coeffs={DyadicInterval(0, 0): 1.0}, max_rank=3)
        table = dyadic_table_from_expansion(e, 3)
        for t in (0.1, 0.5, 0.9):
            assert quadratic_function(table, 3, t) == pytest.approx(1.0, abs=1e-12)

    def test_identity_function_closed_form(self):
        # b_I = |I|/4 along the chain: Q_k = 1/4 + sum over m <= k of (2^-m / 4)^2
        e = haar_analyze(lambda t: np.asarray(t, dtype=float), 8)
        table = dyadic_table_from_expansion(e, 8)
        for k in (0, 2, 5, 8):
            want = 0.25 + sum((2.0 ** -m / 4.0) ** 2 for m in range(k + 1))
            for t in (0.3, 0.77):
                assert quadratic_function(table, k, t) == pytest.approx(want, abs=1e-12)
                assert chain_quadratic(e, k, t) == pytest.approx(want, abs=1e-12)

    def test_matches_chain_form(self):
        rng = np.random.default_rng(5)
        coeffs = {DyadicInterval(r, i): float(rng.normal())
                  for r in range(7) for i in range(1 << r)}
        e = HaarExpansion(mean=float(rng.normal()), coeffs=coeffs, max_rank=6)
        table = dyadic_table_from_expansion(e, 6)
        for t in rng.uniform(0.001, 1.0, 10):
            for k in (0, 3, 6):
                assert quadratic_function(table, k, float(t)) == pytest.approx(
                    chain_quadratic(e, k, float(t)), abs=1e-11)

    def test_brute_force_equivalence_all_depths(self):
        rng = np.random.default_rng(11)
        coeffs = {DyadicInterval(r, i): float(rng.normal())
                  for r in range(10) for i in range(1 << r)}
        e = HaarExpansion(mean=0.3, coeffs=coeffs, max_rank=9)
        dyadic = dyadic_table_from_expansion(e, 9)
        thin = superdyadic_table_from_expansion(e, [0, 2, 5, 9])
        for table in (dyadic, thin):
            for t in rng.uniform(0.001, 1.0, 6):
                for k in range(table.depth):
                    assert quadratic_function(table, k, float(t)) == pytest.approx(
                        quadratic_function_brute(table, k, float(t)), abs=1e-11)

    def test_non_decreasing_in_k(self):
        e = haar_analyze(lambda t: np.cos(7 * np.asarray(t, dtype=float)), 8)
        table = dyadic_table_from_expansion(e, 8)
        for t in (0.2, 0.6, 0.95):
            vals = [quadratic_function(table, k, t) for k in range(table.depth)]
            assert all(b >= a - 1e-14 for a, b in zip(vals, vals[1:]))

    def test_superdyadic_thinning_agrees_with_brute_force(self):
        e = haar_analyze(lambda t: np.asarray(t, dtype=float), 9)
        thin = superdyadic_table_from_expansion(e, [0, 3, 7, 9])
        for t in (0.15, 0.5, 0.99):
            for k in range(thin.depth):
                assert quadratic_function(thin, k, t) == pytest.approx(
                    quadratic_function_brute(thin, k, t), abs=1e-12)


class TestBlochToMartingale:
    def _scales(self, K=6):
        return scale_sequence(power_weight(0.5), K)

    def test_linear_evaluator_is_exact(self):
        # H(x, y) = x samples interval centers; averages of child centers
        # telescope to the parent center
        table = bloch_to_martingale(lambda x, y: x, GraphDomain.flat(), self._scales())
        assert table.mode == "surrogate"
        assert all(d < 1e-12 for d in table.defects)

    def test_constant_evaluator(self):
        table = bloch_to_martingale(lambda x, y: 4.2, GraphDomain.flat(), self._scales())
        assert all(d == 0.0 for d in table.defects)
        assert all(np.allclose(lv, 4.2) for lv in table.levels)

    def test_offset_uses_A(self):
        seen = []

        def H(x, y):
            seen.append(y)
            return 0.0

        bloch_to_martingale(H, GraphDomain.flat(), self._scales(3), A=2.0)
        # alpha = (0, 2, 4, 6) for pow:0.5, so offsets are 2 * 2^-alpha
        assert max(seen) == pytest.approx(2.0)
        assert min(seen) == pytest.approx(2.0 * 2.0 ** -6)

    def test_defect_scales_linearly(self):
        rng = np.random.default_rng(9)
        wob = lambda x, y: math.sin(5.0 * x) + y * math.cos(3.0 * x)
        t1 = bloch_to_martingale(wob, GraphDomain.flat(), self._scales())
        t3 = bloch_to_martingale(lambda x, y: 3.0 * wob(x, y), GraphDomain.flat(), self._scales())
        for d1, d3 in zip(t1.defects, t3.defects):
            assert d3 == pytest.approx(3.0 * d1, rel=1e-12, abs=1e-15)

    def test_K_truncation(self):
        table = bloch_to_martingale(lambda x, y: x, GraphDomain.flat(), self._scales(6), K=4)
        assert table.depth == 4
        with pytest.raises(ValueError):
            bloch_to_martingale(lambda x, y: x, GraphDomain.flat(), self._scales(3), K=9)


class TestLiBounds:
    def test_constant_field_algebra(self):
        # table samples c everywhere, I(x, s_k) = c (1 - 2^-k)
        c = 2.0
        scales = scale_sequence(power_weight(0.5), 6)
        table = bloch_to_martingale(lambda x, y: c, GraphDomain.flat(), scales)
        xs = [(i + 0.5) / 16 for i in range(16)]
        I_vals = np.array([[c * (1.0 - 2.0 ** -k)] * len(xs) for k in range(table.depth)])
        res = li_bounds_check(table, I_vals, xs)
        for k in range(table.depth):
            assert res.per_level_approx[k] == pytest.approx(c * 2.0 ** -k, abs=1e-12)
        assert res.step_sup == 0.0

    def test_grid_mismatch(self):
        scales = scale_sequence(power_weight(0.5), 4)
        table = bloch_to_martingale(lambda x, y: x, GraphDomain.flat(), scales)
        with pytest.raises(ValueError):
            li_bounds_check(table, np.zeros((3, 4)), [0.1, 0.2, 0.3, 0.4])

    def test_growing_control_is_flagged(self):
        # per-level sups growing linearly must fail the trend check
        sups = [0.1 * (k + 1) for k in range(10)]
        assert not trend_free(sups, slack=1.2)
        assert trend_free([0.5, 0.45, 0.55, 0.5, 0.52], slack=1.2)


class TestLilStatistic:
    def test_constant_table(self):
        e = HaarExpansion(mean=3.0, coeffs={}, max_rank=6)
        table = dyadic_table_from_expansion(e, 6)
        stats, sup = martingale_lil_statistic(table, [0.2, 0.8])
        want = 3.0 / math.sqrt(3.0 * math.log(math.log(3.0)))
        assert sup == pytest.approx(want, rel=1e-12)

    def test_needs_four_levels(self):
        e = HaarExpansion(mean=0.0, coeffs={}, max_rank=2)
        table = dyadic_table_from_expansion(e, 2)
        with pytest.raises(ValueError):
            martingale_lil_statistic(table, [0.5])

    def test_coin_flip_sanity_band(self):
        # +-1 coin-flip dyadic martingale, depth 20, 10^4 points
        rng = np.random.default_rng(12345)
        depth = 20
        levels = [np.array([0.0])]
        vals = np.array([0.0])
        for rank in range(depth):
            signs = rng.choice([-1.0, 1.0], size=1 << rank)
            layer = np.empty(1 << (rank + 1))
            layer[0::2] = -signs
            layer[1::2] = signs
            vals = np.repeat(vals, 2) + layer
            levels.append(vals.copy())
        table = MartingaleTable(filtration=tuple(range(depth + 1)),
                                levels=tuple(levels))
        ts = (np.arange(10000) + 0.5) / 10000
        stats, sup = martingale_lil_statistic(table, ts)
        assert 0.2 <= float(np.median(stats)) <= 3.0
        assert sup < 10.0

    def test_bounded_energy_trend(self):
        # quadratic function ~ m implies a flat statistic tail
        rng = np.random.default_rng(77)
        depth = 24
        levels = [np.array([0.0])]
        vals = np.array([0.0])
        for rank in range(depth):
            signs = rng.choice([-1.0, 1.0], size=1 << min(rank, 12))
            if rank >= 12:
                signs = np.repeat(signs, 1 << (rank - 12))
            layer = np.empty(1 << (rank + 1))
            layer[0::2] = -signs
            layer[1::2] = signs
            vals = np.repeat(vals, 2) + layer
            levels.append(vals.copy())
        table = MartingaleTable(filtration=tuple(range(depth + 1)), levels=tuple(levels))
        ts = (np.arange(512) + 0.5) / 512
        per_level = []
        for m in range(3, depth + 1):
            norm = math.sqrt(m * math.log(math.log(m)))
            per_level.append(max(abs(table.value(m, float(t))) / norm for t in ts))
        tail = per_level[len(per_level) // 2:]
        assert trend_free(tail, slack=1.3)


class TestSerialization:
    def test_table_round_trip_bit_exact(self):
        e = haar_analyze(lambda t: np.sin(2.0 * np.asarray(t, dtype=float)), 6)
        table = dyadic_table_from_expansion(e, 6)
        text = table_to_csv(table)
        back = table_from_csv(text)
        assert back.filtration == table.filtration
        for a, b in zip(back.levels, table.levels):
            assert np.array_equal(a, b)
        assert table_to_csv(back) == text

    def test_expansion_round_trip_bit_exact(self):
        e = haar_analyze(lambda t: np.exp(np.asarray(t, dtype=float)), 5)
        text = expansion_to_csv(e)
        back = expansion_from_csv(text)
        assert back.mean == e.mean and back.max_rank == e.max_rank
        assert back.coeffs == {iv: b for iv, b in e.coeffs.items()}
        assert expansion_to_csv(back) == text

    def test_surrogate_defects_recomputed(self):
        scales = scale_sequence(power_weight(0.5), 4)
        table = bloch_to_martingale(lambda x, y: math.sin(x), GraphDomain.flat(), scales)
        back = table_from_csv(table_to_csv(table))
        assert back.mode == "surrogate"
        assert back.defects == pytest.approx(table.defects, rel=1e-12)

    def test_bad_header(self):
        with pytest.raises(ValueError):
            table_from_csv("rank,index,value\n0,0,1.0\n")
