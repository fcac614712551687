import math

import numpy as np
import pytest

from conftest import constant_boundary, lip_corpus, linear_boundary
from lilavg.averages import (
    RATIO_GUARD,
    approximation_error_scan,
    averaged_field,
    bloch_approximant_H,
    field_on_heights,
    lil_normalizer,
    lil_ratio_profile,
    theta_epsilon,
    theta_identity_residual,
    weighted_average_I,
)
from lilavg.errors import ToleranceError
from lilavg.harmonic import GraphDomain, bloch_seminorm, constant_field, growth_norm, strip_points, synthetic_field
from lilavg.util import running_median_trend_ok
from lilavg.weights import logpow_weight, power_weight, scale_sequence, w0_weight

FLAT = GraphDomain.flat()


class TestWeightedAverageI:
    @pytest.mark.parametrize("w", [w0_weight(), power_weight(0.5)])
    def test_constant_field(self, w):
        c = 2.5
        delta = 2.0 ** -6
        got = weighted_average_I(constant_field(c), FLAT, w, 0.0, delta)
        assert got == pytest.approx(c * (1.0 - 1.0 / w(delta)), rel=1e-9)

    def test_weight_profile_closed_form(self):
        w = power_weight(0.5)
        u = synthetic_field(lambda x, y: w(np.maximum(y, 1e-300)))
        delta = 2.0 ** -8
        got = weighted_average_I(u, FLAT, w, 0.0, delta)
        assert got == pytest.approx(math.log(w(delta)), rel=1e-7)

    def test_delta_range(self):
        with pytest.raises(ValueError):
            weighted_average_I(constant_field(1.0), FLAT, w0_weight(), 0.0, 0.0)
        with pytest.raises(ValueError):
            weighted_average_I(constant_field(1.0), FLAT, w0_weight(), 0.0, 1.5)

    def test_refinement_oracle(self, lacunary_w0):
        # a fixed 10x-finer midpoint partition as an independent value
        w = w0_weight()
        x, delta = 0.37, 2.0 ** -8
        got = weighted_average_I(lacunary_w0, FLAT, w, x, delta, tol=1e-9)
        n = 2 ** 19  # ~10x the adaptive engine's per-octave resolution
        edges = np.linspace(delta, 1.0, n + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        inc = np.diff(w.measure_cdf(edges))
        oracle = float(np.dot(field_on_heights(lacunary_w0, x, mids), inc))
        assert got == pytest.approx(oracle, abs=1e-6)

    @pytest.mark.parametrize("w", [w0_weight(), power_weight(0.5)])
    def test_additivity_in_delta(self, lacunary_w0, w):
        x = 0.21
        d1, d2 = 2.0 ** -4, 2.0 ** -9
        whole = weighted_average_I(lacunary_w0, FLAT, w, x, d2)
        upper = weighted_average_I(lacunary_w0, FLAT, w, x, d1)
        from lilavg.averages import _segment_average
        seg = _segment_average(lacunary_w0, x, 0.0, w, d2, d1, 1e-9)
        assert whole == pytest.approx(upper + seg, abs=5e-9)

    def test_step_bound_via_scales(self, lacunary_pow):
        # one doubling step of the average moves by at most 2 * growth_norm
        w = power_weight(0.5)
        seq = scale_sequence(w, 10)
        x = 0.62
        pts = strip_points(FLAT, np.linspace(0, 2 * math.pi, 256, endpoint=False),
                           np.logspace(-22, 1, 47, base=2.0))
        gn = growth_norm(lacunary_pow, FLAT, w, pts)
        vals = [weighted_average_I(lacunary_pow, FLAT, w, x, s) for s in seq.s[1:]]
        for a, b in zip(vals, vals[1:]):
            assert abs(b - a) <= 2.0 * gn * (1.0 + 1e-6)


class TestBlochApproximantH:
    @pytest.mark.parametrize("w", [w0_weight(), power_weight(0.5)])
    def test_constant_field_full_mass(self, w):
        got = bloch_approximant_H(constant_field(4.0), FLAT, w, 0.0, 0.5)
        assert got == pytest.approx(4.0, rel=1e-9)

    def test_weight_profile_diverges(self):
        w = power_weight(0.5)
        u = synthetic_field(lambda x, y: w(np.maximum(y, 1e-300)))
        with pytest.raises(ToleranceError):
            bloch_approximant_H(u, FLAT, w, 0.0, 0.0)

    def test_close_to_I_on_grid(self, lacunary_w0):
        w = w0_weight()
        for th in [0.5, 2.0 ** -3, 2.0 ** -6, 2.0 ** -9]:
            h = bloch_approximant_H(lacunary_w0, FLAT, w, 0.3, th)
            i = weighted_average_I(lacunary_w0, FLAT, w, 0.3, th)
            assert abs(h - i) < 10.0

    def test_log_lipschitz_along_vertical(self, lacunary_w0):
        w = w0_weight()
        H = averaged_field(lacunary_w0, w, n_cells=1024)
        x = 0.41
        ts = np.logspace(-8, 0, 17, base=2.0)
        semi = max(t * math.hypot(*H.grad(x, t)) for t in ts)
        hvals = [H.eval(x, t) for t in ts]
        for i in range(len(ts)):
            for j in range(i + 1, len(ts)):
                lhs = abs(hvals[i] - hvals[j])
                assert lhs <= semi * abs(math.log(ts[i] / ts[j])) * 1.05 + 1e-9

    def test_averaged_field_matches_pointwise_H(self, lacunary_pow):
        w = power_weight(0.5)
        H = averaged_field(lacunary_pow, w, n_cells=4096)
        x, t = 0.2, 0.125
        direct = bloch_approximant_H(lacunary_pow, FLAT, w, x, t, tol=1e-9)
        assert H.eval(x, t) == pytest.approx(direct, abs=2e-4)


class TestApproximationErrorScan:
    def test_zero_field(self):
        sup, per = approximation_error_scan(constant_field(0.0), FLAT, w0_weight(),
                                            [0.0, 0.5], [0.5, 0.25])
        assert sup == 0.0 and all(v == 0.0 for v in per)

    def test_constant_field_algebra(self):
        # H - I = c / w(theta) exactly
        w = power_weight(0.5)
        c = 3.0
        thetas = [0.5, 0.25, 0.125]
        sup, per = approximation_error_scan(constant_field(c), FLAT, w, [0.0], thetas)
        for th, got in zip(thetas, per):
            assert got == pytest.approx(c / w(th), rel=1e-7)
        assert sup == pytest.approx(max(per))

    def test_lacunary_trend_free(self, lacunary_w0):
        w = w0_weight()
        thetas = [2.0 ** -k for k in range(1, 11)]
        sup, per = approximation_error_scan(lacunary_w0, FLAT, w,
                                            np.linspace(0.1, 0.9, 5), thetas, tol=1e-8)
        assert math.isfinite(sup)
        assert running_median_trend_ok(per, slack=1.2)


class TestThetaEpsilon:
    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
    @pytest.mark.parametrize("eps", [2.0 ** -4, 2.0 ** -8])
    def test_linear_closed_form(self, alpha, eps):
        f = linear_boundary(alpha)
        got = theta_epsilon(f, alpha, eps, 0.0)
        want = 2.0 * (1.0 - eps ** (1.0 - alpha)) / (1.0 - alpha)
        assert got == pytest.approx(want, rel=1e-9)

    def test_constant_data(self):
        f = constant_boundary(5.0, alpha=0.5)
        assert theta_epsilon(f, 0.5, 0.01, 0.3) == pytest.approx(0.0, abs=1e-10)

    def test_odd_cusp_at_origin(self):
        from conftest import cusp_boundary
        f = cusp_boundary(0.5)
        assert theta_epsilon(f, 0.5, 0.01, 0.0) == pytest.approx(0.0, abs=1e-10)

    def test_eps_bounds(self):
        f = linear_boundary(0.5)
        with pytest.raises(ValueError):
            theta_epsilon(f, 0.5, 0.6, 0.0)
        with pytest.raises(ValueError):
            theta_epsilon(f, 0.5, 0.0, 0.0)


class TestThetaIdentity:
    def test_linear_data_tight(self):
        f = linear_boundary(0.5)
        assert abs(theta_identity_residual(f, 0.5, 2.0 ** -6, 0.0)) < 1e-8

    def test_constant_data_exact(self):
        f = constant_boundary(2.0, alpha=0.5)
        assert theta_identity_residual(f, 0.5, 2.0 ** -5, 0.1) == pytest.approx(0.0, abs=1e-10)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
    def test_corpus_residuals(self, alpha):
        # the acceptance suite sweeps the full eps ladder; spot-check here
        for f in lip_corpus(alpha):
            for eps in [2.0 ** -4, 2.0 ** -9]:
                for x in [-0.7, 0.4]:
                    res = theta_identity_residual(f, alpha, eps, x, tol=1e-9)
                    assert abs(res) < 1e-6


class TestLilRatioProfile:
    def test_constant_field_ratio_decays(self):
        w = power_weight(0.5)
        deltas = [2.0 ** -k for k in range(1, 40, 2)]
        prof = lil_ratio_profile(constant_field(2.0), FLAT, w, 0.0, deltas)
        valid = [abs(r) for r, ok in zip(prof.ratios, prof.ratio_valid) if ok]
        assert len(valid) >= 5
        assert valid[-1] < valid[0]
        assert valid[-1] < 0.6

    def test_guard_boundary_recorded(self):
        w = power_weight(0.5)
        deltas = [0.5, 2.0 ** -4, 2.0 ** -12]
        prof = lil_ratio_profile(constant_field(1.0), FLAT, w, 0.0, deltas)
        # w(0.5) = sqrt(2) < e^e, w(2^-4) = 4 < e^e, w(2^-12) = 64 > e^e
        assert list(prof.ratio_valid) == [False, False, True]
        assert math.isnan(prof.ratios[0]) and math.isfinite(prof.ratios[2])

    def test_w0_guard_is_empty_at_float_scale(self):
        # w0 stays below e^e for every representable delta
        w = w0_weight()
        deltas = [2.0 ** -k for k in (1, 100, 1000, 1070)]
        prof = lil_ratio_profile(constant_field(1.0), FLAT, w, 0.0, deltas)
        assert not any(prof.ratio_valid)
        assert prof.max_valid_ratio() == 0.0

    def test_weight_profile_ratio_grows(self):
        # the non-member u = w(y) has I = log w(delta): ratio grows without bound
        w = power_weight(0.5)
        u = synthetic_field(lambda x, y: w(np.maximum(y, 1e-300)))
        deltas = [2.0 ** -k for k in range(16, 201, 16)]
        prof = lil_ratio_profile(u, FLAT, w, 0.0, deltas, tol=1e-6)
        valid = [abs(r) for r, ok in zip(prof.ratios, prof.ratio_valid) if ok]
        assert valid == sorted(valid)
        want = math.sqrt(math.log(w(deltas[-1])) / math.log(math.log(math.log(w(deltas[-1])))))
        assert valid[-1] == pytest.approx(want, rel=1e-5)

    def test_values_match_direct_integrals(self, lacunary_pow):
        w = power_weight(0.5)
        deltas = [2.0 ** -2, 2.0 ** -5, 2.0 ** -9]
        prof = lil_ratio_profile(lacunary_pow, FLAT, w, 0.3, deltas)
        for d, v in zip(deltas, prof.values):
            direct = weighted_average_I(lacunary_pow, FLAT, w, 0.3, d)
            assert v == pytest.approx(direct, abs=5e-8)

    def test_csv_roundtrip_shape(self):
        w = power_weight(0.5)
        prof = lil_ratio_profile(constant_field(1.0), FLAT, w, 0.0, [0.5, 0.25, 2.0 ** -12])
        text = prof.to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "delta,value,ratio,ratio_valid"
        assert len(lines) == 4

    def test_monotone_deltas_required(self):
        with pytest.raises(ValueError):
            lil_ratio_profile(constant_field(1.0), FLAT, w0_weight(), 0.0, [0.25, 0.5])


def test_normalizer_positive_beyond_guard():
    vals = [lil_normalizer(RATIO_GUARD * (1.0 + 10.0 ** -k)) for k in (1, 3, 6)]
    assert all(v > 0.0 for v in vals)
    assert vals[0] > vals[1] > vals[2]
