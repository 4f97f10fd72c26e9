import math
import warnings

import numpy as np
import pytest
from scipy.stats import ks_2samp

from shdp.rng import RngStream
from shdp.samplers import (
    DegenerateIntervalWarning,
    ParticleCollapseError,
    TruncatedBetaParams,
    multinomial_resample,
    sample_beta,
    sample_gamma,
    slice_sample_truncated_beta,
    systematic_resample,
)

from conftest import make_rng


class TestRngStream:
    def test_same_stream_bit_identical(self):
        a = RngStream(7, 3).generator().uniform(size=100)
        b = RngStream(7, 3).generator().uniform(size=100)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(7, 0).generator().uniform(size=100)
        b = RngStream(7, 1).generator().uniform(size=100)
        assert not np.allclose(a, b)

    def test_seed_validation(self):
        with pytest.raises(ValueError):
            RngStream(-1)
        with pytest.raises(ValueError):
            RngStream(0, 2**64)


class TestSampleBeta:
    def test_uniform_case_mean(self, rng):
        draws = np.array([sample_beta(1.0, 1.0, rng) for _ in range(10_000)])
        se = math.sqrt(1.0 / 12.0 / len(draws))
        assert abs(draws.mean() - 0.5) < 3 * se

    def test_skewed_mean_matches_closed_form(self, rng):
        # Beta(1, 5): mean 1/6, variance ab/((a+b)^2 (a+b+1))
        draws = np.array([sample_beta(1.0, 5.0, rng) for _ in range(10_000)])
        var = 5.0 / (36.0 * 7.0)
        se = math.sqrt(var / len(draws))
        assert abs(draws.mean() - 1.0 / 6.0) < 3 * se

    def test_open_interval(self, rng):
        draws = [sample_beta(0.01, 0.01, rng) for _ in range(1000)]
        assert all(0.0 < x < 1.0 for x in draws)

    @pytest.mark.parametrize("a,b", [(0.0, 1.0), (1.0, 0.0), (-2.0, 3.0)])
    def test_parameter_errors(self, rng, a, b):
        with pytest.raises(ValueError):
            sample_beta(a, b, rng)


class TestSampleGamma:
    def test_small_shape_mean(self, rng):
        draws = np.array([sample_gamma(0.03, 1.0, rng) for _ in range(100_000)])
        se = math.sqrt(0.03 / len(draws))  # var = shape / rate^2
        assert abs(draws.mean() - 0.03) < 3 * se

    def test_exponential_variance(self, rng):
        draws = np.array([sample_gamma(1.0, 1.0, rng) for _ in range(100_000)])
        assert abs(draws.var() - 1.0) < 0.05

    def test_rate_parameterization(self, rng):
        draws = np.array([sample_gamma(5.0, 2.0, rng) for _ in range(50_000)])
        se = math.sqrt(5.0 / 4.0 / len(draws))
        assert abs(draws.mean() - 2.5) < 3 * se

    def test_parameter_errors(self, rng):
        with pytest.raises(ValueError):
            sample_gamma(0.0, 1.0, rng)
        with pytest.raises(ValueError):
            sample_gamma(1.0, -1.0, rng)


class TestSystematicResample:
    def test_uniform_weights_balanced(self, rng):
        lw = np.zeros(4)
        hits = np.zeros(4)
        trials = 10_000
        for _ in range(trials):
            hits += np.bincount(systematic_resample(lw, rng), minlength=4)
        freq = hits / (4 * trials)
        assert np.all(np.abs(freq - 0.25) < 0.01)

    def test_degenerate_mass(self, rng):
        idx = systematic_resample(np.array([0.0, -np.inf, -np.inf]), rng)
        assert idx.tolist() == [0, 0, 0]

    def test_two_point_frequency(self, rng):
        lw = np.log(np.array([0.7, 0.3]))
        hits = 0
        trials = 10_000
        for _ in range(trials):
            hits += np.sum(systematic_resample(lw, rng) == 0)
        freq = hits / (2 * trials)
        assert abs(freq - 0.7) < 0.01

    def test_all_minus_inf_collapses(self, rng):
        with pytest.raises(ParticleCollapseError):
            systematic_resample(np.full(3, -np.inf), rng)

    def test_output_length(self, rng):
        lw = rng.normal(size=17)
        assert len(systematic_resample(lw, rng)) == 17

    def test_lower_variance_than_multinomial(self, rng):
        # multiplicity variance of index 0 under both schemes, same weights
        lw = np.log(np.array([0.5, 0.2, 0.2, 0.1]))
        sys_counts, mult_counts = [], []
        for _ in range(4000):
            sys_counts.append(np.sum(systematic_resample(lw, rng) == 0))
            mult_counts.append(np.sum(multinomial_resample(lw, rng) == 0))
        assert np.var(sys_counts) <= np.var(mult_counts)


def rejection_truncated_beta(a, b, lo, hi, n, rng):
    out = []
    while len(out) < n:
        block = rng.beta(a, b, size=max(4 * n, 1000))
        block = block[(block > lo) & (block < hi)]
        out.extend(block.tolist())
    return np.asarray(out[:n])


class TestSliceTruncatedBeta:
    def test_uniform_on_interval_mean(self, rng):
        params = TruncatedBetaParams(1.0, 1.0, 0.2, 0.5)
        draws = np.array(
            [slice_sample_truncated_beta(params, 0.35, 20, rng) for _ in range(10_000)]
        )
        se = (0.5 - 0.2) / math.sqrt(12 * len(draws))
        assert abs(draws.mean() - 0.35) < 3 * se

    def test_untruncated_matches_direct_beta(self, rng):
        params = TruncatedBetaParams(2.0, 3.0, 0.0, 1.0)
        draws = np.array(
            [slice_sample_truncated_beta(params, 0.5, 20, rng) for _ in range(4000)]
        )
        direct = rng.beta(2.0, 3.0, size=4000)
        assert ks_2samp(draws, direct).pvalue > 0.01

    def test_truncated_matches_rejection_oracle(self, rng):
        params = TruncatedBetaParams(2.0, 3.0, 0.1, 0.4)
        draws = np.array(
            [slice_sample_truncated_beta(params, 0.25, 20, rng) for _ in range(4000)]
        )
        ref = rejection_truncated_beta(2.0, 3.0, 0.1, 0.4, 4000, rng)
        assert ks_2samp(draws, ref).pvalue > 0.01

    def test_bounds_respected(self, rng):
        params = TruncatedBetaParams(0.3, 0.3, 0.3, 0.9)
        draws = [slice_sample_truncated_beta(params, 0.6, 20, rng) for _ in range(500)]
        assert all(0.3 < x < 0.9 for x in draws)

    def test_x0_outside_bounds_rejected(self, rng):
        params = TruncatedBetaParams(2.0, 3.0, 0.1, 0.4)
        with pytest.raises(ValueError):
            slice_sample_truncated_beta(params, 0.5, 20, rng)

    def test_degenerate_interval_returns_midpoint(self, rng):
        params = TruncatedBetaParams(2.0, 3.0, 0.3, 0.3 + 1e-15)
        with pytest.warns(DegenerateIntervalWarning):
            x = slice_sample_truncated_beta(params, 0.3 + 5e-16, 20, rng)
        assert x == pytest.approx(0.3, abs=1e-12)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            TruncatedBetaParams(0.0, 1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            TruncatedBetaParams(1.0, 1.0, 0.6, 0.4)

    def test_reproducible(self):
        params = TruncatedBetaParams(2.0, 0.7, 0.1, 0.8)
        a = slice_sample_truncated_beta(params, 0.5, 20, make_rng(5))
        b = slice_sample_truncated_beta(params, 0.5, 20, make_rng(5))
        assert a == b
