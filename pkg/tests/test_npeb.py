"""Nonparametric mixing-distribution fit and expected false rejections."""

import numpy as np
import pytest
from scipy import stats

from spatialmt import (MixingDistribution, expected_false_rejections,
                       fit_gmle, marginal_density)

from oracles import bvn_quad, npmle_loglik, npmle_slsqp


def two_spike_sample(n=400, seed=0):
    rng = np.random.default_rng(seed)
    means = np.where(rng.random(n) < 0.5, -2.0, 2.0)
    return means + rng.standard_normal(n)


class TestMixingDistribution:
    def test_validates_support_order(self):
        with pytest.raises(ValueError):
            MixingDistribution(np.array([1.0, 0.0]), np.array([0.5, 0.5]))

    def test_validates_weight_sum(self):
        with pytest.raises(ValueError):
            MixingDistribution(np.array([0.0, 1.0]), np.array([0.6, 0.6]))

    def test_validates_nonnegative(self):
        with pytest.raises(ValueError):
            MixingDistribution(np.array([0.0, 1.0]),
                               np.array([1.5, -0.5]))

    def test_csv_round_trip(self, tmp_path):
        g = MixingDistribution(np.array([-1.0, 2.0]), np.array([0.3, 0.7]))
        path = tmp_path / "mix.csv"
        g.to_csv(path)
        back = MixingDistribution.from_csv(path)
        assert np.array_equal(back.support, g.support)
        assert np.array_equal(back.weights, g.weights)


class TestFitGmle:
    def test_loglik_monotone(self):
        g = fit_gmle(two_spike_sample(), grid_size=100)
        traj = np.array(g.em_loglik)
        assert traj.size >= 2
        assert np.all(np.diff(traj) >= -1e-9)

    def test_weights_form_distribution(self):
        g = fit_gmle(two_spike_sample(), grid_size=100)
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(g.weights > 0.0)
        assert np.all(np.diff(g.support) > 0.0)

    def test_support_spans_sample_range(self):
        x = two_spike_sample()
        g = fit_gmle(x, grid_size=100)
        assert g.support.min() >= x.min() - 1e-12
        assert g.support.max() <= x.max() + 1e-12

    def test_matches_direct_constrained_optimizer(self):
        # same grid, independent optimizer: EM must reach at least the
        # SLSQP log-likelihood up to a small slack
        x = two_spike_sample(n=150, seed=3)
        grid_size = 60
        g = fit_gmle(x, grid_size=grid_size)
        grid = np.linspace(x.min(), x.max(), grid_size)
        w_ref = npmle_slsqp(x, grid)
        ll_em = npmle_loglik(x, g.support, g.weights)
        ll_ref = npmle_loglik(x, grid, w_ref)
        assert ll_em >= ll_ref - 1e-4 * abs(ll_ref)

    def test_concentrates_near_true_atoms(self):
        g = fit_gmle(two_spike_sample(n=1000, seed=7), grid_size=200)
        near = np.abs(g.support[:, None] - np.array([[-2.0, 2.0]]))
        mass_near = g.weights[(near < 0.7).any(axis=1)].sum()
        assert mass_near > 0.8

    def test_identical_samples_collapse_to_point_mass(self):
        g = fit_gmle(np.full(25, 1.3))
        assert g.support.tolist() == [1.3]
        assert g.weights.tolist() == [1.0]

    def test_input_validation(self):
        with pytest.raises(ValueError, match="nonempty"):
            fit_gmle(np.array([]))
        with pytest.raises(ValueError):
            fit_gmle(np.arange(5.0))                 # too few
        with pytest.raises(ValueError):
            fit_gmle(np.r_[np.arange(20.0), np.nan])
        with pytest.raises(ValueError):
            fit_gmle(two_spike_sample(), grid_size=10)
        with pytest.raises(ValueError):
            fit_gmle(two_spike_sample(), tol=0.0)


class TestMarginalDensity:
    def test_single_atom_is_shifted_normal(self):
        g = MixingDistribution(np.array([1.5]), np.array([1.0]))
        x = np.linspace(-3, 5, 9)
        assert np.allclose(marginal_density(g, x), stats.norm.pdf(x - 1.5))

    def test_mixture_by_hand(self):
        g = MixingDistribution(np.array([-2.0, 2.0]), np.array([0.25, 0.75]))
        x = np.array([0.0, 1.0])
        want = 0.25 * stats.norm.pdf(x + 2.0) + 0.75 * stats.norm.pdf(x - 2.0)
        assert np.allclose(marginal_density(g, x), want)


class TestExpectedFalseRejections:
    def test_no_screening_reduces_to_univariate(self):
        g = MixingDistribution(np.array([-1.0, 0.5]), np.array([0.4, 0.6]))
        rho = np.array([0.2, 0.5, 0.9])
        got = expected_false_rejections(g, rho, -np.inf, 1.7)
        assert got == 3.0 * stats.norm.sf(1.7)

    def test_matches_quadrature_sum(self):
        g = MixingDistribution(np.array([-0.5, 1.0]), np.array([0.5, 0.5]))
        rho = np.array([0.3, 0.3, 0.6])
        got = expected_false_rejections(g, rho, 1.2, 0.8)
        want = 0.0
        for r in rho:
            for u, w in zip(g.support, g.weights):
                want += w * bvn_quad(1.2 - u, 0.8, r)
        assert got == pytest.approx(want, abs=1e-8)

    def test_grouped_rho_equals_plain_loop(self):
        # duplicated correlations take the grouped fast path
        g = MixingDistribution(np.array([0.0]), np.array([1.0]))
        rho = np.array([0.4] * 5 + [0.7] * 3)
        got = expected_false_rejections(g, rho, 0.9, 1.1)
        single = expected_false_rejections(g, np.array([0.4]), 0.9, 1.1)
        other = expected_false_rejections(g, np.array([0.7]), 0.9, 1.1)
        assert got == pytest.approx(5 * single + 3 * other, rel=1e-12)
