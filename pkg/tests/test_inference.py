import math

import numpy as np
import pytest
from scipy.special import betaln

from shdp.inference import (
    particle_filter_cloud,
    FilterCollapseError,
    GibbsState,
    HyperPriors,
    SweepOptions,
    effective_sample_size,
    gibbs_sweep,
    particle_filter_measures,
    proposal_log_weight,
    sample_concentration,
    update_assignments,
)
from shdp.measures import (
    AtomTable,
    DiscreteMeasure,
    floor_weights,
    sample_child_sticks,
    sticks_to_weights,
)

from conftest import make_rng


def floored_gem(rng, K, gamma=5.0, eps=1e-5):
    sticks = np.clip(rng.beta(1.0, gamma, K - 1), 1e-12, 1 - 1e-12)
    return DiscreteMeasure(floor_weights(sticks_to_weights(sticks), eps), np.arange(K))


class TestProposalLogWeight:
    def test_empty_counts(self):
        m = DiscreteMeasure(np.array([0.5, 0.5]), np.arange(2))
        assert proposal_log_weight(m, np.zeros(2)) == 0.0

    def test_direct_evaluation(self):
        m = DiscreteMeasure(np.array([0.5, 0.25, 0.25]), np.arange(3))
        assert proposal_log_weight(m, np.array([2, 0, 0])) == pytest.approx(2 * math.log(0.5))

    def test_uniform_closed_form(self):
        K, n = 8, 40
        m = DiscreteMeasure(np.full(K, 1.0 / K), np.arange(K))
        counts = np.full(K, n // K)
        assert proposal_log_weight(m, counts) == pytest.approx(-n * math.log(K))


class TestEffectiveSampleSize:
    def test_uniform_weights_full_size(self):
        assert effective_sample_size(np.zeros(50)) == pytest.approx(50.0)

    def test_single_survivor(self):
        lw = np.full(10, -np.inf)
        lw[3] = 0.0
        assert effective_sample_size(lw) == pytest.approx(1.0)


class TestParticleFilter:
    def test_single_particle_is_prior_trajectory(self):
        g0 = floored_gem(make_rng(30), 10)
        counts = np.zeros((3, 10))
        counts[:, 0] = 5
        particle, ess = particle_filter_measures(g0, 1.0, 1e6, counts, 1, make_rng(31))
        assert len(particle.trajectory) == 3
        np.testing.assert_allclose(ess, 1.0)
        # no selection pressure: re-running the proposal stream reproduces it
        sticks = sample_child_sticks(g0.weights, 1.0, make_rng(31), size=1)
        expected = floor_weights(sticks_to_weights(sticks), 1e-5)[0]
        np.testing.assert_array_equal(particle.trajectory[0].weights, expected)

    def test_selection_shifts_mass_toward_observed_atom(self):
        # M=1, counts on atom 1: posterior mean of w1 above the prior mean,
        # matched against a self-normalized importance-sampling oracle
        rng = make_rng(32)
        g0 = floored_gem(rng, 3, gamma=1.0)
        counts = np.array([[50.0, 0.0, 0.0]])
        runs = np.array(
            [
                particle_filter_measures(g0, 1.0, 1e6, counts, 400, r)[0].trajectory[0].weights[0]
                for r in make_rng(33).spawn(150)
            ]
        )
        prior = floor_weights(
            sticks_to_weights(sample_child_sticks(g0.weights, 1.0, rng, size=100_000)), 1e-5
        )
        log_w = counts[0] @ np.log(prior).T
        w = np.exp(log_w - log_w.max())
        oracle = float((prior[:, 0] * w).sum() / w.sum())
        assert runs.mean() > prior[:, 0].mean()
        assert abs(runs.mean() - oracle) < 4 * runs.std(ddof=1) / math.sqrt(len(runs))

    def test_two_phase_posterior_matches_importance_oracle(self):
        rng = make_rng(34)
        g0 = floored_gem(rng, 3, gamma=1.0)
        counts = np.array([[3.0, 1.0, 0.0], [0.0, 2.0, 2.0]])
        # slack bound: phases are conditionally independent children of g0
        n_oracle = 200_000
        post = []
        for j in range(2):
            prior = floor_weights(
                sticks_to_weights(sample_child_sticks(g0.weights, 1.0, rng, size=n_oracle)), 1e-5
            )
            log_w = np.log(prior) @ counts[j]
            w = np.exp(log_w - log_w.max())
            post.append((prior * w[:, None]).sum(axis=0) / w.sum())
        oracle = np.stack(post)
        cloud, _, _ = particle_filter_cloud(
            g0, 1.0, 1e6, counts, 20_000, make_rng(35), n_slice_steps=100
        )
        est = cloud.mean(axis=1)
        assert np.max(np.abs(est - oracle)) < 0.02

    def test_collapse_reports_phase(self):
        rng = make_rng(36)
        g0 = floored_gem(rng, 100)
        pred_counts = np.zeros((2, 100))
        with pytest.raises(FilterCollapseError, match="phase 2"):
            particle_filter_measures(
                g0, 1.0, 1e-4, pred_counts, 8, rng, max_retries=0
            )

    def test_particle_count_preserved_and_reproducible(self):
        g0 = floored_gem(make_rng(37), 8)
        counts = np.ones((4, 8))
        p1, ess1 = particle_filter_measures(g0, 1.0, 3.0, counts, 32, make_rng(38))
        p2, ess2 = particle_filter_measures(g0, 1.0, 3.0, counts, 32, make_rng(38))
        np.testing.assert_array_equal(ess1, ess2)
        for a, b in zip(p1.trajectory, p2.trajectory):
            np.testing.assert_array_equal(a.weights, b.weights)
        assert len(ess1) == 4

    def test_ess_threshold_mode_accumulates_weights(self):
        g0 = floored_gem(make_rng(39), 8)
        counts = np.ones((4, 8))
        particle, ess = particle_filter_measures(
            g0, 1.0, 1e6, counts, 64, make_rng(40), ess_threshold=0.1
        )
        assert len(particle.trajectory) == 4
        assert np.all(ess >= 1.0)


class TestUpdateAssignments:
    def make_state(self, weights, phi, rng, lik_var=1.0):
        K = len(weights)
        m = DiscreteMeasure(weights, np.arange(K))
        atoms = AtomTable(phi, np.zeros(phi.shape[1]), 1.0, lik_var)
        return GibbsState(
            g0=m,
            atoms=atoms,
            measures=[m],
            assignments=[np.zeros(1, dtype=np.intp)],
            counts=np.zeros((1, K), dtype=int),
            gamma=1.0,
            alpha=1.0,
        )

    def test_identical_likelihood_recovers_weights(self):
        rng = make_rng(41)
        w = np.array([0.6, 0.3, 0.1])
        state = self.make_state(w, np.zeros((3, 1)), rng)
        data = [np.zeros((10_000, 1))]
        z, counts = update_assignments(state, data, rng)
        freq = counts[0] / counts[0].sum()
        se = np.sqrt(w * (1 - w) / 10_000)
        assert np.all(np.abs(freq - w) < 4 * se + 1e-12)

    def test_distant_atoms_lose(self):
        rng = make_rng(42)
        phi = np.array([[0.0], [15.0], [30.0]])
        state = self.make_state(np.full(3, 1 / 3), phi, rng)
        data = [np.zeros((5000, 1))]
        _, counts = update_assignments(state, data, rng)
        assert counts[0][0] / 5000 > 0.999

    def test_equidistant_atoms_split_evenly(self):
        rng = make_rng(43)
        phi = np.array([[-1.0], [1.0]])
        state = self.make_state(np.array([0.5, 0.5]), phi, rng)
        data = [np.zeros((20_000, 1))]
        _, counts = update_assignments(state, data, rng)
        frac = counts[0][0] / 20_000
        assert abs(frac - 0.5) < 4 * 0.5 / math.sqrt(20_000)

    def test_counts_match_assignments(self):
        rng = make_rng(44)
        phi = rng.normal(size=(4, 2))
        state = self.make_state(np.full(4, 0.25), phi, rng)
        data = [rng.normal(size=(100, 2))]
        z, counts = update_assignments(state, data, rng)
        np.testing.assert_array_equal(counts[0], np.bincount(z[0], minlength=4))


def concentration_grid_density(grid, a, b, k, m):
    logp = (a + k - 2.0) * np.log(grid) + np.log(grid + m) - b * grid + betaln(grid + 1.0, m)
    p = np.exp(logp - logp.max())
    return p / p.sum()


class TestSampleConcentration:
    def test_stationary_density_matches_grid_oracle(self):
        rng = make_rng(45)
        a = b = 1.0
        k, m = 5, 100
        c = 1.0
        n = 100_000
        draws = np.empty(n)
        for i in range(n):
            c = sample_concentration(c, a, b, k, m, rng)
            draws[i] = c
        grid = np.linspace(1e-3, 25.0, 2000)
        target = concentration_grid_density(grid, a, b, k, m)
        edges = np.concatenate([[0.0], 0.5 * (grid[1:] + grid[:-1]), [np.inf]])
        hist, _ = np.histogram(draws, bins=edges)
        empirical = hist / n
        assert 0.5 * np.abs(empirical - target).sum() < 0.02

    def test_small_counts_mean_matches_grid(self):
        rng = make_rng(46)
        a = b = 1.0
        k = m = 1
        c = 1.0
        draws = np.empty(200_000)
        for i in range(len(draws)):
            c = sample_concentration(c, a, b, k, m, rng)
            draws[i] = c
        grid = np.linspace(1e-4, 40.0, 4000)
        target = concentration_grid_density(grid, a, b, k, m)
        grid_mean = float((grid * target).sum())
        assert abs(draws.mean() - grid_mean) / grid_mean < 0.05

    def test_huge_prior_dominates(self):
        rng = make_rng(47)
        draws = [sample_concentration(1.0, 1e6, 1e6, 5, 100, rng) for _ in range(2000)]
        assert abs(np.mean(draws) - 1.0) < 0.01

    def test_validation(self):
        rng = make_rng(48)
        with pytest.raises(ValueError):
            sample_concentration(1.0, 1.0, 1.0, 0, 10, rng)
        with pytest.raises(ValueError):
            sample_concentration(1.0, 1.0, 1.0, 1, 0, rng)


class TestGibbsSweep:
    def build_state(self, rng, K=6, M=2, D=1, n_per_phase=100):
        g0 = floored_gem(rng, K, gamma=2.0)
        atoms = AtomTable(rng.normal(size=(K, D)), np.zeros(D), 4.0, 1.0)
        data = [rng.normal(size=(n_per_phase, D)) for _ in range(M)]
        assignments = [rng.integers(0, K, size=n_per_phase).astype(np.intp) for _ in range(M)]
        counts = np.stack([np.bincount(z, minlength=K) for z in assignments])
        state = GibbsState(g0, atoms, [g0] * M, assignments, counts, 2.0, 1.0)
        return state, data

    def test_counts_stay_consistent(self):
        rng = make_rng(49)
        state, data = self.build_state(rng)
        opts = SweepOptions(bound=3.0, n_particles=16)
        new = gibbs_sweep(state, data, opts, rng)
        np.testing.assert_array_equal(new.counts, new.recompute_counts())
        assert new.gamma > 0 and new.alpha > 0
        assert len(new.measures) == 2

    def test_input_state_untouched(self):
        rng = make_rng(50)
        state, data = self.build_state(rng)
        before = state.counts.copy()
        gw = state.g0.weights.copy()
        gibbs_sweep(state, data, SweepOptions(bound=3.0, n_particles=8), rng)
        np.testing.assert_array_equal(state.counts, before)
        np.testing.assert_array_equal(state.g0.weights, gw)

    def test_recovers_two_atom_truth(self):
        rng = make_rng(51)
        K, M, D = 8, 2, 1
        truth_atoms = np.array([-2.0, 2.0])
        truth_w = np.array([0.6, 0.4])
        data = []
        for _ in range(M):
            z = rng.choice(2, size=250, p=truth_w)
            data.append((truth_atoms[z] + rng.normal(size=250))[:, None])
        g0 = floored_gem(rng, K, gamma=2.0)
        atoms = AtomTable(rng.normal(size=(K, D)), np.zeros(D), 4.0, 1.0)
        assignments = [rng.integers(0, K, size=250).astype(np.intp) for _ in range(M)]
        counts = np.stack([np.bincount(z, minlength=K) for z in assignments])
        state = GibbsState(g0, atoms, [g0] * M, assignments, counts, 2.0, 1.0)
        opts = SweepOptions(bound=3.0, n_particles=32)
        for _ in range(200):
            state = gibbs_sweep(state, data, opts, rng)
        pooled = state.counts.sum(axis=0)
        top2 = np.argsort(pooled)[::-1][:2]
        found = np.sort(state.atoms.phi[top2, 0])
        assert abs(found[0] - (-2.0)) < 0.2
        assert abs(found[1] - 2.0) < 0.2

    def test_slack_bound_and_infinite_bound_coincide(self):
        rng = make_rng(52)
        state, data = self.build_state(rng, K=5, M=3)
        a = gibbs_sweep(state, data, SweepOptions(bound=1e6, n_particles=16), make_rng(53))
        b = gibbs_sweep(state, data, SweepOptions(bound=math.inf, n_particles=16), make_rng(53))
        for ma, mb in zip(a.measures, b.measures):
            np.testing.assert_array_equal(ma.weights, mb.weights)
        assert a.gamma == b.gamma and a.alpha == b.alpha

    def test_weight_only_mode_keeps_counts(self):
        rng = make_rng(54)
        K, M = 6, 3
        g0 = floored_gem(rng, K)
        counts = rng.integers(0, 20, size=(M, K))
        assignments = [np.repeat(np.arange(K), counts[j]) for j in range(M)]
        atoms = AtomTable(np.zeros((K, 1)), np.zeros(1), 1.0, 1.0)
        state = GibbsState(g0, atoms, [g0] * M, assignments, counts, 5.0, 1.0)
        opts = SweepOptions(
            bound=3.0, n_particles=16, update_atoms=False, update_assignments=False
        )
        new = gibbs_sweep(state, None, opts, rng)
        np.testing.assert_array_equal(new.counts, counts)
        assert new.last_ess.shape == (M,)
