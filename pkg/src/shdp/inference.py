"""Posterior inference for sequences of KL-bounded measures.

The conditional law of a successor measure given its predecessor has no
closed form, so the per-phase measures are sampled with a bootstrap particle
filter: phase 1 proposals come from the unconstrained child construction,
later phases from the bound-respecting sampler, and each phase is weighted by
the probability its proposal assigns to that phase's observed cluster counts.
A full Gibbs sweep composes this filter with conjugate updates for the base
measure, the atom locations, the assignments, and the two concentration
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constraint import constrained_children_batch
from .measures import (
    AtomTable,
    DiscreteMeasure,
    atom_posterior,
    floor_weights,
    gem_posterior,
    sample_child_sticks,
    sticks_to_weights,
)
from .samplers import multinomial_resample, normalized_weights, systematic_resample

__all__ = [
    "FilterCollapseError",
    "GibbsState",
    "HyperPriors",
    "Particle",
    "SweepOptions",
    "effective_sample_size",
    "gibbs_sweep",
    "particle_filter_cloud",
    "particle_filter_measures",
    "proposal_log_weight",
    "sample_concentration",
    "update_assignments",
]


class FilterCollapseError(RuntimeError):
    """Every particle became infeasible at some phase."""

    def __init__(self, phase: int):
        self.phase = phase
        super().__init__(f"particle filter collapsed at phase {phase}: no feasible particle")


@dataclass
class HyperPriors:
    """Gamma priors for the two concentration parameters."""

    a_gamma: float = 1.0
    b_gamma: float = 1.0
    a_alpha: float = 1.0
    b_alpha: float = 1.0

    def __post_init__(self):
        if min(self.a_gamma, self.b_gamma, self.a_alpha, self.b_alpha) <= 0:
            raise ValueError("hyperprior parameters must be positive")


@dataclass
class Particle:
    """One surviving filter trajectory: measures, generating sticks, log weight."""

    trajectory: list[DiscreteMeasure]
    stick_history: list[np.ndarray]
    log_weight: float


@dataclass
class GibbsState:
    """One full posterior sample of the model.

    last_ess carries the per-phase effective sample size of the filter run
    that produced the measures (None before the first sweep).
    """

    g0: DiscreteMeasure
    atoms: AtomTable
    measures: list[DiscreteMeasure]
    assignments: list[np.ndarray]
    counts: np.ndarray
    gamma: float
    alpha: float
    last_ess: np.ndarray | None = None

    def recompute_counts(self) -> np.ndarray:
        K = len(self.g0)
        return np.stack([np.bincount(z, minlength=K) for z in self.assignments])


@dataclass
class SweepOptions:
    """Knobs for one Gibbs sweep."""

    bound: float
    n_particles: int = 1000
    epsilon: float = 1e-5
    n_slice_steps: int = 20
    max_retries: int = 10
    hyper_priors: HyperPriors = field(default_factory=HyperPriors)
    ess_threshold: float | None = None
    use_multinomial_resampling: bool = False
    update_atoms: bool = True
    update_assignments: bool = True
    update_hyperparameters: bool = True


def proposal_log_weight(measure, counts) -> float:
    """Log probability of the phase counts under the proposal: sum_i m_i ln w_i."""
    w = measure.weights if isinstance(measure, DiscreteMeasure) else np.asarray(measure, float)
    return float(np.asarray(counts, dtype=float) @ np.log(w))


def effective_sample_size(log_weights) -> float:
    """1 / sum of squared normalized weights."""
    w = normalized_weights(log_weights)
    return float(1.0 / np.sum(w * w))


def _run_filter(
    g0: DiscreteMeasure,
    alpha: float,
    bound: float,
    counts: np.ndarray,
    n_particles: int,
    rng: np.random.Generator,
    epsilon: float,
    n_slice_steps: int,
    max_retries: int,
    ess_threshold: float | None,
    use_multinomial_resampling: bool,
):
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    M, K = counts.shape
    if len(g0) != K:
        raise ValueError("counts width must match the truncation level")
    if n_particles < 1:
        raise ValueError("need at least one particle")
    resample = multinomial_resample if use_multinomial_resampling else systematic_resample

    base_w = g0.weights
    traj = np.empty((M, n_particles, K))
    sticks_hist = np.empty((M, n_particles, K - 1))

    s1 = sample_child_sticks(base_w, alpha, rng, size=n_particles)
    traj[0] = floor_weights(sticks_to_weights(s1), epsilon)
    sticks_hist[0] = s1
    log_w = np.log(traj[0]) @ counts[0]
    ess = np.empty(M)

    for j in range(M):
        if j > 0:
            w, ok, _, _, _ = constrained_children_batch(
                base_w,
                traj[j - 1],
                alpha,
                bound,
                rng,
                max_retries=max_retries,
                n_slice_steps=n_slice_steps,
                epsilon=epsilon,
            )
            traj[j] = w
            step_lw = np.log(w) @ counts[j]
            step_lw[~ok] = -np.inf
            log_w = log_w + step_lw
        if not np.any(np.isfinite(log_w)):
            raise FilterCollapseError(j + 1)
        ess[j] = effective_sample_size(log_w)
        do_resample = ess_threshold is None or ess[j] < ess_threshold * n_particles
        if do_resample and n_particles > 1:
            idx = resample(log_w, rng)
            traj[: j + 1] = traj[: j + 1, idx]
            sticks_hist[: j + 1] = sticks_hist[: j + 1, idx]
            log_w = np.zeros(n_particles)
    return traj, sticks_hist, log_w, ess


def particle_filter_measures(
    g0: DiscreteMeasure,
    alpha: float,
    bound: float,
    counts: np.ndarray,
    n_particles: int,
    rng: np.random.Generator,
    *,
    epsilon: float = 1e-5,
    n_slice_steps: int = 20,
    max_retries: int = 10,
    ess_threshold: float | None = None,
    use_multinomial_resampling: bool = False,
) -> tuple[Particle, np.ndarray]:
    """Sample one trajectory of per-phase measures given per-phase counts.

    counts is (M, K).  Proposals: unconstrained children of g0 at phase 1,
    bound-respecting successors afterwards; particles whose retries are
    exhausted get weight zero.  By default every phase resamples all
    n_particles particles (set ess_threshold in (0, 1] to resample only when
    the effective sample size falls below that fraction of n_particles).
    Returns one uniformly chosen surviving particle plus per-phase ESS.
    """
    traj, sticks_hist, log_w, ess = _run_filter(
        g0, alpha, bound, counts, n_particles, rng,
        epsilon, n_slice_steps, max_retries, ess_threshold, use_multinomial_resampling,
    )
    M = traj.shape[0]
    pick = int(rng.integers(n_particles))
    particle = Particle(
        trajectory=[DiscreteMeasure(traj[j, pick], g0.atom_ids.copy()) for j in range(M)],
        stick_history=[sticks_hist[j, pick].copy() for j in range(M)],
        log_weight=float(log_w[pick]),
    )
    return particle, ess


def particle_filter_cloud(
    g0: DiscreteMeasure,
    alpha: float,
    bound: float,
    counts: np.ndarray,
    n_particles: int,
    rng: np.random.Generator,
    **kwargs,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full particle cloud (M, N, K) plus final log weights and per-phase ESS.

    The cloud after the last resampling step is the filter's empirical
    posterior over trajectories; averaging it gives posterior-mean estimates
    without rerunning the filter.  Same knobs as particle_filter_measures.
    """
    traj, _, log_w, ess = _run_filter(
        g0, alpha, bound, counts, n_particles, rng,
        kwargs.pop("epsilon", 1e-5),
        kwargs.pop("n_slice_steps", 20),
        kwargs.pop("max_retries", 10),
        kwargs.pop("ess_threshold", None),
        kwargs.pop("use_multinomial_resampling", False),
    )
    if kwargs:
        raise TypeError(f"unexpected keyword arguments: {sorted(kwargs)}")
    return traj, log_w, ess


def _log_likelihoods(data_j: np.ndarray, atoms: AtomTable) -> np.ndarray:
    """Gaussian log likelihood of each observation under each atom, (n, K)."""
    diff = data_j[:, None, :] - atoms.phi[None, :, :]
    return -0.5 * np.sum(diff * diff, axis=2) / atoms.likelihood_variance


def update_assignments(
    state: GibbsState,
    data: list[np.ndarray],
    rng: np.random.Generator,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Redraw every cluster indicator from weight times Gaussian likelihood.

    Sampling uses the Gumbel-max trick on the log posterior, which never
    needs the normalizer and is immune to likelihood underflow.
    """
    K = len(state.g0)
    assignments = []
    for j, data_j in enumerate(data):
        data_j = np.atleast_2d(np.asarray(data_j, dtype=float))
        logits = np.log(state.measures[j].weights)[None, :] + _log_likelihoods(data_j, state.atoms)
        gumbel = -np.log(-np.log(rng.uniform(size=logits.shape)))
        assignments.append(np.argmax(logits + gumbel, axis=1))
    counts = np.stack([np.bincount(z, minlength=K) for z in assignments])
    return assignments, counts


def sample_concentration(
    current: float,
    a: float,
    b: float,
    k_distinct: int,
    m_total: int,
    rng: np.random.Generator,
) -> float:
    """One auxiliary-variable update of a concentration parameter.

    Targets p(c) proportional to c^(a+k-2) (c+m) e^(-bc) Beta(c+1, m): draw
    u ~ Beta(c+1, m), then c from the two Gamma components that the joint
    density factors into, with odds (a+k-1) / (m (b - ln u)).
    """
    if m_total < 1 or k_distinct < 1:
        raise ValueError("need at least one observation and one occupied atom")
    if current <= 0 or a <= 0 or b <= 0:
        raise ValueError("concentration and prior parameters must be positive")
    u = rng.beta(current + 1.0, m_total)
    rate = b - math.log(u)
    odds = (a + k_distinct - 1.0) / (m_total * rate)
    shape = a + k_distinct if rng.uniform() < odds / (1.0 + odds) else a + k_distinct - 1.0
    return float(rng.gamma(shape, 1.0 / rate))


def gibbs_sweep(
    state: GibbsState,
    data: list[np.ndarray] | None,
    opts: SweepOptions,
    rng: np.random.Generator,
) -> GibbsState:
    """One full sweep; returns a new state, the input is left untouched.

    Update order: shared base measure from pooled counts, atom locations,
    per-phase measures by particle filtering, assignments, then both
    concentration parameters.  Pass data=None (with update_atoms and
    update_assignments off) when observations are cluster indices themselves
    and only the weight sequence is being inferred.
    """
    counts = state.counts
    pooled = counts.sum(axis=0)
    K = len(state.g0)

    _, g0 = gem_posterior(pooled, state.gamma, rng)
    g0 = DiscreteMeasure(floor_weights(g0.weights, opts.epsilon), state.g0.atom_ids.copy())

    atoms = state.atoms
    if opts.update_atoms:
        if data is None:
            raise ValueError("atom updates need observation vectors")
        stacked = np.concatenate([np.atleast_2d(np.asarray(d, float)) for d in data], axis=0)
        all_z = np.concatenate(state.assignments)
        phi = atoms.phi.copy()
        for i in range(K):
            phi[i] = atom_posterior(stacked[all_z == i], atoms, i, rng)
        atoms = AtomTable(phi, atoms.prior_mean, atoms.prior_variance, atoms.likelihood_variance)

    particle, ess = particle_filter_measures(
        g0,
        state.alpha,
        opts.bound,
        counts,
        opts.n_particles,
        rng,
        epsilon=opts.epsilon,
        n_slice_steps=opts.n_slice_steps,
        max_retries=opts.max_retries,
        ess_threshold=opts.ess_threshold,
        use_multinomial_resampling=opts.use_multinomial_resampling,
    )
    measures = particle.trajectory

    assignments = [z.copy() for z in state.assignments]
    new_counts = counts.copy()
    if opts.update_assignments:
        if data is None:
            raise ValueError("assignment updates need observation vectors")
        interim = GibbsState(g0, atoms, measures, assignments, new_counts, state.gamma, state.alpha)
        assignments, new_counts = update_assignments(interim, data, rng)

    gamma, alpha = state.gamma, state.alpha
    if opts.update_hyperparameters:
        pooled = new_counts.sum(axis=0)
        k_distinct = int(np.count_nonzero(pooled))
        m_total = int(pooled.sum())
        hp = opts.hyper_priors
        gamma = sample_concentration(gamma, hp.a_gamma, hp.b_gamma, k_distinct, m_total, rng)
        alpha = sample_concentration(alpha, hp.a_alpha, hp.b_alpha, k_distinct, m_total, rng)

    return GibbsState(g0, atoms, measures, assignments, new_counts, gamma, alpha, last_ess=ess)
