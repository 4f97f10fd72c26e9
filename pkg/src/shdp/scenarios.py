"""Synthetic experiments and the corpus fitting pipeline.

Every scenario is a pure function of its configuration: the generator is
derived from ``ScenarioConfig.seed`` unless one is injected, repeats are
processed in fixed-size chunks with independent spawned substreams, and
aggregation follows chunk order, so outputs are identical for any worker
count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .constraint import (
    InfeasibleBoundError,
    constrained_children_batch,
    sample_constrained_child,
    symmetric_kl,
)
from .corpus import EmbeddedCorpus
from .inference import (
    GibbsState,
    HyperPriors,
    SweepOptions,
    gibbs_sweep,
    update_assignments,
)
from .measures import (
    AtomTable,
    DiscreteMeasure,
    floor_weights,
    gem_posterior,
    sample_child_sticks,
    sample_gem,
    sticks_to_weights,
)
from .rng import RngStream

__all__ = [
    "BoundSweepResult",
    "CorpusFitResult",
    "PairComparisonResult",
    "ScenarioConfig",
    "TimeseriesResult",
    "TimeseriesTruth",
    "WeightFitResult",
    "fit_corpus",
    "fit_weight_sequences",
    "generate_timeseries_truth",
    "run_bound_sweep",
    "run_pair_comparison",
    "run_timeseries_recovery",
]

# repeats are processed in fixed chunks so that results do not depend on the
# number of worker threads
CHUNK = 256


@dataclass
class ScenarioConfig:
    """Shared experiment knobs; defaults follow the reference setup."""

    gamma: float = 5.0
    alpha: float = 1.0
    bound: float = 3.0
    K: int = 100
    epsilon: float = 1e-5
    repeats: int = 1000
    phases: int = 20
    obs_per_phase: int = 50
    noise_shape: float = 0.03
    noise_rate: float = 1.0
    particles: int = 1000
    sweeps: int = 20
    seed: int = 42
    max_retries: int = 10
    n_slice_steps: int = 20
    likelihood_variance: float = 1.0
    prior_variance: float = 1.0
    embed_dim: int = 12
    similarity_mode: str = "overlap-sum"
    # reference experiments pin the concentrations at their configured values;
    # switch on to resample them each sweep instead
    resample_hyperparameters: bool = False
    hyper_priors: HyperPriors = field(default_factory=HyperPriors)

    def __post_init__(self):
        positives = {
            "gamma": self.gamma,
            "alpha": self.alpha,
            "bound": self.bound,
            "epsilon": self.epsilon,
            "noise_shape": self.noise_shape,
            "noise_rate": self.noise_rate,
            "likelihood_variance": self.likelihood_variance,
            "prior_variance": self.prior_variance,
        }
        for name, value in positives.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        for name, value in {
            "K": self.K,
            "repeats": self.repeats,
            "phases": self.phases,
            "obs_per_phase": self.obs_per_phase,
            "particles": self.particles,
            "sweeps": self.sweeps,
            "embed_dim": self.embed_dim,
            "n_slice_steps": self.n_slice_steps,
        }.items():
            if int(value) < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        if self.K < 2:
            raise ValueError("truncation level K must be at least 2")
        if self.epsilon * self.K >= 1.0:
            raise ValueError("epsilon * K must stay below 1")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")


def _rng_for(cfg: ScenarioConfig, rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else RngStream(cfg.seed).generator()


def _gem_weights(gamma: float, K: int, rng, size: int) -> np.ndarray:
    sticks = np.clip(rng.beta(1.0, gamma, size=(size, K - 1)), 1e-15, 1 - 1e-15)
    return sticks_to_weights(sticks)


@dataclass
class PairComparisonResult:
    kl_shdp: np.ndarray   # NaN where skipped
    kl_hdp: np.ndarray
    skipped: np.ndarray

    @property
    def skip_rate(self) -> float:
        return float(self.skipped.mean())


def _pair_chunk(cfg: ScenarioConfig, n: int, rng: np.random.Generator):
    """One chunk of pair-comparison repeats, fully vectorized."""
    g0 = floor_weights(_gem_weights(cfg.gamma, cfg.K, rng, n), cfg.epsilon)
    g1 = floor_weights(sticks_to_weights(sample_child_sticks(g0, cfg.alpha, rng)), cfg.epsilon)
    g2_smooth, ok, _, _, _ = constrained_children_batch(
        g0,
        g1,
        cfg.alpha,
        cfg.bound,
        rng,
        max_retries=cfg.max_retries,
        n_slice_steps=cfg.n_slice_steps,
        epsilon=cfg.epsilon,
    )
    g2_plain = floor_weights(sticks_to_weights(sample_child_sticks(g0, cfg.alpha, rng)), cfg.epsilon)
    kl_s = np.sum((g1 - g2_smooth) * (np.log(g1) - np.log(g2_smooth)), axis=1)
    kl_h = np.sum((g1 - g2_plain) * (np.log(g1) - np.log(g2_plain)), axis=1)
    kl_s[~ok] = np.nan
    return kl_s, kl_h, ~ok


def run_pair_comparison(
    cfg: ScenarioConfig,
    rng: np.random.Generator | None = None,
    threads: int = 1,
) -> PairComparisonResult:
    """Per repeat: base, child, then one bounded and one unconstrained successor.

    Records the symmetric KL of the child against each successor, evaluated
    on floored weights.  Repeats whose bounded draw exhausts its retries are
    flagged as skipped (NaN divergence).
    """
    root = _rng_for(cfg, rng)
    sizes = [CHUNK] * (cfg.repeats // CHUNK)
    if cfg.repeats % CHUNK:
        sizes.append(cfg.repeats % CHUNK)
    streams = root.spawn(len(sizes))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda args: _pair_chunk(cfg, *args), zip(sizes, streams)))
    else:
        parts = [_pair_chunk(cfg, n, g) for n, g in zip(sizes, streams)]
    kl_s = np.concatenate([p[0] for p in parts])
    kl_h = np.concatenate([p[1] for p in parts])
    skipped = np.concatenate([p[2] for p in parts])
    return PairComparisonResult(kl_s, kl_h, skipped)


@dataclass
class BoundSweepResult:
    bounds: np.ndarray
    mean: np.ndarray
    q25: np.ndarray
    q50: np.ndarray
    q75: np.ndarray
    skip_counts: np.ndarray


def run_bound_sweep(
    cfg: ScenarioConfig,
    bounds,
    rng: np.random.Generator | None = None,
    threads: int = 1,
) -> BoundSweepResult:
    """Mean and quartiles of the bounded successive divergence per bound value."""
    bounds = np.asarray(list(bounds), dtype=float)
    if bounds.size == 0:
        raise ValueError("bounds must be non-empty")
    if np.any(np.diff(bounds) <= 0):
        raise ValueError("bounds must be strictly increasing")
    root = _rng_for(cfg, rng)
    streams = root.spawn(len(bounds))
    mean = np.empty(len(bounds))
    qs = np.empty((3, len(bounds)))
    skip_counts = np.empty(len(bounds), dtype=int)
    for i, (b, sub) in enumerate(zip(bounds, streams)):
        res = run_pair_comparison(replace(cfg, bound=float(b)), rng=sub, threads=threads)
        good = res.kl_shdp[~res.skipped]
        mean[i] = good.mean()
        qs[:, i] = np.percentile(good, [25, 50, 75])
        skip_counts[i] = int(res.skipped.sum())
    return BoundSweepResult(bounds, mean, qs[0], qs[1], qs[2], skip_counts)


@dataclass
class TimeseriesTruth:
    base: DiscreteMeasure
    clean: np.ndarray          # (M, K) bound-respecting chain
    noisy: np.ndarray          # (M, K) after additive Gamma noise + renormalization
    observations: np.ndarray   # (M, obs_per_phase) atom indices drawn from noisy


def generate_timeseries_truth(
    cfg: ScenarioConfig,
    rng: np.random.Generator | None = None,
) -> TimeseriesTruth:
    """Chain of bounded measures, its noisy version, and per-phase index draws."""
    root = _rng_for(cfg, rng)
    M, K = cfg.phases, cfg.K
    last_err: InfeasibleBoundError | None = None
    for _ in range(5):
        try:
            _, g0_raw = sample_gem(cfg.gamma, K, root)
            g0 = DiscreteMeasure(floor_weights(g0_raw.weights, cfg.epsilon), g0_raw.atom_ids)
            chain = np.empty((M, K))
            sticks1 = sample_child_sticks(g0.weights, cfg.alpha, root)
            chain[0] = floor_weights(sticks_to_weights(sticks1), cfg.epsilon)
            prev = DiscreteMeasure(chain[0], g0.atom_ids)
            for j in range(1, M):
                nxt = sample_constrained_child(
                    g0,
                    prev,
                    cfg.alpha,
                    cfg.bound,
                    root,
                    max_retries=cfg.max_retries,
                    n_slice_steps=cfg.n_slice_steps,
                    epsilon=cfg.epsilon,
                )
                chain[j] = nxt.weights
                prev = nxt
            break
        except InfeasibleBoundError as err:
            last_err = err
    else:
        raise last_err  # five whole-chain attempts failed
    noise = root.gamma(cfg.noise_shape, 1.0 / cfg.noise_rate, size=(M, K))
    noisy = chain + noise
    noisy = noisy / noisy.sum(axis=1, keepdims=True)
    obs = np.stack([root.choice(K, size=cfg.obs_per_phase, p=noisy[j]) for j in range(M)])
    return TimeseriesTruth(g0, chain, noisy, obs)


@dataclass
class WeightFitResult:
    """Posterior samples of the weight sequence (retained sweeps only)."""

    measure_samples: np.ndarray   # (n_kept, M, K)
    gammas: np.ndarray
    alphas: np.ndarray
    ess: np.ndarray               # (n_sweeps, M)


def _succ_kl_rows(measures: np.ndarray) -> np.ndarray:
    """Symmetric KL between successive rows of an (M, K) stack."""
    p, q = measures[:-1], measures[1:]
    return np.sum((p - q) * (np.log(p) - np.log(q)), axis=1)


def _dummy_atoms(K: int, cfg: ScenarioConfig) -> AtomTable:
    return AtomTable(
        np.zeros((K, 1)), np.zeros(1), cfg.prior_variance, cfg.likelihood_variance
    )


def _emit(diag_sink, payload: dict):
    if diag_sink is not None:
        diag_sink.write(json.dumps(payload) + "\n")


def fit_weight_sequences(
    counts: np.ndarray,
    cfg: ScenarioConfig,
    bound: float,
    rng: np.random.Generator,
    diag_sink=None,
    label: str = "",
) -> WeightFitResult:
    """Gibbs over (g0, measures, hyperparameters) with observed cluster counts.

    Observations here are the atom indices themselves, so assignments and
    atom locations stay fixed; the second half of the sweeps is retained.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    M, K = counts.shape
    root = rng
    _, g0 = gem_posterior(counts.sum(axis=0), cfg.gamma, root)
    g0 = DiscreteMeasure(floor_weights(g0.weights, cfg.epsilon), g0.atom_ids)
    assignments = [np.repeat(np.arange(K), counts[j].astype(int)) for j in range(M)]
    state = GibbsState(
        g0=g0,
        atoms=_dummy_atoms(K, cfg),
        measures=[g0] * M,
        assignments=assignments,
        counts=counts.astype(int),
        gamma=cfg.gamma,
        alpha=cfg.alpha,
    )
    opts = SweepOptions(
        bound=bound,
        n_particles=cfg.particles,
        epsilon=cfg.epsilon,
        n_slice_steps=cfg.n_slice_steps,
        max_retries=cfg.max_retries,
        hyper_priors=cfg.hyper_priors,
        update_atoms=False,
        update_assignments=False,
        update_hyperparameters=cfg.resample_hyperparameters,
    )
    keep_from = cfg.sweeps // 2
    kept, gammas, alphas, ess_rows = [], [], [], []
    for sweep in range(cfg.sweeps):
        state = gibbs_sweep(state, None, opts, root)
        stack = np.stack([m.weights for m in state.measures])
        ess_rows.append(state.last_ess)
        _emit(
            diag_sink,
            {
                "model": label,
                "sweep": sweep,
                "gamma": state.gamma,
                "alpha": state.alpha,
                "ess": [round(float(e), 3) for e in state.last_ess],
                "succ_kl": [float(v) for v in _succ_kl_rows(stack)],
            },
        )
        if sweep >= keep_from:
            kept.append(stack)
            gammas.append(state.gamma)
            alphas.append(state.alpha)
    return WeightFitResult(
        np.stack(kept), np.asarray(gammas), np.asarray(alphas), np.stack(ess_rows)
    )


@dataclass
class TimeseriesResult:
    succ_kl_smooth: np.ndarray   # (M-1,) posterior mean successive divergence
    succ_kl_plain: np.ndarray
    dist_truth_smooth: np.ndarray  # (M,) posterior mean divergence to the clean chain
    dist_truth_plain: np.ndarray


def run_timeseries_recovery(
    truth: TimeseriesTruth,
    cfg: ScenarioConfig,
    rng: np.random.Generator | None = None,
    diag_sink=None,
) -> TimeseriesResult:
    """Fit the bounded and the unconstrained model to the same noisy observations.

    The unconstrained fit runs the identical pipeline with an infinite bound.
    Reported divergences average over the retained posterior samples; the
    distance to truth compares against the floored clean chain.
    """
    root = _rng_for(cfg, rng)
    M, K = cfg.phases, cfg.K
    counts = np.stack(
        [np.bincount(truth.observations[j], minlength=K) for j in range(M)]
    )
    sub_smooth, sub_plain = root.spawn(2)
    fit_s = fit_weight_sequences(counts, cfg, cfg.bound, sub_smooth, diag_sink, "shdp")
    fit_p = fit_weight_sequences(counts, cfg, math.inf, sub_plain, diag_sink, "hdp")

    clean_floored = floor_weights(truth.clean, cfg.epsilon)

    def post_succ(samples):
        return np.stack([_succ_kl_rows(s) for s in samples]).mean(axis=0)

    def post_dist(samples):
        p = clean_floored[None, :, :]
        return np.sum((p - samples) * (np.log(p) - np.log(samples)), axis=2).mean(axis=0)

    return TimeseriesResult(
        succ_kl_smooth=post_succ(fit_s.measure_samples),
        succ_kl_plain=post_succ(fit_p.measure_samples),
        dist_truth_smooth=post_dist(fit_s.measure_samples),
        dist_truth_plain=post_dist(fit_p.measure_samples),
    )


@dataclass
class CorpusFitResult:
    phases: np.ndarray
    succ_kl_smooth: np.ndarray
    succ_kl_plain: np.ndarray
    mean_measures_smooth: np.ndarray   # (M, K)
    mean_measures_plain: np.ndarray
    top_atoms: np.ndarray              # atom indices, heaviest base weight first
    traj_smooth: np.ndarray            # (M, n_top) weight trajectories
    traj_plain: np.ndarray


def _fit_corpus_one(
    data: list[np.ndarray],
    cfg: ScenarioConfig,
    bound: float,
    rng: np.random.Generator,
    diag_sink,
    label: str,
):
    """Full Gibbs (atoms + assignments + measures) for one model variant."""
    K, M = cfg.K, len(data)
    D = data[0].shape[1]
    _, g0_raw = sample_gem(cfg.gamma, K, rng)
    g0 = DiscreteMeasure(floor_weights(g0_raw.weights, cfg.epsilon), g0_raw.atom_ids)
    atoms = AtomTable(
        rng.standard_normal((K, D)) * math.sqrt(cfg.prior_variance),
        np.zeros(D),
        cfg.prior_variance,
        cfg.likelihood_variance,
    )
    state = GibbsState(
        g0=g0,
        atoms=atoms,
        measures=[g0] * M,
        assignments=[np.zeros(len(d), dtype=np.intp) for d in data],
        counts=np.zeros((M, K), dtype=int),
        gamma=cfg.gamma,
        alpha=cfg.alpha,
    )
    state.assignments, state.counts = update_assignments(state, data, rng)
    opts = SweepOptions(
        bound=bound,
        n_particles=cfg.particles,
        epsilon=cfg.epsilon,
        n_slice_steps=cfg.n_slice_steps,
        max_retries=cfg.max_retries,
        hyper_priors=cfg.hyper_priors,
        update_atoms=True,
        update_assignments=True,
        update_hyperparameters=cfg.resample_hyperparameters,
    )
    keep_from = cfg.sweeps // 2
    kept_measures, kept_g0 = [], []
    for sweep in range(cfg.sweeps):
        state = gibbs_sweep(state, data, opts, rng)
        stack = np.stack([m.weights for m in state.measures])
        _emit(
            diag_sink,
            {
                "model": label,
                "sweep": sweep,
                "gamma": state.gamma,
                "alpha": state.alpha,
                "ess": [round(float(e), 3) for e in state.last_ess],
                "succ_kl": [float(v) for v in _succ_kl_rows(stack)],
            },
        )
        if sweep >= keep_from:
            kept_measures.append(stack)
            kept_g0.append(state.g0.weights)
    samples = np.stack(kept_measures)         # (n_kept, M, K)
    g0_mean = np.stack(kept_g0).mean(axis=0)  # (K,)
    return samples, g0_mean


def fit_corpus(
    embedded: EmbeddedCorpus,
    cfg: ScenarioConfig,
    rng: np.random.Generator | None = None,
    diag_sink=None,
    n_top: int = 8,
) -> CorpusFitResult:
    """Fit bounded and unconstrained models to an embedded corpus.

    Phases must form a contiguous integer range.  The atom ranking for the
    weight trajectories comes from the bounded fit's posterior mean base
    measure, so both trajectory tables describe the same clusters.
    """
    root = _rng_for(cfg, rng)
    phases = np.unique(embedded.phase_of_row)
    if not np.array_equal(phases, np.arange(phases[0], phases[-1] + 1)):
        raise ValueError("corpus phases must form a contiguous range")
    data = [
        embedded.features[embedded.phase_of_row == p] for p in phases
    ]
    if any(len(d) == 0 for d in data):
        raise ValueError("every phase needs at least one document")
    sub_smooth, sub_plain = root.spawn(2)
    samples_s, g0_mean = _fit_corpus_one(data, cfg, cfg.bound, sub_smooth, diag_sink, "shdp")
    samples_p, _ = _fit_corpus_one(data, cfg, math.inf, sub_plain, diag_sink, "hdp")

    mean_s = samples_s.mean(axis=0)
    mean_p = samples_p.mean(axis=0)
    succ_s = np.stack([_succ_kl_rows(s) for s in samples_s]).mean(axis=0) if len(data) > 1 else np.empty(0)
    succ_p = np.stack([_succ_kl_rows(s) for s in samples_p]).mean(axis=0) if len(data) > 1 else np.empty(0)
    n_top = min(n_top, cfg.K)
    top = np.argsort(g0_mean)[::-1][:n_top]
    return CorpusFitResult(
        phases=phases,
        succ_kl_smooth=succ_s,
        succ_kl_plain=succ_p,
        mean_measures_smooth=mean_s,
        mean_measures_plain=mean_p,
        top_atoms=top,
        traj_smooth=mean_s[:, top],
        traj_plain=mean_p[:, top],
    )
