"""Smoothed hierarchical Dirichlet process.

Sequences of discrete mixing measures whose successive symmetric KL
divergence stays under a fixed bound, with particle-filter Gibbs inference
and a reproducible experiment harness.
"""

__version__ = "0.1.0"

from .constraint import (
    ConstraintContext,
    FeasibleCase,
    FeasibleInterval,
    InfeasibleBoundError,
    aggregated_kl,
    constraint_constant,
    constraint_function,
    expectation_gap,
    sample_constrained_child,
    solve_feasible_interval,
    stick_bounds_from_weight_bounds,
    symmetric_kl,
)
from .corpus import (
    CorpusDocument,
    EmbeddedCorpus,
    similarity,
    spectral_embed,
    synthetic_corpus,
)
from .inference import (
    FilterCollapseError,
    GibbsState,
    HyperPriors,
    Particle,
    SweepOptions,
    effective_sample_size,
    gibbs_sweep,
    particle_filter_measures,
    proposal_log_weight,
    sample_concentration,
    update_assignments,
)
from .measures import (
    AtomTable,
    DiscreteMeasure,
    atom_posterior,
    floor_and_normalize,
    gem_posterior,
    sample_child_measure,
    sample_gem,
    sticks_to_weights,
)
from .rng import RngStream
from .samplers import (
    DegenerateIntervalWarning,
    ParticleCollapseError,
    TruncatedBetaParams,
    multinomial_resample,
    sample_beta,
    sample_gamma,
    slice_sample_truncated_beta,
    systematic_resample,
)
from .scenarios import (
    ScenarioConfig,
    fit_corpus,
    generate_timeseries_truth,
    run_bound_sweep,
    run_pair_comparison,
    run_timeseries_recovery,
)
