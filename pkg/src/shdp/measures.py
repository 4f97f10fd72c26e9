"""Truncated stick-breaking measures and their posterior updates.

A discrete measure over K shared atoms is represented by a length-K weight
vector on the closed simplex: K-1 stick variables generate the first K-1
weights and the K-th weight is the leftover stick, so weights always sum to
one exactly (up to float rounding).

Stick variables and count vectors are plain numpy arrays throughout:
``sticks`` has length K-1 with entries strictly inside (0, 1), and a counts
row has length K with non-negative integers (observations per atom in one
phase).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AtomTable",
    "DiscreteMeasure",
    "atom_posterior",
    "floor_and_normalize",
    "floor_weights",
    "gem_posterior",
    "sample_child_measure",
    "sample_gem",
    "sticks_to_weights",
]

# Beta shapes arising from stick-breaking are clamped below this to keep the
# samplers defined when the base measure's tail mass underflows.
MIN_BETA_SHAPE = 1e-10

SIMPLEX_ATOL = 1e-9


@dataclass
class DiscreteMeasure:
    """Weights over K atoms plus the atom identifiers they point at."""

    weights: np.ndarray
    atom_ids: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.atom_ids = np.asarray(self.atom_ids, dtype=np.intp)
        if self.weights.ndim != 1 or self.weights.shape != self.atom_ids.shape:
            raise ValueError("weights and atom_ids must be 1-d and the same length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > SIMPLEX_ATOL:
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")

    def __len__(self) -> int:
        return len(self.weights)

    def to_json_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "atom_ids": self.atom_ids.tolist()}

    @classmethod
    def from_json_dict(cls, d: dict) -> "DiscreteMeasure":
        return cls(np.asarray(d["weights"], dtype=float), np.asarray(d["atom_ids"]))


@dataclass
class AtomTable:
    """Gaussian cluster locations plus their shared prior and likelihood scales.

    phi has shape (K, D); the prior on each location is N(prior_mean,
    prior_variance * I) and observations are N(phi_i, likelihood_variance * I).
    """

    phi: np.ndarray
    prior_mean: np.ndarray
    prior_variance: float
    likelihood_variance: float

    def __post_init__(self):
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        self.prior_mean = np.asarray(self.prior_mean, dtype=float)
        if self.phi.shape[1] != self.prior_mean.shape[0]:
            raise ValueError("atom dimension does not match prior mean dimension")
        if not (self.prior_variance > 0 and self.likelihood_variance > 0):
            raise ValueError("variances must be positive")


def sticks_to_weights(sticks: np.ndarray) -> np.ndarray:
    """Map K-1 stick fractions to K simplex weights (leftover stick closes it).

    Vectorized over leading axes: input (..., K-1) gives output (..., K).
    """
    sticks = np.asarray(sticks, dtype=float)
    rest = np.cumprod(1.0 - sticks, axis=-1)
    w = np.empty(sticks.shape[:-1] + (sticks.shape[-1] + 1,))
    w[..., 0] = sticks[..., 0]
    w[..., 1:-1] = sticks[..., 1:] * rest[..., :-1]
    w[..., -1] = rest[..., -1]
    return w


def _new_measure(weights: np.ndarray, atom_ids=None) -> DiscreteMeasure:
    if atom_ids is None:
        atom_ids = np.arange(len(weights))
    return DiscreteMeasure(weights, atom_ids)


def sample_gem(gamma: float, K: int, rng: np.random.Generator):
    """Stick-breaking draw with iid Beta(1, gamma) sticks, truncated at K atoms."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if K < 2:
        raise ValueError("need at least two atoms")
    sticks = rng.beta(1.0, gamma, size=K - 1)
    sticks = np.clip(sticks, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return sticks, _new_measure(sticks_to_weights(sticks))


def child_stick_shapes(base_weights: np.ndarray, alpha: float):
    """Beta shapes (alpha*pi_i, alpha*(1 - sum_{l<=i} pi_l)) for child sticks.

    Operates on (..., K) base weights; shapes are clamped at MIN_BETA_SHAPE
    where the base tail mass has numerically vanished.
    """
    base_weights = np.asarray(base_weights, dtype=float)
    cum = np.cumsum(base_weights, axis=-1)
    a = np.maximum(alpha * base_weights[..., :-1], MIN_BETA_SHAPE)
    b = np.maximum(alpha * (1.0 - cum[..., :-1]), MIN_BETA_SHAPE)
    return a, b


def sample_child_sticks(base_weights: np.ndarray, alpha: float, rng, size=None):
    """Sticks of one or many unconstrained child measures of the given base.

    base_weights is (K,) or (n, K); with size=n and a (K,) base, n children
    are drawn.  Returns (..., K-1) sticks in the open unit interval.
    """
    a, b = child_stick_shapes(base_weights, alpha)
    if size is not None:
        a = np.broadcast_to(a, (size,) + a.shape[-1:])
        b = np.broadcast_to(b, (size,) + b.shape[-1:])
    sticks = rng.beta(a, b)
    return np.clip(sticks, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def sample_child_measure(base: DiscreteMeasure, alpha: float, rng: np.random.Generator):
    """One child measure drawn around `base` with concentration alpha.

    Atom identifiers are copied from the base: children reweight the shared
    atoms, they never introduce new ones.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    sticks = sample_child_sticks(base.weights, alpha, rng)
    return sticks, DiscreteMeasure(sticks_to_weights(sticks), base.atom_ids.copy())


def gem_posterior(counts: np.ndarray, gamma: float, rng: np.random.Generator):
    """Posterior stick-breaking draw given per-atom observation counts.

    Stick i gets Beta(1 + m_i, gamma + sum of counts after i).
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    counts = np.asarray(counts, dtype=float)
    K = len(counts)
    tail = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0.0]])
    sticks = rng.beta(1.0 + counts[: K - 1], gamma + tail[: K - 1])
    sticks = np.clip(sticks, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return sticks, _new_measure(sticks_to_weights(sticks))


def atom_posterior(
    observations: np.ndarray,
    table: AtomTable,
    index: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Conjugate Gaussian posterior draw for one atom location.

    With n observations assigned to the atom, the per-coordinate posterior
    precision is 1/prior_variance + n/likelihood_variance and the mean is the
    precision-weighted blend of prior mean and data mean.  No observations
    means a prior draw.
    """
    d = table.phi.shape[1]
    obs = np.asarray(observations, dtype=float).reshape(-1, d) if np.size(observations) else np.empty((0, d))
    if np.size(observations) and np.asarray(observations).shape[-1] != d:
        raise ValueError("observation dimension does not match atom dimension")
    n = obs.shape[0]
    precision = 1.0 / table.prior_variance + n / table.likelihood_variance
    mean = (table.prior_mean / table.prior_variance + obs.sum(axis=0) / table.likelihood_variance) / precision
    return mean + rng.standard_normal(d) / np.sqrt(precision)


def floor_weights(weights: np.ndarray, epsilon: float) -> np.ndarray:
    """Raise sub-epsilon weights to epsilon, then renormalize by the common sum.

    Vectorized over leading axes.  Weights already at or above the floor are
    changed only by the renormalization.
    """
    weights = np.asarray(weights, dtype=float)
    if not (epsilon > 0):
        raise ValueError("epsilon must be positive")
    if epsilon * weights.shape[-1] >= 1.0:
        raise ValueError(f"floor {epsilon} infeasible for {weights.shape[-1]} components")
    raised = np.any(weights < epsilon, axis=-1, keepdims=True)
    w = np.maximum(weights, epsilon)
    return np.where(raised, w / w.sum(axis=-1, keepdims=True), weights)


def floor_and_normalize(m: DiscreteMeasure, epsilon: float) -> DiscreteMeasure:
    """Floored copy of a measure (see floor_weights)."""
    return DiscreteMeasure(floor_weights(m.weights, epsilon), m.atom_ids.copy())
