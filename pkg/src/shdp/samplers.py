"""Random-variate primitives: Beta, Gamma, resampling, truncated-Beta slice sampler.

The slice sampler targets a Beta(a, b) density restricted to an interval
(lo, hi) inside (0, 1).  It augments the state with an auxiliary variable u
bounded by (1-x)^(b-1) and alternates

    1. u | x  ~  Uniform(0, (1-x)^(b-1))
    2. x | u  ~  density proportional to x^(a-1) on the interval that the
       u-constraint carves out of (lo, hi); for b > 1 the constraint caps the
       upper end at 1 - u^(1/(b-1)), for b < 1 it lifts the lower end, and for
       b = 1 it is vacuous (pure power law).

Step 2 is an exact inverse-CDF draw.  Both steps are evaluated in log space so
that extreme shapes (down to the 1e-10 clamp used by the stick-breaking code)
neither overflow nor collapse to the interval endpoints.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateIntervalWarning",
    "ParticleCollapseError",
    "TruncatedBetaParams",
    "multinomial_resample",
    "normalized_weights",
    "sample_beta",
    "sample_gamma",
    "slice_sample_truncated_beta",
    "systematic_resample",
]

# interval widths at or below this are treated as a point mass
DEGENERATE_WIDTH = 1e-14

# smallest positive argument fed to np.log
_TINY = 1e-300


class DegenerateIntervalWarning(RuntimeWarning):
    """Truncation interval narrower than machine tolerance; midpoint returned."""


class ParticleCollapseError(RuntimeError):
    """All resampling weights are zero (every log-weight is -inf)."""


def sample_beta(a: float, b: float, rng: np.random.Generator) -> float:
    """One Beta(a, b) draw, forced into the open interval (0, 1)."""
    if not (a > 0 and b > 0):
        raise ValueError(f"Beta shapes must be positive, got a={a}, b={b}")
    x = rng.beta(a, b)
    return float(min(max(x, np.nextafter(0.0, 1.0)), np.nextafter(1.0, 0.0)))


def sample_gamma(shape: float, rate: float, rng: np.random.Generator) -> float:
    """One Gamma draw with mean shape/rate (rate parameterization)."""
    if not (shape > 0 and rate > 0):
        raise ValueError(f"Gamma parameters must be positive, got shape={shape}, rate={rate}")
    return float(rng.gamma(shape, 1.0 / rate))


def normalized_weights(log_weights: np.ndarray) -> np.ndarray:
    """Exponentiate log weights with max subtraction and normalize to sum 1."""
    lw = np.asarray(log_weights, dtype=float)
    m = np.max(lw)
    if not np.isfinite(m):
        raise ParticleCollapseError("all weights are zero; particle set has collapsed")
    w = np.exp(lw - m)
    return w / w.sum()


def systematic_resample(log_weights, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices by systematic resampling.

    One uniform offset places a regular grid of N points on the cumulative
    weight profile, so index i appears floor/ceil of N*w_i times.  Lower
    variance than multinomial resampling on the same weights.
    """
    w = normalized_weights(log_weights)
    n = len(w)
    positions = (np.arange(n) + rng.uniform()) / n
    return np.searchsorted(np.cumsum(w), positions).clip(max=n - 1).astype(np.intp)


def multinomial_resample(log_weights, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices by iid categorical draws (reference scheme)."""
    w = normalized_weights(log_weights)
    n = len(w)
    return rng.choice(n, size=n, p=w).astype(np.intp)


@dataclass(frozen=True)
class TruncatedBetaParams:
    """Beta(shape_a, shape_b) restricted to (lo, hi) within [0, 1]."""

    shape_a: float
    shape_b: float
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.shape_a > 0 and self.shape_b > 0):
            raise ValueError("truncated Beta shapes must be positive")
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValueError(f"need 0 <= lo < hi <= 1, got ({self.lo}, {self.hi})")


def _power_law_inverse_cdf(lo, hi, v, a):
    """Draw from density x^(a-1) on (lo, hi) given uniforms v; log-space, vectorized.

    The CDF inverse is (lo^a + v (hi^a - lo^a))^(1/a); computed as
    hi * ((lo/hi)^a + v (1 - (lo/hi)^a))^(1/a) via expm1/log1p so that shapes
    as small as 1e-10 and bounds near 0 stay accurate.
    """
    loghi = np.log(np.maximum(hi, _TINY))
    with np.errstate(divide="ignore"):
        loglo = np.log(np.maximum(lo, 0.0))
    one_minus_t = -np.expm1(np.maximum(a * (loglo - loghi), -745.0))
    return np.exp(loghi + np.log1p(-(1.0 - v) * one_minus_t) / a)


def _slice_truncated_beta(shape_a, shape_b, lo, hi, x0, n_steps, rng):
    """Vectorized slice chain; all arguments broadcastable arrays, returns array.

    Lanes whose interval is narrower than DEGENERATE_WIDTH are pinned at the
    midpoint and skipped (degenerate truncation).
    """
    shape_a = np.asarray(shape_a, dtype=float)
    shape_b = np.asarray(shape_b, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x = np.array(np.broadcast_arrays(np.asarray(x0, dtype=float), lo)[0], dtype=float)
    degenerate = hi - lo <= DEGENERATE_WIDTH
    live = ~degenerate
    x = np.where(degenerate, 0.5 * (lo + hi), x)
    n = x.shape
    b_hi = shape_b > 1.0
    b_lo = shape_b < 1.0
    # The state is clamped only at representability boundaries: a value that
    # would round to exactly 1.0 is pinned one ulp below it (at 1.0 the b < 1
    # interval degenerates to a point and the chain would absorb), and
    # rounding leakage past the carved interval is pushed back to its
    # endpoints.  A state that underflows to 0 is a valid, astronomically
    # small value for the power-law step.  Anything stronger would collapse
    # real probability mass onto an atom and bias extreme shapes.
    one_below = np.nextafter(1.0, 0.0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        for _ in range(n_steps):
            lo_eff = lo
            hi_eff = hi
            if np.any(b_hi) or np.any(b_lo):
                # u-step folded into its effect on the x-interval:
                # u = v' * (1-x)^(b-1)  =>  1 - u^(1/(b-1)) = 1 - (1-x) v'^(1/(b-1))
                v = rng.uniform(size=n)
                edge = 1.0 - (1.0 - x) * np.exp(np.log(v) / (shape_b - 1.0))
                hi_eff = np.where(b_hi, np.minimum(hi, edge), hi)
                lo_eff = np.where(b_lo, np.maximum(lo, np.minimum(edge, hi)), lo)
            v = rng.uniform(size=n)
            x_new = _power_law_inverse_cdf(lo_eff, hi_eff, v, shape_a)
            x_new = np.minimum(np.maximum(x_new, lo_eff), np.minimum(hi_eff, one_below))
            x = np.where(live, x_new, x)
    return x


def slice_sample_truncated_beta(
    params: TruncatedBetaParams,
    x0: float,
    n_steps: int,
    rng: np.random.Generator,
) -> float:
    """Run `n_steps` auxiliary-variable iterations from x0; return the final state.

    x0 must lie strictly inside (lo, hi).  If the interval is degenerate the
    midpoint is returned and a DegenerateIntervalWarning is emitted.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be a positive integer")
    if params.hi - params.lo <= DEGENERATE_WIDTH:
        warnings.warn(
            f"truncation interval ({params.lo}, {params.hi}) is degenerate",
            DegenerateIntervalWarning,
            stacklevel=2,
        )
        return 0.5 * (params.lo + params.hi)
    if not (params.lo < x0 < params.hi):
        raise ValueError(f"x0={x0} outside the open interval ({params.lo}, {params.hi})")
    out = float(
        _slice_truncated_beta(
            params.shape_a, params.shape_b, params.lo, params.hi, x0, n_steps, rng
        )
    )
    # keep the reported value strictly inside (lo, hi); a one-ulp nudge moves
    # no appreciable probability mass
    return min(max(out, np.nextafter(params.lo, 1.0)), np.nextafter(params.hi, 0.0))
