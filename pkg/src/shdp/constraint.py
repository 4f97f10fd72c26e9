"""KL-bounded sampling of successive measures.

The smoothness constraint between a measure and its successor is an
aggregated symmetric KL divergence: for a position l, the components before
l are lumped into one mass, component l is kept, and the components after l
are lumped into another mass, on both measures, and the symmetric KL of the
resulting three-block distributions is taken.  Requiring this aggregate to
stay at or below a bound B for every l constrains each successor weight to a
feasible interval that can be solved one position at a time:

* with the head of the successor already fixed, the aggregate as a function
  of the candidate l-th weight x is ``f(x) + C`` where C collects the terms
  constant in x;
* f is strictly convex on (0, W), W being the successor mass not yet
  committed, so ``f(x) <= B - C`` holds on a single interval whose endpoints
  are roots of a convex equation: two roots, one root (feasible to an edge),
  the whole interval, or no feasible point at all;
* the interval maps onto bounds for the stick fraction at position l, and the
  stick is drawn from the correspondingly truncated Beta by slice sampling.

All bound solving is done on batches (one lane per candidate successor) so
that particle filters and repeated experiments run vectorized.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .measures import (
    DiscreteMeasure,
    child_stick_shapes,
    floor_weights,
    sample_child_sticks,
    sticks_to_weights,
)
from .samplers import _slice_truncated_beta

__all__ = [
    "ConstraintContext",
    "FeasibleCase",
    "FeasibleInterval",
    "InfeasibleBoundError",
    "aggregated_kl",
    "constraint_constant",
    "constraint_function",
    "expectation_gap",
    "sample_constrained_child",
    "solve_feasible_interval",
    "stick_bounds_from_weight_bounds",
    "symmetric_kl",
]

# slack allowed when re-checking the aggregated constraint on floored weights
CONSTRAINT_TOL = 1e-8

# offset of the open search domain from its endpoints
DOMAIN_EDGE = 1e-12

# endpoint offset used to classify which sides of the domain are infeasible
CLASSIFY_OFFSET = 1e-10

# roots closer to the upper domain endpoint than this fraction of the domain
# are reported as "feasible up to the edge": float64 cannot locate them more
# precisely than the local ulp allows
UPPER_SNAP_FRACTION = 3e-7

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

_TINY = 1e-300


class InfeasibleBoundError(RuntimeError):
    """No successor satisfying the bound was produced within the retry budget."""

    def __init__(self, position: int, gap: float, kind: str = "empty"):
        self.position = position
        self.gap = gap
        self.kind = kind
        if kind == "floor":
            msg = (
                f"flooring pushed the aggregated divergence at position {position} "
                f"over the bound by {gap:.6g}"
            )
        else:
            msg = (
                f"no feasible value at position {position}; the convex minimum "
                f"exceeds the remaining budget by {gap:.6g}"
            )
        super().__init__(msg + " (retries exhausted)")


class FeasibleCase(enum.Enum):
    TWO_ROOTS = "two_roots"
    LEFT_OF_ROOT = "left_of_root"
    RIGHT_OF_ROOT = "right_of_root"
    WHOLE = "whole"
    EMPTY = "empty"


@dataclass(frozen=True)
class FeasibleInterval:
    """Solved bounds for one successor weight, tagged with its case."""

    case: FeasibleCase
    lo: float
    hi: float


@dataclass
class ConstraintContext:
    """Everything the position-l feasibility problem conditions on.

    `position` is 1-based; `partial_next` holds the l-1 successor weights
    already fixed and `partial_sticks` the stick fractions that produced them.
    """

    base: DiscreteMeasure
    predecessor: DiscreteMeasure
    partial_next: np.ndarray
    partial_sticks: np.ndarray
    position: int
    bound: float
    alpha: float

    def __post_init__(self):
        self.partial_next = np.asarray(self.partial_next, dtype=float)
        self.partial_sticks = np.asarray(self.partial_sticks, dtype=float)
        if len(self.partial_next) != self.position - 1:
            raise ValueError("partial_next must hold position-1 entries")
        if len(self.partial_sticks) != self.position - 1:
            raise ValueError("partial_sticks must hold position-1 entries")
        if self.partial_next.sum() >= 1.0:
            raise ValueError("already-fixed successor weights exhaust the simplex")
        if not (1 <= self.position < len(self.predecessor)):
            raise ValueError("position must lie in 1..K-1")
        if not (self.bound > 0 and self.alpha > 0):
            raise ValueError("bound and alpha must be positive")


def _weights_of(m) -> np.ndarray:
    return m.weights if isinstance(m, DiscreteMeasure) else np.asarray(m, dtype=float)


def symmetric_kl(p, q) -> float:
    """Two-sided KL divergence sum((p - q) (ln p - ln q)); zero iff p == q."""
    pw, qw = _weights_of(p), _weights_of(q)
    if pw.shape != qw.shape:
        raise ValueError("measures must have the same truncation level")
    if np.any(pw <= 0) or np.any(qw <= 0):
        raise ValueError("weights must be strictly positive; floor the measures first")
    return float(np.sum((pw - qw) * (np.log(pw) - np.log(qw))))


def _lump_term(a, b):
    """(a-b)(ln a - ln b) with the empty-lump convention 0*ln(0/0) = 0.

    A lump that is zero on exactly one side would make the divergence
    infinite; that is a caller error (unfloored input), not a value.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    both_zero = (a == 0) & (b == 0)
    if np.any((a == 0) != (b == 0)):
        raise ValueError("lump mass is zero on one side only; floor the measures first")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (a - b) * (np.log(a) - np.log(b))
    return np.where(both_zero, 0.0, out)


def _aggregated_all(pw: np.ndarray, qw: np.ndarray) -> np.ndarray:
    """Aggregated symmetric KL at every position l = 1..K.

    Head and tail masses are exact prefix and suffix sums of the inputs.
    Inputs (..., K); output (..., K).
    """
    head_p = np.cumsum(pw, axis=-1) - pw
    head_q = np.cumsum(qw, axis=-1) - qw
    tail_p = np.cumsum(pw[..., ::-1], axis=-1)[..., ::-1] - pw
    tail_q = np.cumsum(qw[..., ::-1], axis=-1)[..., ::-1] - qw
    return _lump_term(head_p, head_q) + _lump_term(pw, qw) + _lump_term(tail_p, tail_q)


def aggregated_kl(l: int, p, q) -> float:
    """Three-block aggregate at position l: head lump, component l, tail lump."""
    pw, qw = _weights_of(p), _weights_of(q)
    if not (1 <= l <= pw.shape[-1]):
        raise ValueError(f"position {l} outside 1..{pw.shape[-1]}")
    if pw.shape != qw.shape:
        raise ValueError("measures must have the same truncation level")
    return float(_aggregated_all(pw, qw)[..., l - 1])


def _context_scalars(ctx: ConstraintContext):
    """(p_l, tail_p, W, C) for the position-l problem."""
    l = ctx.position
    pred = ctx.predecessor.weights
    p_l = float(pred[l - 1])
    head_p = float(pred[: l - 1].sum())
    tail_p = 1.0 - head_p - p_l
    head_q = float(ctx.partial_next.sum())
    W = 1.0 - head_q
    C = float(_lump_term(head_p, head_q)) + p_l * math.log(p_l)
    return p_l, tail_p, W, C


def constraint_constant(ctx: ConstraintContext) -> float:
    """Terms of the position-l aggregate that do not involve the candidate weight."""
    return _context_scalars(ctx)[3]


def _f(x, p_l, tail_p, W):
    """Candidate-dependent part of the aggregate, f(x) = agg(x) - C.

    f(x) = (p_l - x)(ln p_l - ln x) + (tail_p - tq)(ln tail_p - ln tq)
           - p_l ln p_l,   with tq = W - x.

    Strictly convex on (0, W); diverges at both endpoints whenever p_l and
    tail_p are positive.  Accepts arrays.
    """
    tq = W - x
    lp = np.log(p_l)
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = (p_l - x) * (lp - np.log(np.maximum(x, _TINY)))
        tail = (tail_p - tq) * (np.log(np.maximum(tail_p, _TINY)) - np.log(np.maximum(tq, _TINY)))
    return mid + tail - p_l * lp


def constraint_function(x: float, ctx: ConstraintContext) -> float:
    """f at a candidate weight for position l; feasibility is f(x) <= bound - C."""
    p_l, tail_p, W, _ = _context_scalars(ctx)
    if not (0.0 < x < W):
        raise ValueError(f"candidate {x} outside the open interval (0, {W})")
    return float(_f(x, p_l, tail_p, W))


def _bisect_crossing(lo, hi, p_l, tail_p, W, T, n_iter=90):
    """Crossing of f = T inside [lo, hi]; exactly one of f(lo), f(hi) exceeds T.

    Plain predicate bisection, vectorized; 90 halvings take every bracket to
    (or below) float64 resolution.
    """
    above_lo = _f(lo, p_l, tail_p, W) > T
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        same = (_f(mid, p_l, tail_p, W) > T) == above_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


# case codes used by the batch solver
_WHOLE, _TWO, _LEFT_OF, _RIGHT_OF, _EMPTY = 0, 1, 2, 3, 4


def _solve_feasible_batch(p_l, tail_p, W, T):
    """Feasible interval of f(x) <= T on (0, W) for each lane.

    Returns (case codes, lo, hi).  lo/hi are 0 and W where the region runs to
    an edge.  Convexity gives the fast path: if f at both endpoint offsets is
    within budget, every interior point is.
    """
    p_l, tail_p, W, T = np.broadcast_arrays(
        np.asarray(p_l, float), np.asarray(tail_p, float), np.asarray(W, float), np.asarray(T, float)
    )
    n = W.shape
    lo = np.zeros(n)
    hi = W.copy()
    case = np.full(n, _WHOLE, dtype=np.int8)

    off = np.maximum(DOMAIN_EDGE, np.minimum(CLASSIFY_OFFSET, 1e-3 * W))
    degenerate = W <= 4.0 * DOMAIN_EDGE
    a = off
    b = W - off
    fa = _f(a, p_l, tail_p, W)
    fb = _f(b, p_l, tail_p, W)
    left_over = (fa > T) & ~degenerate
    right_over = (fb > T) & ~degenerate

    both = left_over & right_over
    xm = np.full(n, np.nan)
    if np.any(both):
        # golden-section to width 1e-12 for the interior minimum
        ga = a[both].copy()
        gb = b[both].copy()
        args = (p_l[both], tail_p[both], W[both])
        span = float(np.max(gb - ga))
        n_iter = max(1, int(math.ceil(math.log(DOMAIN_EDGE / max(span, DOMAIN_EDGE)) / math.log(_INV_PHI))))
        c = gb - _INV_PHI * (gb - ga)
        d = ga + _INV_PHI * (gb - ga)
        fc = _f(c, *args)
        fd = _f(d, *args)
        for _ in range(n_iter):
            keep_left = fc < fd
            gb = np.where(keep_left, d, gb)
            ga = np.where(keep_left, ga, c)
            c = gb - _INV_PHI * (gb - ga)
            d = ga + _INV_PHI * (gb - ga)
            fc = _f(c, *args)
            fd = _f(d, *args)
        xmid = 0.5 * (ga + gb)
        xm[both] = xmid
        empty = _f(xmid, *args) > T[both]
        emp_idx = np.flatnonzero(both)[empty]
        case[emp_idx] = _EMPTY
        lo[emp_idx] = 0.0
        hi[emp_idx] = 0.0

    solvable = case != _EMPTY
    # left crossing: bracket from the left offset to the minimizer (or to the
    # right offset when the right side is within budget)
    ml = left_over & solvable
    if np.any(ml):
        hi_br = np.where(both, xm, b)[ml]
        r1 = _bisect_crossing(a[ml], hi_br, p_l[ml], tail_p[ml], W[ml], T[ml])
        lo[ml] = r1
    mr = right_over & solvable
    if np.any(mr):
        lo_br = np.where(both, xm, a)[mr]
        r2 = _bisect_crossing(lo_br, b[mr], p_l[mr], tail_p[mr], W[mr], T[mr])
        snap = (W[mr] - r2) < UPPER_SNAP_FRACTION * W[mr]
        hi[mr] = np.where(snap, W[mr], r2)
        mr[np.flatnonzero(mr)[snap]] = False

    has_left = np.zeros(n, bool)
    has_left[ml] = True
    case[solvable & has_left & mr] = _TWO
    case[solvable & has_left & ~mr] = _RIGHT_OF
    case[solvable & ~has_left & mr] = _LEFT_OF
    return case, lo, hi


_CASE_ENUM = {
    _WHOLE: FeasibleCase.WHOLE,
    _TWO: FeasibleCase.TWO_ROOTS,
    _LEFT_OF: FeasibleCase.LEFT_OF_ROOT,
    _RIGHT_OF: FeasibleCase.RIGHT_OF_ROOT,
    _EMPTY: FeasibleCase.EMPTY,
}


def solve_feasible_interval(ctx: ConstraintContext) -> FeasibleInterval:
    """Feasible interval for the successor weight at ctx.position."""
    p_l, tail_p, W, C = _context_scalars(ctx)
    T = ctx.bound - C
    case, lo, hi = _solve_feasible_batch(
        np.array([p_l]), np.array([tail_p]), np.array([W]), np.array([T])
    )
    return FeasibleInterval(_CASE_ENUM[int(case[0])], float(lo[0]), float(hi[0]))


def stick_bounds_from_weight_bounds(interval: FeasibleInterval, partial_sticks) -> tuple[float, float]:
    """Convert weight bounds to bounds on the stick fraction at this position.

    The weight is the stick times the mass not yet broken off, so both bounds
    divide by prod(1 - earlier sticks) and clip into [0, 1].
    """
    if interval.case is FeasibleCase.EMPTY:
        raise ValueError("empty interval has no stick bounds")
    rest = float(np.prod(1.0 - np.asarray(partial_sticks, dtype=float)))
    if rest < 1e-12:
        raise ValueError("remaining stick length below 1e-12; measure is exhausted")
    return (
        float(np.clip(interval.lo / rest, 0.0, 1.0)),
        float(np.clip(interval.hi / rest, 0.0, 1.0)),
    )


def _propose_constrained(base_w, pred_w, alpha, bound, rng, n_slice_steps, epsilon):
    """One constrained stick-breaking pass per lane.

    base_w, pred_w: (n, K) floored weights.  Returns (floored weights,
    ok mask, fail position per lane, fail gap per lane).  Lanes that hit an
    empty interval keep sampling unconstrained so the batch stays in lockstep,
    but are reported as failed.  Lanes whose floored result violates any
    aggregated bound are failed as well (position -1).
    """
    n, K = pred_w.shape
    shapes_a, shapes_b = child_stick_shapes(base_w, alpha)
    shapes_a = np.broadcast_to(shapes_a, (n, K - 1))
    shapes_b = np.broadcast_to(shapes_b, (n, K - 1))
    head_p = np.cumsum(pred_w, axis=1) - pred_w

    rest = np.ones(n)       # mass not yet committed, kept as a product
    head_q = np.zeros(n)    # committed successor mass, kept as a sum
    raw = np.zeros((n, K))
    fail_pos = np.full(n, 0, dtype=int)
    fail_gap = np.zeros(n)
    failed = np.zeros(n, bool)
    unconstrained = math.isinf(bound)

    for l in range(K - 1):
        if unconstrained:
            lo_s = np.zeros(n)
            hi_s = np.ones(n)
        else:
            p_l = pred_w[:, l]
            tail_p = np.maximum(1.0 - head_p[:, l] - p_l, _TINY)
            W = rest
            if l == 0:
                C = p_l * np.log(p_l)
            else:
                C = (head_p[:, l] - head_q) * (
                    np.log(head_p[:, l]) - np.log(np.maximum(head_q, _TINY))
                ) + p_l * np.log(p_l)
            T = bound - C
            case, lo_w, hi_w = _solve_feasible_batch(p_l, tail_p, W, T)
            empty = case == _EMPTY
            newly = empty & ~failed
            if np.any(newly):
                fail_pos[newly] = l + 1
                gap = _f(0.5 * W[newly], p_l[newly], tail_p[newly], W[newly]) - T[newly]
                fail_gap[newly] = gap
                failed |= empty
            # rest can underflow to 0 once the measure is exhausted; the
            # guarded division then yields a degenerate (0, 0) stick interval
            safe_rest = np.maximum(rest, 1e-300)
            lo_s = np.clip(np.where(empty, 0.0, lo_w) / safe_rest, 0.0, 1.0)
            hi_s = np.clip(np.where(empty, W, hi_w) / safe_rest, 0.0, 1.0)
        x0 = 0.5 * (lo_s + hi_s)
        s = _slice_truncated_beta(shapes_a[:, l], shapes_b[:, l], lo_s, hi_s, x0, n_slice_steps, rng)
        raw[:, l] = s * rest
        head_q = head_q + raw[:, l]
        rest = rest * (1.0 - s)
    raw[:, K - 1] = rest

    floored = floor_weights(raw, epsilon)
    fail_kind = np.where(failed, "empty", "ok").astype(object)
    if not unconstrained:
        agg = _aggregated_all(pred_w, floored)[:, : K - 1]
        violated = np.any(agg > bound + CONSTRAINT_TOL, axis=1) & ~failed
        if np.any(violated):
            fail_pos[violated] = np.argmax(agg[violated], axis=1) + 1
            fail_gap[violated] = np.max(agg[violated] - bound, axis=1)
            fail_kind[violated] = "floor"
            failed |= violated
    return floored, ~failed, fail_pos, fail_gap, fail_kind


def constrained_children_batch(
    base_w,
    pred_w,
    alpha: float,
    bound: float,
    rng: np.random.Generator,
    *,
    max_retries: int = 10,
    n_slice_steps: int = 20,
    epsilon: float = 1e-5,
):
    """Constrained successors for a batch of lanes, with per-lane retries.

    base_w is (K,) or (n, K); pred_w is (n, K); both floored.  Returns
    (weights (n, K), ok (n,), fail_pos, fail_gap, fail_kind).  A lane is ok
    when every aggregated divergence at positions 1..K-1, evaluated on the
    floored weights, is within bound + CONSTRAINT_TOL; failures are tagged
    "empty" (no feasible interval) or "floor" (flooring broke the bound).
    """
    pred_w = np.atleast_2d(np.asarray(pred_w, dtype=float))
    n, K = pred_w.shape
    base_w = np.broadcast_to(np.asarray(base_w, dtype=float), (n, K))
    out = np.empty((n, K))
    ok = np.zeros(n, bool)
    fail_pos = np.zeros(n, dtype=int)
    fail_gap = np.zeros(n)
    fail_kind = np.full(n, "ok", dtype=object)
    todo = np.arange(n)
    for _ in range(max_retries + 1):
        w, good, pos, gap, kind = _propose_constrained(
            base_w[todo], pred_w[todo], alpha, bound, rng, n_slice_steps, epsilon
        )
        out[todo] = w
        ok[todo[good]] = True
        fail_pos[todo] = pos
        fail_gap[todo] = gap
        fail_kind[todo] = kind
        todo = todo[~good]
        if todo.size == 0:
            break
    return out, ok, fail_pos, fail_gap, fail_kind


def sample_constrained_child(
    base: DiscreteMeasure,
    predecessor: DiscreteMeasure,
    alpha: float,
    bound: float,
    rng: np.random.Generator,
    *,
    max_retries: int = 10,
    n_slice_steps: int = 20,
    epsilon: float = 1e-5,
) -> DiscreteMeasure:
    """Successor of `predecessor` drawn around `base` under the aggregated bound.

    Every aggregated divergence between the floored result and the
    predecessor is guaranteed <= bound + 1e-8; an InfeasibleBoundError is
    raised when max_retries whole-measure attempts all hit an empty interval
    or a flooring-induced violation.
    """
    if not (alpha > 0 and bound > 0):
        raise ValueError("alpha and bound must be positive")
    if len(base) != len(predecessor):
        raise ValueError("base and predecessor must share the truncation level")
    w, ok, pos, gap, kind = constrained_children_batch(
        base.weights,
        predecessor.weights[None, :],
        alpha,
        bound,
        rng,
        max_retries=max_retries,
        n_slice_steps=n_slice_steps,
        epsilon=epsilon,
    )
    if not ok[0]:
        raise InfeasibleBoundError(int(pos[0]), float(gap[0]), str(kind[0]))
    return DiscreteMeasure(w[0], base.atom_ids.copy())


def expectation_gap(
    gamma: float,
    alpha: float,
    l: int,
    n_samples: int,
    K: int,
    rng: np.random.Generator,
    epsilon: float = 1e-5,
) -> tuple[float, float]:
    """Monte Carlo mean and standard error of full minus aggregated divergence.

    Draws one stick-breaking base, then n_samples iid pairs of unconstrained
    children; both divergences are evaluated on floored weights.  The two
    divergences agree in expectation over exchangeable pairs even though they
    differ pair by pair.
    """
    if n_samples < 100:
        raise ValueError("need at least 100 samples for a standard error")
    sticks = rng.beta(1.0, gamma, size=K - 1)
    base = sticks_to_weights(np.clip(sticks, 1e-15, 1 - 1e-15))
    a = floor_weights(sticks_to_weights(sample_child_sticks(base, alpha, rng, size=n_samples)), epsilon)
    b = floor_weights(sticks_to_weights(sample_child_sticks(base, alpha, rng, size=n_samples)), epsilon)
    full = np.sum((a - b) * (np.log(a) - np.log(b)), axis=1)
    agg = _aggregated_all(a, b)[:, l - 1]
    gaps = full - agg
    return float(gaps.mean()), float(gaps.std(ddof=1) / math.sqrt(n_samples))
