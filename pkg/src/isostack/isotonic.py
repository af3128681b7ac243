"""Weighted isotonic regression and its bounded / jump-penalized variants.

Three solvers live here:

* :func:`pava` -- the linear-time pool-adjacent-violators algorithm for
  ``min sum w_k (z_k - beta_k)^2`` over nondecreasing ``beta``;
* :func:`minimax_oracle` -- a slow O(M^3) evaluation of the classical
  max-min block-mean representation of the same solution, kept as an
  independent cross-check, with optional bounds applied by clipping;
* :func:`reduced_isotonic` -- the jump-penalized variant: an upper bound
  ``b`` is imposed, and each index ``k`` with ``beta_k != beta_{k+1}``
  (boundary ``beta_{M+1} = b``) is charged a penalty ``xi``.  Solved by a
  segmentation dynamic program over the PAVA blocks.

All operations are pure: they never mutate their inputs and the returned
fits are immutable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Adjacent fitted values closer than this (relatively) are reported as a
# single block, so float dust cannot inflate jump counts downstream.
BLOCK_MERGE_RTOL = 1e-12

_VARIANT_CAP = 16


@dataclass(frozen=True)
class IsotonicProblem:
    """Targets ``z`` with positive weights ``w`` and optional bounds/penalty.

    Parameters
    ----------
    z : array_like
        Real targets, length M >= 1.
    w : array_like
        Strictly positive weights, same length.
    lower, upper : float, optional
        Bound constraints ``lower <= beta_1`` and ``beta_M <= upper``.
    jump_penalty : float, optional
        Penalty charged per index ``k`` with ``beta_k != beta_{k+1}``,
        using the boundary convention ``beta_{M+1} = upper``.  Requires a
        finite upper bound.
    """

    z: np.ndarray
    w: np.ndarray
    lower: float | None = None
    upper: float | None = None
    jump_penalty: float | None = None

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)
        if z.ndim != 1 or w.ndim != 1 or z.shape != w.shape:
            raise ValidationError("z and w must be one-dimensional and equally long")
        if z.size < 1:
            raise ValidationError("need at least one target")
        if not np.all(np.isfinite(z)) or not np.all(np.isfinite(w)):
            raise ValidationError("targets and weights must be finite")
        if np.any(w <= 0):
            raise ValidationError("weights must be strictly positive")
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise ValidationError("lower bound exceeds upper bound")
        if self.jump_penalty is not None:
            if self.jump_penalty < 0:
                raise ValidationError("jump penalty must be nonnegative")
            if self.upper is None or not math.isfinite(self.upper):
                raise ValidationError("jump penalty requires a finite upper bound")

    @property
    def size(self) -> int:
        return self.z.size


@dataclass(frozen=True)
class IsotonicFit:
    """A fitted nondecreasing sequence with its block structure.

    ``blocks`` is a tuple of ``(start, end, value)`` half-open index
    ranges with strictly increasing values (adjacent values within
    ``BLOCK_MERGE_RTOL`` relative are merged).  ``objective`` is the
    attained value of the program the fit solves, including any jump
    penalty.
    """

    beta: np.ndarray
    blocks: tuple[tuple[int, int, float], ...]
    objective: float
    problem: IsotonicProblem = field(repr=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", beta)
        if np.any(np.diff(beta) < 0):
            raise ValidationError("fitted values must be nondecreasing")
        values = [b[2] for b in self.blocks]
        if any(v2 <= v1 for v1, v2 in zip(values, values[1:])):
            raise ValidationError("block values must be strictly increasing")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)


def _merge_blocks(raw_blocks: list[tuple[int, int, float]]) -> tuple[tuple[int, int, float], ...]:
    """Merge adjacent blocks whose values agree within BLOCK_MERGE_RTOL."""
    merged: list[list] = []
    for start, end, value in raw_blocks:
        if merged:
            prev = merged[-1]
            scale = max(abs(prev[2]), abs(value))
            if abs(value - prev[2]) <= BLOCK_MERGE_RTOL * scale:
                prev[1] = end
                continue
        merged.append([start, end, value])
    return tuple((s, e, v) for s, e, v in merged)


def _beta_from_blocks(blocks, size: int) -> np.ndarray:
    beta = np.empty(size)
    for start, end, value in blocks:
        beta[start:end] = value
    return beta


def _pava_core(z: np.ndarray, w: np.ndarray) -> list[tuple[int, int, float]]:
    """Stack-based weighted PAVA; returns maximal violation-free blocks."""
    # each stack entry: [start, weight sum, weighted target sum, value]
    stack: list[list] = []
    for i in range(z.size):
        start, ws, wzs, value = i, w[i], w[i] * z[i], z[i]
        while stack and stack[-1][3] > value:
            prev = stack.pop()
            start = prev[0]
            ws += prev[1]
            wzs += prev[2]
            value = wzs / ws
        stack.append([start, ws, wzs, value])
    blocks = []
    for idx, entry in enumerate(stack):
        end = stack[idx + 1][0] if idx + 1 < len(stack) else z.size
        blocks.append((entry[0], end, entry[3]))
    return blocks


def _sse(problem: IsotonicProblem, beta: np.ndarray) -> float:
    return float(np.sum(problem.w * (problem.z - beta) ** 2))


def pava(problem: IsotonicProblem) -> IsotonicFit:
    """Solve unbounded, unpenalized weighted isotonic regression in O(M).

    Block values are the weighted means of the pooled targets.  Bounded or
    jump-penalized problems must go through :func:`clip_fit` or
    :func:`reduced_isotonic` instead.
    """
    if problem.lower is not None or problem.upper is not None:
        raise ValidationError("pava solves the unbounded program; use clip_fit for bounds")
    if problem.jump_penalty is not None:
        raise ValidationError("pava ignores jump penalties; use reduced_isotonic")
    blocks = _merge_blocks(_pava_core(problem.z, problem.w))
    beta = _beta_from_blocks(blocks, problem.size)
    return IsotonicFit(beta=beta, blocks=blocks, objective=_sse(problem, beta), problem=problem)


def minimax_oracle(problem: IsotonicProblem, cap: int = 64) -> IsotonicFit:
    """Evaluate the max-min block-mean representation directly, in O(M^3).

    ``beta_k = clip( max_{i<=k} min_{j>=k} mean_w(z_i..z_j) )`` with the
    clip applied only when the problem carries bounds.  Deliberately
    independent of :func:`pava`; used to cross-check it.
    """
    if problem.jump_penalty is not None:
        raise ValidationError("minimax oracle does not handle jump penalties")
    m = problem.size
    if m > cap:
        raise ValidationError(f"oracle cap exceeded: {m} > {cap}")
    cw = np.concatenate([[0.0], np.cumsum(problem.w)])
    cwz = np.concatenate([[0.0], np.cumsum(problem.w * problem.z)])
    lo = -math.inf if problem.lower is None else problem.lower
    hi = math.inf if problem.upper is None else problem.upper
    beta = np.empty(m)
    for k in range(m):
        best = -math.inf
        for i in range(k + 1):
            inner = math.inf
            for j in range(k, m):
                mean = (cwz[j + 1] - cwz[i]) / (cw[j + 1] - cw[i])
                inner = min(inner, mean)
            best = max(best, inner)
        beta[k] = min(hi, max(lo, best))
    blocks = _merge_blocks(
        [(i, i + 1, float(beta[i])) for i in range(m)]
    )
    beta = _beta_from_blocks(blocks, m)
    return IsotonicFit(beta=beta, blocks=blocks, objective=_sse(problem, beta), problem=problem)


def clip_fit(fit: IsotonicFit, a: float | None, b: float | None) -> IsotonicFit:
    """Clip an unbounded isotonic fit to ``[a, b]``.

    Entrywise clipping of the unbounded solution solves the bounded
    program exactly, so this is the O(M) route to bounded isotonic
    regression.  The objective is recomputed against the original targets.
    """
    lo = -math.inf if a is None else a
    hi = math.inf if b is None else b
    if lo > hi:
        raise ValidationError("lower bound exceeds upper bound")
    clipped = [(s, e, min(hi, max(lo, v))) for s, e, v in fit.blocks]
    blocks = _merge_blocks(clipped)
    beta = _beta_from_blocks(blocks, fit.problem.size)
    bounded = IsotonicProblem(fit.problem.z, fit.problem.w, lower=a, upper=b)
    return IsotonicFit(beta=beta, blocks=blocks, objective=_sse(bounded, beta), problem=bounded)


def _segment_stats(problem: IsotonicProblem):
    """Prefix sums giving O(1) SSE of any index range at any value."""
    w, z = problem.w, problem.z
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cwz = np.concatenate([[0.0], np.cumsum(w * z)])
    cwz2 = np.concatenate([[0.0], np.cumsum(w * z * z)])

    def stats(i: int, j: int):
        # half-open raw index range [i, j)
        ws = cw[j] - cw[i]
        wzs = cwz[j] - cwz[i]
        wz2s = cwz2[j] - cwz2[i]
        return ws, wzs, wz2s

    return stats


def _sse_at(stats, i: int, j: int, value: float) -> float:
    ws, wzs, wz2s = stats(i, j)
    return wz2s - 2.0 * value * wzs + value * value * ws


def _sse_at_mean(stats, i: int, j: int) -> tuple[float, float]:
    ws, wzs, wz2s = stats(i, j)
    mean = wzs / ws
    return wz2s - wzs * mean, mean


def reduced_isotonic(problem: IsotonicProblem, value_weighted_penalty: bool = False) -> IsotonicFit:
    """Jump-penalized bounded isotonic regression.

    Minimizes ``sum w_k (z_k - beta_k)^2 + xi * sum_k 1(beta_k != beta_{k+1})``
    over nondecreasing ``beta <= b`` with the boundary ``beta_{M+1} = b``,
    so the trailing run pinned at ``b`` is penalty-free.  The solution is
    piecewise constant with per-segment value ``min(b, weighted mean)``;
    segment boundaries are restricted to PAVA block boundaries and chosen
    by dynamic programming (objective ties are resolved toward fewer
    segments, then toward later boundaries).

    With ``value_weighted_penalty=True`` the penalty per jump at index
    ``k`` becomes ``xi * beta_k``.  This experimental variant is solved by
    exhaustive search and is capped at M <= 16.
    """
    if problem.jump_penalty is None:
        raise ValidationError("problem carries no jump penalty")
    if problem.upper is None or not math.isfinite(problem.upper):
        raise ValidationError("reduced isotonic regression needs a finite upper bound")
    if problem.lower is not None:
        raise ValidationError("lower bounds are not supported with a jump penalty")
    if value_weighted_penalty:
        return _reduced_value_weighted(problem)

    xi = problem.jump_penalty
    b = problem.upper
    stats = _segment_stats(problem)
    pava_blocks = _pava_core(problem.z, problem.w)
    nb = len(pava_blocks)
    # edges[j] = raw index where block j starts; edges[nb] = M
    edges = [blk[0] for blk in pava_blocks] + [problem.size]

    # best[r] = (cost, segments, backpointer) for fitting blocks [0, r) with
    # free segments only (each at its pooled mean, which must stay < b)
    best: list[tuple[float, int, int] | None] = [None] * (nb + 1)
    best[0] = (0.0, 0, -1)
    for j in range(1, nb + 1):
        choice = None
        for i in range(j):
            if best[i] is None:
                continue
            sse, mean = _sse_at_mean(stats, edges[i], edges[j])
            if not mean < b:
                continue
            cost = best[i][0] + sse + xi
            segs = best[i][1] + 1
            cand = (cost, segs, i)
            if choice is None or cost < choice[0] or (
                cost == choice[0] and (segs < choice[1] or (segs == choice[1] and i > choice[2]))
            ):
                choice = cand
        best[j] = choice

    overall = None
    pin_from = None
    for r in range(nb, -1, -1):
        if best[r] is None:
            continue
        pin_sse = _sse_at(stats, edges[r], edges[nb], b) if r < nb else 0.0
        cost = best[r][0] + pin_sse
        segs = best[r][1]
        if overall is None or cost < overall[0] or (
            cost == overall[0] and (segs < overall[1] or (segs == overall[1] and r > pin_from))
        ):
            overall = (cost, segs)
            pin_from = r
    # pin_from is always found: r=0 (everything pinned at b) is feasible

    raw_blocks: list[tuple[int, int, float]] = []
    if pin_from < nb:
        raw_blocks.append((edges[pin_from], edges[nb], b))
    r = pin_from
    while r > 0:
        i = best[r][2]
        _, mean = _sse_at_mean(stats, edges[i], edges[r])
        raw_blocks.append((edges[i], edges[r], float(mean)))
        r = i
    raw_blocks.reverse()
    blocks = _merge_blocks(raw_blocks)
    beta = _beta_from_blocks(blocks, problem.size)
    return IsotonicFit(beta=beta, blocks=blocks, objective=float(overall[0]), problem=problem)


def _jump_indices(beta: np.ndarray, b: float) -> list[int]:
    """Indices k (0-based) where beta_k != beta_{k+1}, with beta_{M+1} = b."""
    nxt = np.concatenate([beta[1:], [b]])
    return [int(k) for k in np.nonzero(beta != nxt)[0]]


def _reduced_value_weighted(problem: IsotonicProblem) -> IsotonicFit:
    """Exhaustive solver for the beta-weighted jump penalty variant."""
    m = problem.size
    if m > _VARIANT_CAP:
        raise ValidationError(f"value-weighted variant capped at M <= {_VARIANT_CAP}")
    xi = problem.jump_penalty
    b = problem.upper
    stats = _segment_stats(problem)

    best_obj = math.inf
    best_beta: np.ndarray | None = None
    # cuts = segment boundaries over raw indices; suffix segments may be
    # pinned at b, free segments sit at mean - xi/(2W) (the exact minimizer
    # of SSE + xi*value for that segment)
    for pattern in itertools.product([False, True], repeat=m - 1):
        cuts = [0] + [i + 1 for i, c in enumerate(pattern) if c] + [m]
        nseg = len(cuts) - 1
        for pinned_from in range(nseg, -1, -1):
            values = []
            ok = True
            for s in range(nseg):
                i, j = cuts[s], cuts[s + 1]
                if s >= pinned_from:
                    values.append(b)
                else:
                    ws, wzs, _ = stats(i, j)
                    values.append(wzs / ws - xi / (2.0 * ws))
            for v1, v2 in zip(values, values[1:]):
                if v1 > v2:
                    ok = False
                    break
            if not ok or (values and values[-1] > b):
                continue
            beta = np.empty(m)
            for s in range(nseg):
                beta[cuts[s]:cuts[s + 1]] = values[s]
            obj = _sse(problem, beta) + xi * sum(beta[k] for k in _jump_indices(beta, b))
            if obj < best_obj:
                best_obj = obj
                best_beta = beta
    blocks = _merge_blocks(
        [(i, i + 1, float(best_beta[i])) for i in range(m)]
    )
    beta = _beta_from_blocks(blocks, m)
    return IsotonicFit(beta=beta, blocks=blocks, objective=float(best_obj), problem=problem)
