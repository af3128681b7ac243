"""Stacking weights for nested regressions, learned in closed form.

The complexity-penalized weight-learning program

    minimize  R(alpha) + (2 tau sigma^2 / n) df(alpha)
              + ((lambda - tau)_+^2 / lambda) (sigma^2 / n) dim(alpha)
    subject to alpha >= 0

reduces to weighted isotonic regression, and its solution is an explicit
function of the nondecreasing minimax sequence

    gamma_k = (sigma^2/n) min_{k<=i<=M} max_{0<=j<k} (d_i - d_j)/(R_j - R_i)

with sentinels gamma_0 = 0 and gamma_{M+1} = +inf.  The same sequence
drives penalized model selection (the best single model is the largest k
with gamma_k < 1/lambda), l0-penalized stacking (reduced isotonic
regression), Q-aggregation (a bounded isotonic program with its own
sequence that excludes the null model) and randomized ensembles
(restriction of the sequence to random knot subsets).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .isotonic import IsotonicProblem, pava, reduced_isotonic
from .nested_models import NestedModelSequence, combination_risk

# absolute tolerance declaring a weight "nonzero" for l0 / dim diagnostics
NONZERO_ATOL = 1e-12

_EXACT_ENSEMBLE_CAP = 10_000

# weight sums may land exactly on 1.0 through float underflow of the
# shrinkage factor; allow that representational edge while rejecting
# anything genuinely above 1
_SUM_SLACK = 1e-12


@dataclass(frozen=True)
class GammaSequence:
    """The nondecreasing minimax sequence with its sentinels."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", g)
        if g.ndim != 1 or g.size < 1:
            raise ValidationError("gamma must be a nonempty vector")
        if np.any(np.isnan(g)) or np.any(g <= 0):
            raise ValidationError("gamma values must be positive")
        if g.size > 1 and np.any(g[:-1] > g[1:]):
            raise ValidationError("gamma must be nondecreasing")

    def __len__(self) -> int:
        return self.gamma.size

    def with_sentinels(self) -> np.ndarray:
        """[0, gamma_1, ..., gamma_M, +inf]."""
        return np.concatenate([[0.0], self.gamma, [np.inf]])


@dataclass(frozen=True)
class StackWeights:
    """Nonnegative combination weights with sparsity diagnostics.

    ``l0`` counts weights above ``NONZERO_ATOL``; ``dim`` is the largest
    model dimension carrying such a weight (0 for the null combination);
    ``df = sum_k alpha_k d_k``.  ``method`` records which program produced
    the weights: "penalized", "l0", "qagg" or "ensemble".
    """

    alpha: np.ndarray
    method: str
    sum_weights: float
    l0: int
    dim: int
    df: float

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        object.__setattr__(self, "alpha", a)
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValidationError("stacking weights must be nonnegative and finite")
        if self.method in ("penalized", "l0", "ensemble"):
            if self.sum_weights > 1.0 + _SUM_SLACK:
                raise ValidationError(f"{self.method} weights must sum to at most one")
        elif self.method == "qagg":
            if abs(self.sum_weights - 1.0) > 1e-10:
                raise ValidationError("Q-aggregation weights must lie on the simplex")
        else:
            raise ValidationError(f"unknown method tag {self.method!r}")

    @classmethod
    def from_alpha(cls, alpha, dims, method: str) -> "StackWeights":
        a = np.asarray(alpha, dtype=float)
        d = np.asarray(dims, dtype=float)
        nonzero = np.abs(a) > NONZERO_ATOL
        return cls(
            alpha=a,
            method=method,
            sum_weights=float(math.fsum(a.tolist())),
            l0=int(np.count_nonzero(nonzero)),
            dim=int(d[nonzero].max()) if nonzero.any() else 0,
            df=float(a @ d),
        )

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha": list(self.alpha),
            "sum": self.sum_weights,
            "l0": self.l0,
            "dim": self.dim,
            "df": self.df,
        }


@dataclass(frozen=True)
class SelectionResult:
    """Index selected by penalized empirical risk, with all criterion values.

    ``criteria[k] = R_k + lambda sigma^2 d_k / n`` for k = 0..M (the null
    model included); ``m_hat`` attains the minimum, smallest index on ties.
    """

    m_hat: int
    criteria: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.criteria, dtype=float)
        object.__setattr__(self, "criteria", c)
        if not (0 <= self.m_hat < c.size):
            raise ValidationError("selected index out of range")
        if c[self.m_hat] > c.min():
            raise ValidationError("selected index does not attain the minimum")


@dataclass(frozen=True)
class EnsembleResult:
    """Randomized-ensemble coefficients and the implied stacking weights.

    ``coefficients[k]`` approximates the probability that increment k is
    included by the restricted selection, i.e. the multiplier of
    ``mu_hat_k - mu_hat_{k-1}`` in the averaged predictor.
    """

    coefficients: np.ndarray
    weights: StackWeights
    exact: bool
    draws: int
    subsets_total: int
    coefficient_se: np.ndarray | None = None
    seed: int | None = None


def _gamma_values(delta_d: np.ndarray, delta_R: np.ndarray, noise_rate: float) -> np.ndarray:
    """gamma = isotonic fit of z_k = rate * dd_k / dR_k with weights dR_k."""
    z = noise_rate * delta_d / delta_R
    fit = pava(IsotonicProblem(z, delta_R))
    return fit.beta


def gamma_sequence(seq: NestedModelSequence) -> GammaSequence:
    """Minimax sequence of the family, via PAVA on the risk/dimension ratios.

    Block values of the isotonic fit are exactly constant, so equalities
    within a block hold bitwise and downstream weight differences vanish
    without any tolerance games.
    """
    return GammaSequence(_gamma_values(seq.delta_d, seq.delta_R, seq.noise_rate))


def _criteria(seq: NestedModelSequence, lam: float) -> np.ndarray:
    risks = np.concatenate([[seq.R0], seq.R])
    dims = np.concatenate([[0.0], np.asarray(seq.d, dtype=float)])
    return risks + lam * seq.noise_rate * dims


def best_single(seq: NestedModelSequence, lam: float) -> SelectionResult:
    """Best single model: argmin_k R_k + lambda sigma^2 d_k / n.

    The null model (k=0) competes; ties go to the smallest index.  The
    result is cross-checked against the equivalent characterization
    ``max{k : gamma_k < 1/lambda}``; a genuine mismatch (not a float
    near-tie) raises, since it would mean the two routes diverged.
    """
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    crit = _criteria(seq, lam)
    m_hat = int(np.argmin(crit))

    gamma = gamma_sequence(seq).gamma
    m_gamma = int(np.count_nonzero(gamma < 1.0 / lam))
    if m_gamma != m_hat:
        scale = max(abs(crit[m_hat]), abs(crit[m_gamma]), 1.0)
        if abs(crit[m_gamma] - crit[m_hat]) > 1e-9 * scale:
            raise ValidationError(
                "selection mismatch between criterion argmin and gamma characterization"
            )
    return SelectionResult(m_hat=m_hat, criteria=crit)


def _telescoping(gamma: np.ndarray, tau: float, lam: float) -> np.ndarray:
    """Coefficients c_k = (1 - tau gamma_k) 1(gamma_k < min(1/tau, 1/lambda))."""
    threshold = min(1.0 / tau, 1.0 / lam)
    return np.where(gamma < threshold, 1.0 - tau * gamma, 0.0)


def _alpha_from_telescoping(c: np.ndarray) -> np.ndarray:
    return c - np.concatenate([c[1:], [0.0]])


def stack_weights(seq: NestedModelSequence, tau: float, lam: float) -> StackWeights:
    """Closed-form solution of the complexity-penalized stacking program.

    ``alpha_k = (1 - tau g_k) 1(g_k < g) - (1 - tau g_{k+1}) 1(g_{k+1} < g)``
    with ``g = min(1/tau, 1/lambda)`` and ``g_{M+1} = +inf``.  The weights
    are nonnegative, sum to ``(1 - tau g_1) 1(g_1 < g) < 1``, and never
    reach beyond the dimension of the best single model at this lambda.
    Strict inequalities are evaluated with exact float comparison: an
    exact boundary hit (measure zero for noisy data, possible for
    synthetic inputs) excludes the model.
    """
    if tau <= 0 or lam <= 0:
        raise ValidationError("tau and lambda must be positive")
    gamma = gamma_sequence(seq).gamma
    alpha = _alpha_from_telescoping(_telescoping(gamma, tau, lam))
    return StackWeights.from_alpha(alpha, seq.d, "penalized")


def penalized_objective(seq: NestedModelSequence, alpha, tau: float, lam: float) -> float:
    """Objective of the penalized program at arbitrary nonnegative weights.

    ``R(alpha) + (2 tau sigma^2/n) df(alpha)
    + ((lambda-tau)_+^2/lambda) (sigma^2/n) dim(alpha)`` with the
    convention alpha_0 = 1 (so the null combination has dim 0).
    """
    if tau <= 0 or lam <= 0:
        raise ValidationError("tau and lambda must be positive")
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 0):
        raise ValidationError("weights must be nonnegative")
    risk = combination_risk(seq, a)
    d = np.asarray(seq.d, dtype=float)
    df = float(a @ d)
    nonzero = np.abs(a) > NONZERO_ATOL
    dim = float(d[nonzero].max()) if nonzero.any() else 0.0
    xi = (max(lam - tau, 0.0) ** 2) / lam
    return risk + 2.0 * tau * seq.noise_rate * df + xi * seq.noise_rate * dim


def l0_stack_weights(
    seq: NestedModelSequence, value_weighted_penalty: bool = False
) -> StackWeights:
    """Weights from the l0-penalized program, via reduced isotonic regression.

    Solves ``min sum dR_k (z_k - beta_k)^2 + (4 sigma^2/n) #jumps`` over
    nondecreasing ``beta <= 1`` with ``beta_{M+1} = 1`` and
    ``z_k = (sigma^2/n) dd_k / dR_k``, then differences ``alpha_k =
    beta_{k+1} - beta_k``.  Counting the boundary jump at ``beta_M != 1``
    is what makes the penalty equal the number of nonzero weights.

    ``value_weighted_penalty`` switches to the experimental variant that
    charges ``beta_k`` per jump instead of 1 (see the isotonic module).
    """
    rate = seq.noise_rate
    z = rate * seq.delta_d / seq.delta_R
    problem = IsotonicProblem(z, seq.delta_R, upper=1.0, jump_penalty=4.0 * rate)
    fit = reduced_isotonic(problem, value_weighted_penalty=value_weighted_penalty)
    alpha = _alpha_from_telescoping(1.0 - fit.beta)
    return StackWeights.from_alpha(alpha, seq.d, "l0")


def _qagg_gamma(seq: NestedModelSequence) -> np.ndarray:
    """Variant minimax sequence excluding the null model: entry 1 is 0.

    For k >= 2 this is the minimax value over i in [k, M], j in [1, k),
    which is the isotonic fit of the same ratios restricted to models
    2..M (model 1 plays the role of the base).
    """
    gamma = np.zeros(seq.count)
    if seq.count > 1:
        gamma[1:] = _gamma_values(seq.delta_d[1:], seq.delta_R[1:], seq.noise_rate)
    return gamma


def qagg_weights(seq: NestedModelSequence, eta: float) -> StackWeights:
    """Closed-form Q-aggregation weights on the simplex.

    ``beta_1 = 0`` and ``beta_k = 1 - clip_01((1 - eta/2 - g_k)/(1 - eta))``
    where ``g`` is the variant minimax sequence that excludes the null
    model; weights are the differences with ``beta_{M+1} = 1``.  The
    spread term pushes the clipped values into {0, 1}, hence toward
    vertex solutions.
    """
    if not (0.0 < eta < 1.0):
        raise ValidationError("eta must lie strictly between 0 and 1")
    check = _qagg_gamma(seq)
    scaled = (1.0 - eta / 2.0 - check) / (1.0 - eta)
    beta = 1.0 - np.clip(scaled, 0.0, 1.0)
    beta[0] = 0.0
    alpha = _alpha_from_telescoping(1.0 - beta)
    return StackWeights.from_alpha(alpha, seq.d, "qagg")


def subset_gamma(seq: NestedModelSequence, knots) -> GammaSequence:
    """Minimax sequence restricted to knot subset I (1-based model indices).

    ``gamma_k(I) = (sigma^2/n) min_{i in I, i>=k} max_{j in {0} u I, j<k}
    (d_i - d_j)/(R_j - R_i)`` for every k in 1..M, and +inf for
    k > max(I).  Defined by the formula at every k (not only at knots)
    because that is what reproduces model selection restricted to I.
    """
    knot_list = sorted({int(i) for i in knots})
    if not knot_list:
        raise ValidationError("knot subset must be nonempty")
    if knot_list[0] < 1 or knot_list[-1] > seq.count:
        raise ValidationError("knots must be model indices in 1..M")
    dims = np.concatenate([[0.0], np.asarray(seq.d, dtype=float)])
    risks = np.concatenate([[seq.R0], seq.R])
    j_pool = [0] + knot_list
    rate = seq.noise_rate
    gamma = np.empty(seq.count)
    for k in range(1, seq.count + 1):
        candidates_i = [i for i in knot_list if i >= k]
        if not candidates_i:
            gamma[k - 1] = np.inf
            continue
        outer = math.inf
        for i in candidates_i:
            inner = -math.inf
            for j in j_pool:
                if j >= k:
                    break
                inner = max(inner, (dims[i] - dims[j]) / (risks[j] - risks[i]))
            outer = min(outer, inner)
        gamma[k - 1] = rate * outer
    return GammaSequence(gamma)


def _restricted_cutoff(criteria: np.ndarray, knots: tuple[int, ...]) -> int:
    """Best single model index restricted to {0} union knots (ascending)."""
    best_idx = 0
    best_val = criteria[0]
    for i in knots:
        if criteria[i] < best_val:
            best_idx, best_val = i, criteria[i]
    return best_idx


def randomized_ensemble(
    seq: NestedModelSequence,
    m: int,
    B: int,
    lam: float,
    seed: int | None = None,
    mode: str = "auto",
) -> EnsembleResult:
    """Average restricted model selections over random knot subsets.

    Draws subsets I of size m-1 uniformly from {1..M}, evaluates the
    per-draw inclusion indicators ``1(gamma_k(I) < 1/lambda)`` -- which
    telescope to the best single model restricted to {0} union I -- and
    averages them into coefficients for the increments
    ``mu_hat_k - mu_hat_{k-1}``.  When C(M, m-1) <= 10^4 (mode "auto"),
    all subsets are enumerated instead of sampled; ``mode`` can force
    "exact" or "sample".
    """
    M = seq.count
    if not (2 <= m <= M + 1):
        raise ValidationError("need 2 <= m <= M + 1")
    if B < 1:
        raise ValidationError("need at least one replication")
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    if mode not in ("auto", "exact", "sample"):
        raise ValidationError("mode must be auto, exact or sample")
    size = m - 1
    total = math.comb(M, size)
    exact = mode == "exact" or (mode == "auto" and total <= _EXACT_ENSEMBLE_CAP)
    criteria = _criteria(seq, lam)

    if exact:
        counts = np.zeros(M)
        for subset in itertools.combinations(range(1, M + 1), size):
            cutoff = _restricted_cutoff(criteria, subset)
            counts[:cutoff] += 1.0
        coefficients = counts / total
        se = None
        draws = total
        rng_seed = seed
    else:
        if seed is None:
            raise ValidationError("sampling mode needs a seed")
        rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        cutoffs = _sample_restricted_cutoffs(criteria, M, size, B, rng)
        indicator = cutoffs[:, None] >= np.arange(1, M + 1)[None, :]
        coefficients = indicator.mean(axis=0)
        se = np.sqrt(coefficients * (1.0 - coefficients) / B)
        draws = B
        rng_seed = seed

    alpha = _alpha_from_telescoping(coefficients)
    weights = StackWeights.from_alpha(alpha, seq.d, "ensemble")
    return EnsembleResult(
        coefficients=coefficients,
        weights=weights,
        exact=exact,
        draws=draws,
        subsets_total=total,
        coefficient_se=se,
        seed=rng_seed,
    )


def _sample_restricted_cutoffs(
    criteria: np.ndarray, M: int, size: int, B: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized restricted-selection cutoffs for B uniform subsets."""
    keys = rng.random((B, M))
    subsets = np.argpartition(keys, size - 1, axis=1)[:, :size] + 1
    subsets.sort(axis=1)
    # prepend the null model; argmin picks the first minimum, and columns
    # are sorted ascending, so ties resolve to the smallest index
    values = np.concatenate(
        [np.full((B, 1), criteria[0]), criteria[subsets]], axis=1
    )
    pos = np.argmin(values, axis=1)
    cutoffs = np.where(pos == 0, 0, subsets[np.arange(B), np.maximum(pos - 1, 0)])
    return cutoffs


def james_stein_factor(seq: NestedModelSequence, k: int, positive_part: bool = False) -> float:
    """Shrinkage factor 1 - (d_k - 2) / ((n/sigma^2)(R_0 - R_k)).

    As displayed there is no positive-part modification, so the factor can
    exceed 1 when d_k < 2 or go negative for weak signals;
    ``positive_part`` clamps at zero for the classical variant.
    """
    if not (1 <= k <= seq.count):
        raise ValidationError("model index out of range")
    dk = seq.d[k - 1]
    chi = (seq.R0 - seq.R[k - 1]) / seq.noise_rate
    factor = 1.0 - (dk - 2.0) / chi
    return max(0.0, factor) if positive_part else factor


def adaptive_risk_correction(seq: NestedModelSequence, alpha) -> float:
    """Risk estimator for adaptively learned weights.

    ``R(alpha) + (2 sigma^2/n) df + (4 sigma^2/n) l0
    - (4 sigma^2/n) alpha . prefix_nonzero_count - sigma^2``, where the
    prefix count at k is the number of nonzero weights among the first k.
    In expectation this matches the population risk of the stacked model
    whose weights minimize the df-penalized empirical risk; it is used as
    a Monte Carlo unbiasedness diagnostic.
    """
    a = np.asarray(alpha, dtype=float)
    if a.shape != (seq.count,):
        raise ValidationError("alpha must have one weight per model")
    if np.any(a < 0):
        raise ValidationError("weights must be nonnegative")
    rate = seq.noise_rate
    risk = combination_risk(seq, a)
    d = np.asarray(seq.d, dtype=float)
    nonzero = (np.abs(a) > NONZERO_ATOL).astype(float)
    prefix = np.cumsum(nonzero)
    return (
        risk
        + 2.0 * rate * float(a @ d)
        + 4.0 * rate * float(nonzero.sum())
        - 4.0 * rate * float(a @ prefix)
        - seq.sigma2
    )
