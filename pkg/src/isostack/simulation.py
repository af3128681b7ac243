"""Fixed-design Gaussian simulation harness.

Replicated draws from y = f + sigma * eps at fixed design points, with
every requested estimator fit on the same noise (common random numbers),
produce Monte Carlo estimates of population risks, risk gaps, and degrees
of freedom with standard errors and normal confidence intervals.

Determinism contract: replication r derives its generator from
``SeedSequence([base_seed, r])``, per-replication statistics are stored in
replication order, and aggregation uses exact compensated summation
(``math.fsum``), so results are bit-identical for any level of
parallelism and any execution order.
"""

from __future__ import annotations

import concurrent.futures
import itertools
import logging
import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, ValidationError
from .nested_models import NestedModelSequence, OrthonormalBasis
from .stacking import (
    NONZERO_ATOL,
    _criteria,
    _restricted_cutoff,
    _sample_restricted_cutoffs,
    _telescoping,
    adaptive_risk_correction,
    best_single,
    gamma_sequence,
    james_stein_factor,
    l0_stack_weights,
    qagg_weights,
    stack_weights,
)

logger = logging.getLogger("isostack.simulation")

_ESTIMATOR_KINDS = {
    "stack",
    "best",
    "l0stack",
    "qagg",
    "ensemble",
    "james_stein",
    "fixed_projection",
    "oracle_stack",
}

_ORACLE_TOL = 1e-12


@dataclass(frozen=True)
class Scenario:
    """A fixed-design data generating process over an orthonormal basis.

    ``theta`` holds the true basis coefficients <f, psi_l>.  With
    ``basis=None`` the synthetic sequence model psi_l(x_i) = sqrt(n) 1(i=l)
    is used, where projections are coefficient truncations and the basis is
    complete (theta has length n).  Nested sets are the first d_k basis
    columns.
    """

    name: str
    n: int
    sigma: float
    d: tuple[int, ...]
    theta: np.ndarray
    basis: OrthonormalBasis | None = None

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(int(v) for v in self.d))
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if self.n < 1:
            raise ValidationError("need n >= 1")
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if not self.d or self.d[0] < 1 or any(b <= a for a, b in zip(self.d, self.d[1:])):
            raise ValidationError("dimension schedule must be strictly increasing")
        if self.d[-1] > self.n:
            raise ValidationError("largest model dimension exceeds the sample size")
        width = self.n if self.basis is None else self.basis.size
        if self.basis is not None:
            if self.basis.n != self.n:
                raise ValidationError("basis rows must match the sample size")
            if self.basis.size < self.d[-1]:
                raise ValidationError("basis has fewer columns than the largest model")
        if theta.ndim != 1 or theta.size != width or not np.all(np.isfinite(theta)):
            raise ValidationError(f"theta must be a finite vector of length {width}")

    @property
    def count(self) -> int:
        return len(self.d)

    @property
    def sigma2(self) -> float:
        return self.sigma**2


PRESETS = {
    # n=256, M=10, d_k = 3k: increments of three dimensions keep the
    # stacked-vs-best risk gap guaranteed for tau <= 2/3
    "theorem1-default": {
        "n": 256,
        "M": 10,
        "d_spacing": 3,
        "sigma": 1.0,
        "coef": {"kind": "geometric", "scale": 1.5, "rate": 0.8},
    },
    "null-signal": {
        "n": 256,
        "M": 10,
        "d_spacing": 3,
        "sigma": 1.0,
        "coef": {"kind": "zero"},
    },
    # forty nested subsets, still with three-dimension spacing
    "breiman-like": {
        "n": 256,
        "M": 40,
        "d_spacing": 3,
        "sigma": 1.0,
        "coef": {"kind": "geometric", "scale": 1.0, "rate": 0.95},
    },
}


def _build_theta(coef: dict, width: int, d_max: int) -> np.ndarray:
    kind = coef.get("kind")
    theta = np.zeros(width)
    if kind == "zero":
        return theta
    if kind == "geometric":
        scale = float(coef.get("scale", 1.0))
        rate = float(coef.get("rate", 0.9))
        if not (0 < rate < 1):
            raise ValidationError("geometric decay rate must lie in (0, 1)")
        span = min(d_max, width)
        theta[:span] = scale * rate ** np.arange(1, span + 1)
        return theta
    if kind == "explicit":
        values = np.asarray(coef.get("values", []), dtype=float)
        if values.size > width:
            raise ValidationError("more coefficients than basis elements")
        theta[: values.size] = values
        return theta
    raise ValidationError(f"unknown coefficient kind {kind!r}")


def make_scenario(config: dict) -> Scenario:
    """Build a scenario from a config dict (or a named preset).

    Recognized keys: ``preset``; or ``n``, ``sigma``, ``d`` (explicit list)
    or ``M`` + ``d_spacing``, ``coef`` (``{"kind": "geometric"|"zero"|
    "explicit", ...}``), optional ``name``, optional ``basis`` (matrix) or
    ``basis_csv`` (path to a headerless CSV of basis values).
    """
    if not isinstance(config, dict):
        raise ValidationError("scenario config must be a JSON object")
    config = dict(config)
    name = config.pop("name", None)
    preset = config.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged = dict(PRESETS[preset])
        merged.update(config)
        config = merged
        name = name or preset
    if "d" in config:
        d = tuple(int(v) for v in config["d"])
    elif "M" in config:
        spacing = int(config.get("d_spacing", 3))
        d = tuple(spacing * k for k in range(1, int(config["M"]) + 1))
    else:
        raise ValidationError("config needs either 'd' or 'M'")
    n = int(config.get("n", 0))
    sigma = float(config.get("sigma", 0.0))
    basis = None
    if config.get("basis") is not None:
        basis = OrthonormalBasis(np.asarray(config["basis"], dtype=float))
    elif config.get("basis_csv") is not None:
        basis = OrthonormalBasis(np.loadtxt(config["basis_csv"], delimiter=",", ndmin=2))
    width = n if basis is None else basis.size
    theta = _build_theta(config.get("coef", {"kind": "zero"}), width, d[-1] if d else 0)
    return Scenario(
        name=name or "custom",
        n=n,
        sigma=sigma,
        d=d,
        theta=theta,
        basis=basis,
    )


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator to fit per replication: a kind plus its parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _ESTIMATOR_KINDS:
            raise ValidationError(f"unknown estimator kind {self.kind!r}")
        p = dict(self.params)
        object.__setattr__(self, "params", p)
        if self.kind == "stack":
            if p.get("tau", 0) <= 0 or p.get("lambda", 0) <= 0:
                raise ValidationError("stack needs tau > 0 and lambda > 0")
        elif self.kind == "best":
            if p.get("lambda", 0) <= 0:
                raise ValidationError("best needs lambda > 0")
        elif self.kind == "qagg":
            if not (0 < p.get("eta", -1) < 1):
                raise ValidationError("qagg needs eta in (0, 1)")
        elif self.kind == "ensemble":
            if p.get("m", 0) < 2 or p.get("B", 0) < 1 or p.get("lambda", 0) <= 0:
                raise ValidationError("ensemble needs m >= 2, B >= 1 and lambda > 0")
        elif self.kind == "james_stein":
            if p.get("k", 0) < 1:
                raise ValidationError("james_stein needs a model index k >= 1")
        elif self.kind == "fixed_projection":
            if p.get("k", -1) < 0:
                raise ValidationError("fixed_projection needs k >= 0 (0 is the null model)")

    @classmethod
    def from_config(cls, payload) -> "EstimatorSpec":
        if isinstance(payload, str):
            return cls(kind=payload)
        if isinstance(payload, dict):
            payload = dict(payload)
            kind = payload.pop("kind", None)
            if kind is None:
                raise ValidationError("estimator config needs a 'kind'")
            return cls(kind=kind, params=payload)
        raise ValidationError("estimator config must be a string or object")

    @property
    def label(self) -> str:
        if not self.params:
            return self.kind
        inner = ",".join(f"{k}={_fmt_param(v)}" for k, v in sorted(self.params.items()))
        return f"{self.kind}({inner})"


def _fmt_param(v) -> str:
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


class _SimContext:
    """Per-run precomputation shared by every replication."""

    def __init__(self, scenario: Scenario, estimators: tuple[EstimatorSpec, ...]):
        self.scenario = scenario
        d = np.asarray(scenario.d, dtype=float)
        self.d_max = scenario.d[-1]
        self.delta_d = np.diff(np.concatenate([[0.0], d]))
        self.kmap = np.repeat(
            np.arange(scenario.count),
            np.diff(np.concatenate([[0], np.asarray(scenario.d)])),
        )
        self.block_edges = np.concatenate([[0], np.asarray(scenario.d)])
        self.theta_a = scenario.theta[: self.d_max]
        self.tail_bias = float(np.sum(scenario.theta[self.d_max :] ** 2))
        self.sqrt_n = math.sqrt(scenario.n)
        self.oracle: dict | None = None
        self.ensemble_subsets: dict[int, np.ndarray] = {}
        for spec in estimators:
            if spec.kind == "oracle_stack" and self.oracle is None:
                self.oracle = _oracle_telescoping(scenario, float(spec.params.get("tol", _ORACLE_TOL)))


def _oracle_telescoping(scenario: Scenario, tol: float) -> dict:
    """Population-risk-optimal fixed weights, by exact coordinate descent.

    In the sequence model the population risk of fixed weights is a convex
    quadratic of the telescoping coefficients,
    ``sum_k T_k (1 - c_k)^2 + (sigma^2/n) dd_k c_k^2`` plus a constant, so
    cyclic coordinate descent over alpha >= 0 with exact per-coordinate
    minimization converges to the global optimum.
    """
    d = np.concatenate([[0], np.asarray(scenario.d)])
    m = scenario.count
    energy = np.array(
        [float(np.sum(scenario.theta[d[k] : d[k + 1]] ** 2)) for k in range(m)]
    )
    noise = (scenario.sigma2 / scenario.n) * np.diff(d.astype(float))
    weight = energy + noise  # curvature of each block quadratic
    alpha = np.zeros(m)
    c = np.zeros(m)
    sweeps = 0
    max_sweeps = 100_000
    while sweeps < max_sweeps:
        sweeps += 1
        moved = 0.0
        for k in range(m):
            grad = 2.0 * float(np.sum(weight[: k + 1] * c[: k + 1] - energy[: k + 1]))
            hess = 2.0 * float(np.sum(weight[: k + 1]))
            step = max(-alpha[k], -grad / hess)
            if step != 0.0:
                alpha[k] += step
                c[: k + 1] += step
                moved = max(moved, abs(step))
        if moved <= tol:
            break
    risk = float(np.sum(energy * (1.0 - c) ** 2 + noise * c * c)) + float(
        np.sum(scenario.theta[d[-1] :] ** 2)
    )
    return {"c": c, "alpha": alpha, "tol": tol, "sweeps": sweeps, "population_risk": risk}


def _draw_coefficients(scenario: Scenario, rng: np.random.Generator):
    """Return (b, e, R0): basis coefficients of y and eps, and ||y||^2."""
    if scenario.basis is None:
        g = rng.standard_normal(scenario.n)
        e = g / math.sqrt(scenario.n)
        b = scenario.theta + scenario.sigma * e
        r0 = float(b @ b)
        return b, e, r0
    eps = rng.standard_normal(scenario.n)
    y = scenario.basis.vectors @ scenario.theta + scenario.sigma * eps
    b = scenario.basis.vectors.T @ y / scenario.n
    e = scenario.basis.vectors.T @ eps / scenario.n
    r0 = float(y @ y) / scenario.n
    return b, e, r0


def _sequence_from_draw(scenario: Scenario, ctx: _SimContext, b: np.ndarray, r0: float):
    sq = b[: ctx.d_max] ** 2
    cumulative = np.cumsum(sq)
    r = r0 - cumulative[np.asarray(scenario.d) - 1]
    seq = NestedModelSequence(
        n=scenario.n,
        sigma2=scenario.sigma2,
        d=scenario.d,
        R0=r0,
        R=tuple(float(v) for v in r),
    )
    return seq, np.concatenate([[r0], r])


def _fit_one(
    spec: EstimatorSpec,
    seq: NestedModelSequence,
    gamma: np.ndarray,
    rng: np.random.Generator,
    ctx: _SimContext,
):
    """Return (telescoping coefficients c, diagnostics dict or None)."""
    kind = spec.kind
    p = spec.params
    m = seq.count
    if kind == "fixed_projection":
        k = int(p["k"])
        if k > m:
            raise ValidationError(f"{spec.label}: model index exceeds M")
        c = np.where(np.arange(1, m + 1) <= k, 1.0, 0.0)
        return c, None
    if kind == "james_stein":
        k = int(p["k"])
        factor = james_stein_factor(seq, k, positive_part=bool(p.get("positive_part", False)))
        c = np.where(np.arange(1, m + 1) <= k, factor, 0.0)
        return c, None
    if kind == "best":
        sel = best_single(seq, float(p["lambda"]))
        c = np.where(np.arange(1, m + 1) <= sel.m_hat, 1.0, 0.0)
        diag = {
            "l0": 1.0 if sel.m_hat > 0 else 0.0,
            "sum": 1.0 if sel.m_hat > 0 else 0.0,
            "dim": float(seq.d[sel.m_hat - 1]) if sel.m_hat > 0 else 0.0,
            "alpha": None,
        }
        return c, diag
    if kind == "stack":
        c = _telescoping(gamma, float(p["tau"]), float(p["lambda"]))
        alpha = c - np.concatenate([c[1:], [0.0]])
        return c, _weights_diag(alpha, seq)
    if kind == "l0stack":
        w = l0_stack_weights(seq, value_weighted_penalty=bool(p.get("value_weighted", False)))
        c = np.cumsum(w.alpha[::-1])[::-1]
        return c, _weights_diag(w.alpha, seq)
    if kind == "qagg":
        w = qagg_weights(seq, float(p["eta"]))
        c = np.cumsum(w.alpha[::-1])[::-1]
        return c, _weights_diag(w.alpha, seq)
    if kind == "oracle_stack":
        info = ctx.oracle
        return info["c"].copy(), _weights_diag(info["alpha"], seq)
    if kind == "ensemble":
        c = _ensemble_coefficients(spec, seq, rng, ctx)
        alpha = c - np.concatenate([c[1:], [0.0]])
        return c, _weights_diag(alpha, seq)
    raise ValidationError(f"unknown estimator kind {kind!r}")


def _weights_diag(alpha: np.ndarray, seq: NestedModelSequence) -> dict:
    nonzero = np.abs(alpha) > NONZERO_ATOL
    d = np.asarray(seq.d, dtype=float)
    return {
        "l0": float(np.count_nonzero(nonzero)),
        "sum": float(alpha.sum()),
        "dim": float(d[nonzero].max()) if nonzero.any() else 0.0,
        "alpha": alpha,
    }


def _ensemble_coefficients(
    spec: EstimatorSpec, seq: NestedModelSequence, rng: np.random.Generator, ctx: _SimContext
) -> np.ndarray:
    m = int(spec.params["m"])
    lam = float(spec.params["lambda"])
    B = int(spec.params["B"])
    mode = spec.params.get("mode", "auto")
    if m > seq.count + 1:
        raise ValidationError(f"{spec.label}: need m <= M + 1")
    size = m - 1
    total = math.comb(seq.count, size)
    criteria = _criteria(seq, lam)
    if mode == "exact" or (mode == "auto" and total <= 10_000):
        if size not in ctx.ensemble_subsets:
            ctx.ensemble_subsets[size] = np.array(
                list(itertools.combinations(range(1, seq.count + 1), size)), dtype=int
            )
        subsets = ctx.ensemble_subsets[size]
        counts = np.zeros(seq.count)
        for subset in subsets:
            cutoff = _restricted_cutoff(criteria, subset)
            counts[:cutoff] += 1.0
        return counts / total
    cutoffs = _sample_restricted_cutoffs(criteria, seq.count, size, B, rng)
    indicator = cutoffs[:, None] >= np.arange(1, seq.count + 1)[None, :]
    return indicator.mean(axis=0)


def _improve_plugin(seq_risks: np.ndarray, scenario: Scenario, tau: float) -> float:
    """Per-replication plug-in of the risk-gap lower bound's first term."""
    rate = scenario.sigma2 / scenario.n
    d = np.asarray(scenario.d, dtype=float)
    k = np.arange(1, scenario.count + 1, dtype=float)
    numer = (d - 4.0 * k / (2.0 - tau)) ** 2
    denom = seq_risks[0] - seq_risks[1:]
    return float(rate * rate * tau * (2.0 - tau) * np.min(numer / denom))


_STATS = (
    "loss", "emp", "dfstat", "identity", "corrected", "l0", "sum", "dim",
    "plugin", "js_plugin",
)


def _run_range(
    scenario: Scenario,
    estimators: tuple[EstimatorSpec, ...],
    seed: int,
    start: int,
    stop: int,
    plugin_tau: float | None,
    js_plugin_k: int | None = None,
):
    """Simulate replications [start, stop); returns per-rep stat arrays."""
    ctx = _SimContext(scenario, estimators)
    ne = len(estimators)
    count = stop - start
    out = {name: np.full((count, ne), np.nan) for name in _STATS}
    failed = np.zeros((count, ne), dtype=bool)
    rate = scenario.sigma2 / scenario.n
    n_over_sigma = scenario.n / scenario.sigma

    for row, r in enumerate(range(start, stop)):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(r)]))
        b, e, r0 = _draw_coefficients(scenario, rng)
        try:
            seq, risks = _sequence_from_draw(scenario, ctx, b, r0)
        except (DegeneracyError, ValidationError):
            failed[row, :] = True
            continue
        gamma = gamma_sequence(seq).gamma
        b_a = b[: ctx.d_max]
        e_a = e[: ctx.d_max]
        delta_r = -np.diff(risks)
        if plugin_tau is not None:
            out["plugin"][row, :] = _improve_plugin(risks, scenario, plugin_tau)
        if js_plugin_k is not None:
            dk = scenario.d[js_plugin_k - 1]
            out["js_plugin"][row, :] = (
                rate * rate * (dk - 2.0) ** 2 / (risks[0] - risks[js_plugin_k])
            )
        for j, spec in enumerate(estimators):
            try:
                c, diag = _fit_one(spec, seq, gamma, rng, ctx)
            except (ValidationError, DegeneracyError) as exc:
                failed[row, j] = True
                logger.debug("replication %d: %s failed: %s", r, spec.label, exc)
                continue
            c_per = c[ctx.kmap]
            resid = ctx.theta_a - c_per * b_a
            loss = float(resid @ resid) + ctx.tail_bias
            emp = float(r0 + np.sum(delta_r * (c * c - 2.0 * c)))
            dfstat = n_over_sigma * float(e_a @ (c_per * b_a))
            out["loss"][row, j] = loss
            out["emp"][row, j] = emp
            out["dfstat"][row, j] = dfstat
            out["identity"][row, j] = loss - (emp + 2.0 * rate * dfstat - scenario.sigma2)
            if diag is not None:
                out["l0"][row, j] = diag["l0"]
                out["sum"][row, j] = diag["sum"]
                out["dim"][row, j] = diag["dim"]
                if diag["alpha"] is not None:
                    corrected = adaptive_risk_correction(seq, diag["alpha"])
                    out["corrected"][row, j] = loss - corrected
    return out, failed


def run_replication(
    scenario: Scenario,
    estimators,
    seed: int,
    rep: int = 0,
) -> dict[str, float]:
    """One replication: losses ||f - f_hat||^2 per estimator label.

    Identical to replication ``rep`` of :func:`monte_carlo` with the same
    base seed.  Estimator failures yield NaN entries rather than raising.
    """
    specs = _as_specs(estimators)
    out, failed = _run_range(scenario, specs, int(seed), rep, rep + 1, None)
    return {
        spec.label: (float("nan") if failed[0, j] else float(out["loss"][0, j]))
        for j, spec in enumerate(specs)
    }


def _as_specs(estimators) -> tuple[EstimatorSpec, ...]:
    specs = tuple(
        e if isinstance(e, EstimatorSpec) else EstimatorSpec.from_config(e) for e in estimators
    )
    if not specs:
        raise ValidationError("need at least one estimator")
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValidationError("estimator labels must be unique")
    return specs


@dataclass
class EstimatorReport:
    label: str
    kind: str
    nrep: int
    failures: int
    mean_loss: float | None
    se_loss: float | None
    ci_low: float | None
    ci_high: float | None
    df_mean: float | None = None
    df_se: float | None = None
    identity_mean: float | None = None
    identity_se: float | None = None
    corrected_mean: float | None = None
    corrected_se: float | None = None
    mean_l0: float | None = None
    mean_sum: float | None = None
    mean_dim: float | None = None


@dataclass
class GapReport:
    first: str
    second: str
    mean: float | None
    se: float | None
    ci_low: float | None
    ci_high: float | None


@dataclass
class RiskReport:
    """Monte Carlo risk estimates with standard errors and 99% CIs.

    ``samples`` holds the raw per-replication statistic arrays (loss,
    empirical risk, df statistic, ...) keyed by name; it stays in memory
    for paired follow-up analyses and is never serialized.
    """

    scenario: str
    nrep: int
    seed: int
    ci_level: float
    estimators: list[EstimatorReport]
    gaps: list[GapReport]
    extras: dict
    samples: dict | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "nrep": self.nrep,
            "seed": self.seed,
            "ci_level": self.ci_level,
            "estimators": [vars(e) for e in self.estimators],
            "gaps": [vars(g) for g in self.gaps],
            "extras": self.extras,
        }

    def to_csv(self) -> str:
        from .serialize import _format_float

        def cell(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return _format_float(v)
            return str(v)

        header = [
            "kind", "label", "mean", "se", "ci_low", "ci_high", "nrep", "failures",
            "df_mean", "df_se", "identity_mean", "identity_se",
            "corrected_mean", "corrected_se", "mean_l0", "mean_sum", "mean_dim",
        ]
        lines = [",".join(header)]
        for e in self.estimators:
            lines.append(",".join(cell(v) for v in [
                "estimator", e.label, e.mean_loss, e.se_loss, e.ci_low, e.ci_high,
                e.nrep, e.failures, e.df_mean, e.df_se, e.identity_mean,
                e.identity_se, e.corrected_mean, e.corrected_se,
                e.mean_l0, e.mean_sum, e.mean_dim,
            ]))
        for g in self.gaps:
            lines.append(",".join(cell(v) for v in [
                "gap", f"{g.first} - {g.second}", g.mean, g.se, g.ci_low, g.ci_high,
                self.nrep, "", "", "", "", "", "", "", "", "", "",
            ]))
        return "\n".join(lines) + "\n"


def _mean_se(values: np.ndarray) -> tuple[float | None, float | None]:
    vals = values[~np.isnan(values)]
    if vals.size == 0:
        return None, None
    items = vals.tolist()
    mean = math.fsum(items) / len(items)
    if len(items) < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in items) / (len(items) - 1)
    return mean, math.sqrt(var / len(items))


def _z_value(ci_level: float) -> float:
    return statistics.NormalDist().inv_cdf(0.5 + ci_level / 2.0)


def monte_carlo(
    scenario: Scenario,
    estimators,
    nrep: int,
    seed: int,
    jobs: int = 1,
    ci_level: float = 0.99,
    plugin_tau: float | None = None,
    js_plugin_k: int | None = None,
) -> RiskReport:
    """Replicated fits with common random numbers across estimators.

    Pairwise gap estimates are computed from per-replication loss
    differences (same noise vector for every estimator), which is what
    makes small risk gaps resolvable at desk scale.  The returned report
    keeps the raw per-replication statistic arrays on its ``samples``
    attribute (in memory only, never serialized).
    """
    if nrep < 2:
        raise ValidationError("need at least two replications")
    if seed < 0:
        raise ValidationError("seed must be nonnegative")
    specs = _as_specs(estimators)
    stats, failed = _collect(scenario, specs, nrep, seed, jobs, plugin_tau, js_plugin_k)
    z = _z_value(ci_level)

    reports = []
    for j, spec in enumerate(specs):
        loss = stats["loss"][:, j]
        mean, se = _mean_se(loss)
        df_mean, df_se = _mean_se(stats["dfstat"][:, j])
        id_mean, id_se = _mean_se(stats["identity"][:, j])
        co_mean, co_se = _mean_se(stats["corrected"][:, j])
        l0_mean, _ = _mean_se(stats["l0"][:, j])
        sum_mean, _ = _mean_se(stats["sum"][:, j])
        dim_mean, _ = _mean_se(stats["dim"][:, j])
        reports.append(
            EstimatorReport(
                label=spec.label,
                kind=spec.kind,
                nrep=nrep,
                failures=int(failed[:, j].sum()),
                mean_loss=mean,
                se_loss=se,
                ci_low=None if se is None else mean - z * se,
                ci_high=None if se is None else mean + z * se,
                df_mean=df_mean,
                df_se=df_se,
                identity_mean=id_mean,
                identity_se=id_se,
                corrected_mean=co_mean,
                corrected_se=co_se,
                mean_l0=l0_mean,
                mean_sum=sum_mean,
                mean_dim=dim_mean,
            )
        )

    gaps = []
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            diff = stats["loss"][:, i] - stats["loss"][:, j]
            mean, se = _mean_se(diff)
            gaps.append(
                GapReport(
                    first=specs[i].label,
                    second=specs[j].label,
                    mean=mean,
                    se=se,
                    ci_low=None if se is None else mean - z * se,
                    ci_high=None if se is None else mean + z * se,
                )
            )

    extras: dict = {}
    if plugin_tau is not None:
        p_mean, p_se = _mean_se(stats["plugin"][:, 0])
        extras["improve_plugin"] = {"tau": plugin_tau, "mean": p_mean, "se": p_se}
    for spec in specs:
        if spec.kind == "oracle_stack":
            info = _oracle_telescoping(scenario, float(spec.params.get("tol", _ORACLE_TOL)))
            extras["oracle_stack"] = {
                "tol": info["tol"],
                "sweeps": info["sweeps"],
                "alpha": list(info["alpha"]),
                "population_risk": info["population_risk"],
            }
            break
    report = RiskReport(
        scenario=scenario.name,
        nrep=nrep,
        seed=seed,
        ci_level=ci_level,
        estimators=reports,
        gaps=gaps,
        extras=extras,
    )
    report.samples = stats  # per-replication arrays for paired follow-ups
    return report


def _collect(scenario, specs, nrep, seed, jobs, plugin_tau, js_plugin_k=None):
    if jobs <= 1:
        piece = _run_range(scenario, specs, seed, 0, nrep, plugin_tau, js_plugin_k)
        return _finish_collect([(0, piece)], nrep, specs)
    jobs = min(jobs, nrep)
    bounds = np.linspace(0, nrep, jobs + 1, dtype=int)
    pieces = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = {
            pool.submit(
                _run_range, scenario, specs, seed, int(a), int(b), plugin_tau, js_plugin_k
            ): int(a)
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        }
        for fut, start in ((f, s) for f, s in futures.items()):
            pieces.append((start, fut.result()))
    pieces.sort(key=lambda item: item[0])
    return _finish_collect(pieces, nrep, specs)


def _finish_collect(pieces, nrep, specs):
    ne = len(specs)
    stats = {name: np.full((nrep, ne), np.nan) for name in _STATS}
    failed = np.zeros((nrep, ne), dtype=bool)
    for start, (out, fail) in pieces:
        count = fail.shape[0]
        for name in _STATS:
            stats[name][start : start + count] = out[name]
        failed[start : start + count] = fail
    return stats, failed


def risk_gap_experiment(
    config: dict,
    nrep: int,
    seed: int,
    jobs: int = 1,
) -> RiskReport:
    """Paired gap between the best single model and the stacked model.

    Reports the common-random-number estimate of
    ``E||f - f_best||^2 - E||f - f_stack||^2`` with a 99% CI, plus the
    per-replication plug-in of the theoretical lower bound's first term
    and the paired margin between the two.  Emits a warning when the
    (tau, dimension-spacing) conditions backing positivity do not hold.
    """
    config = dict(config)
    tau = float(config.get("tau", 0.5))
    lam = float(config.get("lambda", 2.0))
    scenario = make_scenario(config.get("scenario", config))
    spacing_ok = all(b - a >= 3 for a, b in zip((0,) + scenario.d, scenario.d))
    if not (spacing_ok and 0 < tau <= 2.0 / 3.0):
        logger.warning(
            "dimension spacing >= 3 with tau <= 2/3 not satisfied; "
            "the positive-gap guarantee does not apply"
        )
    estimators = [
        EstimatorSpec("best", {"lambda": lam}),
        EstimatorSpec("stack", {"tau": tau, "lambda": lam}),
    ]
    report = monte_carlo(
        scenario, estimators, nrep, seed, jobs=jobs, plugin_tau=tau
    )
    stats = report.samples
    gap_values = stats["loss"][:, 0] - stats["loss"][:, 1]
    margin = gap_values - stats["plugin"][:, 0]
    g_mean, g_se = _mean_se(gap_values)
    m_mean, m_se = _mean_se(margin)
    z = _z_value(report.ci_level)
    report.extras.update(
        {
            "tau": tau,
            "lambda": lam,
            "dimension_condition_ok": bool(spacing_ok and 0 < tau <= 2.0 / 3.0),
            "gap": {
                "mean": g_mean,
                "se": g_se,
                "ci_low": None if g_se is None else g_mean - z * g_se,
                "ci_high": None if g_se is None else g_mean + z * g_se,
            },
            "margin_over_plugin": {"mean": m_mean, "se": m_se},
        }
    )
    return report


@dataclass
class DfReport:
    """Monte Carlo degrees of freedom with the optimism-identity check."""

    label: str
    nrep: int
    seed: int
    df_mean: float
    df_se: float
    identity_mean: float
    identity_se: float
    corrected_mean: float | None
    corrected_se: float | None

    def to_dict(self) -> dict:
        return vars(self)


def estimate_df(
    scenario: Scenario,
    estimator,
    nrep: int,
    seed: int,
    jobs: int = 1,
) -> DfReport:
    """Estimate df = sum_i cov(y_i, f_hat(x_i)) / sigma^2 by Monte Carlo.

    Also evaluates, on the same draws, the optimism identity residual
    ``loss - (empirical risk + 2 sigma^2 df / n - sigma^2)`` (zero in
    expectation for nonadaptive weights) and, for weight-learning
    estimators, the residual of the adaptive correction.
    """
    if nrep < 1000:
        raise ValidationError("df estimation needs at least 1000 replications")
    spec = _as_specs([estimator])[0]
    report = monte_carlo(scenario, [spec], nrep, seed, jobs=jobs)
    est = report.estimators[0]
    return DfReport(
        label=est.label,
        nrep=nrep,
        seed=seed,
        df_mean=est.df_mean,
        df_se=est.df_se,
        identity_mean=est.identity_mean,
        identity_se=est.identity_se,
        corrected_mean=est.corrected_mean,
        corrected_se=est.corrected_se,
    )


@dataclass
class BreimanSummary:
    """Descriptive sparsity/dimension statistics for stacked fits."""

    nrep: int
    seed: int
    stack_label: str
    mean_l0_stack: float
    mean_sum_stack: float
    mean_dim_stack: float
    mean_l0_l0stack: float
    mean_sum_l0stack: float
    mean_dim_l0stack: float
    mean_dim_best: float
    l0_null_count: int

    def to_dict(self) -> dict:
        return vars(self)


def breiman_stats(
    scenario: Scenario,
    nrep: int,
    seed: int,
    tau: float = 0.5,
    lam: float = 2.0,
    jobs: int = 1,
) -> BreimanSummary:
    """Average weight count, weight sum and model dimension across draws.

    Purely descriptive, but three facts are enforced on every replication:
    weight sums stay below one, the weight count never exceeds M, and the
    l0-stacked dimension is at least the best single model's (lambda = 2)
    whenever the l0 solution is non-null.  Null l0 solutions are counted
    and logged, not asserted against.
    """
    specs = [
        EstimatorSpec("stack", {"tau": tau, "lambda": lam}),
        EstimatorSpec("l0stack"),
        EstimatorSpec("best", {"lambda": 2.0}),
    ]
    report = monte_carlo(scenario, specs, nrep, seed, jobs=jobs)
    stats = report.samples
    sums = stats["sum"]
    l0s = stats["l0"]
    dims = stats["dim"]
    ok = ~np.isnan(sums[:, 0]) & ~np.isnan(sums[:, 1])
    if np.any(sums[ok, 0] >= 1.0) or np.any(sums[ok, 1] >= 1.0):
        raise ValidationError("weight sum reached 1 on some replication")
    if np.any(l0s[ok, :2] > scenario.count):
        raise ValidationError("weight count exceeded the number of models")
    non_null = ok & (dims[:, 1] > 0)
    if np.any(dims[non_null, 1] < dims[non_null, 2]):
        raise ValidationError(
            "l0-stacked dimension fell below the best single model on a non-null fit"
        )
    null_count = int(np.count_nonzero(ok & (dims[:, 1] == 0)))
    if null_count:
        logger.info(
            "l0 stacking returned the null model on %d of %d replications", null_count, nrep
        )
    return BreimanSummary(
        nrep=nrep,
        seed=seed,
        stack_label=specs[0].label,
        mean_l0_stack=_mean_se(l0s[:, 0])[0],
        mean_sum_stack=_mean_se(sums[:, 0])[0],
        mean_dim_stack=_mean_se(dims[:, 0])[0],
        mean_l0_l0stack=_mean_se(l0s[:, 1])[0],
        mean_sum_l0stack=_mean_se(sums[:, 1])[0],
        mean_dim_l0stack=_mean_se(dims[:, 1])[0],
        mean_dim_best=_mean_se(dims[:, 2])[0],
        l0_null_count=null_count,
    )
