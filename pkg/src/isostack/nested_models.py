"""Nested least-squares projection families over an orthonormal basis.

Everything here uses the *empirical* inner product

    <u, v> = (1/n) sum_i u_i v_i,

so basis vectors have unit empirical norm, not unit Euclidean norm.  Many
linear-algebra libraries normalize with unnormalized sums; mixing the two
conventions silently corrupts every risk computed downstream, hence the
loud reminder.

A fitted family is summarized by its sufficient statistics: the model
dimensions ``d_1 < ... < d_M``, the empirical risks ``R_0 > R_1 > ... >=
0``, the sample size ``n`` and the (known) noise variance ``sigma2``.
Optional per-increment coefficient blocks allow exact prediction and
residual checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, ValidationError

ORTHO_RTOL = 1e-10
DROP_RTOL = 1e-10
PYTHAGORAS_RTOL = 1e-10


def empirical_inner(u: np.ndarray, v: np.ndarray) -> float:
    """Empirical inner product (1/n-averaged)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(u @ v) / u.shape[0]


def empirical_norm2(u: np.ndarray) -> float:
    """Squared empirical norm (1/n-averaged)."""
    u = np.asarray(u, dtype=float)
    return float(u @ u) / u.shape[0]


def _validate_design(design) -> np.ndarray:
    x = np.asarray(design, dtype=float)
    if x.ndim != 2:
        raise ValidationError("design matrix must be two-dimensional")
    n, p = x.shape
    if n < 1 or p < 1:
        raise ValidationError("design matrix needs at least one row and one column")
    if not np.all(np.isfinite(x)):
        raise ValidationError("design matrix entries must be finite")
    return x


@dataclass(frozen=True)
class OrthonormalBasis:
    """Basis vectors evaluated at the n design points, one per column.

    ``vectors[:, l]`` holds psi_l at the design points; columns are unit
    norm and mutually orthogonal under the empirical inner product (checked
    to ``ORTHO_RTOL``).  ``source`` records provenance: "given",
    "gram-schmidt" or "synthetic-sequence-model".  ``dropped`` lists the
    original column indices removed during orthonormalization.
    """

    vectors: np.ndarray
    source: str = "given"
    dropped: tuple[int, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        object.__setattr__(self, "vectors", v)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError("basis must be a nonempty n-by-L matrix")
        if not np.all(np.isfinite(v)):
            raise ValidationError("basis entries must be finite")
        gram = (v.T @ v) / v.shape[0]
        err = np.abs(gram - np.eye(v.shape[1])).max()
        if err > ORTHO_RTOL:
            raise ValidationError(
                f"basis is not orthonormal under the empirical inner product "
                f"(max deviation {err:.3e} > {ORTHO_RTOL:.0e})"
            )

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def size(self) -> int:
        return self.vectors.shape[1]


def sequence_model_basis(n: int) -> OrthonormalBasis:
    """Scaled-indicator basis psi_l(x_i) = sqrt(n) * 1(i == l)."""
    if n < 1:
        raise ValidationError("need n >= 1")
    return OrthonormalBasis(np.sqrt(n) * np.eye(n), source="synthetic-sequence-model")


def orthonormalize(design) -> OrthonormalBasis:
    """Orthonormalize design columns under the empirical inner product.

    Modified Gram-Schmidt with one re-orthogonalization pass.  Columns
    whose residual empirical norm falls below ``DROP_RTOL`` times their
    original norm are dropped and reported via ``basis.dropped``.

    Raises
    ------
    DegeneracyError
        If no column survives ("degenerate design").
    """
    x = _validate_design(design)
    kept: list[np.ndarray] = []
    dropped: list[int] = []
    for j in range(x.shape[1]):
        v = x[:, j].copy()
        orig = np.sqrt(empirical_norm2(v))
        for _ in range(2):
            for q in kept:
                v -= empirical_inner(v, q) * q
        resid = np.sqrt(empirical_norm2(v))
        if orig == 0.0 or resid <= DROP_RTOL * orig:
            dropped.append(j)
        else:
            kept.append(v / resid)
    if not kept:
        raise DegeneracyError("degenerate design: no independent columns")
    return OrthonormalBasis(np.column_stack(kept), source="gram-schmidt", dropped=tuple(dropped))


@dataclass(frozen=True)
class NestedIndexSets:
    """Strictly nested basis-index sets A_1 < A_2 < ... < A_M.

    Stored as tuples of sorted indices; ``increments(k)`` returns the new
    indices A_k \\ A_{k-1} in ascending order, which fixes the coefficient
    ordering used everywhere else.
    """

    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        normalized = tuple(tuple(sorted(int(i) for i in s)) for s in self.sets)
        object.__setattr__(self, "sets", normalized)
        if not normalized:
            raise ValidationError("need at least one index set")
        prev: frozenset[int] = frozenset()
        for k, s in enumerate(normalized):
            cur = frozenset(s)
            if len(cur) != len(s):
                raise ValidationError(f"set {k + 1} has duplicate indices")
            if min(s) < 0:
                raise ValidationError("indices must be nonnegative")
            if not (prev < cur):
                raise ValidationError("index sets must be strictly nested")
            prev = cur

    @classmethod
    def sequential(cls, dims) -> "NestedIndexSets":
        """A_k = {0, ..., d_k - 1} for a strictly increasing dim schedule."""
        return cls(tuple(tuple(range(int(d))) for d in dims))

    @property
    def count(self) -> int:
        return len(self.sets)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.sets)

    def increments(self, k: int) -> tuple[int, ...]:
        prev = set(self.sets[k - 1]) if k > 0 else set()
        return tuple(i for i in self.sets[k] if i not in prev)

    def max_index(self) -> int:
        return max(self.sets[-1])


@dataclass(frozen=True)
class NestedModelSequence:
    """Sufficient statistics of a nested projection family.

    ``d`` is strictly increasing with the implicit ``d_0 = 0``; ``R`` is
    strictly decreasing with ``R_0 > R_1`` and ``R_M >= 0``.  When
    ``coef_blocks`` is present, block k holds the empirical basis
    coefficients of the increment A_k \\ A_{k-1}, and the Pythagoras
    identity ``R_{k-1} - R_k = sum of squared block coefficients`` is
    enforced to ``PYTHAGORAS_RTOL`` relative to R_0.
    """

    n: int
    sigma2: float
    d: tuple[int, ...]
    R0: float
    R: tuple[float, ...]
    coef_blocks: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(int(v) for v in self.d))
        object.__setattr__(self, "R", tuple(float(v) for v in self.R))
        object.__setattr__(self, "R0", float(self.R0))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "n", int(self.n))
        if self.n < 1:
            raise ValidationError("need n >= 1")
        if self.sigma2 <= 0 or not np.isfinite(self.sigma2):
            raise ValidationError("sigma2 must be positive and finite")
        if len(self.d) < 1 or len(self.d) != len(self.R):
            raise ValidationError("d and R must be nonempty and equally long")
        if self.d[0] < 1 or any(b <= a for a, b in zip(self.d, self.d[1:])):
            raise ValidationError("dimensions must be strictly increasing positive integers")
        risks = (self.R0,) + self.R
        if not all(np.isfinite(risks)):
            raise ValidationError("risks must be finite")
        if any(b >= a for a, b in zip(risks, risks[1:])):
            raise DegeneracyError("non-strict risk decrease")
        if self.R[-1] < 0:
            raise ValidationError("risks must be nonnegative")
        if self.coef_blocks is not None:
            blocks = tuple(tuple(float(c) for c in blk) for blk in self.coef_blocks)
            object.__setattr__(self, "coef_blocks", blocks)
            if len(blocks) != len(self.d):
                raise ValidationError("need one coefficient block per model")
            dims = (0,) + self.d
            scale = max(abs(self.R0), 1.0)
            for k, blk in enumerate(blocks):
                if len(blk) != dims[k + 1] - dims[k]:
                    raise ValidationError(f"coefficient block {k + 1} has wrong length")
                gap = risks[k] - risks[k + 1]
                ss = float(np.sum(np.square(blk)))
                if abs(gap - ss) > PYTHAGORAS_RTOL * scale:
                    raise ValidationError(
                        f"block {k + 1} violates the Pythagoras identity "
                        f"(risk drop {gap:.6e} vs coefficient energy {ss:.6e})"
                    )

    @property
    def count(self) -> int:
        return len(self.d)

    @property
    def noise_rate(self) -> float:
        """sigma^2 / n, the per-coefficient noise variance."""
        return self.sigma2 / self.n

    @property
    def delta_d(self) -> np.ndarray:
        return np.diff(np.concatenate([[0], self.d])).astype(float)

    @property
    def delta_R(self) -> np.ndarray:
        return -np.diff(np.concatenate([[self.R0], self.R]))

    def to_dict(self) -> dict:
        out = {
            "sigma2": self.sigma2,
            "n": self.n,
            "d": list(self.d),
            "R0": self.R0,
            "R": list(self.R),
        }
        if self.coef_blocks is not None:
            out["coef_blocks"] = [list(b) for b in self.coef_blocks]
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "NestedModelSequence":
        try:
            return cls(
                n=payload["n"],
                sigma2=payload["sigma2"],
                d=payload["d"],
                R0=payload["R0"],
                R=payload["R"],
                coef_blocks=payload.get("coef_blocks"),
            )
        except KeyError as exc:
            raise ValidationError(f"sequence JSON is missing field {exc}") from exc


def fit_nested(
    basis: OrthonormalBasis,
    y,
    sets: NestedIndexSets,
    sigma2: float,
) -> NestedModelSequence:
    """Project the response onto each nested subspace and record the risks.

    ``R_k`` is computed as ``R_0`` minus the accumulated squared basis
    coefficients, which equals the direct residual norm by Pythagoras.
    An exact tie ``R_k >= R_{k-1}`` (a zero increment) raises
    :class:`DegeneracyError`, mirroring the almost-sure strictness of the
    underlying model.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != basis.n:
        raise ValidationError("response must be a vector of length n")
    if not np.all(np.isfinite(y)):
        raise ValidationError("response entries must be finite")
    if sigma2 <= 0:
        raise ValidationError("sigma2 must be positive")
    if sets.max_index() >= basis.size:
        raise ValidationError("index sets refer to basis columns that do not exist")

    coefs = basis.vectors.T @ y / basis.n
    r0 = empirical_norm2(y)
    blocks: list[tuple[float, ...]] = []
    risks: list[float] = []
    prev = r0
    for k in range(sets.count):
        idx = sets.increments(k)
        blk = tuple(float(coefs[i]) for i in idx)
        ss = float(np.sum(np.square(blk)))
        if ss <= 0.0:
            raise DegeneracyError("non-strict risk decrease")
        cur = prev - ss
        if cur < 0.0:
            if cur < -PYTHAGORAS_RTOL * max(r0, 1.0):
                raise ValidationError("risk went negative beyond rounding tolerance")
            cur = 0.0
        blocks.append(blk)
        risks.append(cur)
        prev = cur
    return NestedModelSequence(
        n=basis.n,
        sigma2=float(sigma2),
        d=sets.dims,
        R0=r0,
        R=tuple(risks),
        coef_blocks=tuple(blocks),
    )


def stepwise_deletion_order(design, y) -> NestedIndexSets:
    """Backward stepwise deletion over the design columns.

    Starting from all p variables, repeatedly remove the one whose removal
    increases the least-squares empirical risk least (ties go to the
    lowest column index).  Returns p nested sets: the k-th keeps the
    variables surviving p - k deletions.
    """
    x = _validate_design(design)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise ValidationError("response must be a vector of length n")
    basis = orthonormalize(x)
    if basis.dropped:
        raise ValidationError(
            f"rank-deficient design: columns {list(basis.dropped)} are dependent"
        )

    def risk(columns: list[int]) -> float:
        sub = x[:, columns]
        coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
        return empirical_norm2(y - sub @ coef)

    surviving = list(range(x.shape[1]))
    chain: list[tuple[int, ...]] = [tuple(surviving)]
    while len(surviving) > 1:
        best_j, best_risk = None, np.inf
        for j in surviving:
            candidate = [c for c in surviving if c != j]
            r = risk(candidate)
            if r < best_risk:
                best_j, best_risk = j, r
        surviving = [c for c in surviving if c != best_j]
        chain.append(tuple(surviving))
    chain.reverse()
    return NestedIndexSets(tuple(chain))


def combination_risk(seq: NestedModelSequence, alpha) -> float:
    """Empirical risk of the combination sum_k alpha_k mu_hat_k.

    Uses the exact telescoping identity
    ``R0 + sum_k dR_k (c_k^2 - 2 c_k)`` with ``c_k = sum_{i>=k} alpha_i``,
    which agrees with the direct residual norm whenever coefficient blocks
    exist.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.shape[0] != seq.count:
        raise ValidationError("alpha must have one weight per model")
    if not np.all(np.isfinite(alpha)):
        raise ValidationError("weights must be finite")
    c = np.cumsum(alpha[::-1])[::-1]
    return float(seq.R0 + np.sum(seq.delta_R * (c * c - 2.0 * c)))


def predict_combination(
    basis: OrthonormalBasis,
    sets: NestedIndexSets,
    coef_blocks,
    alpha,
    points=None,
) -> np.ndarray:
    """Evaluate the combined model sum_k alpha_k mu_hat_k.

    ``points`` selects where to predict: ``None`` uses the design points,
    an integer array picks design rows, and a float matrix of basis values
    (one column per basis vector) evaluates at new locations.
    """
    if coef_blocks is None:
        raise ValidationError("missing coefficients: fit with coef_blocks to predict")
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (sets.count,):
        raise ValidationError("alpha must have one weight per model")
    if points is None:
        values = basis.vectors
    else:
        pts = np.asarray(points)
        if pts.ndim == 1 and np.issubdtype(pts.dtype, np.integer):
            values = basis.vectors[pts, :]
        elif pts.ndim == 2 and pts.shape[1] == basis.size:
            values = pts.astype(float)
        else:
            raise ValidationError(
                "points must be design-row indices or a matrix of basis values"
            )
    c = np.cumsum(alpha[::-1])[::-1]
    out = np.zeros(values.shape[0])
    for k in range(sets.count):
        idx = sets.increments(k)
        blk = np.asarray(coef_blocks[k], dtype=float)
        if blk.shape[0] != len(idx):
            raise ValidationError(f"coefficient block {k + 1} has wrong length")
        out += c[k] * (values[:, idx] @ blk)
    return out


def estimate_noise_variance(seq: NestedModelSequence) -> float:
    """Residual-based estimate of sigma^2 from the largest model.

    Returns ``n * R_M / (n - d_M)``.  This helper sits outside the known-
    variance theory backing everything else in the package: the stacking
    guarantees assume sigma^2 is known a priori, so treat this as a rough
    plug-in only.
    """
    if seq.d[-1] >= seq.n:
        raise ValidationError("largest model leaves no residual degrees of freedom")
    return seq.n * seq.R[-1] / (seq.n - seq.d[-1])
