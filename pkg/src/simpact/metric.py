"""Covector algebra under the kinetic-energy metric.

Momenta and contact-manifold normals are row covectors attached to a
fixed configuration. Every inner product and norm in this module uses
the inverse mass matrix as the bilinear form, so "orthogonal" always
means orthogonal in the kinetic-energy sense, not the Euclidean one.
The metric object caches a Cholesky factorization and never forms the
explicit inverse; projections solve small Gram systems built from
metric inner products, which keeps the conditioning of the original
mass matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DegenerateNormalsError, DimensionError, NotPositiveDefiniteError

#: Relative tolerance for the symmetry check at metric construction.
SYMMETRY_RTOL = 1e-12

#: Optional dead-band for feasibility tests; the default tolerance is
#: exactly zero so that boundary momenta count as feasible.
DEADBAND = 1e-12

#: Relative threshold below which a Gram matrix is treated as singular.
GRAM_RCOND = 1e-12


class Feasibility(Enum):
    """Sign classification of a momentum against one contact normal."""

    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class Covector:
    """Row covector with a role tag.

    ``role`` is ``"momentum"`` for momenta and ``"normal"`` for gap
    gradients; the tag is bookkeeping only and does not change any
    arithmetic.
    """

    components: np.ndarray
    role: str = "momentum"

    def __post_init__(self):
        comps = np.atleast_1d(np.asarray(self.components, dtype=float))
        if comps.ndim != 1:
            raise DimensionError("covector components must be one dimensional")
        if self.role not in ("momentum", "normal"):
            raise ValueError(f"unknown covector role {self.role!r}")
        object.__setattr__(self, "components", comps)

    def __len__(self) -> int:
        return self.components.size


CovectorLike = Union[Covector, Sequence[float], np.ndarray]


def momentum(components) -> Covector:
    return Covector(np.asarray(components, dtype=float), role="momentum")


def normal(components) -> Covector:
    return Covector(np.asarray(components, dtype=float), role="normal")


def _row(a: CovectorLike) -> np.ndarray:
    if isinstance(a, Covector):
        return a.components
    arr = np.atleast_1d(np.asarray(a, dtype=float))
    if arr.ndim != 1:
        raise DimensionError("expected a one dimensional covector")
    return arr


class KineticMetric:
    """Mass matrix at one configuration plus its Cholesky factorization.

    The factorization is sufficient to apply the inverse mass matrix to
    covectors; the inverse itself is never formed.
    """

    def __init__(self, mass):
        mass = np.asarray(mass, dtype=float)
        if mass.ndim != 2 or mass.shape[0] != mass.shape[1]:
            raise DimensionError(f"mass matrix must be square, got shape {mass.shape}")
        scale = np.abs(mass).max()
        if scale == 0.0 or not np.isfinite(scale):
            raise NotPositiveDefiniteError("mass matrix is zero or non-finite")
        if np.abs(mass - mass.T).max() > SYMMETRY_RTOL * scale:
            raise NotPositiveDefiniteError("mass matrix is not symmetric")
        mass = 0.5 * (mass + mass.T)
        try:
            factor = cho_factor(mass, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise NotPositiveDefiniteError(
                f"mass matrix is not positive definite: {exc}"
            ) from exc
        self._mass = mass
        self._factor = factor
        self._mass.setflags(write=False)

    @property
    def dim(self) -> int:
        return self._mass.shape[0]

    @property
    def mass(self) -> np.ndarray:
        return self._mass

    def dual(self, a: CovectorLike) -> np.ndarray:
        """Apply the inverse mass matrix to a row covector."""
        row = self._check(a)
        return cho_solve(self._factor, row, check_finite=False)

    def apply_mass(self, v: np.ndarray) -> np.ndarray:
        return self._mass @ np.asarray(v, dtype=float)

    def _check(self, a: CovectorLike) -> np.ndarray:
        row = _row(a)
        if row.size != self.dim:
            raise DimensionError(
                f"covector of length {row.size} does not match metric dim {self.dim}"
            )
        return row


def inner(metric: KineticMetric, a: CovectorLike, b: CovectorLike) -> float:
    """Kinetic-metric inner product of two covectors."""
    row_a = metric._check(a)
    return float(row_a @ metric.dual(b))


def norm(metric: KineticMetric, a: CovectorLike) -> float:
    """Kinetic-metric norm; zero exactly when the covector is zero."""
    row = metric._check(a)
    # Round-off can make the quadratic form marginally negative at zero.
    return float(np.sqrt(max(row @ metric.dual(row), 0.0)))


def unit(metric: KineticMetric, a: CovectorLike) -> np.ndarray:
    """Rescale a covector to unit metric norm."""
    row = metric._check(a)
    n = norm(metric, row)
    if n == 0.0:
        raise DimensionError("cannot normalize a zero covector")
    return row / n


def feasibility(
    metric: KineticMetric,
    p: CovectorLike,
    normals: Sequence[CovectorLike],
    tol: float = 0.0,
) -> list[Feasibility]:
    """Classify a momentum against each normal.

    A momentum is infeasible with respect to a normal when their inner
    product is below ``-tol``; the boundary (zero inner product) counts
    as feasible. ``tol`` defaults to zero; pass :data:`DEADBAND` to
    absorb round-off near the boundary.
    """
    if tol < 0.0:
        raise ValueError("feasibility tolerance must be nonnegative")
    dual_p = metric.dual(p)
    out = []
    for u in normals:
        row = metric._check(u)
        value = float(row @ dual_p)
        out.append(Feasibility.INFEASIBLE if value < -tol else Feasibility.FEASIBLE)
    return out


def is_feasible(
    metric: KineticMetric,
    p: CovectorLike,
    normals: Sequence[CovectorLike],
    tol: float = 0.0,
) -> bool:
    """True when ``p`` is feasible with respect to every normal."""
    return all(f is Feasibility.FEASIBLE for f in feasibility(metric, p, normals, tol))


def _gram_and_duals(metric, normals):
    rows = [metric._check(u) for u in normals]
    duals = [metric.dual(r) for r in rows]
    k = len(rows)
    gram = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            gram[i, j] = gram[j, i] = rows[i] @ duals[j]
    return rows, duals, gram


def _check_gram(gram: np.ndarray) -> None:
    """Reject linearly dependent normal sets, naming the offending subset."""
    scale = np.sqrt(np.outer(np.diag(gram), np.diag(gram)))
    if np.any(np.diag(gram) <= 0.0):
        bad = [i for i in range(gram.shape[0]) if gram[i, i] <= 0.0]
        raise DegenerateNormalsError(f"zero-norm normals at indices {bad}", bad)
    unit_gram = gram / scale
    eigvals, eigvecs = np.linalg.eigh(unit_gram)
    if eigvals[0] <= GRAM_RCOND * max(eigvals[-1], 1.0):
        vec = eigvecs[:, 0]
        bad = sorted(np.flatnonzero(np.abs(vec) > 1e-8 * np.abs(vec).max()).tolist())
        raise DegenerateNormalsError(
            f"normals at indices {bad} are linearly dependent under the metric",
            bad,
        )


def span_coefficients(
    metric: KineticMetric, p: CovectorLike, normals: Sequence[CovectorLike]
) -> np.ndarray:
    """Coefficients c with span-component of p equal to sum c_i * u_i."""
    if len(normals) == 0:
        return np.zeros(0)
    rows, duals, gram = _gram_and_duals(metric, normals)
    _check_gram(gram)
    rhs = np.array([metric._check(p) @ d for d in duals])
    return np.linalg.solve(gram, rhs)


def project_span(
    metric: KineticMetric, p: CovectorLike, normals: Sequence[CovectorLike]
) -> np.ndarray:
    """Metric-orthogonal component of ``p`` inside the span of the normals."""
    row = metric._check(p)
    if len(normals) == 0:
        return np.zeros_like(row)
    coeffs = span_coefficients(metric, p, normals)
    out = np.zeros_like(row)
    for c, u in zip(coeffs, normals):
        out += c * _row(u)
    return out


def project_null(
    metric: KineticMetric, p: CovectorLike, normals: Sequence[CovectorLike]
) -> np.ndarray:
    """Remove the span component: the result is orthogonal to every normal.

    Idempotent, and the exact complement of :func:`project_span` as
    computed (the two parts sum back to ``p`` up to round-off in the
    final subtraction).
    """
    row = metric._check(p)
    if len(normals) == 0:
        return row.copy()
    return row - project_span(metric, row, normals)
