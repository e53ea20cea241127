"""Outcome-uniqueness classification and indeterminacy measurement.

Two special inner-product values between unit contact normals guarantee
an order-independent impact outcome: zero (the reflections commute and
the cascade ends in two steps) and minus one half (both orders end in
the same three-step product). Everything else is classified as
indeterminate, and the indeterminacy is quantified as the metric
distance between the two order-specific outcomes, normalized by the
incoming momentum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metric as mt
from .errors import DegenerateNormalsError, VerificationError
from .resolution import CascadePolicy, elastic_cascade, enumerate_outcomes, reflect

#: Default classification tolerance on unit-normalized inner products.
#: Configuration-dependent metrics rarely reach exact zeros after
#: design optimization, so the window must be finite.
CLASSIFY_TOL = 1e-9


@dataclass(frozen=True)
class PairClassification:
    """Uniqueness class of a contact-normal pair."""

    inner_value: float
    kind: str  # "orthogonal" | "three-stage" | "indeterminate"
    tolerance: float

    @property
    def unique_outcome(self) -> bool:
        return self.kind in ("orthogonal", "three-stage")


@dataclass(frozen=True)
class CommutationReport:
    """Sampled check of whether two reflections commute."""

    inner_value: float
    max_two_step_gap: float
    max_three_step_gap: float
    orthogonal: bool
    commutes: bool
    samples: int
    seed: int


def classify_pair(metric: mt.KineticMetric, u, v, tol: float = CLASSIFY_TOL) -> PairClassification:
    """Classify a normal pair by the inner product of its unit normals.

    Orthogonal pairs resolve uniquely in two reflections regardless of
    order; pairs at minus one half resolve uniquely in three. Parallel
    normals are rejected.
    """
    u_hat = mt.unit(metric, u)
    v_hat = mt.unit(metric, v)
    value = mt.inner(metric, u_hat, v_hat)
    if abs(value) >= 1.0 - mt.GRAM_RCOND:
        raise DegenerateNormalsError("normals are metric-parallel", (0, 1))
    if abs(value) <= tol:
        kind = "orthogonal"
    elif abs(value + 0.5) <= tol:
        kind = "three-stage"
    else:
        kind = "indeterminate"
    return PairClassification(inner_value=value, kind=kind, tolerance=tol)


def indeterminacy_xi(metric: mt.KineticMetric, p_minus, u, v) -> float:
    """Normalized metric distance between the two resolution orders.

    Resolves the pair once preferring ``u`` and once preferring ``v``
    (fixed-priority cascades) and returns the metric distance between
    the outcomes divided by the incoming momentum norm. Zero means the
    outcome does not depend on the order.
    """
    p_row = metric._check(p_minus)
    p_norm = mt.norm(metric, p_row)
    if p_norm == 0.0:
        return 0.0
    first = elastic_cascade(metric, p_row, [u, v], CascadePolicy.fixed((0, 1)))
    second = elastic_cascade(metric, p_row, [u, v], CascadePolicy.fixed((1, 0)))
    if not (first.converged and second.converged):
        raise VerificationError("cascade did not converge while measuring xi")
    return mt.norm(metric, first.p_plus - second.p_plus) / p_norm


def pairwise_xi(
    metric: mt.KineticMetric, p_minus, normals, depth_cap: int = 16
) -> tuple[float, float]:
    """Max and mean pairwise outcome distance for three or more normals.

    Extension of the two-contact measure: enumerates all minimal
    sequences and reports the normalized metric distances between every
    outcome pair. Callers should flag results from this function as the
    extension it is.
    """
    p_norm = mt.norm(metric, metric._check(p_minus))
    if p_norm == 0.0:
        return 0.0, 0.0
    result = enumerate_outcomes(metric, p_minus, normals, depth_cap)
    outs = result.outcomes
    if len(outs) < 2:
        return 0.0, 0.0
    gaps = [
        mt.norm(metric, a.p_plus - b.p_plus) / p_norm
        for i, a in enumerate(outs)
        for b in outs[i + 1 :]
    ]
    return max(gaps), float(np.mean(gaps))


def verify_commutation(
    metric: mt.KineticMetric,
    u,
    v,
    samples: int = 256,
    seed: int = 0,
    tol: float = 1e-10,
) -> CommutationReport:
    """Sample random momenta and compare both two-step reflection orders.

    Asserts the equivalence between commuting reflections and an
    orthogonal normal pair: the sampled maximum gap is below ``tol``
    exactly when the unit inner product is. Also reports the gap of the
    three-step alternating products, which closes for pairs at minus one
    half. Raises on inconsistency.
    """
    u_hat = mt.unit(metric, u)
    v_hat = mt.unit(metric, v)
    value = mt.inner(metric, u_hat, v_hat)
    rng = np.random.default_rng(seed)
    max_two = 0.0
    max_three = 0.0
    for _ in range(samples):
        p = rng.standard_normal(metric.dim)
        p /= mt.norm(metric, p)
        p_uv, _ = reflect(metric, p, u_hat)
        p_uv, _ = reflect(metric, p_uv, v_hat)
        p_vu, _ = reflect(metric, p, v_hat)
        p_vu, _ = reflect(metric, p_vu, u_hat)
        max_two = max(max_two, mt.norm(metric, p_uv - p_vu))
        p_uvu, _ = reflect(metric, p_uv, u_hat)
        p_vuv, _ = reflect(metric, p_vu, v_hat)
        max_three = max(max_three, mt.norm(metric, p_uvu - p_vuv))
    orthogonal = abs(value) < tol
    commutes = max_two < tol
    if commutes != orthogonal:
        raise VerificationError(
            f"commutation check inconsistent: inner={value:.3e}, "
            f"max two-step gap={max_two:.3e}"
        )
    return CommutationReport(
        inner_value=value,
        max_two_step_gap=max_two,
        max_three_step_gap=max_three,
        orthogonal=orthogonal,
        commutes=commutes,
        samples=samples,
        seed=seed,
    )
