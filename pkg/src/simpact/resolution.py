"""Propagative resolution of simultaneous impacts.

A simultaneous impact across several contact manifolds is resolved as a
chain of single-contact metric reflections, applied until the momentum
is feasible with respect to every active normal. The module provides
the single reflection, the greedy cascade with a proven step bound for
two contacts, exhaustive enumeration of all minimal reflection
sequences, the perfectly plastic projection, and the restitution blend
between the plastic and elastic outcomes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import metric as mt
from .errors import DegenerateNormalsError, DimensionError

#: Default step cap for cascades over more than two normals, where
#: termination is not guaranteed. Cap overruns surface as a status.
DEFAULT_MAX_STEPS = 64

#: Outcomes closer than this (relative to the incoming momentum norm)
#: are merged during enumeration.
DEDUP_RTOL = 1e-9

ALPHA_MODES = ("energy-consistent", "as-printed")


class CascadeStatus(Enum):
    CONVERGED = "converged"
    STEP_CAP_EXCEEDED = "step-cap-exceeded"


class ImpactKind(Enum):
    ELASTIC = "elastic"
    PLASTIC = "plastic"
    INELASTIC = "inelastic"


@dataclass(frozen=True)
class CascadePolicy:
    """Selection rule for the next normal to reflect across.

    ``most-violating`` picks the most negative inner product against the
    unit-normalized normals, ``least-violating`` the least negative one
    among those still infeasible, and ``fixed`` walks a caller-supplied
    priority order (a permutation of the normal indices). ``max_steps``
    caps cascades over more than two normals.
    """

    variant: str = "most-violating"
    order: tuple[int, ...] | None = None
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        if self.variant not in ("most-violating", "least-violating", "fixed"):
            raise ValueError(f"unknown cascade policy {self.variant!r}")
        if self.variant == "fixed":
            if not self.order:
                raise ValueError("fixed policy requires a priority order")
            object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    @classmethod
    def most_violating(cls, max_steps: int = DEFAULT_MAX_STEPS) -> "CascadePolicy":
        return cls("most-violating", None, max_steps)

    @classmethod
    def least_violating(cls, max_steps: int = DEFAULT_MAX_STEPS) -> "CascadePolicy":
        return cls("least-violating", None, max_steps)

    @classmethod
    def fixed(cls, order: Iterable[int], max_steps: int = DEFAULT_MAX_STEPS) -> "CascadePolicy":
        return cls("fixed", tuple(order), max_steps)

    @classmethod
    def parse(cls, text: str) -> "CascadePolicy":
        text = text.strip().lower()
        if text == "most-violating":
            return cls.most_violating()
        if text == "least-violating":
            return cls.least_violating()
        if text.startswith("fixed:"):
            order = tuple(int(tok) for tok in text[len("fixed:"):].split(",") if tok)
            return cls.fixed(order)
        raise ValueError(f"cannot parse cascade policy {text!r}")

    def validate_for(self, n_normals: int) -> None:
        if self.variant == "fixed":
            if sorted(self.order) != list(range(n_normals)):
                raise ValueError(
                    f"fixed order {self.order} is not a permutation of range({n_normals})"
                )


@dataclass(frozen=True)
class ImpactOutcome:
    """Result of resolving one impact event.

    ``sequence`` lists the indices of the normals in the order they were
    applied; for plastic and blended outcomes it lists each involved
    contact once and ``impulses`` holds the net per-contact impulse
    instead of per-reflection values.
    """

    p_plus: np.ndarray
    sequence: tuple[int, ...]
    impulses: tuple[float, ...]
    status: CascadeStatus
    kind: ImpactKind
    restitution: float | None = None

    @property
    def converged(self) -> bool:
        return self.status is CascadeStatus.CONVERGED


@dataclass(frozen=True)
class EnumerationResult:
    """All distinct minimal-sequence outcomes found by depth-first search."""

    outcomes: tuple[ImpactOutcome, ...]
    truncated: bool
    branches_explored: int

    def __len__(self) -> int:
        return len(self.outcomes)


def reflect(metric: mt.KineticMetric, p, u) -> tuple[np.ndarray, float]:
    """Reflect a momentum across the contact plane of one normal.

    Returns the reflected momentum and the impulse magnitude so that
    ``p_new = p + impulse * u``. The map flips the sign of the inner
    product with ``u``, preserves the metric norm, and is its own
    inverse; it does not depend on the magnitude of ``u``.
    """
    row_p = metric._check(p)
    row_u = metric._check(u)
    dual_u = metric.dual(row_u)
    uu = float(row_u @ dual_u)
    if uu <= 0.0:
        raise DimensionError("cannot reflect across a zero-norm normal")
    lam = -2.0 * float(row_p @ dual_u) / uu
    return row_p + lam * row_u, lam


def two_contact_reflection_bound(metric: mt.KineticMetric, u, v) -> int:
    """Guaranteed cascade length bound for exactly two contact normals.

    The bound is ``ceil(pi / gamma)`` where ``gamma`` is the half-angle
    of the feasible cone, computed from the unit normals via
    ``sin(gamma) = |u_hat + v_hat| / 2``.
    """
    u_hat = mt.unit(metric, u)
    v_hat = mt.unit(metric, v)
    c = mt.inner(metric, u_hat, v_hat)
    if abs(c) >= 1.0 - mt.GRAM_RCOND:
        raise DegenerateNormalsError(
            "contact normals are metric-parallel; the reflection bound "
            "is undefined",
            (0, 1),
        )
    sin_gamma = math.sqrt(max((1.0 + c) / 2.0, 0.0))
    gamma = math.asin(min(sin_gamma, 1.0))
    return int(math.ceil(math.pi / gamma))


def _unit_scales(metric, rows):
    duals = [metric.dual(r) for r in rows]
    norms2 = np.array([float(r @ d) for r, d in zip(rows, duals)])
    if np.any(norms2 <= 0.0):
        bad = sorted(np.flatnonzero(norms2 <= 0.0).tolist())
        raise DegenerateNormalsError(f"zero-norm normals at indices {bad}", bad)
    return duals, norms2, 1.0 / np.sqrt(norms2)


def elastic_cascade(
    metric: mt.KineticMetric,
    p_minus,
    normals: Sequence,
    policy: CascadePolicy | None = None,
    feas_tol: float = 0.0,
) -> ImpactOutcome:
    """Run the propagative reflection cascade to a feasible momentum.

    Repeatedly selects an infeasible normal according to ``policy`` and
    reflects across it. For exactly two distinct normals the step cap is
    the proven reflection bound; for more normals termination is an open
    question and the cap comes from the policy, with overruns reported
    through the outcome status rather than raised.
    """
    policy = policy or CascadePolicy.most_violating()
    if len(normals) == 0:
        raise DimensionError("cascade requires at least one contact normal")
    policy.validate_for(len(normals))
    rows = [metric._check(u) for u in normals]
    p = metric._check(p_minus).copy()
    duals, norms2, scales = _unit_scales(metric, rows)
    dual_mat = np.asarray(duals)

    if len(rows) == 2:
        cap = two_contact_reflection_bound(metric, rows[0], rows[1])
    elif len(rows) == 1:
        cap = 1
    else:
        cap = policy.max_steps

    sequence: list[int] = []
    impulses: list[float] = []
    status = CascadeStatus.CONVERGED
    while True:
        values = (dual_mat @ p) * scales
        infeasible = np.flatnonzero(values < -feas_tol)
        if infeasible.size == 0:
            break
        if len(sequence) >= cap:
            status = CascadeStatus.STEP_CAP_EXCEEDED
            break
        if sequence and sequence[-1] in infeasible:
            # A reflected normal flips to feasible, so this is unreachable
            # unless feas_tol interacts badly with round-off.
            infeasible = infeasible[infeasible != sequence[-1]]
            if infeasible.size == 0:
                break
        if policy.variant == "most-violating":
            k = int(infeasible[np.argmin(values[infeasible])])
        elif policy.variant == "least-violating":
            k = int(infeasible[np.argmax(values[infeasible])])
        else:
            k = next(i for i in policy.order if i in infeasible)
        lam = -2.0 * float(p @ duals[k]) / norms2[k]
        p = p + lam * rows[k]
        sequence.append(k)
        impulses.append(lam)

    return ImpactOutcome(
        p_plus=p,
        sequence=tuple(sequence),
        impulses=tuple(impulses),
        status=status,
        kind=ImpactKind.ELASTIC,
    )


def enumerate_outcomes(
    metric: mt.KineticMetric,
    p_minus,
    normals: Sequence,
    depth_cap: int,
    feas_tol: float = 0.0,
    dedup_rtol: float = DEDUP_RTOL,
) -> EnumerationResult:
    """Enumerate every distinct minimal-sequence outcome.

    Depth-first search that branches on each currently infeasible
    normal, never repeats the immediately preceding one, and stops each
    branch at the first feasible momentum. Outcomes are deduplicated by
    metric distance; branches that exceed ``depth_cap`` raise the
    ``truncated`` flag instead of being dropped silently.
    """
    if depth_cap < 1:
        raise ValueError("depth_cap must be at least 1")
    rows = [metric._check(u) for u in normals]
    if not rows:
        raise DimensionError("enumeration requires at least one contact normal")
    p0 = metric._check(p_minus).copy()
    duals, norms2, scales = _unit_scales(metric, rows)
    dual_mat = np.asarray(duals)
    dedup_tol = dedup_rtol * max(mt.norm(metric, p0), 1e-300)

    outcomes: list[ImpactOutcome] = []
    truncated = False
    explored = 0

    def visit(p, sequence, impulses):
        nonlocal truncated, explored
        explored += 1
        values = (dual_mat @ p) * scales
        infeasible = [
            int(i)
            for i in np.flatnonzero(values < -feas_tol)
            if not sequence or i != sequence[-1]
        ]
        if not infeasible:
            for prior in outcomes:
                if mt.norm(metric, p - prior.p_plus) < dedup_tol:
                    return
            outcomes.append(
                ImpactOutcome(
                    p_plus=p,
                    sequence=tuple(sequence),
                    impulses=tuple(impulses),
                    status=CascadeStatus.CONVERGED,
                    kind=ImpactKind.ELASTIC,
                )
            )
            return
        if len(sequence) >= depth_cap:
            truncated = True
            return
        for k in infeasible:
            lam = -2.0 * float(p @ duals[k]) / norms2[k]
            visit(p + lam * rows[k], sequence + [k], impulses + [lam])

    visit(p0, [], [])
    return EnumerationResult(tuple(outcomes), truncated, explored)


def plastic_resolve(metric: mt.KineticMetric, p_minus, normals: Sequence) -> ImpactOutcome:
    """Perfectly plastic impact: project out every normal component.

    The post-impact momentum is tangent to all contact manifolds and the
    kinetic energy never increases. Requires the normals to be linearly
    independent under the metric.
    """
    rows = [metric._check(u) for u in normals]
    if not rows:
        raise DimensionError("plastic resolution requires at least one normal")
    coeffs = mt.span_coefficients(metric, p_minus, rows)
    p = metric._check(p_minus).copy()
    for c, row in zip(coeffs, rows):
        p = p - c * row
    return ImpactOutcome(
        p_plus=p,
        sequence=tuple(range(len(rows))),
        impulses=tuple(-coeffs),
        status=CascadeStatus.CONVERGED,
        kind=ImpactKind.PLASTIC,
    )


def inelastic_resolve(
    metric: mt.KineticMetric,
    p_minus,
    normals: Sequence,
    restitution: float,
    policy: CascadePolicy | None = None,
    alpha_mode: str = "energy-consistent",
    feas_tol: float = 0.0,
) -> ImpactOutcome:
    """Blend the plastic and elastic outcomes for a restitution in [0, 1].

    In the default ``energy-consistent`` mode the blend weight equals
    the restitution coefficient, which reproduces the energy split
    ``|p+|^2 = R^2 |p_e|^2 + (1 - R^2) |p_p|^2`` exactly, so the energy
    lost is ``(1 - R^2)`` times the plastic loss. The ``as-printed``
    mode uses ``sqrt(1 - R^2)`` instead; it is kept only to reproduce
    that variant and does not satisfy the energy split.
    """
    if not 0.0 <= restitution <= 1.0:
        raise ValueError(f"restitution must lie in [0, 1], got {restitution}")
    if alpha_mode not in ALPHA_MODES:
        raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
    elastic = elastic_cascade(metric, p_minus, normals, policy, feas_tol)
    plastic = plastic_resolve(metric, p_minus, normals)
    alpha = restitution if alpha_mode == "energy-consistent" else math.sqrt(
        1.0 - restitution * restitution
    )
    p_plus = alpha * elastic.p_plus + (1.0 - alpha) * plastic.p_plus
    # Net impulse per contact from the total momentum change.
    coeffs = mt.span_coefficients(metric, p_plus - metric._check(p_minus), normals)
    return ImpactOutcome(
        p_plus=p_plus,
        sequence=tuple(range(len(normals))),
        impulses=tuple(coeffs),
        status=elastic.status,
        kind=ImpactKind.INELASTIC,
        restitution=restitution,
    )
