"""Midpoint variational time stepper with impact events.

Away from contact the integrator solves the discrete Euler-Lagrange
(DEL) equations built from a midpoint-quadrature discrete Lagrangian:
the forward discrete momentum of one interval must balance the backward
discrete momentum of the next. Impacts are located by solving the
variable-substep DEL jointly with the gap constraint, so the impact
configuration satisfies the discrete dynamics exactly; the incoming
discrete momentum is then mapped through the propagative resolution at
the impact-configuration metric and the remainder of the interval is
integrated from the mapped momentum.

Chattering contacts that impact more often than the Zeno window within
one nominal step are switched to plastic and then held as active
constraints (DEL augmented with the gap equation and an impulse
multiplier); a held contact releases when its multiplier turns
negative, meaning the constraint would have to pull.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import metric as mt
from .errors import (
    ImpactLocationError,
    SimpactError,
    StepFailureError,
    VerificationError,
)
from .models import MechModel
from .resolution import (
    CascadePolicy,
    CascadeStatus,
    ImpactKind,
    elastic_cascade,
    inelastic_resolve,
    plastic_resolve,
)

#: Substeps shorter than this fraction of the interval are collapsed.
TINY_FRACTION = 1e-9

#: Penetration deeper than this fraction of the length scale counts as
#: a crossing; resting contacts at exactly zero never trigger.
PENETRATION_RTOL = 1e-12

ForceSampler = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class FrictionConfig:
    """Scalar-tangent Coulomb friction on selected contacts."""

    mu: float
    contacts: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mu < 0.0:
            raise ValueError("friction coefficient must be nonnegative")


@dataclass(frozen=True)
class StepperConfig:
    """Numerical parameters of the time stepper.

    ``restitution`` may be a scalar applied to every contact or a
    per-contact sequence. ``zeno_window`` is the number of impacts one
    contact may produce within one nominal step before the next one is
    forced plastic. ``impact_time_tol`` groups crossings into one
    simultaneous event; it defaults to ``h * 1e-6``.
    """

    h: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 60
    impact_time_tol: float | None = None
    zeno_window: int = 4
    restitution: float | tuple[float, ...] = 1.0
    alpha_mode: str = "energy-consistent"
    policy: CascadePolicy = field(default_factory=CascadePolicy.most_violating)
    friction: FrictionConfig | None = None
    max_impacts_per_step: int = 200
    contact_tol: float | None = None  # activation tolerance, scaled by length

    def __post_init__(self):
        if self.h <= 0.0:
            raise ValueError("time step must be positive")
        if self.newton_tol <= 0.0 or self.newton_max_iter < 1:
            raise ValueError("Newton tolerances must be positive")
        if self.zeno_window < 1:
            raise ValueError("zeno_window must be positive")
        rest = self.restitution
        values = (rest,) if np.isscalar(rest) else tuple(rest)
        if any(not 0.0 <= r <= 1.0 for r in values):
            raise ValueError("restitution must lie in [0, 1]")
        if not np.isscalar(rest):
            object.__setattr__(self, "restitution", tuple(float(r) for r in rest))

    @property
    def time_tol(self) -> float:
        return self.impact_time_tol if self.impact_time_tol is not None else self.h * 1e-6

    def restitution_for(self, contact: int) -> float:
        if np.isscalar(self.restitution):
            return float(self.restitution)
        return float(self.restitution[contact])

    def activation_tol(self, model: MechModel) -> float:
        if self.contact_tol is not None:
            return self.contact_tol
        return 1e-9 * model.length_scale


@dataclass(frozen=True)
class ImpactEvent:
    """One resolved impact: when, which contacts, and what it did."""

    t: float
    contacts: tuple[int, ...]
    kind: ImpactKind
    impulses: tuple[float, ...]
    energy_before: float
    energy_after: float
    forced: str | None = None  # None | "zeno" | "step-cap" | "graze"
    sequence: tuple[int, ...] = ()

    @property
    def energy_loss(self) -> float:
        return self.energy_before - self.energy_after


@dataclass
class Trajectory:
    """Time-stamped samples plus the impact events between them."""

    times: np.ndarray
    states: np.ndarray
    momenta: np.ndarray
    events: list[ImpactEvent]
    holds: list[tuple[float, int, float]]  # (t, contact, impulse)
    nominal_step: float

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def write_csv(self, stream, comments: Sequence[str] = ()) -> None:
        dim = self.dim
        event_steps = _event_flags(self)
        for line in comments:
            stream.write(f"# {line}\n")
        cols = ["t"]
        cols += [f"q{i + 1}" for i in range(dim)]
        cols += [f"p{i + 1}" for i in range(dim)]
        cols.append("event")
        stream.write(",".join(cols) + "\n")
        for k in range(self.times.size):
            row = [_fmt(self.times[k])]
            row += [_fmt(x) for x in self.states[k]]
            row += [_fmt(x) for x in self.momenta[k]]
            row.append(str(int(event_steps[k])))
            stream.write(",".join(row) + "\n")

    def write_events_csv(self, stream, comments: Sequence[str] = ()) -> None:
        for line in comments:
            stream.write(f"# {line}\n")
        stream.write(
            "t_star,contacts,kind,forced,impulses,energy_before,energy_after\n"
        )
        for ev in self.events:
            stream.write(
                ",".join(
                    [
                        _fmt(ev.t),
                        ";".join(str(c) for c in ev.contacts),
                        ev.kind.value,
                        ev.forced or "",
                        ";".join(_fmt(x) for x in ev.impulses),
                        _fmt(ev.energy_before),
                        _fmt(ev.energy_after),
                    ]
                )
                + "\n"
            )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _event_flags(traj: Trajectory) -> np.ndarray:
    flags = np.zeros(traj.times.size, dtype=bool)
    for ev in traj.events:
        idx = int(np.searchsorted(traj.times, ev.t, side="left"))
        flags[min(idx, flags.size - 1)] = True
    return flags


# ---------------------------------------------------------------------------
# Discrete Lagrangian and momenta


def discrete_lagrangian(model: MechModel, q_a, t_a: float, q_b, t_b: float) -> float:
    """Midpoint-quadrature approximation of the action over one interval."""
    h = t_b - t_a
    if h <= 0.0:
        raise ValueError("interval must have positive duration")
    q_a = np.asarray(q_a, dtype=float)
    q_b = np.asarray(q_b, dtype=float)
    qm = 0.5 * (q_a + q_b)
    v = (q_b - q_a) / h
    return h * model.lagrangian(qm, v)


def _momenta_parts(model, q_a, t_a, q_b, t_b):
    h = t_b - t_a
    if h <= 0.0:
        raise ValueError("interval must have positive duration")
    q_a = np.asarray(q_a, dtype=float)
    q_b = np.asarray(q_b, dtype=float)
    qm = 0.5 * (q_a + q_b)
    v = (q_b - q_a) / h
    mv = model.mass_matrix(qm) @ v
    grad = 0.5 * model.kinetic_config_grad(qm, v) - model.potential_gradient(qm)
    return mv, grad, h


def discrete_momenta(model: MechModel, q_a, t_a: float, q_b, t_b: float):
    """Backward and forward discrete momenta of one interval.

    These are the exact partial derivatives of the midpoint discrete
    Lagrangian with respect to its two endpoint configurations.
    """
    mv, grad, h = _momenta_parts(model, q_a, t_a, q_b, t_b)
    half = 0.5 * h * grad
    return -mv + half, mv + half


def _f_minus(model, q_a, t_a, q_b, t_b):
    mv, grad, h = _momenta_parts(model, q_a, t_a, q_b, t_b)
    return -mv + 0.5 * h * grad

def _f_plus(model, q_a, t_a, q_b, t_b):
    mv, grad, h = _momenta_parts(model, q_a, t_a, q_b, t_b)
    return mv + 0.5 * h * grad


def _force_slot(model, forces, q_a, t_a, q_b, t_b):
    """Midpoint discrete forcing, split equally onto the interval's slots."""
    h = t_b - t_a
    qm = 0.5 * (np.asarray(q_a, float) + np.asarray(q_b, float))
    v = (np.asarray(q_b, float) - np.asarray(q_a, float)) / h
    tm = 0.5 * (t_a + t_b)
    total = np.zeros(model.dim)
    hit = False
    own = model.force(qm, v, tm)
    if own is not None:
        total = total + np.asarray(own, float)
        hit = True
    if forces is not None:
        total = total + np.asarray(forces(qm, v, tm), float)
        hit = True
    if not hit:
        return None
    return 0.5 * h * total


def node_momentum(model: MechModel, q_a, t_a, q_b, t_b, forces=None) -> np.ndarray:
    """Discrete momentum carried into the node at ``t_b``."""
    p = _f_plus(model, q_a, t_a, q_b, t_b)
    slot = _force_slot(model, forces, q_a, t_a, q_b, t_b)
    return p if slot is None else p + slot


# ---------------------------------------------------------------------------
# Newton machinery


def _fd_jacobian(fun, x, r0, rel=1e-7):
    n = x.size
    jac = np.empty((r0.size, n))
    for i in range(n):
        step = rel * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += step
        jac[:, i] = (fun(xp) - r0) / step
    return jac


def _newton(fun, x0, tol, max_iter):
    """Damped Newton with finite-difference Jacobian.

    Raises :class:`StepFailureError` with the last residual norm when it
    cannot reduce the residual below ``tol``.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    rn = float(np.linalg.norm(r))
    for it in range(max_iter):
        if rn <= tol:
            return x
        jac = _fd_jacobian(fun, x, r)
        try:
            dx = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise StepFailureError(
                f"singular Jacobian in implicit step: {exc}", rn, it
            ) from exc
        alpha = 1.0
        while True:
            x_new = x + alpha * dx
            r_new = fun(x_new)
            rn_new = float(np.linalg.norm(r_new))
            if rn_new < rn or rn_new <= tol:
                x, r, rn = x_new, r_new, rn_new
                break
            alpha *= 0.5
            if alpha < 1e-8:
                raise StepFailureError(
                    "step rejected by line search", rn, it
                )
    if rn <= tol:
        return x
    raise StepFailureError(
        f"implicit step did not converge (residual {rn:.3e} > tol {tol:.3e})",
        rn,
        max_iter,
    )


# ---------------------------------------------------------------------------
# DEL steps


def _solve_free(model, p_in, q_curr, t_curr, t_next, forces, cfg):
    """Solve the DEL for the next configuration given the node momentum."""
    h = t_next - t_curr
    v0 = np.linalg.solve(model.mass_matrix(q_curr), p_in)
    x0 = q_curr + h * v0

    def residual(q_next):
        r = p_in + _f_minus(model, q_curr, t_curr, q_next, t_next)
        slot = _force_slot(model, forces, q_curr, t_curr, q_next, t_next)
        return r if slot is None else r + slot

    tol = cfg.newton_tol * max(1.0, float(np.abs(p_in).max()))
    return _newton(residual, x0, tol, cfg.newton_max_iter)


def _solve_held(model, p_in, q_curr, t_curr, t_next, forces, cfg, held):
    """Constrained DEL step: held gaps pinned to zero via impulse multipliers.

    Returns the next configuration and the multiplier per held contact.
    A negative multiplier means the constraint would need to pull; the
    caller releases such contacts and re-solves.
    """
    held = list(held)
    n = model.dim
    h = t_next - t_curr
    grads_curr = model.gap_gradients(q_curr)[held]
    v0 = np.linalg.solve(model.mass_matrix(q_curr), p_in)
    x0 = np.concatenate([q_curr + h * v0, np.zeros(len(held))])
    p_scale = max(1.0, float(np.abs(p_in).max()))
    gap_scale = p_scale / model.length_scale

    def residual(z):
        q_next, lam = z[:n], z[n:]
        r = p_in + lam @ grads_curr + _f_minus(model, q_curr, t_curr, q_next, t_next)
        slot = _force_slot(model, forces, q_curr, t_curr, q_next, t_next)
        if slot is not None:
            r = r + slot
        gaps = model.gaps(q_next)[held] * gap_scale
        return np.concatenate([r, gaps])

    z = _newton(residual, x0, cfg.newton_tol * p_scale, cfg.newton_max_iter)
    return z[:n], dict(zip(held, z[n:]))


def del_step(
    model: MechModel,
    q_prev,
    q_curr,
    t_prev: float,
    t_curr: float,
    t_next: float,
    forces: ForceSampler | None = None,
    config: StepperConfig | None = None,
) -> np.ndarray:
    """One unconstrained DEL step from the configuration pair.

    The forward momentum of the previous interval (plus its forcing
    slot) must balance the backward momentum of the next; the next
    configuration is found by damped Newton iteration.
    """
    cfg = config or StepperConfig(h=t_next - t_curr)
    q_prev = np.asarray(q_prev, dtype=float)
    q_curr = np.asarray(q_curr, dtype=float)
    p_in = node_momentum(model, q_prev, t_prev, q_curr, t_curr, forces)
    return _solve_free(model, p_in, q_curr, t_curr, t_next, forces, cfg)


# ---------------------------------------------------------------------------
# Impact localization and resolution


def _crossing_fraction(g0: float, g1: float) -> float:
    return g0 / (g0 - g1)


def _locate(model, p_in, q_curr, t_curr, q_cand, t_next, forces, cfg, held):
    """Solve the substep DEL jointly with the earliest crossing gap.

    Unknowns are the impact configuration, the impact time, and the
    multipliers of any held contacts; the crossing contact's gap is
    driven to zero while the substep dynamics stay exactly satisfied.
    """
    act_tol = cfg.activation_tol(model)
    pen_tol = PENETRATION_RTOL * model.length_scale
    gaps_curr = model.gaps(q_curr)
    gaps_cand = model.gaps(q_cand)
    crossing = [
        i
        for i in range(gaps_curr.size)
        # A candidate exactly on the manifold counts: its crossing sits
        # at the very end of the interval.
        if i not in held and gaps_cand[i] <= pen_tol and gaps_curr[i] >= -act_tol
        and gaps_cand[i] < gaps_curr[i]
    ]
    if not crossing:
        raise ImpactLocationError("no gap sign change in the step")
    h_full = t_next - t_curr
    estimates = {
        i: t_curr
        + h_full * _crossing_fraction(max(gaps_curr[i], 0.0), gaps_cand[i])
        for i in crossing
    }
    earliest = min(crossing, key=lambda i: estimates[i])

    held = list(held)
    n = model.dim
    grads_curr = model.gap_gradients(q_curr)[held] if held else np.zeros((0, n))
    p_scale = max(1.0, float(np.abs(p_in).max()))
    gap_scale = p_scale / model.length_scale
    frac = max(_crossing_fraction(max(gaps_curr[earliest], 0.0), gaps_cand[earliest]), 1e-6)
    x0 = np.concatenate(
        [
            q_curr + frac * (q_cand - q_curr),
            [t_curr + frac * h_full],
            np.zeros(len(held)),
        ]
    )

    def residual(z):
        q_star, t_star = z[:n], z[n]
        lam = z[n + 1 :]
        h1 = t_star - t_curr
        if h1 <= 0.0:
            # Push the solver back into the interval.
            h1 = TINY_FRACTION * h_full
            t_star = t_curr + h1
        r = p_in + _f_minus(model, q_curr, t_curr, q_star, t_star)
        slot = _force_slot(model, forces, q_curr, t_curr, q_star, t_star)
        if slot is not None:
            r = r + slot
        if held:
            r = r + lam @ grads_curr
        gaps = model.gaps(q_star)
        rows = [r, [gaps[earliest] * gap_scale]]
        if held:
            rows.append(gaps[held] * gap_scale)
        return np.concatenate(rows)

    try:
        z = _newton(residual, x0, cfg.newton_tol * p_scale, cfg.newton_max_iter)
    except StepFailureError as exc:
        raise ImpactLocationError(f"impact localization failed: {exc}") from exc
    q_star, t_star = z[:n], float(z[n])
    if not (t_curr - cfg.time_tol <= t_star <= t_next + cfg.time_tol):
        raise ImpactLocationError(
            f"impact time {t_star} escaped the step [{t_curr}, {t_next}]"
        )
    t_star = min(max(t_star, t_curr + TINY_FRACTION * h_full), t_next)
    gaps_star = model.gaps(q_star)
    if abs(gaps_star[earliest]) > 1e-10 * model.length_scale:
        raise ImpactLocationError(
            f"gap {earliest} not closed at impact: {gaps_star[earliest]:.3e}"
        )

    contacts = {earliest}
    for i in crossing:
        if abs(estimates[i] - t_star) <= cfg.time_tol:
            contacts.add(i)
    for i in range(gaps_star.size):
        # Contacts already resting on their manifold join the active set.
        if i not in held and abs(gaps_star[i]) <= act_tol:
            contacts.add(i)
    return t_star, q_star, tuple(sorted(contacts))


def locate_impact(
    model: MechModel,
    q_prev,
    q_curr,
    q_candidate,
    t_curr: float,
    t_next: float,
    t_prev: float | None = None,
    forces: ForceSampler | None = None,
    config: StepperConfig | None = None,
):
    """Locate the earliest impact inside a step that ends penetrating.

    Returns ``(t_star, q_star, contact_indices)``; contacts whose
    estimated crossing times agree within the simultaneity tolerance are
    grouped, and contacts already resting on their manifold at the
    impact configuration are included in the active set.
    """
    cfg = config or StepperConfig(h=t_next - t_curr)
    if t_prev is None:
        t_prev = t_curr - (t_next - t_curr)
    q_prev = np.asarray(q_prev, dtype=float)
    q_curr = np.asarray(q_curr, dtype=float)
    q_candidate = np.asarray(q_candidate, dtype=float)
    p_in = node_momentum(model, q_prev, t_prev, q_curr, t_curr, forces)

    # A contact that is already closed at the node and approached by the
    # momentum impacts at the node itself; there is no substep to solve.
    act_tol = cfg.activation_tol(model)
    gaps_c = model.gaps(q_curr)
    gaps_n = model.gaps(q_candidate)
    metric = model.metric_at(q_curr)
    grads = model.gap_gradients(q_curr)
    p_tol = 1e-9 * max(1.0, mt.norm(metric, p_in))
    node_hits = [
        i
        for i in range(gaps_c.size)
        if abs(gaps_c[i]) <= act_tol
        and gaps_n[i] < -PENETRATION_RTOL * model.length_scale
        and mt.inner(metric, p_in, mt.unit(metric, grads[i])) < -p_tol
    ]
    if node_hits:
        contacts = sorted(
            set(node_hits)
            | set(i for i in range(gaps_c.size) if abs(gaps_c[i]) <= act_tol)
        )
        return t_curr, q_curr.copy(), tuple(contacts)
    return _locate(model, p_in, q_curr, t_curr, q_candidate, t_next, forces, cfg, held=())


def _resolve_event(model, q_star, t_star, p_star, contacts, r_eff, cfg, forced):
    """Map the incoming momentum through the contact set at the impact."""
    metric = model.metric_at(q_star)
    normals = [model.gap_gradients(q_star)[i] for i in contacts]
    infeasible = not mt.is_feasible(metric, p_star, normals)
    e_before = 0.5 * mt.norm(metric, p_star) ** 2

    if not infeasible:
        # Grazing crossing: nothing to reflect, pass the momentum through.
        event = ImpactEvent(
            t=t_star,
            contacts=tuple(contacts),
            kind=ImpactKind.ELASTIC,
            impulses=(),
            energy_before=e_before,
            energy_after=e_before,
            forced="graze",
        )
        return p_star, event, False

    if r_eff >= 1.0:
        outcome = elastic_cascade(metric, p_star, normals, cfg.policy)
    elif r_eff <= 0.0:
        outcome = plastic_resolve(metric, p_star, normals)
    else:
        outcome = inelastic_resolve(
            metric, p_star, normals, r_eff, cfg.policy, cfg.alpha_mode
        )
    if outcome.status is CascadeStatus.STEP_CAP_EXCEEDED:
        # Guaranteed-terminating fallback for three or more contacts.
        outcome = plastic_resolve(metric, p_star, normals)
        forced = "step-cap"
    e_after = 0.5 * mt.norm(metric, outcome.p_plus) ** 2
    if outcome.kind is ImpactKind.ELASTIC:
        if abs(e_after - e_before) > 1e-10 * max(e_before, 1e-300):
            raise VerificationError(
                f"elastic impact changed energy: {e_before!r} -> {e_after!r}"
            )
    elif e_after > e_before * (1.0 + 1e-9):
        raise VerificationError("impact resolution gained energy")

    event = ImpactEvent(
        t=t_star,
        contacts=tuple(contacts),
        kind=outcome.kind,
        impulses=outcome.impulses,
        energy_before=e_before,
        energy_after=e_after,
        forced=forced,
        sequence=tuple(contacts[i] for i in outcome.sequence),
    )
    becomes_held = outcome.kind is ImpactKind.PLASTIC
    return outcome.p_plus, event, becomes_held


def impact_step(
    model: MechModel,
    q_prev,
    q_star,
    t_curr: float,
    t_star: float,
    t_next: float,
    contacts: Sequence[int],
    restitution: float,
    policy: CascadePolicy | None = None,
    alpha_mode: str = "energy-consistent",
    forces: ForceSampler | None = None,
    config: StepperConfig | None = None,
):
    """Resolve one impact and integrate to the end of the interval.

    Computes the incoming discrete momentum over the pre-impact substep,
    maps it through the propagative resolution at the impact metric, and
    solves the post-impact DEL for the configuration at ``t_next``.
    Returns ``(q_next, event)``.
    """
    cfg = config or StepperConfig(h=t_next - t_curr)
    cfg = replace(cfg, restitution=restitution, alpha_mode=alpha_mode)
    if policy is not None:
        cfg = replace(cfg, policy=policy)
    q_prev = np.asarray(q_prev, dtype=float)
    q_star = np.asarray(q_star, dtype=float)
    p_star = node_momentum(model, q_prev, t_curr, q_star, t_star, forces)
    p_mapped, event, becomes_held = _resolve_event(
        model, q_star, t_star, p_star, tuple(contacts), restitution, cfg, None
    )
    if becomes_held:
        q_next, _ = _solve_held(
            model, p_mapped, q_star, t_star, t_next, forces, cfg, tuple(contacts)
        )
    else:
        q_next = _solve_free(model, p_mapped, q_star, t_star, t_next, forces, cfg)
    return q_next, event


def zeno_guard(
    event_history: Sequence[ImpactEvent],
    contact: int,
    config: StepperConfig,
    now: float | None = None,
) -> str:
    """Decide whether a contact must switch to plastic.

    Returns ``"force-plastic"`` when the contact already produced more
    than ``zeno_window`` impacts within one nominal step of ``now`` (the
    latest event time by default), and ``"elastic"`` otherwise.
    """
    hits = [ev.t for ev in event_history if contact in ev.contacts]
    if not hits:
        return "elastic"
    t_ref = now if now is not None else hits[-1]
    recent = sum(1 for t in hits if t_ref - config.h < t <= t_ref)
    return "force-plastic" if recent >= config.zeno_window else "elastic"


# ---------------------------------------------------------------------------
# Friction

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(fun, lo, hi, tol=1e-8):
    a, b = float(lo), float(hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def friction_force(
    model: MechModel,
    q,
    qdot,
    contact: int,
    mu: float,
    normal_force: float,
    slip_tol: float = 1e-10,
) -> np.ndarray:
    """Coulomb friction for a planar single-tangent contact.

    Selects the tangential force in ``[-mu N, mu N]`` that maximizes
    instantaneous dissipation via a bounded golden-section search: with
    nonzero slip the minimizer of the sliding power sits at the cone
    boundary opposing the slip; at zero slip the force that nulls the
    tangential acceleration is selected (stiction), clamped to the cone.
    Returns the generalized force row; an inactive contact contributes
    nothing.
    """
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if mu < 0.0:
        raise ValueError("friction coefficient must be nonnegative")
    gaps = model.gaps(q)
    if abs(gaps[contact]) > 1e-6 * model.length_scale:
        return np.zeros(model.dim)
    tangents = model.gap_tangents(q)
    if tangents is None:
        raise SimpactError("model provides no contact tangents; friction unsupported")
    trow = tangents[contact]
    bound = mu * max(normal_force, 0.0)
    if bound == 0.0:
        return np.zeros(model.dim)
    v_t = float(trow @ qdot)
    if abs(v_t) > slip_tol:
        f = _golden_min(lambda f: f * v_t, -bound, bound)
        # The sliding-power objective is linear; snap to the cone boundary.
        if bound - abs(f) <= 2e-8 * max(bound, 1.0):
            f = math.copysign(bound, f)
    else:
        mass = model.mass_matrix(q)
        applied = -model.potential_gradient(q)
        own = model.force(q, qdot, 0.0)
        if own is not None:
            applied = applied + np.asarray(own, float)

        def tangential_accel(f):
            return abs(float(trow @ np.linalg.solve(mass, applied + f * trow)))

        f = _golden_min(tangential_accel, -bound, bound)
    return f * trow


# ---------------------------------------------------------------------------
# Simulation driver


class _Sim:
    """Mutable state of one simulation run; single threaded by design."""

    def __init__(self, model, config, forces):
        self.model = model
        self.cfg = config
        self.user_forces = forces
        self.held: dict[int, float] = {}
        self.events: list[ImpactEvent] = []
        self.holds: list[tuple[float, int, float]] = []

    def effective_forces(self, q_c, p_in):
        """Compose user forcing with friction on held contacts.

        Friction is evaluated once per interval at the interval-start
        state and then held constant, so the implicit solve sees a
        smooth residual; re-evaluating the stiction branch inside the
        Newton iteration would make it discontinuous.
        """
        cfg = self.cfg
        if cfg.friction is None or not self.held:
            return self.user_forces
        fr = cfg.friction
        model = self.model
        qdot = np.linalg.solve(model.mass_matrix(q_c), p_in)
        frozen = np.zeros(model.dim)
        active = False
        for contact, lam in self.held.items():
            if contact not in fr.contacts:
                continue
            normal_force = max(lam, 0.0) / cfg.h
            frozen = frozen + friction_force(
                model, q_c, qdot, contact, fr.mu, normal_force
            )
            active = True
        if not active:
            return self.user_forces
        user = self.user_forces

        def sampler(qm, v, tm):
            total = frozen
            if user is not None:
                total = total + np.asarray(user(qm, v, tm), float)
            return total

        return sampler

    def solve_interval(self, q_c, t_c, p_in, t_target, forces):
        """One DEL solve with the current held set, releasing as needed."""
        cfg = self.cfg
        while True:
            if self.held:
                q_n, lams = _solve_held(
                    self.model, p_in, q_c, t_c, t_target, forces, cfg,
                    tuple(sorted(self.held)),
                )
                negative = [c for c, lam in lams.items() if lam < 0.0]
                if negative:
                    for c in negative:
                        del self.held[c]
                    continue
                for c, lam in lams.items():
                    self.held[c] = lam
                    self.holds.append((t_target, c, lam))
                return q_n
            return _solve_free(self.model, p_in, q_c, t_c, t_target, forces, cfg)

    def _node_contact_split(self, q_c, p_in, crossing, gaps_c, act_tol):
        """Separate crossing contacts that are already closed at the node.

        Returns (approaching, tangent): closed contacts the momentum
        points into, and closed contacts it merely rests on. Closed
        contacts with separating momentum are left alone; their crossing
        happens strictly inside the interval.
        """
        touching = [i for i in crossing if gaps_c[i] <= act_tol]
        if not touching:
            return [], []
        metric = self.model.metric_at(q_c)
        grads = self.model.gap_gradients(q_c)
        p_tol = 1e-9 * max(1.0, mt.norm(metric, p_in))
        approaching, tangent = [], []
        for i in touching:
            value = mt.inner(metric, p_in, mt.unit(metric, grads[i]))
            if value < -p_tol:
                approaching.append(i)
            elif value <= p_tol:
                tangent.append(i)
        return approaching, tangent

    def advance(self, q_c, t_c, p_in, t_target):
        """Advance to the target time, resolving any impacts on the way."""
        model, cfg = self.model, self.cfg
        act_tol = cfg.activation_tol(model)
        pen_tol = PENETRATION_RTOL * model.length_scale
        impacts = 0
        while True:
            forces = self.effective_forces(q_c, p_in)
            q_n = self.solve_interval(q_c, t_c, p_in, t_target, forces)
            gaps_c = model.gaps(q_c)
            gaps_n = model.gaps(q_n)
            crossing = [
                i
                for i in range(gaps_n.size)
                if i not in self.held
                and gaps_n[i] < -pen_tol
                and gaps_c[i] >= -act_tol
            ]
            if not crossing:
                p_out = node_momentum(model, q_c, t_c, q_n, t_target, forces)
                return q_n, p_out

            impacts += 1
            if impacts > cfg.max_impacts_per_step:
                raise StepFailureError(
                    f"more than {cfg.max_impacts_per_step} impacts in one step"
                )

            approaching, tangent = self._node_contact_split(
                q_c, p_in, crossing, gaps_c, act_tol
            )
            if approaching:
                # The impact is at the node itself: no substep to solve.
                t_star, q_star, p_star = t_c, q_c, p_in
                contacts = tuple(
                    sorted(
                        set(i for i in range(gaps_c.size) if abs(gaps_c[i]) <= act_tol)
                        | set(approaching)
                    )
                )
            elif tangent:
                # A resting contact being pushed through its manifold:
                # the chattering limit. Hold it as an active constraint.
                metric = model.metric_at(q_c)
                energy = 0.5 * mt.norm(metric, p_in) ** 2
                self.events.append(
                    ImpactEvent(
                        t=t_c,
                        contacts=tuple(tangent),
                        kind=ImpactKind.PLASTIC,
                        impulses=tuple(0.0 for _ in tangent),
                        energy_before=energy,
                        energy_after=energy,
                        forced="resting",
                    )
                )
                for i in tangent:
                    self.held.setdefault(i, 0.0)
                continue
            else:
                t_star, q_star, contacts = _locate(
                    model, p_in, q_c, t_c, q_n, t_target, forces, cfg,
                    tuple(sorted(self.held)),
                )
                h1 = t_star - t_c
                if h1 > TINY_FRACTION * cfg.h:
                    p_star = node_momentum(model, q_c, t_c, q_star, t_star, forces)
                else:
                    p_star, q_star, t_star = p_in, q_c, t_c

            forced = None
            r_eff = min(cfg.restitution_for(i) for i in contacts)
            for i in contacts:
                if zeno_guard(self.events, i, cfg, now=t_star) == "force-plastic":
                    forced = "zeno"
                    r_eff = 0.0
                    break
            p_mapped, event, becomes_held = _resolve_event(
                model, q_star, t_star, p_star, contacts, r_eff, cfg, forced
            )
            self.events.append(event)
            if becomes_held:
                for i in contacts:
                    self.held.setdefault(i, 0.0)
            if t_target - t_star <= TINY_FRACTION * cfg.h:
                return q_star, p_mapped
            q_c, t_c, p_in = q_star, t_star, p_mapped


def simulate(
    model: MechModel,
    q0,
    qdot0,
    duration: float,
    config: StepperConfig,
    forces: ForceSampler | None = None,
) -> Trajectory:
    """Integrate the model forward, resolving impacts along the way.

    Samples are taken on the nominal time grid (the duration is rounded
    to a whole number of steps); impact events carry their exact
    in-step times. The initial discrete momentum is the continuous
    momentum of the initial state.
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    q0 = np.asarray(q0, dtype=float)
    qdot0 = np.asarray(qdot0, dtype=float)
    if q0.shape != (model.dim,) or qdot0.shape != (model.dim,):
        raise ValueError("initial state does not match the model dimension")
    gaps0 = model.gaps(q0)
    if np.any(gaps0 < -PENETRATION_RTOL * model.length_scale):
        raise ValueError(f"initial configuration penetrates a contact: gaps {gaps0}")

    sim = _Sim(model, config, forces)
    n_steps = max(1, int(round(duration / config.h)))
    times = [0.0]
    states = [q0.copy()]
    p = q0 * 0.0 + (model.mass_matrix(q0) @ qdot0)
    momenta = [p.copy()]

    t, q = 0.0, q0
    for k in range(n_steps):
        t_target = (k + 1) * config.h
        q, p = sim.advance(q, t, p, t_target)
        t = t_target
        times.append(t)
        states.append(q.copy())
        momenta.append(p.copy())

    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states),
        momenta=np.asarray(momenta),
        events=sim.events,
        holds=sim.holds,
        nominal_step=config.h,
    )
