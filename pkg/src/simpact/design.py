"""Contact-geometry design optimization.

Drives the kinetic-metric inner product between two contact normals to
zero over a chosen set of free configuration and design variables while
keeping both contacts closed. The residual stack is the two gaps
(nondimensionalized by the body length scale) plus the unit-normal
inner product; the system is underconstrained, and Gauss-Newton with a
minimum-norm (pseudoinverse) update biases the answer toward the
nearest orthogonal configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import metric as mt
from .errors import DesignError, DimensionError
from .models import BilliardsModel, LegTailModel, MechModel
from .uniqueness import indeterminacy_xi

#: Default termination threshold on the unit-normal inner product.
INNER_TOL = 1e-6

#: Gap closure threshold, relative to the problem length scale.
GAP_RTOL = 1e-9

#: Loose closure tolerance required of the initial guess.
INITIAL_GAP_RTOL = 1e-3


@dataclass
class DesignProblem:
    """Orthogonality root-finding problem over (configuration, design).

    ``model_factory`` rebuilds the model for a design parameter vector;
    ``free_q`` and ``free_params`` select which entries of the
    configuration and parameter vectors the optimizer may move. The
    number of free variables must be at least the residual count (3).
    """

    model_factory: Callable[[np.ndarray], MechModel]
    q0: np.ndarray
    params0: np.ndarray
    free_q: tuple[int, ...]
    free_params: tuple[int, ...] = ()
    gap_pair: tuple[int, int] = (0, 1)
    length_scale: float | None = None
    tol_inner: float = INNER_TOL
    tol_gap: float = GAP_RTOL
    max_iter: int = 200

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float)
        self.params0 = np.asarray(self.params0, dtype=float)
        self.free_q = tuple(int(i) for i in self.free_q)
        self.free_params = tuple(int(i) for i in self.free_params)
        if self.n_free < 3:
            raise DimensionError(
                "need at least three free variables for the three residuals"
            )
        if self.length_scale is None:
            self.length_scale = self.model_factory(self.params0).length_scale

    @property
    def n_free(self) -> int:
        return len(self.free_q) + len(self.free_params)

    def pack(self, q, params) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        params = np.asarray(params, dtype=float)
        return np.concatenate([q[list(self.free_q)], params[list(self.free_params)]])

    def unpack(self, x: np.ndarray):
        q = self.q0.copy()
        params = self.params0.copy()
        nq = len(self.free_q)
        q[list(self.free_q)] = x[:nq]
        params[list(self.free_params)] = x[nq:]
        return q, params

    def residuals(self, x: np.ndarray) -> np.ndarray:
        q, params = self.unpack(x)
        model = self.model_factory(params)
        gaps = model.gaps(q)
        grads = model.gap_gradients(q)
        metric = model.metric_at(q)
        i, j = self.gap_pair
        u = mt.unit(metric, grads[i])
        v = mt.unit(metric, grads[j])
        return np.array(
            [
                gaps[i] / self.length_scale,
                gaps[j] / self.length_scale,
                mt.inner(metric, u, v),
            ]
        )

    def converged(self, r: np.ndarray) -> bool:
        return (
            abs(r[0]) <= self.tol_gap
            and abs(r[1]) <= self.tol_gap
            and abs(r[2]) <= self.tol_inner
        )


@dataclass(frozen=True)
class OrthogonalityResult:
    """Converged orthogonal double-contact solution."""

    q_opt: np.ndarray
    params_opt: np.ndarray
    residuals: np.ndarray
    initial_residuals: np.ndarray
    iterations: int
    displacement: float  # free-variable distance from the initial guess

    @property
    def inner_value(self) -> float:
        return float(self.residuals[2])

    def report(self, free_names: Sequence[str] | None = None, x0=None, x_opt=None) -> str:
        lines = [
            "orthogonality optimization report",
            f"  iterations        : {self.iterations}",
            f"  gap residuals     : {self.residuals[0]:.3e}, {self.residuals[1]:.3e}",
            f"  normal inner start: {self.initial_residuals[2]: .6e}",
            f"  normal inner final: {self.residuals[2]: .6e}",
            f"  free displacement : {self.displacement:.6e}",
        ]
        if free_names is not None and x0 is not None and x_opt is not None:
            lines.append("  variable          : initial -> final (delta)")
            for name, a, b in zip(free_names, x0, x_opt):
                lines.append(f"    {name:<16}: {a: .8f} -> {b: .8f} ({b - a:+.3e})")
        return "\n".join(lines)


def _fd_jacobian(fun, x, r0, rel=2e-7):
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        step = rel * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        jac[:, i] = (fun(xp) - fun(xm)) / (2.0 * step)
    return jac


def solve_orthogonal(
    problem: DesignProblem, initial: np.ndarray | None = None
) -> OrthogonalityResult:
    """Gauss-Newton with minimum-norm updates to an orthogonal contact pair.

    The initial guess must have both gaps closed loosely; iteration
    stops once both gaps are closed tightly and the unit-normal inner
    product is below the problem tolerance. Raises on Jacobian rank
    collapse or when the iteration cap is exceeded.
    """
    x0 = problem.pack(problem.q0, problem.params0) if initial is None else np.asarray(
        initial, dtype=float
    ).copy()
    r0 = problem.residuals(x0)
    if max(abs(r0[0]), abs(r0[1])) > INITIAL_GAP_RTOL:
        raise DesignError(
            f"initial guess does not close both gaps: residuals {r0[:2]}"
        )
    x = x0.copy()
    r = r0
    iterations = 0
    while not problem.converged(r):
        if iterations >= problem.max_iter:
            raise DesignError(
                f"iteration cap {problem.max_iter} exceeded; residuals {r}"
            )
        jac = _fd_jacobian(problem.residuals, x, r)
        sv = np.linalg.svd(jac, compute_uv=False)
        if sv[-1] <= 1e-12 * max(sv[0], 1.0):
            raise DesignError(f"residual Jacobian rank collapse (signals {sv})")
        # Minimum-norm Newton step for the underconstrained system.
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        alpha = 1.0
        while True:
            x_new = x + alpha * step
            r_new = problem.residuals(x_new)
            if np.linalg.norm(r_new) < np.linalg.norm(r) or problem.converged(r_new):
                break
            alpha *= 0.5
            if alpha < 1e-10:
                raise DesignError("line search failed; residual stalled")
        x, r = x_new, r_new
        iterations += 1
    q_opt, params_opt = problem.unpack(x)
    return OrthogonalityResult(
        q_opt=q_opt,
        params_opt=params_opt,
        residuals=r,
        initial_residuals=r0,
        iterations=iterations,
        displacement=float(np.linalg.norm(x - x0)),
    )


def billiards_orthogonality_problem(
    model: BilliardsModel,
    q0: np.ndarray,
    free_balls: Sequence[str] = ("a", "b"),
    tol_inner: float = INNER_TOL,
) -> DesignProblem:
    """Free the planar positions of the chosen balls; the cue stays put."""
    slots = {"a": (0, 1), "b": (2, 3), "c": (4, 5)}
    free_q: list[int] = []
    for name in free_balls:
        free_q.extend(slots[name])
    return DesignProblem(
        model_factory=lambda params: model,
        q0=np.asarray(q0, dtype=float),
        params0=np.zeros(0),
        free_q=tuple(free_q),
        tol_inner=tol_inner,
        length_scale=model.length_scale,
    )


LEGTAIL_PARAM_NAMES = ("ax", "ay", "bx", "by")
LEGTAIL_Q_NAMES = ("x", "y", "theta")


def legtail_orthogonality_problem(
    model: LegTailModel,
    q0: np.ndarray,
    free_q: Sequence[str] = ("y", "theta"),
    free_params: Sequence[str] = ("ax", "bx"),
    tol_inner: float = INNER_TOL,
) -> DesignProblem:
    """Free a subset of the pose and of the contact-offset design."""
    params0 = np.concatenate([model.r_a, model.r_b])

    def factory(params):
        return LegTailModel(
            mass=model.m,
            inertia=model.J,
            contact_a=params[0:2],
            contact_b=params[2:4],
            gravity=model.g,
        )

    return DesignProblem(
        model_factory=factory,
        q0=np.asarray(q0, dtype=float),
        params0=params0,
        free_q=tuple(LEGTAIL_Q_NAMES.index(n) for n in free_q),
        free_params=tuple(LEGTAIL_PARAM_NAMES.index(n) for n in free_params),
        tol_inner=tol_inner,
        length_scale=model.length_scale,
    )


def xi_at_optimum(
    model: MechModel, q_opt: np.ndarray, gap_pair=(0, 1), samples: int = 100, seed: int = 0
) -> float:
    """Largest order-indeterminacy over random infeasible momenta."""
    metric = model.metric_at(q_opt)
    grads = model.gap_gradients(q_opt)
    u = mt.unit(metric, grads[gap_pair[0]])
    v = mt.unit(metric, grads[gap_pair[1]])
    rng = np.random.default_rng(seed)
    worst = 0.0
    found = 0
    while found < samples:
        p = rng.standard_normal(model.dim)
        if mt.inner(metric, p, u) >= 0 or mt.inner(metric, p, v) >= 0:
            p = -p
        if mt.inner(metric, p, u) >= 0 or mt.inner(metric, p, v) >= 0:
            continue
        worst = max(worst, indeterminacy_xi(metric, p, u, v))
        found += 1
    return worst


def theta_sweep(
    model: BilliardsModel,
    theta_start: float,
    theta_stop: float,
    samples: int,
    cue_speed: float = 1.0,
) -> np.ndarray:
    """Order-indeterminacy of the break across a range of contact angles.

    For each angle the double-contact configuration is built with the
    cue moving along the bisector, and the two resolution orders are
    compared. Returns an array of ``(theta, xi)`` rows. The curve
    vanishes at the orthogonal angle (pi over two) and at the grazing
    angle (pi).
    """
    if samples < 2:
        raise ValueError("a sweep needs at least two samples")
    theta_min = model.min_break_angle()
    if theta_start < theta_min - 1e-12:
        raise ValueError(
            f"theta_start {theta_start:.4f} is below the contact limit "
            f"{theta_min:.4f} where the outer balls collide"
        )
    if theta_stop > math.pi + 1e-12:
        raise ValueError("theta_stop must not exceed pi")
    thetas = np.linspace(theta_start, theta_stop, samples)
    out = np.empty((samples, 2))
    for k, theta in enumerate(thetas):
        out[k] = theta, sweep_point(model, theta, cue_speed)
    return out


def sweep_point(model: BilliardsModel, theta: float, cue_speed: float = 1.0) -> float:
    """The indeterminacy measure at one break angle."""
    q = model.double_contact_configuration(theta)
    metric = model.metric_at(q)
    grads = model.gap_gradients(q)
    p = model.cue_break_momentum(q, cue_speed)
    return indeterminacy_xi(metric, p, grads[0], grads[1])
