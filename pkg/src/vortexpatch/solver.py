"""Newton, pseudo-arclength continuation and a Nash-Moser mode.

Unknowns are packed as ``x = (Theta, a_1, ..., a_L)`` where ``a_i`` holds the
cosine coefficients of layer ``i``.  Branches are parametrised by the
amplitude ``s = <v, R>`` along the unit-L^2 kernel direction ``v``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from vortexpatch.contour import (
    DEFAULT_NODES,
    PatchSystem,
    exterior_velocity_sup,
    functional_coefficients,
    functional_nodes,
    three_layer_system,
    total_circulation,
    two_layer_system,
)
from vortexpatch.errors import NestingError, ParameterError, PatchError, SolverError
from vortexpatch.fourier import FourierEvenSeries, NormSpec, weighted_norm
from vortexpatch.spectral import (
    BifurcationPoint,
    a_operator,
    jacobian_fd,
    three_layer_bifurcation,
    two_layer_bifurcation,
)

log = logging.getLogger(__name__)

__all__ = [
    "BranchState",
    "ContinuationConfig",
    "ContinuationResult",
    "NashMoserTrace",
    "Problem",
    "VerificationReport",
    "continue_branch",
    "gtilde_residual",
    "make_problem",
    "nash_moser_solve",
    "newton_solve",
    "verify_solution",
]

COND_LIMIT = 1e14
MIN_STEP = 2.0**-20


# --------------------------------------------------------------------------
# problems


@dataclass(frozen=True)
class Problem:
    """One bifurcation family with fixed discretisation."""

    family: str
    fold: int
    params: tuple[tuple[str, float], ...]
    truncation: int = 64
    nodes: int = DEFAULT_NODES

    @property
    def n_layers(self) -> int:
        return 2 if self.family == "two_layer" else 3

    @property
    def size(self) -> int:
        return 1 + self.n_layers * self.truncation

    def param(self, name: str) -> float:
        return dict(self.params)[name]

    def with_discretization(self, truncation: int | None = None, nodes: int | None = None) -> "Problem":
        return replace(self, truncation=truncation or self.truncation, nodes=nodes or self.nodes)

    def bifurcation(self, n_max: int = 50, root: str | None = None) -> BifurcationPoint:
        if self.family == "two_layer":
            return two_layer_bifurcation(self.param("b"), self.fold, root or "+", n_max=n_max,
                                         truncation=self.truncation)
        return three_layer_bifurcation(self.param("b2"), self.param("theta2"), self.fold, n_max=n_max,
                                       truncation=self.truncation)

    # packing -------------------------------------------------------------

    def pack(self, theta: float, R: Sequence[FourierEvenSeries]) -> np.ndarray:
        J = self.truncation
        return np.concatenate([[theta]] + [r.padded(J).coeffs for r in R])

    def unpack(self, x: np.ndarray) -> tuple[float, tuple[FourierEvenSeries, ...]]:
        J = self.truncation
        coeffs = np.asarray(x[1:]).reshape(self.n_layers, J)
        return float(x[0]), tuple(FourierEvenSeries(self.fold, c) for c in coeffs)

    # evaluation ----------------------------------------------------------

    def system(self, theta: float, R: Sequence[FourierEvenSeries], nodes: int | None = None) -> PatchSystem:
        n = nodes or self.nodes
        if self.family == "two_layer":
            return two_layer_system(self.param("b"), theta, R, nodes=n)
        return three_layer_system(theta, R, self.param("b2"), self.param("theta2"), nodes=n)

    def residual(self, theta: float, R, nodes: int | None = None, truncation: int | None = None) -> np.ndarray:
        """Sine coefficients of the functional, shape (layers, J)."""
        return functional_coefficients(self.system(theta, R, nodes), truncation or self.truncation)

    def residual_vector(self, x: np.ndarray) -> np.ndarray:
        theta, R = self.unpack(x)
        return self.residual(theta, R).ravel()


def make_problem(family: str, fold: int, truncation: int = 64, nodes: int = DEFAULT_NODES, **params) -> Problem:
    if family == "two_layer":
        keys = ("b",)
    elif family == "three_layer":
        keys = ("b2", "theta2")
    else:
        raise ParameterError("DOMAIN", f"unknown family {family!r}")
    missing = [k for k in keys if k not in params]
    if missing:
        raise ParameterError("DOMAIN", f"missing parameters {missing} for {family}")
    return Problem(family, int(fold), tuple((k, float(params[k])) for k in keys), int(truncation), int(nodes))


def residual_norm(coeffs: np.ndarray) -> float:
    """Largest per-layer L^2 coefficient norm."""
    return float(np.max(np.sqrt(np.sum(np.atleast_2d(coeffs) ** 2, axis=1))))


# --------------------------------------------------------------------------
# states and configs


@dataclass(frozen=True)
class ContinuationConfig:
    ds: float = 1e-3
    max_steps: int = 10
    newton_tol: float = 1e-11
    max_newton_iters: int = 12
    truncation: int = 64
    nodes: int = DEFAULT_NODES
    mode: str = "newton"
    fd_step: float = 1e-6
    nm_growth: float = 1.5
    nm_beta: int = 2
    nm_sobolev: int = 0
    nm_max_iters: int = 30

    def __post_init__(self) -> None:
        if not self.ds > 0:
            raise ValueError("ds must be positive")
        if not (self.newton_tol > 0 and self.fd_step > 0):
            raise ValueError("tolerances must be positive")
        if self.mode not in ("newton", "nash_moser"):
            raise ValueError(f"mode must be 'newton' or 'nash_moser', got {self.mode!r}")
        if self.max_newton_iters < 1 or self.max_steps < 1:
            raise ValueError("iteration limits must be positive")


@dataclass(frozen=True, eq=False)
class BranchState:
    amplitude: float
    theta: float
    perturbations: tuple[FourierEvenSeries, ...]
    residual: float
    diagnostics: dict
    iterations: int = 0
    constraint_residual: float = 0.0

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([r.coeffs for r in self.perturbations])


@dataclass(frozen=True)
class NashMoserTrace:
    a: tuple[float, ...]
    b: tuple[float, ...]
    cutoff: tuple[float, ...]
    C: tuple[float, ...]


@dataclass
class ContinuationResult:
    states: list[BranchState]
    stop_reason: str
    folds: list[int] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    near_trivial: list[int] = field(default_factory=list)

    def __iter__(self) -> Iterator[BranchState]:
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, k):
        return self.states[k]


def unit_kernel(problem: Problem, point: BifurcationPoint) -> np.ndarray:
    """Packed kernel direction (Theta slot 0) normalised to unit L^2."""
    v = problem.pack(0.0, point.kernel)
    return v / np.sqrt(np.pi * float(v @ v))


def _l2_amp(vhat: np.ndarray, x: np.ndarray) -> float:
    return float(np.pi * (vhat[1:] @ x[1:]))


def diagnostics(problem: Problem, theta: float, R) -> dict:
    system = problem.system(theta, R)
    out = {
        "circulation": total_circulation(system),
        "exterior_velocity_sup": exterior_velocity_sup(system, 2.0 * system.radii[0]),
        "min_gap": system.min_gap(),
    }
    if problem.family == "three_layer":
        out["b3"] = float(system.radii[2])
    return out


def make_state(problem: Problem, x: np.ndarray, vhat: np.ndarray, iterations: int = 0,
               constraint: float = 0.0) -> BranchState:
    theta, R = problem.unpack(x)
    res = residual_norm(problem.residual(theta, R))
    return BranchState(
        amplitude=_l2_amp(vhat, x),
        theta=theta,
        perturbations=R,
        residual=res,
        diagnostics=diagnostics(problem, theta, R),
        iterations=iterations,
        constraint_residual=constraint,
    )


# --------------------------------------------------------------------------
# Newton


def _safe_eval(fun, x):
    try:
        return fun(x)
    except (NestingError, ParameterError):
        return None


def _newton(problem: Problem, x0: np.ndarray, border: np.ndarray, target: float,
            config: ContinuationConfig):
    """Damped Newton on ``{G(x) = 0, border . x = target}``.

    Returns ``(x, iterations, last_jacobian)``.
    """

    def aug(x):
        return np.concatenate([problem.residual_vector(x), [border @ x - target]])

    x = np.array(x0, dtype=float)
    H = _safe_eval(aug, x)
    if H is None:
        raise NestingError("NESTING_VIOLATION", "initial guess violates nesting")
    jac = None
    for it in range(config.max_newton_iters + 1):
        res = residual_norm(H[:-1].reshape(problem.n_layers, -1))
        log.debug("newton it=%d residual=%.3e constraint=%.3e", it, res, H[-1])
        if res < config.newton_tol and abs(H[-1]) <= 1e-12:
            return x, it, jac
        if it == config.max_newton_iters:
            break
        jac = jacobian_fd(aug, x, config.fd_step)
        cond = np.linalg.cond(jac)
        if not cond < COND_LIMIT:
            raise SolverError("SINGULAR_JACOBIAN", f"condition estimate {cond:.3e} exceeds {COND_LIMIT:.0e}")
        dx = np.linalg.solve(jac, -H)
        merit = np.linalg.norm(H)
        lam = 1.0
        saw_nesting = False
        while lam >= MIN_STEP:
            trial = x + lam * dx
            Ht = _safe_eval(aug, trial)
            if Ht is None:
                saw_nesting = True
            elif np.linalg.norm(Ht) <= (1 - 1e-4 * lam) * merit:
                x, H = trial, Ht
                break
            lam *= 0.5
        else:
            if saw_nesting:
                raise NestingError("NESTING_VIOLATION", "line search could not keep the boundaries nested")
            # no descent left: accept only if already at roundoff level
            break
    res = residual_norm(H[:-1].reshape(problem.n_layers, -1))
    raise SolverError(
        "NO_CONVERGENCE",
        f"residual {res:.3e} after {config.max_newton_iters} iterations (tol {config.newton_tol:.1e})",
    )


def newton_solve(problem: Problem, point: BifurcationPoint, s: float,
                 config: ContinuationConfig = ContinuationConfig(),
                 theta_init: float | None = None, R_init=None) -> BranchState:
    """Solve ``G = 0`` with ``<v, R> = s``; default predictor ``(Theta*, s v)``."""
    vhat = unit_kernel(problem, point)
    if R_init is None:
        x0 = problem.pack(point.theta_star, tuple(c * 0.0 for c in point.kernel)) + s * vhat
    else:
        x0 = problem.pack(point.theta_star, R_init)
    if theta_init is not None:
        x0[0] = theta_init
    border = np.pi * vhat
    border[0] = 0.0
    x, iters, _ = _newton(problem, x0, border, s, config)
    return make_state(problem, x, vhat, iters, float(border @ x - s))


# --------------------------------------------------------------------------
# continuation


def _weights(problem: Problem) -> np.ndarray:
    w = np.full(problem.size, np.pi)
    w[0] = 1.0
    return w


def continue_branch(problem: Problem, point: BifurcationPoint,
                    config: ContinuationConfig = ContinuationConfig(), direction: float = 1.0) -> ContinuationResult:
    """Pseudo-arclength continuation from a certified point.

    The first step fixes the amplitude ``s = ds``; later steps fix the
    arclength along the secant of the previous two states.
    """
    vhat = unit_kernel(problem, point)
    w = _weights(problem)
    ds = config.ds * float(np.sign(direction) or 1.0)
    x_prev = problem.pack(point.theta_star, tuple(c * 0.0 for c in point.kernel))
    states: list[BranchState] = []
    folds: list[int] = []
    errors: list[str] = []
    near: list[int] = []
    last_sign = None
    stop = "max_steps"

    border = np.pi * vhat
    border[0] = 0.0
    try:
        # the branch is even in s, so the parameter does not move at first order
        x, iters, jac = _newton(problem, x_prev + ds * vhat, border, ds, config)
    except PatchError as exc:
        return ContinuationResult([], _stop_reason(exc), errors=[str(exc)])
    states.append(make_state(problem, x, vhat, iters, float(border @ x - ds)))
    if jac is not None:
        last_sign = np.sign(np.linalg.det(jac))

    for step in range(1, config.max_steps):
        t = x - x_prev
        t = t / np.sqrt(float(t @ (w * t)))
        pred = x + abs(ds) * t
        row = w * t
        target = float(row @ pred)
        try:
            x_new, iters, jac = _newton(problem, pred, row, target, config)
        except PatchError as exc:
            errors.append(f"step {step}: {exc}")
            stop = _stop_reason(exc)
            break
        if jac is not None:
            sign = np.sign(np.linalg.det(jac))
            if last_sign is not None and sign != last_sign:
                folds.append(len(states))
                log.info("fold detected near state %d", len(states))
            last_sign = sign
        x_prev, x = x, x_new
        state = make_state(problem, x, vhat, iters, float(row @ x - target))
        states.append(state)
        if np.sqrt(np.pi * float(x[1:] @ x[1:])) < 0.5 * abs(ds):
            near.append(len(states) - 1)
    return ContinuationResult(states, stop, folds, errors, near)


def _stop_reason(exc: PatchError) -> str:
    if isinstance(exc, NestingError) or exc.code in ("NOT_NESTED", "NEGATIVE_RADICAND"):
        return "nesting"
    return {"NO_CONVERGENCE": "no_convergence", "SINGULAR_JACOBIAN": "singular_jacobian"}.get(exc.code, "error")


# --------------------------------------------------------------------------
# Nash-Moser


def gtilde_residual(problem: Problem, point: BifurcationPoint, s: float, Rt: np.ndarray | None = None) -> float:
    """``|G~_s(R~)|`` in coefficient l^2; ``R~ = 0`` gives the starting residual ``b_0``."""
    vhat = unit_kernel(problem, point)[1:]
    Rt = np.zeros_like(vhat) if Rt is None else np.asarray(Rt, dtype=float)
    amp = np.pi * float(vhat @ Rt)
    x = np.concatenate([[point.theta_star + amp], s * vhat + Rt - amp * vhat])
    return float(np.linalg.norm(problem.residual_vector(x)))


def nash_moser_solve(problem: Problem, point: BifurcationPoint, s: float,
                     config: ContinuationConfig = ContinuationConfig(mode="nash_moser"),
                     tol: float | None = None) -> tuple[BranchState, NashMoserTrace]:
    """Smoothed approximate-inverse iteration on ``G~_s(R~) = G(Theta* + v.R~, s v + (I - P) R~)``.

    ``T_s[h] = d_Theta G (v.h) + (DG - a)(I - P) h`` with ``a[h] = (P0(h_1' u_1^theta), 0, 0)``.
    The correction is cut off at frequency ``N_n = 2 m growth^n``.
    """
    if problem.family != "three_layer":
        raise ParameterError("DOMAIN", "the Nash-Moser mode is defined for the three-layer family")
    tol = config.newton_tol if tol is None else tol
    m, J, L = problem.fold, problem.truncation, problem.n_layers
    vhat = unit_kernel(problem, point)[1:]
    theta_star = point.theta_star
    modes = np.tile(m * np.arange(1, J + 1), L)
    hi_spec = NormSpec(config.nm_sobolev + config.nm_beta)
    lo_spec = NormSpec(config.nm_sobolev)

    def original(Rt: np.ndarray) -> np.ndarray:
        amp = np.pi * float(vhat @ Rt)
        return np.concatenate([[theta_star + amp], s * vhat + Rt - amp * vhat])

    def gtilde(Rt: np.ndarray) -> np.ndarray:
        return problem.residual_vector(original(Rt))

    def norm(vec: np.ndarray, spec: NormSpec) -> float:
        total = 0.0
        for c in vec.reshape(L, J):
            total += weighted_norm(FourierEvenSeries(m, c), spec) ** 2
        return float(np.sqrt(total))

    proj = np.eye(L * J) - np.pi * np.outer(vhat, vhat)
    Rt = np.zeros(L * J)
    a_hist, b_hist, n_hist, c_hist = [], [], [], []
    G = gtilde(Rt)
    for n in range(config.nm_max_iters):
        b_hist.append(float(np.linalg.norm(G)))
        if residual_norm(G.reshape(L, J)) < tol:
            break
        x = original(Rt)
        theta, R = problem.unpack(x)
        full = jacobian_fd(problem.residual_vector, x, config.fd_step)
        a_apply = a_operator(theta, R, problem.param("b2"), problem.param("theta2"), problem.nodes)
        a_mat = np.column_stack([a_apply(problem.unpack(np.concatenate([[0.0], e]))[1]).ravel()
                                 for e in np.eye(L * J)])
        T = np.outer(full[:, 0], np.pi * vhat) + (full[:, 1:] - a_mat) @ proj
        sol, _, rank, _ = np.linalg.lstsq(T, G, rcond=None)
        if rank < L * J:
            raise SolverError("T_S_SINGULAR", f"bordered T_s has rank {rank} < {L * J}")
        cutoff = 2.0 * m * config.nm_growth**n
        step = np.where(modes <= cutoff, sol, 0.0)
        Rt_new = Rt - step
        G_new = _safe_eval(gtilde, Rt_new)
        if G_new is None:
            raise NestingError("NESTING_VIOLATION", f"Nash-Moser iterate {n + 1} violates nesting")
        a_hist.append(norm(Rt_new - Rt, lo_spec))
        c_hist.append(norm(Rt_new - Rt, hi_spec))
        n_hist.append(cutoff)
        Rt, G = Rt_new, G_new
    else:
        raise SolverError("NO_CONVERGENCE", f"Nash-Moser residual {b_hist[-1]:.3e} after {config.nm_max_iters} iterations")
    # pad so all trace sequences share the length of b
    k = len(b_hist)
    a_hist += [0.0] * (k - len(a_hist))
    c_hist += [0.0] * (k - len(c_hist))
    n_hist += [2.0 * m * config.nm_growth ** (k - 1)] * (k - len(n_hist))
    trace = NashMoserTrace(tuple(a_hist), tuple(b_hist), tuple(n_hist), tuple(c_hist))
    x = original(Rt)
    border = np.concatenate([[0.0], np.pi * vhat])
    full_vhat = np.concatenate([[0.0], vhat])
    return make_state(problem, x, full_vhat, len(a_hist), float(border @ x - s)), trace


# --------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    metrics: dict
    failures: tuple[str, ...]


def verify_solution(state: BranchState, problem: Problem, strict: int = 2, *,
                    residual_tol: float = 1e-10, circulation_tol: float = 1e-12,
                    exterior_tol: float = 1e-6, symmetry_tol: float = 1e-10) -> VerificationReport:
    """Recompute all metrics on a refined grid; circulation and exterior checks apply to three layers."""
    nodes = strict * problem.nodes
    J2 = 2 * problem.truncation
    R = tuple(r.padded(J2) for r in state.perturbations)
    metrics: dict = {"strict": strict, "nodes": nodes, "truncation": J2}
    failures: list[str] = []
    try:
        system = problem.system(state.theta, R, nodes)
        system.check_nesting()
    except PatchError as exc:
        return VerificationReport(False, {"error": str(exc), **metrics}, ("nesting",))
    coeffs = functional_coefficients(system, J2)
    metrics["residual"] = residual_norm(coeffs)
    metrics["circulation"] = total_circulation(system)
    b1 = system.radii[0]
    ext = {f"{f:g}": exterior_velocity_sup(system, f * b1) for f in (1.5, 2.0, 4.0)}
    metrics["exterior_velocity"] = ext
    metrics["min_gap"] = system.min_gap()
    vals = functional_nodes(system)
    shift = nodes // problem.fold
    rot = np.max(np.abs(np.roll(vals, -shift, axis=1) - vals))
    refl = np.max(np.abs(vals + np.roll(vals[:, ::-1], 1, axis=1)))
    metrics["symmetry_defect"] = float(max(rot, refl))

    if not metrics["residual"] <= residual_tol:
        failures.append("residual")
    if not metrics["min_gap"] > 0:
        failures.append("min_gap")
    if not metrics["symmetry_defect"] <= symmetry_tol:
        failures.append("symmetry_defect")
    if problem.family == "three_layer":
        if not abs(metrics["circulation"]) < circulation_tol:
            failures.append("circulation")
        if not max(ext.values()) < exterior_tol:
            failures.append("exterior_velocity")
    return VerificationReport(not failures, metrics, tuple(failures))
