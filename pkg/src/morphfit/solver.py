"""Newton solvers for mesh quality and surface fitting.

Both drivers share one Newton loop: ``x_{k+1} = x_k - alpha * dx`` with
``H dx = J`` solved by Jacobi-preconditioned MINRES and ``alpha`` found by
backtracking from 1 until every acceptance constraint holds.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import minres

from .fitting import EmptyFitSetError, FitTerm, WeightState, update_weight
from .geometry.background import OutOfDomainError
from .mesh import HighOrderMesh, InvalidMeshError
from .tmop import QualityObjective, TargetSpec

# growth allowed per step for the objective, gradient norm and fit error
GROWTH = 1.2
# lower bound on min det(A) relative to the initial mesh
DET_FLOOR = 1e-3


class LineSearchError(RuntimeError):
    """No step length satisfied the line-search constraints."""


@dataclass
class SolverConfig:
    """Tolerances and limits.

    Attributes
    ----------
    eps : relative gradient tolerance ``|J_k| / |J_0|``
    grad_atol : absolute gradient tolerance (catches an already optimal mesh)
    eps_sigma : fit tolerance on ``max |sigma|`` over the fit nodes
    max_iter : maximum Newton iterations ``N_opt``
    max_halvings : line-search halvings before giving up
    minres_rtol, minres_maxiter : inner solver controls (``maxiter=None``
        means ``min(2 * ndof, 5000)``)
    fix_boundary : hold boundary nodes that are not fitted in place
    """

    eps: float = 1e-10
    grad_atol: float = 1e-12
    eps_sigma: float = 1e-5
    max_iter: int = 200
    max_halvings: int = 30
    minres_rtol: float = 1e-8
    minres_maxiter: int | None = None
    fix_boundary: bool = True

    def __post_init__(self):
        for name in ("eps", "grad_atol", "eps_sigma", "minres_rtol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 0 or self.max_halvings < 0:
            raise ValueError("iteration limits must be nonnegative")


@dataclass
class IterationRecord:
    """State after an accepted step.

    ``F_mu``, ``F_sigma`` and ``grad_norm`` use the weight in force for the
    next step; ``F_step`` and ``grad_norm_step`` are the values with the
    weight that produced the step, as checked by the line search.
    """

    iter: int
    F_mu: float
    F_sigma: float
    fit_error: float
    min_detA: float
    alpha: float
    w_sigma: float
    minres_iters: int
    grad_norm: float
    minres_converged: bool = True
    fallback: bool = False
    F_step: float = float("nan")
    grad_norm_step: float = float("nan")


@dataclass
class SolverReport:
    """Per-iteration history.  ``initial`` describes the starting mesh,
    ``records`` one entry per accepted Newton step."""

    initial: IterationRecord | None = None
    records: list = field(default_factory=list)
    reason: str = ""
    initial_min_det: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final(self) -> IterationRecord:
        return self.records[-1] if self.records else self.initial

    @property
    def converged(self) -> bool:
        return self.reason in ("fit-tolerance", "gradient-tolerance")

    def rows(self):
        """All records including the initial state."""
        return ([self.initial] if self.initial else []) + self.records


# ---------------------------------------------------------------------------
# linear solver


@dataclass
class MinresResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual: float


def minres_jacobi(H, J, rtol=1e-8, maxiter=None) -> MinresResult:
    """Solve ``H x = J`` by MINRES with the preconditioner ``diag(|H_ii|)^-1``.

    Zero diagonal entries are replaced by 1 (with a warning).  The returned
    flag reports whether the true residual meets ``rtol * |J|``.
    """
    J = np.asarray(J, dtype=float)
    n = len(J)
    if maxiter is None:
        maxiter = min(2 * n, 5000)
    d = np.abs(H.diagonal())
    if np.any(d == 0):
        warnings.warn("zero diagonal entries in the Jacobi preconditioner replaced by 1",
                      RuntimeWarning, stacklevel=2)
        d = np.where(d == 0, 1.0, d)
    M = diags(1.0 / d)
    count = [0]

    def cb(_):
        count[0] += 1

    bnorm = np.linalg.norm(J)
    if bnorm == 0:
        return MinresResult(np.zeros(n), 0, True, 0.0)
    x, info = minres(H, J, M=M, rtol=rtol, maxiter=maxiter, callback=cb)
    res = float(np.linalg.norm(H @ x - J))
    ok = info == 0 and np.all(np.isfinite(x)) and res <= max(10 * rtol, 1e-12) * bnorm
    return MinresResult(x, count[0], bool(ok), res / bnorm)


# ---------------------------------------------------------------------------
# problem state


class FitProblem:
    """``F = F_mu + w F_sigma`` restricted to the free degrees of freedom."""

    def __init__(self, mesh: HighOrderMesh, target: TargetSpec | None = None, metric=None,
                 ls=None, nodes=None, config: SolverConfig | None = None, backend=None):
        self.mesh = mesh
        self.cfg = config or SolverConfig()
        self.quality = QualityObjective(mesh, target, metric, backend=backend)
        nodes = np.zeros(0, dtype=np.int64) if nodes is None else np.asarray(nodes, dtype=np.int64)
        if len(nodes) and ls is None:
            raise ValueError("fit nodes given without a level set")
        self.fit = FitTerm(nodes, ls, mesh.dim, mesh.num_nodes) if len(nodes) else None
        d = mesh.dim
        free = np.ones(mesh.num_nodes, dtype=bool)
        if self.cfg.fix_boundary:
            free[mesh.boundary_node_ids()] = False
            free[nodes] = True
        self.free_dofs = (np.flatnonzero(free)[:, None] * d + np.arange(d)).ravel()
        asm = self.quality.assembler
        if self.fit is not None:
            r = np.repeat(self.fit.dofs.reshape(-1, d), d, axis=1).ravel()
            c = np.tile(self.fit.dofs.reshape(-1, d), (1, d)).ravel()
            self._fit_slots = asm.slot(r, c)

    @property
    def has_fit(self) -> bool:
        return self.fit is not None

    def state(self, x, w):
        """Objective pieces, restricted gradient, fit error and min det at ``x``."""
        F_mu, g = self.quality.energy_and_gradient(x)
        F_s, err = 0.0, 0.0
        if self.fit is not None:
            F_s = self.fit.energy(x, w)
            g = g + self.fit.gradient(x, w)
            err = self.fit.fit_error(x)
        return dict(F_mu=F_mu, F_sigma=F_s, F=F_mu + F_s, grad=g[self.free_dofs],
                    gnorm=float(np.linalg.norm(g[self.free_dofs])), err=err,
                    min_det=self.quality.min_det(x))

    def hessian(self, x, w):
        data = self.quality.hessian_data(x)
        if self.fit is not None:
            data = data.copy()
            np.add.at(data, self._fit_slots, self.fit.hessian_blocks(x, w).ravel())
        H = self.quality.assembler.matrix(data)
        f = self.free_dofs
        return H[f][:, f]

    def full(self, x, dx_free):
        out = np.zeros_like(x)
        out[self.free_dofs] = dx_free
        return out


def _accept(new, old):
    # strict growth bound; equality is allowed for a zero step
    return new < GROWTH * old or new <= old


def line_search(problem: FitProblem, x, dx, w, current: dict, det_floor: float,
                max_halvings: int = 30):
    """Backtracking from ``alpha = 1`` by halving.

    A trial ``x - alpha dx`` is accepted when it keeps every Jacobian
    determinant positive and above ``det_floor``, and the objective,
    gradient norm and fit error grow by less than a factor 1.2.

    Returns ``(alpha, x_new, state_new)``; raises ``LineSearchError``.
    """
    alpha = 1.0
    for _ in range(max_halvings + 1):
        xt = x - alpha * dx
        try:
            if problem.quality.min_det(xt) > det_floor:
                st = problem.state(xt, w)
                ok = (st["min_det"] > 0 and st["min_det"] > det_floor
                      and np.isfinite(st["F"])
                      and _accept(st["F"], current["F"])
                      and _accept(st["gnorm"], current["gnorm"])
                      and (not problem.has_fit or _accept(st["err"], current["err"])))
                if ok:
                    return alpha, xt, st
        except (InvalidMeshError, OutOfDomainError):
            pass
        alpha *= 0.5
    raise LineSearchError(f"no acceptable step after {max_halvings} halvings")


def _record(k, st, alpha, w, its, ok=True, fallback=False, step=None):
    step = st if step is None else step
    return IterationRecord(k, st["F_mu"], st["F_sigma"], st["err"], st["min_det"], alpha, w,
                           its, st["gnorm"], ok, fallback, step["F"], step["gnorm"])


def _newton_direction(problem, x, w, st, cfg):
    H = problem.hessian(x, w)
    sol = minres_jacobi(H, st["grad"], cfg.minres_rtol, cfg.minres_maxiter)
    dx, fallback = sol.x, False
    if not np.all(np.isfinite(dx)) or (not sol.converged and not np.dot(dx, st["grad"]) > 0):
        # preconditioned gradient direction
        dx = st["grad"] / np.where(H.diagonal() != 0, np.abs(H.diagonal()), 1.0)
        fallback = True
    return problem.full(x, dx), sol, fallback


def _check_initial(problem, x):
    m = problem.quality.min_det(x)
    if not m > 0:
        raise InvalidMeshError(f"initial mesh is inverted (min det(A) = {m:g})")
    return m


def newton_quality(mesh: HighOrderMesh, target: TargetSpec | None = None, metric=None,
                   config: SolverConfig | None = None, backend=None):
    """Optimize node positions for mesh quality only.

    Stops when ``|J_k| <= eps |J_0|`` (or ``|J_k| <= grad_atol``), after
    ``max_iter`` steps, or on line-search failure.

    Returns ``(mesh, report)``.
    """
    cfg = config or SolverConfig()
    problem = FitProblem(mesh, target, metric, config=cfg, backend=backend)
    return _run(problem, mesh, None, cfg)


def newton_fit(mesh: HighOrderMesh, target: TargetSpec | None, metric, ls, nodes,
               weight: WeightState | None = None, config: SolverConfig | None = None,
               backend=None):
    """Fit ``nodes`` to the zero set of ``ls`` while preserving quality.

    Iterates while the fit error exceeds ``eps_sigma``, the adaptation
    counter is below its limit and fewer than ``max_iter`` steps were
    taken.  After each accepted step the weight is updated from the change
    in fit error.  With a fixed weight the run also stops when the
    relative gradient drops below ``eps``.  An empty node set reduces to
    ``newton_quality``.

    Returns ``(mesh, report, weight_state)``.
    """
    cfg = config or SolverConfig()
    weight = weight or WeightState()
    if nodes is None or len(nodes) == 0:
        m, rep = newton_quality(mesh, target, metric, cfg, backend)
        return m, rep, weight
    if ls is None:
        raise EmptyFitSetError("fitting requires a level set")
    problem = FitProblem(mesh, target, metric, ls, nodes, cfg, backend)
    return _run(problem, mesh, weight, cfg)


def _run(problem: FitProblem, mesh, weight, cfg):
    x = mesh.coords.ravel().copy()
    fitting = weight is not None
    w = weight.w if fitting else 0.0
    min0 = _check_initial(problem, x)
    floor = DET_FLOOR * min0
    rep = SolverReport(initial_min_det=min0)
    st = problem.state(x, w)
    rep.initial = _record(0, st, 0.0, w, 0)
    g0 = st["gnorm"]
    k = 0
    reason = ""
    while True:
        if fitting:
            if st["err"] <= cfg.eps_sigma:
                reason = "fit-tolerance"
                break
            if weight.adaptive and weight.n >= weight.N:
                reason = "adaptation-limit"
                break
        if (not fitting or not weight.adaptive) and (st["gnorm"] <= cfg.eps * g0
                                                     or st["gnorm"] <= cfg.grad_atol):
            reason = "gradient-tolerance"
            break
        if k >= cfg.max_iter:
            reason = "iteration-limit"
            break
        dx, sol, fallback = _newton_direction(problem, x, w, st, cfg)
        try:
            alpha, x_new, st_new = line_search(problem, x, dx, w, st, floor, cfg.max_halvings)
        except LineSearchError:
            reason = "line-search"
            break
        k += 1
        if fitting:
            new_weight = update_weight(weight, st["err"], st_new["err"])
            step = st_new
            if new_weight.w != weight.w:
                # objective changed: re-evaluate at the accepted point
                st_new = problem.state(x_new, new_weight.w)
            rep.records.append(_record(k, st_new, alpha, new_weight.w, sol.iterations,
                                       sol.converged, fallback, step))
            weight, w = new_weight, new_weight.w
        else:
            rep.records.append(_record(k, st_new, alpha, w, sol.iterations, sol.converged,
                                       fallback))
        x, st = x_new, st_new
    rep.reason = reason
    out = mesh.with_coords(x.reshape(mesh.coords.shape))
    if fitting:
        return out, rep, weight
    return out, rep
