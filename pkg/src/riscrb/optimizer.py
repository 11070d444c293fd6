"""Riemannian conjugate gradient with Armijo backtracking and nonlinear acceleration.

The optimizer only needs an evaluator exposing ``value(w)`` and
``value_and_gradient(w)``, where the gradient is the Wirtinger gradient
``d f / d w^*``.  Since ``f`` is real, its directional derivative along a
tangent ``mu`` is ``2 Re <grad f, mu>``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import manifold
from .errors import (
    ConfigError,
    DegenerateSceneError,
    IllConditionedError,
    InjectivityError,
    LineSearchError,
    RetractionError,
)

TOLERANCE_MODES = ("gradient", "objective", "absolute")
STATUSES = ("converged", "max_iters", "line_search_failed", "degenerate_scene")


@dataclass(frozen=True)
class OptimizerConfig:
    """Optimizer settings.

    ``epsilon`` is compared with ``||grad f||`` after scaling by
    ``tolerance``: ``"gradient"`` (default) uses ``epsilon * ||grad f(w0)||``,
    ``"objective"`` uses ``epsilon * f(w0)`` and ``"absolute"`` uses
    ``epsilon`` alone.  The relative forms keep the test independent of the
    units of the objective.  ``initial_step=None`` starts every line search
    at ``1 / ||grad f||``.
    """

    epsilon: float = 1e-3
    memory_depth: int = 5
    lambda_reg: float = 1e-7
    initial_step: float | None = None
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4
    ls_max_backtracks: int = 50
    max_outer_iters: int = 500
    acceleration_enabled: bool = True
    rng_seed: int = 0
    tolerance: str = "gradient"
    pr_plus: bool = True
    accel_safeguard: bool = True
    residuals_from: str = "common"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.memory_depth < 1:
            raise ConfigError("memory_depth must be >= 1")
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be >= 0")
        if not 0 < self.ls_shrink < 1 or not 0 < self.ls_c1 < 1:
            raise ConfigError("line-search constants must lie in (0, 1)")
        if self.ls_max_backtracks < 0 or self.max_outer_iters < 0:
            raise ConfigError("iteration budgets must be non-negative")
        if self.tolerance not in TOLERANCE_MODES:
            raise ConfigError(f"tolerance must be one of {TOLERANCE_MODES}")
        if self.residuals_from not in ("gradient", "search", "common"):
            raise ConfigError("residuals_from must be 'common', 'gradient' or 'search'")


@dataclass
class TraceRow:
    iteration: int
    f: float
    grad_norm: float
    step: float
    accel: str = ""
    elapsed: float = 0.0


@dataclass
class OptimizerTrace:
    rows: list = field(default_factory=list)

    def append(self, **kw):
        self.rows.append(TraceRow(**kw))

    @property
    def f(self):
        return np.array([r.f for r in self.rows])

    @property
    def iterations(self):
        return self.rows[-1].iteration if self.rows else 0

    def first_iteration_reaching(self, target):
        """First iteration whose objective is ``<= target``, or ``None``."""
        for r in self.rows:
            if r.f <= target:
                return r.iteration
        return None


@dataclass
class RunResult:
    w: np.ndarray
    f: float
    grad_norm: float
    status: str
    trace: OptimizerTrace
    error: Exception | None = None

    @property
    def iterations(self):
        return self.trace.iterations


@dataclass
class AccelWindow:
    iterates: list
    search_vectors: list
    residuals: np.ndarray | None = None
    gram: np.ndarray | None = None
    weights: np.ndarray | None = None


def cg_direction(grad_now, grad_prev, mu_prev, w_next, pr_plus=True):
    """Polak-Ribiere conjugate direction at ``w_next``.

    ``grad_prev`` and ``mu_prev`` live in the previous tangent space and are
    projected onto the one at ``w_next`` before use.  ``mu_prev=None`` (or
    zero) gives steepest descent.
    """
    if mu_prev is None or grad_prev is None or not np.any(mu_prev):
        return -grad_now
    g_old = manifold.project(w_next, grad_prev)
    denom = manifold.inner(grad_prev, grad_prev)
    alpha = manifold.inner(grad_now, grad_now - g_old) / denom if denom > 0 else 0.0
    if pr_plus:
        alpha = max(alpha, 0.0)
    mu = -grad_now + alpha * manifold.project(w_next, mu_prev)
    if manifold.inner(mu, grad_now) >= 0:
        return -grad_now
    return mu


def armijo_step(w, mu, f0, grad, value, cfg):
    """Backtracking line search along the retraction curve ``t -> R_w(t mu)``.

    Returns ``(eta, w_next, f_next)`` for the largest tested
    ``eta = eta0 * shrink**k`` with ``f(w_next) <= f0 + c1 * eta * slope``.
    """
    slope = 2.0 * manifold.inner(grad, mu)
    if not slope < 0:
        raise ValueError("search direction is not a descent direction")
    eta = cfg.initial_step if cfg.initial_step is not None else 1.0 / manifold.norm(grad)
    for _ in range(cfg.ls_max_backtracks + 1):
        try:
            w_next = manifold.retract(w, eta * mu)
            f_next = value(w_next)
        except (RetractionError, DegenerateSceneError):
            f_next = np.inf
        if f_next <= f0 + cfg.ls_c1 * eta * slope:
            return eta, w_next, f_next
        eta *= cfg.ls_shrink
    raise LineSearchError(f"no sufficient decrease after {cfg.ls_max_backtracks} backtracks")


def rna_weights(residuals, lambda_reg):
    """Regularized extrapolation weights summing to one.

    ``residuals`` is a sequence of tangent vectors at a common point.
    """
    Rmat = np.array(residuals)
    k = Rmat.shape[0]
    gram = np.real(Rmat.conj() @ Rmat.T)
    gram = 0.5 * (gram + gram.T)
    system = gram + lambda_reg * np.eye(k)
    if not np.all(np.isfinite(system)):
        raise IllConditionedError("non-finite residual Gram matrix")
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > 1e14:
        raise IllConditionedError(f"residual Gram condition number {cond:.3e}")
    z = np.linalg.solve(system, np.ones(k))
    total = z.sum()
    if total == 0 or not np.isfinite(total):
        raise IllConditionedError("weights do not normalize")
    c = z / total
    return c / c.sum(), gram


def kkt_residual(gram, lambda_reg, c):
    """Residuals of the KKT system for ``(c, dual)`` with the optimal dual.

    Returns ``(stationarity, constraint, dual)``: the largest entry of
    ``2 (R + lambda I) c + dual 1`` and ``|1^T c - 1|``.
    """
    k = len(c)
    H = 2.0 * (gram + lambda_reg * np.eye(k))
    Hc = H @ c
    dual = -float(np.mean(Hc))
    return float(np.max(np.abs(Hc + dual))), abs(float(np.sum(c)) - 1.0), dual


def rna_average(iterates, c):
    """Weighted Riemannian average built by successive retractions."""
    w_tilde = iterates[0]
    partial = 0.0
    for w_i, c_i in zip(iterates, c):
        partial += c_i
        if abs(partial) <= 1e-8:
            raise IllConditionedError("partial weight sum vanishes")
        if c_i == 0:
            continue
        v = manifold.inverse_retract(w_tilde, w_i)
        w_tilde = manifold.retract(w_tilde, (c_i / partial) * v)
    return w_tilde


class _Runner:
    """Shared state of one optimization run (single-threaded)."""

    def __init__(self, objective, cfg):
        self.obj = objective
        self.cfg = cfg
        self.trace = OptimizerTrace()
        self.t0 = time.perf_counter()
        self.tol = None
        self.iteration = 0
        self.current = None  # last accepted (w, f, riemannian grad)

    def evaluate(self, w):
        f, egrad = self.obj.value_and_gradient(w)
        return f, manifold.riemannian_grad(w, egrad)

    def record(self, f, g, step, accel=""):
        self.trace.append(
            iteration=self.iteration,
            f=float(f),
            grad_norm=manifold.norm(g),
            step=float(step),
            accel=accel,
            elapsed=time.perf_counter() - self.t0,
        )

    def start(self, w0):
        w = manifold.normalize(w0)
        f, g = self.evaluate(w)
        mode = self.cfg.tolerance
        scale = {"gradient": manifold.norm(g), "objective": abs(f), "absolute": 1.0}[mode]
        self.tol = self.cfg.epsilon * (scale if scale > 0 else 1.0)
        self.current = (w, f, g)
        self.record(f, g, 0.0)
        return w, f, g

    def converged(self, g):
        return manifold.norm(g) < self.tol

    def result(self, w, f, g, status, error=None):
        return RunResult(w=w, f=float(f), grad_norm=manifold.norm(g), status=status,
                         trace=self.trace, error=error)


def _cg_steps(run, w, f, g, max_steps):
    """Up to ``max_steps`` CG iterations from ``(w, f, g)`` with a fresh direction.

    Returns ``(points, steps, grads, fs, dirs, status)`` where
    ``points[0] == w``.  ``status`` is ``None`` when the budget was used up
    without terminating.
    """
    points, steps, grads, fs, dirs = [w], [], [g], [f], []
    g_prev = mu_prev = None
    for _ in range(max_steps):
        if run.converged(g):
            return points, steps, grads, fs, dirs, "converged"
        if run.iteration >= run.cfg.max_outer_iters:
            return points, steps, grads, fs, dirs, "max_iters"
        mu = cg_direction(g, g_prev, mu_prev, w, run.cfg.pr_plus)
        eta, w_new, f_new = armijo_step(w, mu, f, g, run.obj.value, run.cfg)
        f_new, g_new = run.evaluate(w_new)
        run.iteration += 1
        run.record(f_new, g_new, eta)
        g_prev, mu_prev = g, mu
        w, f, g = w_new, f_new, g_new
        run.current = (w, f, g)
        points.append(w)
        steps.append(eta)
        grads.append(g)
        fs.append(f)
        dirs.append(mu)
    return points, steps, grads, fs, dirs, None


def rgd(w0, objective, cfg=OptimizerConfig()):
    """Plain Riemannian CG descent (no acceleration)."""
    run = _Runner(objective, cfg)
    try:
        w, f, g = run.start(w0)
    except DegenerateSceneError as exc:
        w = manifold.normalize(w0)
        return RunResult(w, np.inf, np.inf, "degenerate_scene", run.trace, exc)
    try:
        status = _cg_steps(run, w, f, g, cfg.max_outer_iters + 1)[-1] or "max_iters"
        error = None
    except LineSearchError as exc:
        status, error = "line_search_failed", exc
    except DegenerateSceneError as exc:
        status, error = "degenerate_scene", exc
    return run.result(*run.current, status, error)


def accelerated_run(w0, objective, cfg=OptimizerConfig()):
    """CG descent with windowed regularized nonlinear acceleration.

    Each window performs ``memory_depth`` CG steps from a fresh direction,
    averages the first ``memory_depth`` window points with the regularized
    weights, and restarts from the averaged point (or, with the safeguard
    on, from the best window point if averaging made things worse).
    """
    if not cfg.acceleration_enabled:
        return rgd(w0, objective, cfg)
    run = _Runner(objective, cfg)
    try:
        w, f, g = run.start(w0)
    except DegenerateSceneError as exc:
        w = manifold.normalize(w0)
        return RunResult(w, np.inf, np.inf, "degenerate_scene", run.trace, exc)
    status = None
    error = None
    depth = cfg.memory_depth
    try:
        while status is None:
            points, steps, grads, fs, dirs, status = _cg_steps(run, w, f, g, depth)
            w, f, g = points[-1], fs[-1], grads[-1]
            if status is not None or len(steps) < depth:
                break
            accel = "skipped"
            try:
                base = points[depth - 1]
                if cfg.residuals_from == "gradient":
                    raw = [-steps[i] * grads[i] for i in range(depth)]
                elif cfg.residuals_from == "common":
                    raw = [-steps[depth - 1] * grads[i] for i in range(depth)]
                else:
                    raw = [steps[i] * dirs[i] for i in range(depth)]
                window = AccelWindow(iterates=points[:depth], search_vectors=raw)
                window.residuals = np.array([manifold.project(base, r) for r in raw])
                window.weights, window.gram = rna_weights(window.residuals, cfg.lambda_reg)
                w_acc = rna_average(window.iterates, window.weights)
                f_acc, g_acc = run.evaluate(w_acc)
                if cfg.accel_safeguard and not f_acc <= f:
                    accel = "rejected"
                else:
                    accel = "accepted"
                    w, f, g = w_acc, f_acc, g_acc
                    run.current = (w, f, g)
            except (InjectivityError, IllConditionedError, RetractionError, DegenerateSceneError):
                accel = "skipped"
            run.record(f, g, 0.0, accel)
    except LineSearchError as exc:
        status, error = "line_search_failed", exc
    except DegenerateSceneError as exc:
        status, error = "degenerate_scene", exc
    return run.result(*run.current, status, error)


def solve(w0, objective, cfg=OptimizerConfig()):
    return accelerated_run(w0, objective, cfg) if cfg.acceleration_enabled else rgd(w0, objective, cfg)
