"""Derivative-free minimization, Hessian errors and profile scans.

The minimizer works in coordinates scaled by each parameter's sigma, so one
unit of simplex spread means one prior sigma for every parameter. Statistics
follow the chi-square convention (a one-sigma shift costs one unit), hence the
parameter covariance is ``2 H^-1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg
from .errors import DagfitError, FixedParameter, MaxEvaluations, NotPositiveDefinite, SingularHessian
from .graph import OutputPort, as_output
from .parameters import Parameter

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5
SIMPLEX_STEP = 0.1
HESSIAN_STEP = 0.05


@dataclass
class FitProblem:
    statistic: object
    free: Sequence[Parameter]
    ftol: float = 1e-9
    xtol: float = 1e-6
    maxfev: int | None = None
    restarts: int = 3
    recompute_covariance: bool = False

    def __post_init__(self):
        self.free = list(self.free)
        if not self.free:
            raise ValueError("nothing to fit: free parameter list is empty")
        for p in self.free:
            if p.fixed:
                raise FixedParameter(f"'{p.name}' has zero sigma and cannot be free")
        if self.maxfev is None:
            self.maxfev = 2000 * len(self.free)

    @property
    def output(self) -> OutputPort:
        return as_output(self.statistic)

    def evaluate(self) -> float:
        if self.recompute_covariance and hasattr(self.statistic, "update_covariance"):
            self.statistic.update_covariance()
        return float(self.output()[0])


@dataclass
class FitResult:
    values: dict[str, float]
    errors: dict[str, float] = field(default_factory=dict)
    covariance: list[list[float]] = field(default_factory=list)
    fun: float = math.nan
    nfev: int = 0
    converged: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "values": dict(self.values),
            "errors": dict(self.errors),
            "covariance": [list(map(float, row)) for row in self.covariance],
            "fun": self.fun,
            "nfev": self.nfev,
            "converged": self.converged,
            "message": self.message,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


class _Objective:
    """Statistic as a function of sigma-scaled offsets from the start point."""

    def __init__(self, problem: FitProblem):
        self.problem = problem
        self.params = problem.free
        self.x0 = np.array([p.value for p in self.params])
        self.sigma = np.array([p.sigma for p in self.params])
        self.lo = np.array([p.bounds[0] if p.bounds else -np.inf for p in self.params])
        self.hi = np.array([p.bounds[1] if p.bounds else np.inf for p in self.params])
        self.ncalls = 0

    def point(self, t: np.ndarray) -> np.ndarray:
        return np.clip(self.x0 + t * self.sigma, self.lo, self.hi)

    def __call__(self, t: np.ndarray) -> float:
        if self.ncalls >= self.problem.maxfev:
            raise _Budget()
        self.ncalls += 1
        raw = self.x0 + t * self.sigma
        x = np.clip(raw, self.lo, self.hi)
        for p, v in zip(self.params, x):
            p.set(v)
        penalty = float(np.sum(((raw - x) / self.sigma) ** 2))
        return self.problem.evaluate() + penalty


class _Budget(Exception):
    pass


def _nelder_mead(fun, start: np.ndarray, step: float, ftol: float, xtol: float):
    n = start.size
    sim = np.vstack([start] + [start + step * np.eye(n)[i] for i in range(n)])
    fs = np.array([fun(x) for x in sim])
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        if np.max(np.abs(fs - fs[0])) <= ftol and np.max(np.abs(sim - sim[0])) <= xtol:
            return sim[0], fs[0]
        centroid = sim[:-1].mean(axis=0)
        worst = sim[-1]
        xr = centroid + REFLECT * (centroid - worst)
        fr = fun(xr)
        if fr < fs[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = fun(xe)
            sim[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + CONTRACT * (xr - centroid)
            fc = fun(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + CONTRACT * (worst - centroid)
            fc = fun(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            sim[i] = sim[0] + SHRINK * (sim[i] - sim[0])
            fs[i] = fun(sim[i])


def minimize_nelder_mead(problem: FitProblem) -> FitResult:
    """Minimize the statistic over ``problem.free``.

    After convergence the simplex is rebuilt around the best point and the
    search repeated (at most ``problem.restarts`` times) until a restart no
    longer improves the minimum by more than ``ftol``. Parameters are left at
    the best-fit values.
    """
    counter = problem.output.node
    nevals0 = counter.nevals
    obj = _Objective(problem)
    best_t = np.zeros(len(obj.params))
    best_f = math.inf
    converged, message = False, ""
    try:
        t, f = _nelder_mead(obj, best_t, SIMPLEX_STEP, problem.ftol, problem.xtol)
        best_t, best_f = t, f
        for _ in range(problem.restarts):
            t, f = _nelder_mead(obj, best_t, SIMPLEX_STEP, problem.ftol, problem.xtol)
            improved = best_f - f > problem.ftol
            if f < best_f:
                best_t, best_f = t, f
            if not improved:
                break
        converged, message = True, "converged"
    except _Budget:
        message = f"maximum number of evaluations ({problem.maxfev}) reached"
    x = obj.point(best_t) if math.isfinite(best_f) else obj.x0
    for p, v in zip(obj.params, x):
        p.set(v)
    fun = problem.evaluate()
    result = FitResult(
        values={p.name: float(v) for p, v in zip(obj.params, x)},
        fun=fun,
        nfev=counter.nevals - nevals0,
        converged=converged,
        message=message,
    )
    if not converged:
        raise MaxEvaluations(message, result)
    return result


def _hessian(problem: FitProblem, x: np.ndarray, f0: float) -> np.ndarray:
    params = problem.free
    h = HESSIAN_STEP * np.array([p.sigma for p in params])
    n = len(params)

    def f_at(shift: dict[int, float]) -> float:
        for k, p in enumerate(params):
            _force(p, x[k] + shift.get(k, 0.0))
        return problem.evaluate()

    H = np.empty((n, n))
    for k in range(n):
        fp = f_at({k: h[k]})
        fm = f_at({k: -h[k]})
        H[k, k] = (fp - 2.0 * f0 + fm) / h[k] ** 2
    for k in range(n):
        for j in range(k + 1, n):
            fpp = f_at({k: h[k], j: h[j]})
            fpm = f_at({k: h[k], j: -h[j]})
            fmp = f_at({k: -h[k], j: h[j]})
            fmm = f_at({k: -h[k], j: -h[j]})
            H[k, j] = H[j, k] = (fpp - fpm - fmp + fmm) / (4.0 * h[k] * h[j])
    return H


def _force(p: Parameter, v: float) -> None:
    bounds, p.bounds = p.bounds, None
    try:
        p.set(v)
    finally:
        p.bounds = bounds


def estimate_errors(problem: FitProblem, at: FitResult) -> tuple[dict[str, float], np.ndarray]:
    """Parabolic errors from a central-difference Hessian at ``at.values``.

    Falls back to per-parameter curvature when the Hessian is not positive
    definite (the result's message records this); raises
    :class:`SingularHessian` when even that fails.
    """
    params = problem.free
    x = np.array([at.values[p.name] for p in params])
    for p, v in zip(params, x):
        p.set(v)
    f0 = problem.evaluate()
    try:
        H = _hessian(problem, x, f0)
    finally:
        for p, v in zip(params, x):
            _force(p, v)
        problem.evaluate()
    try:
        L = linalg.cholesky(0.5 * (H + H.T))
        cov = 2.0 * linalg.cho_solve(L, np.eye(len(params)))
        cov = 0.5 * (cov + cov.T)
    except NotPositiveDefinite:
        diag = np.diag(H)
        if np.any(~(diag > 0)):
            bad = [p.name for p, d in zip(params, diag) if not d > 0]
            raise SingularHessian(f"no curvature along {', '.join(bad)}") from None
        cov = np.diag(2.0 / diag)
        at.message = (at.message + "; " if at.message else "") + \
            "Hessian not positive definite, errors from diagonal curvature only"
    errors = {p.name: float(math.sqrt(cov[k, k])) for k, p in enumerate(params)}
    return errors, cov


def fit(problem: FitProblem) -> FitResult:
    """Minimize, then attach errors and covariance to the result."""
    result = minimize_nelder_mead(problem)
    errors, cov = estimate_errors(problem, result)
    result.errors = errors
    result.covariance = cov.tolist()
    return result


@dataclass
class ScanPoint:
    value: float
    fun_min: float
    converged: bool
    message: str = ""


def profile_scan(problem: FitProblem, target: Parameter, grid: Sequence[float]) -> list[ScanPoint]:
    """Profile the statistic along ``target``.

    Each grid point fixes ``target`` and re-minimizes the other free
    parameters, warm-starting from the previous point's optimum. Failures are
    recorded per point and the scan carries on. Parameter values are restored
    afterwards.
    """
    if target not in problem.free:
        raise ValueError(f"'{target.name}' is not a free parameter of this problem")
    others = [p for p in problem.free if p is not target]
    saved = {p.name: p.value for p in problem.free}
    points = []
    try:
        for v in grid:
            v = float(v)
            try:
                target.set(v)
                if others:
                    sub = FitProblem(problem.statistic, others, ftol=problem.ftol, xtol=problem.xtol,
                                     maxfev=problem.maxfev, restarts=problem.restarts,
                                     recompute_covariance=problem.recompute_covariance)
                    r = minimize_nelder_mead(sub)
                    points.append(ScanPoint(v, r.fun, True))
                else:
                    points.append(ScanPoint(v, problem.evaluate(), True))
            except MaxEvaluations as exc:
                points.append(ScanPoint(v, exc.result.fun, False, str(exc)))
            except DagfitError as exc:
                points.append(ScanPoint(v, math.nan, False, str(exc)))
    finally:
        for p in problem.free:
            p.set(saved[p.name])
    return points
