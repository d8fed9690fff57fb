"""BFGS with a cubic-interpolation strong-Wolfe line search.

The objective is a callable returning ``(value, gradient)``. Values may be
``inf`` outside the feasible region (e.g. a non-positive sigma); the line
search treats such points as too-long steps and backtracks.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, FitError

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class OptimOptions:
    max_iters: int = 500
    grad_tol: float = 1e-8
    step_tol: float = 1e-12
    patience: int = 10
    restarts: int = 5
    seed: int = 0
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 40
    check_grad: bool = False

    def __post_init__(self):
        if self.max_iters < 1 or self.restarts < 1 or self.patience < 1:
            raise ValueError("max_iters, restarts and patience must be >= 1")
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str
    restart: int = 0
    val_fun: Optional[float] = None
    n_evals: int = 0
    history: list = field(default_factory=list)
    restart_log: list = field(default_factory=list)


def check_gradient(fun: Objective, x: np.ndarray, h: float = 1e-5, max_coords: int = 20, seed: int = 0):
    """Largest relative error between the analytic and central-difference gradient.

    Only ``max_coords`` randomly chosen coordinates are probed for large x.
    """
    x = np.asarray(x, dtype=float)
    _, g = fun(x)
    idx = np.arange(x.size)
    if x.size > max_coords:
        idx = np.random.default_rng(seed).choice(x.size, max_coords, replace=False)
    worst = 0.0
    for i in idx:
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        fd = (fun(x + e)[0] - fun(x - e)[0]) / (2 * e[i])
        denom = max(abs(fd), abs(g[i]), 1e-8)
        worst = max(worst, abs(fd - g[i]) / denom)
    return worst


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db), or None."""
    if not all(map(math.isfinite, (fa, da, fb, db))) or a == b:
        return None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if math.isfinite(t) else None


class _LineSearch:
    def __init__(self, fun, x, p, f0, g0, opts):
        self.fun, self.x, self.p = fun, x, p
        self.f0, self.d0 = f0, float(g0 @ p)
        self.c1, self.c2 = opts.c1, opts.c2
        self.max_evals = opts.max_ls_evals
        self.evals = 0

    def phi(self, a):
        self.evals += 1
        f, g = self.fun(self.x + a * self.p)
        f = float(f)
        if not math.isfinite(f):
            return math.inf, math.nan, None
        return f, float(g @ self.p), g

    def armijo_ok(self, a, f):
        return f <= self.f0 + self.c1 * a * self.d0

    def curvature_ok(self, d):
        return abs(d) <= -self.c2 * self.d0

    def run(self, a1):
        a_prev, f_prev, d_prev, g_prev = 0.0, self.f0, self.d0, None
        a = a1
        first = True
        while self.evals < self.max_evals:
            f, d, g = self.phi(a)
            if not self.armijo_ok(a, f) or (not first and f >= f_prev):
                return self.zoom(a_prev, f_prev, d_prev, g_prev, a, f, d)
            if self.curvature_ok(d):
                return a, f, g
            if d >= 0:
                return self.zoom(a, f, d, g, a_prev, f_prev, d_prev)
            a_prev, f_prev, d_prev, g_prev = a, f, d, g
            a = a * 4.0
            first = False
        return self._fallback(a_prev, f_prev, g_prev)

    def zoom(self, lo, f_lo, d_lo, g_lo, hi, f_hi, d_hi):
        while self.evals < self.max_evals:
            width = hi - lo
            if abs(width) < 1e-16 * max(1.0, abs(lo)):
                break
            t = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * (right - left)
            if t is None or not (left + margin <= t <= right - margin):
                t = 0.5 * (lo + hi)
            f, d, g = self.phi(t)
            if not self.armijo_ok(t, f) or f >= f_lo:
                hi, f_hi, d_hi = t, f, d
            else:
                if self.curvature_ok(d):
                    return t, f, g
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo, g_lo = t, f, d, g
        return self._fallback(lo, f_lo, g_lo)

    def _fallback(self, a, f, g):
        # Sufficient decrease without curvature: still a monotone step.
        if a > 0 and g is not None and f < self.f0:
            return a, f, g
        return None


def minimize(
    fun: Objective,
    x0,
    opts: OptimOptions | None = None,
    validation: Callable[[np.ndarray], float] | None = None,
) -> OptimResult:
    """Minimize ``fun`` from ``x0`` with BFGS.

    If ``validation`` is given, it is evaluated after every accepted step;
    the run stops once it has not improved for ``opts.patience`` steps and
    the best-validation iterate is returned.
    """
    opts = opts or OptimOptions()
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise DomainError("objective is not finite at the initial point")
    if opts.check_grad or os.environ.get("CALIBRA_DEBUG"):
        err = check_gradient(fun, x)
        if err > 1e-4:
            raise DomainError(f"supplied gradient disagrees with finite differences (rel. err {err:.2e})")

    n = x.size
    H = np.eye(n)
    n_evals = 1
    history = [f]
    best_val = best_x = best_f = best_g = None
    since_best = 0
    if validation is not None:
        best_val, best_x, best_f, best_g = float(validation(x)), x.copy(), f, g.copy()

    message = "max_iters reached"
    converged = False
    it = 0
    first = True
    while it < opts.max_iters:
        if np.max(np.abs(g)) <= opts.grad_tol:
            converged, message = True, "gradient tolerance reached"
            break
        p = -H @ g
        if g @ p >= 0:
            H = np.eye(n)
            p = -g
        a1 = min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300)) if first else 1.0
        ls = _LineSearch(fun, x, p, f, g, opts)
        step = ls.run(a1)
        n_evals += ls.evals
        if step is None and not first:
            # Retry once along steepest descent with a fresh Hessian estimate.
            H = np.eye(n)
            p = -g
            ls = _LineSearch(fun, x, p, f, g, opts)
            step = ls.run(min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300)))
            n_evals += ls.evals
        if step is None:
            message = "line search failed"
            break
        a, f_new, g_new = step
        s = a * p
        x = x + s
        y = g_new - g
        f, g = f_new, np.asarray(g_new, dtype=float)
        it += 1
        history.append(f)

        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H += (rho + rho * rho * float(y @ Hy)) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
        first = False

        if validation is not None:
            v = float(validation(x))
            if v < best_val:
                best_val, best_x, best_f, best_g = v, x.copy(), f, g.copy()
                since_best = 0
            else:
                since_best += 1
                if since_best >= opts.patience:
                    converged, message = True, "validation patience exhausted"
                    break
        if np.max(np.abs(s)) <= opts.step_tol:
            converged, message = True, "step tolerance reached"
            break

    if validation is not None:
        # The final iterate may still beat the tracked one if it was never validated.
        return OptimResult(best_x, best_f, best_g, it, converged, message,
                           val_fun=best_val, n_evals=n_evals, history=history)
    return OptimResult(x, f, g, it, converged, message, n_evals=n_evals, history=history)


def threads_cap() -> int:
    try:
        return max(1, int(os.environ.get("CALIBRA_THREADS", "1")))
    except ValueError:
        return 1


def multi_start(
    fun: Objective,
    sampler: Callable[[np.random.Generator], np.ndarray],
    opts: OptimOptions | None = None,
    validation: Callable[[np.ndarray], float] | None = None,
    max_workers: int | None = None,
) -> OptimResult:
    """Run ``minimize`` from ``opts.restarts`` sampled starts and keep the best.

    Restarts are ranked by validation objective when one is given, otherwise
    by the final training objective. Restart ``r`` draws its start from a
    generator seeded with ``(opts.seed, r)``, so results do not depend on
    execution order.
    """
    opts = opts or OptimOptions()
    workers = max_workers or threads_cap()

    def run(r):
        rng = np.random.default_rng([opts.seed, r])
        try:
            res = minimize(fun, sampler(rng), opts, validation)
        except (DomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
            return r, None, str(exc)
        score = res.val_fun if validation is not None else res.fun
        if score is None or not math.isfinite(score):
            return r, None, "non-finite objective"
        res.restart = r
        return r, res, ""

    if workers > 1 and opts.restarts > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, range(opts.restarts)))
    else:
        outcomes = [run(r) for r in range(opts.restarts)]

    good = [res for _, res, _ in outcomes if res is not None]
    if not good:
        diagnostics = [f"restart {r}: {msg}" for r, _, msg in outcomes]
        raise FitError("all restarts failed", diagnostics)
    key = (lambda res: res.val_fun) if validation is not None else (lambda res: res.fun)
    best = min(good, key=key)
    best.restart_log = [
        {"restart": r, "failed": msg} if res is None else
        {"restart": r, "fun": res.fun, "val_fun": res.val_fun, "iterations": res.iterations,
         "message": res.message}
        for r, res, msg in outcomes
    ]
    return best
