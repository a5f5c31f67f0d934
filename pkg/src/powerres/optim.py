"""Full-batch Adam and L-BFGS (strong-Wolfe line search) minimizers.

Objectives map a flat parameter vector to ``(loss, gradient)``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ContractError

STOP_GRAD = "grad_tol"
STOP_FCHANGE = "f_change_tol"
STOP_MAXITER = "max_iter"
STOP_LINESEARCH = "line_search_failure"
STOP_NONFINITE = "non_finite"


@dataclass(frozen=True)
class ConvergenceCriteria:
    grad_tol: float = 1e-9
    f_change_tol: float = 1e-9
    max_iter: int = 20000

    def __post_init__(self):
        if self.grad_tol <= 0 or self.f_change_tol <= 0:
            raise ContractError("tolerances must be positive")
        if self.max_iter < 0:
            raise ContractError("max_iter must be >= 0")


@dataclass
class OptimReport:
    iterations: int = 0
    stop_reason: str = ""
    history: list = field(default_factory=list)   # loss after each iteration
    initial_loss: float = float("nan")
    n_evals: int = 0
    wall_time: float = 0.0
    step_sizes: list = field(default_factory=list)
    wolfe: list = field(default_factory=list)     # strong Wolfe met per accepted step
    message: str = ""

    @property
    def failed(self) -> bool:
        return self.stop_reason == STOP_NONFINITE


class _Counted:
    def __init__(self, fun):
        self.fun = fun
        self.n = 0

    def __call__(self, x):
        self.n += 1
        f, g = self.fun(x)
        return float(f), np.asarray(g, dtype=np.float64)


def _finite(f, g) -> bool:
    return math.isfinite(f) and bool(np.all(np.isfinite(g)))


def adam_minimize(objective: Callable, theta0, lr: float = 1e-3, iters: int = 10000,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                  callback: Optional[Callable] = None):
    """Adam with bias correction.  Stops early only on a non-finite loss or gradient."""
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    fun = _Counted(objective)
    t0 = time.perf_counter()
    theta = np.array(theta0, dtype=np.float64)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    rep = OptimReport()
    f, g = fun(theta)
    rep.initial_loss = f
    for k in range(1, iters + 1):
        if not _finite(f, g):
            rep.stop_reason = STOP_NONFINITE
            rep.message = f"non-finite loss/gradient before iteration {k}"
            break
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        mhat = m / (1.0 - beta1 ** k)
        vhat = v / (1.0 - beta2 ** k)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        f, g = fun(theta)
        rep.iterations = k
        rep.history.append(f)
        if callback is not None:
            callback(k, theta, f, g)
    else:
        rep.stop_reason = STOP_MAXITER
    if not rep.stop_reason:
        rep.stop_reason = STOP_MAXITER
    if rep.stop_reason == STOP_MAXITER and not _finite(f, g):
        rep.stop_reason = STOP_NONFINITE
        rep.message = "non-finite loss/gradient at final iterate"
    rep.n_evals = fun.n
    rep.wall_time = time.perf_counter() - t0
    return theta, rep


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimizer of the cubic interpolating two points with slopes, clipped to [lo, hi]."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0 and math.isfinite(disc):
        d2 = math.copysign(math.sqrt(disc), x2 - x1)
        denom = g2 - g1 + 2.0 * d2
        if denom != 0:
            x = x2 - (x2 - x1) * (g2 + d2 - d1) / denom
            if math.isfinite(x):
                return min(max(x, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe_line_search(fun: Callable, x, f0: float, g0, d, step: float = 1.0,
                             c1: float = 1e-4, c2: float = 0.9, max_evals: int = 25,
                             step_max: float = 1e10):
    """Bracketing/zoom search for a step satisfying the strong Wolfe conditions.

    Returns ``(step, f, g, n_evals, ok)``; ``ok`` is False when no acceptable
    step was found within ``max_evals`` function evaluations.
    """
    dphi0 = float(g0 @ d)
    if dphi0 >= 0:
        return 0.0, f0, g0, 0, False

    def phi(a):
        f, g = fun(x + a * d)
        if not _finite(f, g):
            return math.inf, g, math.nan
        return f, g, float(g @ d)

    evals = 0
    a_prev, f_prev, dphi_prev, g_prev = 0.0, f0, dphi0, g0
    a = step
    bracket = None
    while evals < max_evals:
        f, g, dphi = phi(a)
        evals += 1
        if f > f0 + c1 * a * dphi0 or (evals > 1 and f >= f_prev) or not math.isfinite(f):
            bracket = (a_prev, f_prev, dphi_prev, g_prev, a, f, dphi, g)
            break
        if abs(dphi) <= -c2 * dphi0:
            return a, f, g, evals, True
        if dphi >= 0:
            bracket = (a, f, dphi, g, a_prev, f_prev, dphi_prev, g_prev)
            break
        a_new = _cubic_min(a_prev, f_prev, dphi_prev, a, f, dphi, a + 0.01 * (a - a_prev),
                           min(10.0 * a, step_max))
        # extrapolate at least moderately
        a_new = max(a_new, a * 1.1)
        a_prev, f_prev, dphi_prev, g_prev = a, f, dphi, g
        a = a_new
    if bracket is None:
        return 0.0, f0, g0, evals, False

    # zoom; (lo) always satisfies sufficient decrease and has the lowest value so far
    a_lo, f_lo, dphi_lo, g_lo, a_hi, f_hi, dphi_hi, g_hi = bracket
    while evals < max_evals:
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        width = hi - lo
        if width <= 1e-14 * max(1.0, hi):
            break
        if math.isfinite(f_hi) and math.isfinite(dphi_hi):
            a = _cubic_min(a_lo, f_lo, dphi_lo, a_hi, f_hi, dphi_hi, lo, hi)
        else:
            a = 0.5 * (lo + hi)
        # keep away from the interval ends
        margin = 0.1 * width
        if a - lo < margin or hi - a < margin:
            a = 0.5 * (lo + hi)
        f, g, dphi = phi(a)
        evals += 1
        if f > f0 + c1 * a * dphi0 or f >= f_lo or not math.isfinite(f):
            a_hi, f_hi, dphi_hi, g_hi = a, f, dphi, g
        else:
            if abs(dphi) <= -c2 * dphi0:
                return a, f, g, evals, True
            if dphi * (a_hi - a_lo) >= 0:
                a_hi, f_hi, dphi_hi, g_hi = a_lo, f_lo, dphi_lo, g_lo
            a_lo, f_lo, dphi_lo, g_lo = a, f, dphi, g
    if a_lo > 0 and f_lo < f0:
        # best sufficient-decrease point; curvature condition unmet
        return a_lo, f_lo, g_lo, evals, False
    return 0.0, f0, g0, evals, False


def lbfgs_minimize(objective: Callable, theta0, criteria: ConvergenceCriteria = ConvergenceCriteria(),
                   history_size: int = 10, callback: Optional[Callable] = None,
                   c1: float = 1e-4, c2: float = 0.9, max_ls: int = 25):
    """Unconstrained limited-memory BFGS (two-loop recursion).

    Stops when ``max|g| <= grad_tol``, when
    ``|f_k - f_{k-1}| <= f_change_tol * max(1, |f_k|)``, at ``max_iter``, or
    when the line search cannot make progress.
    """
    if history_size < 1:
        raise ContractError("history_size must be >= 1")
    fun = _Counted(objective)
    t0 = time.perf_counter()
    x = np.array(theta0, dtype=np.float64)
    f, g = fun(x)
    rep = OptimReport(initial_loss=f)

    def finish(reason, msg=""):
        rep.stop_reason = reason
        rep.message = msg
        rep.n_evals = fun.n
        rep.wall_time = time.perf_counter() - t0
        return x, rep

    if not _finite(f, g):
        return finish(STOP_NONFINITE, "non-finite loss/gradient at the initial point")
    if np.max(np.abs(g), initial=0.0) <= criteria.grad_tol:
        return finish(STOP_GRAD)

    S: list = []
    Y: list = []
    rho: list = []
    for k in range(1, criteria.max_iter + 1):
        # two-loop recursion
        q = -g
        alphas = []
        for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
            a = r * float(s @ q)
            alphas.append(a)
            q = q - a * y
        if S:
            q = q * (float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1]))
        for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
            b = r * float(y @ q)
            q = q + (a - b) * s
        d = q
        if float(g @ d) >= 0:
            S.clear(), Y.clear(), rho.clear()
            d = -g
        step0 = 1.0 if S else min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300))

        a, f_new, g_new, _, ok = strong_wolfe_line_search(fun, x, f, g, d, step0, c1, c2, max_ls)
        if a == 0.0:
            if S:
                # retry once along steepest descent with a fresh memory
                S.clear(), Y.clear(), rho.clear()
                d = -g
                step0 = min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300))
                a, f_new, g_new, _, ok = strong_wolfe_line_search(fun, x, f, g, d, step0, c1, c2, max_ls)
            if a == 0.0:
                return finish(STOP_LINESEARCH, f"no acceptable step at iteration {k}")
        s = a * d
        y = g_new - g
        x = x + s
        f_old, f, g = f, f_new, g_new
        rep.iterations = k
        rep.history.append(f)
        rep.step_sizes.append(a)
        rep.wolfe.append(ok)
        sy = float(s @ y)
        if sy > 1e-10 * float(np.sqrt((s @ s) * (y @ y))):
            if len(S) == history_size:
                S.pop(0), Y.pop(0), rho.pop(0)
            S.append(s)
            Y.append(y)
            rho.append(1.0 / sy)
        if callback is not None:
            callback(k, x, f, g)
        if np.max(np.abs(g)) <= criteria.grad_tol:
            return finish(STOP_GRAD)
        if abs(f_old - f) <= criteria.f_change_tol * max(1.0, abs(f)):
            return finish(STOP_FCHANGE)
    return finish(STOP_MAXITER)
