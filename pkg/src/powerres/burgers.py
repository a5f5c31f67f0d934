"""Inverse viscous Burgers problem: recover (lambda1, lambda2) in

    u_t + lambda1 * u * u_x = lambda2 * u_xx,   x in [-1, 1], t in [0, 1],

from scattered observations of u, with the PDE residual penalized at
collocation points.  The reference solution for u(x, 0) = -sin(pi x) comes
from the Cole-Hopf transform evaluated by Gauss-Hermite quadrature.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .autodiff import Tape, jet_backward, jet_forward, jet_forward_fused, tape_forward, var_params, vsum
from .core import ContractError, RngStream, flatten, unflatten
from .data import DataFormatError
from .metrics import rel_l2
from .network import ArchitectureSpec, backward, forward, predict
from .training import OptimizerSettings, TrainReport, minimize

NU = 0.01 / math.pi
LAMBDA_TRUE = (1.0, NU)
LAMBDA_INIT = (2.0, 0.2)
X_RANGE = (-1.0, 1.0)
T_RANGE = (0.0, 1.0)


@dataclass(frozen=True)
class LambdaPair:
    lambda1: float
    lambda2: float

    def as_tuple(self):
        return (self.lambda1, self.lambda2)

    def percent_errors(self, truth=LAMBDA_TRUE) -> tuple:
        return tuple(100.0 * abs(v - t) / abs(t) for v, t in zip(self.as_tuple(), truth))


# --- reference solution ------------------------------------------------------------

def cole_hopf_reference(x, t, nu: float = NU, n_nodes: int = 100):
    """Exact solution for u(x, 0) = -sin(pi x) via the Cole-Hopf transform.

    With phi(y) = exp(-cos(pi y) / (2 pi nu)) and y = x - 2 sqrt(nu t) q,

        u = - sum_q w_q sin(pi y) phi(y) / sum_q w_q phi(y)

    over Gauss-Hermite nodes q.  The exponent is shifted by its maximum per
    point to avoid overflow.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ContractError("t must be >= 0")
    if n_nodes < 2:
        raise ContractError("need at least 2 quadrature nodes")
    x, t = np.broadcast_arrays(x, t)
    q, w = _hermite_rule(n_nodes)
    c = 2.0 * np.sqrt(nu * t)[..., None]
    y = x[..., None] - c * q
    e = -np.cos(np.pi * y) / (2.0 * np.pi * nu)
    e = e - e.max(axis=-1, keepdims=True)
    phi = w * np.exp(e)
    u = -np.sum(np.sin(np.pi * y) * phi, axis=-1) / np.sum(phi, axis=-1)
    u = np.where(t == 0, -np.sin(np.pi * x), u)
    return u[()] if u.ndim == 0 else u


_RULES: dict = {}


def _hermite_rule(n: int):
    if n not in _RULES:
        _RULES[n] = np.polynomial.hermite.hermgauss(n)
    return _RULES[n]


def reference_grid(nx: int = 256, nt: int = 100, nu: float = NU, n_nodes: int = 100):
    """Solution on an ``nx`` by ``nt`` lattice over [-1, 1] x [0, 0.99].

    Returns flat arrays ``(x, t, u)`` with x varying fastest.
    """
    xs = np.linspace(*X_RANGE, nx)
    ts = np.linspace(0.0, 0.99, nt)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    U = cole_hopf_reference(X, T, nu, n_nodes)
    return X.ravel(), T.ravel(), U.ravel()


def write_reference_csv(path, x, t, u) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "t", "u"])
        for row in zip(x, t, u):
            w.writerow([repr(float(v)) for v in row])


def load_reference_csv(path):
    """Read ``x,t,u`` rows; rejects non-finite values and points outside the domain."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["x", "t", "u"]:
            raise DataFormatError(f"{path}:1: expected header x,t,u")
        for row in reader:
            if not row:
                continue
            ln = reader.line_num
            if len(row) != 3:
                raise DataFormatError(f"{path}:{ln}: expected 3 fields")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise DataFormatError(f"{path}:{ln}: not a number") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataFormatError(f"{path}:{ln}: non-finite value")
            x, t, _ = vals
            if not (X_RANGE[0] <= x <= X_RANGE[1] and T_RANGE[0] <= t <= T_RANGE[1]):
                raise DataFormatError(f"{path}:{ln}: point ({x}, {t}) outside [-1,1]x[0,1]")
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    a = np.array(rows)
    return a[:, 0], a[:, 1], a[:, 2]


# --- problem and residual -------------------------------------------------------------

# network inputs are (x, t) mapped affinely onto [-1, 1]^2
_LB = np.array([X_RANGE[0], T_RANGE[0]])
_UB = np.array([X_RANGE[1], T_RANGE[1]])


def to_network_inputs(x, t) -> np.ndarray:
    P = np.stack([np.ravel(x), np.ravel(t)], axis=1).astype(np.float64)
    return 2.0 * (P - _LB) / (_UB - _LB) - 1.0


_DIR_X = np.array([2.0 / (_UB[0] - _LB[0]), 0.0])
_DIR_T = np.array([0.0, 2.0 / (_UB[1] - _LB[1])])


@dataclass
class BurgersInverseProblem:
    spec: ArchitectureSpec
    obs_x: np.ndarray
    obs_t: np.ndarray
    obs_u: np.ndarray
    col_x: np.ndarray
    col_t: np.ndarray
    lambda_init: tuple = LAMBDA_INIT
    lambda_true: tuple = LAMBDA_TRUE

    def __post_init__(self):
        if self.spec.output_dim != 1 or self.spec.input_dim != 2:
            raise ContractError("the Burgers network maps (x, t) to a scalar")
        for name in ("obs_x", "obs_t", "obs_u", "col_x", "col_t"):
            setattr(self, name, np.ravel(np.asarray(getattr(self, name), dtype=np.float64)))
        if not (len(self.obs_x) == len(self.obs_t) == len(self.obs_u) >= 1):
            raise ContractError("need at least one observation, with matching x, t, u")
        if not (len(self.col_x) == len(self.col_t) >= 1):
            raise ContractError("need at least one collocation point")
        for xs, ts in ((self.obs_x, self.obs_t), (self.col_x, self.col_t)):
            if np.any((xs < X_RANGE[0]) | (xs > X_RANGE[1]) | (ts < T_RANGE[0]) | (ts > T_RANGE[1])):
                raise ContractError("points must lie in [-1, 1] x [0, 1]")

    @property
    def n_obs(self) -> int:
        return len(self.obs_u)

    @property
    def n_col(self) -> int:
        return len(self.col_x)


def latin_hypercube(n: int, rng: RngStream):
    """``n`` Latin-hypercube points over [-1, 1] x [0, 1]."""
    sampler = qmc.LatinHypercube(d=2, seed=int(rng.integers(0, 2**31 - 1)))
    P = qmc.scale(sampler.random(n), _LB, _UB)
    return P[:, 0], P[:, 1]


def make_problem(spec: ArchitectureSpec, reference, n_obs: int, n_col: int, rng: RngStream,
                 lambda_init=LAMBDA_INIT, lambda_true=LAMBDA_TRUE) -> BurgersInverseProblem:
    """Observations drawn without replacement from the reference grid, LHS collocation."""
    x, t, u = reference
    if not 1 <= n_obs <= len(u):
        raise ContractError(f"n_obs must be in [1, {len(u)}]")
    idx = np.sort(rng.child(0).choice(len(u), n_obs, replace=False))
    cx, ct = latin_hypercube(n_col, rng.child(1))
    return BurgersInverseProblem(spec, x[idx], t[idx], u[idx], cx, ct, tuple(lambda_init), tuple(lambda_true))


def network_derivatives(spec, params, x, t):
    """``N, N_x, N_t, N_xx`` at physical coordinates."""
    value, (nx, nt), nxx = jet_forward(spec, params, to_network_inputs(x, t), (_DIR_X, _DIR_T))
    return value, nx, nt, nxx


def residual_g(spec: ArchitectureSpec, params, lam, x, t):
    """Burgers residual ``N_t + lambda1 N N_x - lambda2 N_xx``."""
    l1, l2 = lam.as_tuple() if isinstance(lam, LambdaPair) else lam
    n, nx, nt, nxx = network_derivatives(spec, params, x, t)
    return nt + l1 * n * nx - l2 * nxx


# collocation points per fused jet pass; sized so a layer's working set stays in cache
COL_CHUNK = 512


class NonFiniteLoss(ArithmeticError):
    pass


@dataclass
class PinnLoss:
    total: float
    mse_u: float
    mse_g: float
    grad: np.ndarray


def pinn_loss(problem: BurgersInverseProblem, theta_full) -> PinnLoss:
    """Loss ``MSE_u + MSE_g`` and its gradient over ``[theta; lambda1; lambda2]``."""
    spec = problem.spec
    theta_full = np.asarray(theta_full, dtype=np.float64)
    n_theta = theta_full.size - 2
    params = unflatten(theta_full[:n_theta], spec)
    l1, l2 = float(theta_full[n_theta]), float(theta_full[n_theta + 1])

    out, cache = forward(spec, params, to_network_inputs(problem.obs_x, problem.obs_t))
    r = out[:, 0] - problem.obs_u
    mse_u = float(r @ r) / problem.n_obs

    # collocation points in cache-sized chunks; the residual loss is a sum over points
    S = to_network_inputs(problem.col_x, problem.col_t)
    sum_g2 = dl1 = dl2 = 0.0
    grad_g = np.zeros(n_theta)
    for s in range(0, problem.n_col, COL_CHUNK):
        (n, nx, nt, nxx), jc = jet_forward_fused(spec, params, S[s:s + COL_CHUNK], (_DIR_X, _DIR_T))
        g = nt + l1 * (n * nx) - l2 * nxx
        sum_g2 += float(g @ g)
        gbar = (2.0 / problem.n_col) * g
        grad_g += flatten(jet_backward(spec, params, jc, (gbar * (l1 * nx), gbar * (l1 * n), gbar, -l2 * gbar)))
        dl1 += float(gbar @ (n * nx))
        dl2 -= float(gbar @ nxx)
    mse_g = sum_g2 / problem.n_col
    total = mse_u + mse_g
    if not math.isfinite(total):
        raise NonFiniteLoss(f"non-finite loss: MSE_u={mse_u!r}, MSE_g={mse_g!r}, lambda=({l1!r}, {l2!r})")
    grad_u, _ = backward(spec, params, cache, (2.0 / problem.n_obs) * r[:, None])
    grad = np.empty_like(theta_full)
    grad[:n_theta] = flatten(grad_u)
    grad[:n_theta] += grad_g
    grad[n_theta] = dl1
    grad[n_theta + 1] = dl2
    return PinnLoss(total, mse_u, mse_g, grad)


def pinn_loss_reference(problem: BurgersInverseProblem, theta_full) -> PinnLoss:
    """Tape-based :func:`pinn_loss`; slow, kept as an independent check."""
    spec = problem.spec
    theta_full = np.asarray(theta_full, dtype=np.float64)
    n_theta = theta_full.size - 2
    tape = Tape()
    v = tape.var(theta_full)
    params = var_params(v, spec)
    l1 = tape.apply("slice", v, start=n_theta, stop=n_theta + 1, shape=())
    l2 = tape.apply("slice", v, start=n_theta + 1, stop=n_theta + 2, shape=())

    obs_pred = tape_forward(spec, params, to_network_inputs(problem.obs_x, problem.obs_t))
    r = obs_pred - problem.obs_u[:, None]
    mse_u = vsum(r * r) * (1.0 / problem.n_obs)

    n, (nx, nt), nxx = jet_forward(spec, params, to_network_inputs(problem.col_x, problem.col_t),
                                   (_DIR_X, _DIR_T))
    g = nt + l1 * (n * nx) - l2 * nxx
    mse_g = vsum(g * g) * (1.0 / problem.n_col)
    total = mse_u + mse_g
    if not math.isfinite(float(total.value)):
        raise NonFiniteLoss(f"non-finite loss: MSE_u={float(mse_u.value)!r}, MSE_g={float(mse_g.value)!r}, "
                            f"lambda=({theta_full[n_theta]!r}, {theta_full[n_theta + 1]!r})")
    grad = tape.grad(total, v)
    return PinnLoss(float(total.value), float(mse_u.value), float(mse_g.value), grad)


def pinn_objective(problem: BurgersInverseProblem):
    def objective(theta_full):
        # the line search treats an infinite value as "step too long"
        try:
            res = pinn_loss(problem, theta_full)
        except NonFiniteLoss:
            return math.inf, np.full(np.shape(theta_full), np.nan)
        return res.total, res.grad

    return objective


def solve_inverse(problem: BurgersInverseProblem, theta0, settings: OptimizerSettings,
                  validation=None, eval_every: int = 50):
    """Jointly minimize over network parameters and (lambda1, lambda2).

    ``theta0`` is the initial flat network vector; lambdas start at
    ``problem.lambda_init``.  ``validation`` is an optional ``(x, t, u)``
    reference set for the relative L2 history.  Returns
    ``(LambdaPair, params, TrainReport)``.
    """
    spec = problem.spec
    start = np.concatenate([np.asarray(theta0, dtype=np.float64), np.array(problem.lambda_init, dtype=np.float64)])
    n_theta = start.size - 2
    rows, lambdas = [], []
    t0 = time.perf_counter()

    if validation is not None:
        vx, vt, vu = validation
        vin = to_network_inputs(vx, vt)

    def callback(k, th, f, g):
        lambdas.append((float(th[n_theta]), float(th[n_theta + 1])))
        val = None
        if validation is not None and k % eval_every == 0:
            val = rel_l2(predict(spec, unflatten(th[:n_theta], spec), vin)[:, 0], vu)
        rows.append((k, f, val, time.perf_counter() - t0))

    theta, rep = minimize(pinn_objective(problem), start, settings, callback)
    lam = LambdaPair(float(theta[n_theta]), float(theta[n_theta + 1]))
    params = unflatten(theta[:n_theta], spec)
    report = TrainReport(rows, rep)
    report.extra["lambda_trajectory"] = lambdas
    report.extra["lambda_percent_error"] = lam.percent_errors(problem.lambda_true)
    if math.isfinite(lam.lambda1) and math.isfinite(lam.lambda2) and np.all(np.isfinite(theta)):
        final = pinn_loss(problem, theta)
        report.extra.update(mse=final.total, mse_u=final.mse_u, mse_g=final.mse_g)
        if validation is not None:
            pred = predict(spec, params, vin)[:, 0]
            report.extra["val_rel_l2"] = rel_l2(pred, vu)
            if rows and rows[-1][2] is None:
                k, f, _, el = rows[-1]
                rows[-1] = (k, f, report.extra["val_rel_l2"], el)
    return lam, params, report


def travelling_wave_params(spec: ArchitectureSpec, lam, amplitude: float = 0.5, speed: float = 0.0,
                           shift: float = 0.0):
    """Parameters for which the network equals an exact travelling-wave solution.

    ``v = lambda1 * u`` solves the unit-convection equation, which has the
    solution ``v = c - A tanh(A (x - c t - s) / (2 lambda2))``.  That is one
    tanh neuron, so ``spec`` must be a plain net with a single hidden layer.
    """
    if spec.kind != "plain" or spec.n_hidden != 1 or spec.input_dim != 2:
        raise ContractError("travelling wave needs a plain net with one hidden layer on (x, t)")
    l1, l2 = lam
    A, c = amplitude, speed
    k = A / (2.0 * l2)
    # network input s = (x, 2t - 1): x - c t - shift = s0 - (c/2)(s1 + 1) - shift
    w = np.array([k, -k * c / 2.0])
    b = -k * (c / 2.0 + shift)
    h = spec.hidden_widths[0]
    W1 = np.zeros((h, 2))
    b1 = np.zeros(h)
    W2 = np.zeros((1, h))
    W1[0], b1[0], W2[0, 0] = w, b, -A / l1
    return flatten_params(W1, b1, W2, np.array([c / l1]))


def flatten_params(*arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])
