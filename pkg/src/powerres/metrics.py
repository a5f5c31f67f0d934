"""Error measures and the supervised mean-squared training objective."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import ContractError, flatten, unflatten
from .network import ArchitectureSpec, backward, forward


class DomainError(ContractError):
    pass


def _pair(pred, truth):
    pred = np.ravel(np.asarray(pred, dtype=np.float64))
    truth = np.ravel(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise ContractError(f"length mismatch: {pred.size} predictions vs {truth.size} targets")
    if pred.size == 0:
        raise ContractError("need at least one value")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    r = truth - pred
    return float(np.mean(r * r))


def rel_l2(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    norm = float(np.linalg.norm(truth))
    if norm == 0.0:
        raise DomainError("relative L2 error undefined for an all-zero reference")
    return float(np.linalg.norm(truth - pred)) / norm


def max_abs(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.max(np.abs(truth - pred)))


@dataclass
class EvalResult:
    mse: float
    rel_l2: float
    max_abs: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(pred, truth) -> EvalResult:
    pred, truth = _pair(pred, truth)
    rl = rel_l2(pred, truth) if np.any(truth != 0) else float("nan")
    return EvalResult(mse(pred, truth), rl, max_abs(pred, truth), int(pred.size))


def interpolation_objective(spec: ArchitectureSpec, inputs, targets):
    """Closure ``theta -> (loss, grad)`` for the mean-squared loss over ``(inputs, targets)``.

    The gradient comes from the hand-written reverse pass, summed over the
    batch and divided by ``n``.
    """
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise ContractError("training set is empty")
    y = np.asarray(targets, dtype=np.float64).reshape(len(X), -1)
    n = len(X)

    def objective(theta):
        params = unflatten(theta, spec)
        out, cache = forward(spec, params, X)
        r = out - y
        loss = float(np.sum(r * r)) / n
        grads, _ = backward(spec, params, cache, (2.0 / n) * r)
        return loss, flatten(grads)

    return objective
