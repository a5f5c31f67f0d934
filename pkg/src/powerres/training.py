"""Training driver shared by the interpolation and inverse-PDE runs."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ContractError, flatten, unflatten
from .diagnostics import NormHistory, histogram_gradients, record_norms
from .metrics import EvalResult, evaluate, interpolation_objective, rel_l2
from .network import ArchitectureSpec, predict
from .optim import ConvergenceCriteria, OptimReport, adam_minimize, lbfgs_minimize


@dataclass
class OptimizerSettings:
    name: str = "lbfgs"
    lr: float = 1e-3
    adam_iters: int = 10000
    max_iter: int = 20000
    grad_tol: float = 1e-9
    f_change_tol: float = 1e-9
    history_size: int = 10

    def __post_init__(self):
        if self.name not in ("lbfgs", "adam"):
            raise ContractError(f"unknown optimizer {self.name!r}; choose lbfgs or adam")


@dataclass
class DiagnosticsSettings:
    record_norms: bool = False
    hist_layers: tuple = ()
    hist_bins: int = 50
    # iterations at which gradient histograms are taken; None -> first, middle, last
    hist_epochs: Optional[tuple] = None


@dataclass
class TrainReport:
    loss_history: list = field(default_factory=list)   # (iter, train_mse, val_rel_l2|None, elapsed_s)
    optim: OptimReport = None
    norms: NormHistory = field(default_factory=NormHistory)
    histograms: list = field(default_factory=list)
    train: EvalResult = None
    validation: EvalResult = None
    extra: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.optim is not None and self.optim.failed


def minimize(objective: Callable, theta0, settings: OptimizerSettings, callback=None):
    if settings.name == "adam":
        return adam_minimize(objective, theta0, settings.lr, settings.adam_iters, callback=callback)
    crit = ConvergenceCriteria(settings.grad_tol, settings.f_change_tol, settings.max_iter)
    return lbfgs_minimize(objective, theta0, crit, settings.history_size, callback=callback)


class _Recorder:
    """Optimizer callback collecting histories; it only reads the iterate."""

    def __init__(self, spec, settings, diag, loss_to_raw, val_error, eval_every, n_iter_hint):
        self.spec = spec
        self.diag = diag
        self.loss_to_raw = loss_to_raw
        self.val_error = val_error
        self.eval_every = max(1, int(eval_every))
        self.rows = []
        self.norms = NormHistory()
        self.histograms = []
        self.t0 = time.perf_counter()
        if diag.hist_epochs is None:
            self.hist_epochs = {1, max(1, n_iter_hint // 2)}
        else:
            self.hist_epochs = set(diag.hist_epochs)
        self.last = None

    def __call__(self, k, theta, f, g):
        val = None
        if self.val_error is not None and k % self.eval_every == 0:
            val = self.val_error(theta)
        self.rows.append((k, self.loss_to_raw(f), val, time.perf_counter() - self.t0))
        if self.diag.record_norms:
            record_norms(unflatten(theta, self.spec), k, self.norms)
        if self.diag.hist_layers:
            self.last = (k, g)
            if k in self.hist_epochs:
                self._histogram(k, g)

    def _histogram(self, k, g):
        grads = unflatten(g, self.spec)
        for layer in self.diag.hist_layers:
            self.histograms.append(histogram_gradients(grads, layer, self.diag.hist_bins, epoch=k))

    def finish(self, theta):
        if self.val_error is not None and self.rows and self.rows[-1][2] is None:
            k, tr, _, el = self.rows[-1]
            self.rows[-1] = (k, tr, self.val_error(theta), el)
        if self.diag.hist_layers and self.last is not None and self.last[0] not in self.hist_epochs:
            self._histogram(*self.last)


def train_interpolation(spec: ArchitectureSpec, theta0, train_ds, val_ds, normalizer,
                        settings: OptimizerSettings, diag: DiagnosticsSettings = DiagnosticsSettings(),
                        eval_every: int = 10):
    """Fit ``spec`` to the (normalized) training set; metrics are in raw units."""
    objective = interpolation_objective(spec, train_ds.inputs, train_ds.targets)
    s2 = normalizer.out_scale ** 2
    raw_val = normalizer.targets_inverse(val_ds.targets)

    def val_error(theta):
        pred = normalizer.targets_inverse(predict(spec, unflatten(theta, spec), val_ds.inputs)[:, 0])
        return rel_l2(pred, raw_val)

    n_hint = settings.adam_iters if settings.name == "adam" else settings.max_iter
    rec = _Recorder(spec, settings, diag, lambda f: f * s2, val_error, eval_every, n_hint)
    theta, rep = minimize(objective, theta0, settings, rec)
    rec.finish(theta)
    report = TrainReport(rec.rows, rep, rec.norms, rec.histograms)
    if np.all(np.isfinite(theta)):
        params = unflatten(theta, spec)
        for ds, attr in ((train_ds, "train"), (val_ds, "validation")):
            pred = normalizer.targets_inverse(predict(spec, params, ds.inputs)[:, 0])
            setattr(report, attr, evaluate(pred, normalizer.targets_inverse(ds.targets)))
    return theta, report
