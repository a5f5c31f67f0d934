"""Plain, ResNet, SkipResNet and power-enhanced SkipResNet MLPs.

Every architecture is a pure function of ``(spec, params, x)``.  Hidden
layers compute ``f(x) = tanh(W x + b)``; the output layer is affine only.
Residual variants add a skip term to ``f`` on selected hidden layers:

* ``resnet``          every hidden layer adds ``x^(l-1)``
* ``skip_resnet``     odd hidden layers add ``x^(l-1)``
* ``sqr_skip_resnet`` odd hidden layers add ``x^(l-1)`` raised element-wise to ``p``

An addition is only made where the two operands have equal width; the first
hidden layer of a net with ``d != n_n`` is therefore plain.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import ContractError, ParameterSet, RngStream, flatten, glorot_uniform_init, unflatten

KINDS = ("plain", "resnet", "skip_resnet", "sqr_skip_resnet")

_ALIASES = {
    "plain": "plain", "plainnn": "plain", "plain_nn": "plain", "mlp": "plain",
    "resnet": "resnet",
    "skipresnet": "skip_resnet", "skip_resnet": "skip_resnet",
    "sqrskipresnet": "sqr_skip_resnet", "sqr_skip_resnet": "sqr_skip_resnet",
    "sqr_skipresnet": "sqr_skip_resnet", "sqr": "sqr_skip_resnet",
}

ACTIVATIONS = ("tanh", "identity")


def canonical_kind(name: str) -> str:
    key = name.strip().lower().replace("-", "_").replace(" ", "_")
    if key not in _ALIASES:
        raise ContractError(f"unknown architecture kind {name!r}; choose from {', '.join(KINDS)}")
    return _ALIASES[key]


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str
    input_dim: int
    hidden_widths: tuple
    output_dim: int = 1
    power: int = 2
    activation: str = "tanh"
    # test hook: False turns every residual variant into the plain map
    residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if len(self.hidden_widths) < 1:
            raise ContractError("need at least one hidden layer")
        if self.input_dim < 1 or self.output_dim < 1 or min(self.hidden_widths) < 1:
            raise ContractError("all layer widths must be >= 1")
        if int(self.power) != self.power or self.power < 1:
            raise ContractError("power must be an integer >= 1")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unsupported activation {self.activation!r}")

    @classmethod
    def uniform(cls, kind: str, input_dim: int, n_layers: int, n_neurons: int,
                output_dim: int = 1, power: int = 2, **kw) -> "ArchitectureSpec":
        return cls(kind, input_dim, (n_neurons,) * n_layers, output_dim, power, **kw)

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_widths)

    def widths(self) -> tuple:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    def layer_shapes(self) -> list:
        w = self.widths()
        return [(w[l], w[l - 1]) for l in range(1, len(w))]

    def skip_power(self, l: int):
        """Exponent of the skip term added at hidden layer ``l`` (1-based), or None."""
        if not self.residual or self.kind == "plain":
            return None
        w = self.widths()
        if w[l] != w[l - 1]:
            return None
        if self.kind == "resnet":
            return 1
        if l % 2 == 0:
            return None
        return 1 if self.kind == "skip_resnet" else int(self.power)

    def skip_layers(self) -> list:
        return [l for l in range(1, self.n_hidden + 1) if self.skip_power(l) is not None]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        d = dict(d)
        d["hidden_widths"] = tuple(d["hidden_widths"])
        return cls(**d)


def parameter_count(spec: ArchitectureSpec) -> int:
    return sum(r * c + r for r, c in spec.layer_shapes())


def init_params(spec: ArchitectureSpec, rng: RngStream) -> ParameterSet:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for r, c in spec.layer_shapes():
        weights.append(glorot_uniform_init(c, r, rng))
        biases.append(np.zeros(r))
    return ParameterSet(weights, biases)


def check_params(spec: ArchitectureSpec, params: ParameterSet) -> None:
    shapes = spec.layer_shapes()
    if params.n_layers != len(shapes) or len(params.biases) != len(shapes):
        raise ContractError(f"spec has {len(shapes)} layers, params have {params.n_layers}")
    for l, ((r, c), w, b) in enumerate(zip(shapes, params.weights, params.biases), start=1):
        if np.shape(w) != (r, c) or np.shape(b) != (r,):
            raise ContractError(f"layer {l}: expected W {(r, c)} and b {(r,)}, "
                                f"got {np.shape(w)} and {np.shape(b)}")


def _act(spec, z):
    return np.tanh(z) if spec.activation == "tanh" else z


def _act_prime(spec, a):
    # a is the activation output; returns a fresh array the caller may overwrite
    if spec.activation != "tanh":
        return np.ones_like(a)
    d = a * a
    np.subtract(1.0, d, out=d)
    return d


@dataclass
class ForwardCache:
    pre: list = field(default_factory=list)    # z^(l), l = 1..L+1
    act: list = field(default_factory=list)    # f-part sigma(z^(l)), l = 1..L
    outs: list = field(default_factory=list)   # x^(l), l = 0..L
    output: np.ndarray = None
    fingerprint: int = 0
    single: bool = False


def forward(spec: ArchitectureSpec, params: ParameterSet, x):
    """Evaluate the network on one point ``(d,)`` or a batch ``(n, d)``."""
    check_params(spec, params)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ContractError(f"input must have trailing dimension {spec.input_dim}, got {x.shape}")
    cache = ForwardCache(fingerprint=params.fingerprint(), single=single)
    cache.outs.append(X)
    h = X
    for l in range(1, spec.n_hidden + 1):
        z = h @ params.weights[l - 1].T
        z += params.biases[l - 1]
        a = _act(spec, z)
        p = spec.skip_power(l)
        if p is None:
            out = a
        else:
            out = h * h if p == 2 else (h.copy() if p == 1 else h ** p)
            out += a
        cache.pre.append(z)
        cache.act.append(a)
        cache.outs.append(out)
        h = out
    z = h @ params.weights[-1].T + params.biases[-1]
    cache.pre.append(z)
    cache.output = z
    return (z[0] if single else z), cache


def predict(spec: ArchitectureSpec, params: ParameterSet, x) -> np.ndarray:
    return forward(spec, params, x)[0]


def backward(spec: ArchitectureSpec, params: ParameterSet, cache: ForwardCache, upstream):
    """Reverse pass for ``dL/d(output) = upstream``; gradients summed over the batch.

    Returns ``(grad_params, grad_input)``.
    """
    if cache.fingerprint != params.fingerprint():
        raise ContractError("cache was produced with different parameters")
    g = np.asarray(upstream, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ContractError(f"upstream shape {g.shape} does not match output {cache.output.shape}")
    L = spec.n_hidden
    gW = [None] * (L + 1)
    gb = [None] * (L + 1)
    # g is dL/dz^(l); gx is dL/dx^(l-1)
    gW[L] = g.T @ cache.outs[L]
    gb[L] = g.sum(axis=0)
    gx = g @ params.weights[L]
    for l in range(L, 0, -1):
        gz = _act_prime(spec, cache.act[l - 1])
        gz *= gx
        prev = cache.outs[l - 1]
        gW[l - 1] = gz.T @ prev
        gb[l - 1] = gz.sum(axis=0)
        new_gx = gz @ params.weights[l - 1]
        p = spec.skip_power(l)
        if p == 1:
            new_gx += gx
        elif p is not None:
            # d(prev**p)/d(prev) = p * prev**(p-1)
            t = prev * gx if p == 2 else (prev ** (p - 1)) * gx
            t *= p
            new_gx += t
        gx = new_gx
    grad_input = gx[0] if cache.single else gx
    return ParameterSet(gW, gb), grad_input


def unroll3(kind: str, params: ParameterSet, x, p: int = 2) -> np.ndarray:
    """Third hidden-layer output written out as a literal expression tree.

    Needs exactly three hidden layers whose widths equal the input width.
    Subexpressions are recomputed, never shared.
    """
    kind = canonical_kind(kind)
    if params.n_layers != 4:
        raise ContractError("unroll3 needs exactly 3 hidden layers (plus output layer)")
    x0 = np.asarray(x, dtype=np.float64)
    d = x0.shape[-1]
    for W in params.weights[:3]:
        if W.shape != (d, d):
            raise ContractError("unroll3 needs every hidden width equal to the input width")
    W1, W2, W3 = params.weights[:3]
    b1, b2, b3 = params.biases[:3]

    def f1(v):
        return np.tanh(v @ W1.T + b1)

    def f2(v):
        return np.tanh(v @ W2.T + b2)

    def f3(v):
        return np.tanh(v @ W3.T + b3)

    if kind == "plain":
        return f3(f2(f1(x0)))
    if kind == "resnet":
        return (f3(f2(f1(x0) + x0) + f1(x0) + x0)
                + (f2(f1(x0) + x0) + f1(x0) + x0))
    if kind == "skip_resnet":
        p = 1
    return (f3(f2(f1(x0) + x0 ** p))
            + f2(f1(x0) + x0 ** p) ** p)


CHECKPOINT_FORMAT = "powerres-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, spec: ArchitectureSpec, params: ParameterSet, extra: dict | None = None) -> None:
    """JSON dump of the spec and the flattened parameter vector.

    Floats are written with ``repr`` precision so reloading is bit-exact.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "theta": flatten(params).tolist(),
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    spec = ArchitectureSpec.from_dict(doc["spec"])
    params = unflatten(np.array(doc["theta"], dtype=np.float64), spec)
    return spec, params, doc.get("extra", {})
