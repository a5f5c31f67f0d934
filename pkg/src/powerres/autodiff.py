"""Reverse-mode tape over array primitives, and second-order forward jets.

The jet arithmetic is written against a small set of generic operations
(``+``, ``*``, :func:`affine`, :func:`tanh`, :func:`power`) that accept
either plain numpy values or tape :class:`Var` objects.  Running a jet
forward pass on ``Var`` parameters therefore records it on the tape, and
``Tape.backward`` gives parameter gradients of any loss built from jet
components (reverse-over-forward).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import ContractError, ParameterSet
from .network import ArchitectureSpec, check_params


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


# primitive name -> (forward(*values, **kw) -> out, vjp(g, out, *values, **kw) -> grads)
PRIMITIVES: dict = {}


def register(name: str, fwd: Callable, vjp: Callable) -> None:
    PRIMITIVES[name] = (fwd, vjp)


def _shape(v):
    return np.shape(v)


register("add", lambda a, b: a + b,
         lambda g, out, a, b: (_unbroadcast(g, _shape(a)), _unbroadcast(g, _shape(b))))
register("sub", lambda a, b: a - b,
         lambda g, out, a, b: (_unbroadcast(g, _shape(a)), -_unbroadcast(g, _shape(b))))
register("mul", lambda a, b: a * b,
         lambda g, out, a, b: (_unbroadcast(g * b, _shape(a)), _unbroadcast(g * a, _shape(b))))
register("neg", lambda a: -a, lambda g, out, a: (-g,))
register("tanh", np.tanh, lambda g, out, a: (g * (1.0 - out * out),))
register("sum", lambda a: np.sum(a), lambda g, out, a: (np.full(np.shape(a), g, dtype=np.float64),))


def _pow_fwd(a, p):
    return a ** p


def _pow_vjp(g, out, a, p):
    if p == 1:
        return (g,)
    return (g * (p * a ** (p - 1)),)


register("power", _pow_fwd, _pow_vjp)


def _affine_fwd(x, W, b=None):
    z = x @ W.T
    return z if b is None else z + b


def _affine_vjp(g, out, x, W, b=None):
    gx = g @ W
    gW = np.outer(g, x) if np.ndim(x) == 1 else g.T @ x
    gb = None if b is None else _unbroadcast(g, _shape(b))
    return (gx, gW, gb)


register("affine", _affine_fwd, _affine_vjp)


def _slice_fwd(a, start, stop, shape):
    return a[start:stop].reshape(shape)


def _slice_vjp(g, out, a, start, stop, shape):
    full = np.zeros(np.shape(a))
    full[start:stop] = np.ravel(g)
    return (full,)


register("slice", _slice_fwd, _slice_vjp)


def _column_vjp(g, out, a, k):
    full = np.zeros(np.shape(a))
    full[:, k] = g
    return (full,)


register("column", lambda a, k: a[:, k], _column_vjp)


class Var:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "value", "idx")
    __array_priority__ = 1000

    def __init__(self, tape: "Tape", value, idx: int):
        self.tape = tape
        self.value = value
        self.idx = idx

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, o):
        return self.tape.apply("add", self, o)

    def __radd__(self, o):
        return self.tape.apply("add", o, self)

    def __sub__(self, o):
        return self.tape.apply("sub", self, o)

    def __rsub__(self, o):
        return self.tape.apply("sub", o, self)

    def __mul__(self, o):
        return self.tape.apply("mul", self, o)

    def __rmul__(self, o):
        return self.tape.apply("mul", o, self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.shape})"


class Tape:
    """Execution-ordered record of primitive applications.

    ``backward`` walks the record in reverse, so each node's local partials
    are applied exactly once.
    """

    def __init__(self):
        # (primitive name or None for leaves, input list, kwargs, output value)
        self.nodes: list = []

    def var(self, value) -> Var:
        v = Var(self, np.asarray(value, dtype=np.float64), len(self.nodes))
        self.nodes.append((None, (), {}, v.value))
        return v

    def apply(self, name: str, *inputs, **kw) -> Var:
        if name not in PRIMITIVES:
            raise ContractError(f"primitive {name!r} is not registered")
        fwd, _ = PRIMITIVES[name]
        for x in inputs:
            if isinstance(x, Var) and x.tape is not self:
                raise ContractError("cannot mix variables from different tapes")
        values = [x.value if isinstance(x, Var) else x for x in inputs]
        out = fwd(*values, **kw)
        v = Var(self, out, len(self.nodes))
        self.nodes.append((name, inputs, kw, out))
        return v

    def backward(self, out: Var, seed=None) -> list:
        """Adjoints of every node w.r.t. ``out`` (indexed by ``Var.idx``)."""
        if not isinstance(out, Var) or out.tape is not self:
            raise ContractError("backward needs a Var from this tape")
        grads: list = [None] * len(self.nodes)
        grads[out.idx] = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for i in range(out.idx, -1, -1):
            g = grads[i]
            name, inputs, kw, value = self.nodes[i]
            if g is None or name is None:
                continue
            values = [x.value if isinstance(x, Var) else x for x in inputs]
            local = PRIMITIVES[name][1](g, value, *values, **kw)
            for x, gx in zip(inputs, local):
                if isinstance(x, Var) and gx is not None:
                    j = x.idx
                    grads[j] = gx if grads[j] is None else grads[j] + gx
            # release intermediate adjoints as soon as they are consumed
            if i != out.idx:
                grads[i] = None if name is not None else g
        return grads

    def grad(self, out: Var, wrt: Var) -> np.ndarray:
        g = self.backward(out)[wrt.idx]
        return np.zeros(wrt.shape) if g is None else g


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def affine(x, W, b=None):
    t = _tape_of(x, W, b)
    if t is None:
        return _affine_fwd(np.asarray(x), np.asarray(W), b)
    return t.apply("affine", x, W, b)


def tanh(x):
    return x.tape.apply("tanh", x) if isinstance(x, Var) else np.tanh(x)


def power(x, p: int):
    if int(p) != p or p < 0:
        raise ContractError("power exponent must be a non-negative integer")
    p = int(p)
    if p == 0:
        return np.ones(np.shape(x.value if isinstance(x, Var) else x))
    if p == 1:
        return x
    return x.tape.apply("power", x, p=p) if isinstance(x, Var) else np.asarray(x) ** p


def vsum(x):
    return x.tape.apply("sum", x) if isinstance(x, Var) else np.sum(x)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def var_params(theta: Var, spec: ArchitectureSpec, offset: int = 0) -> ParameterSet:
    """Slice a flat tape vector into a ParameterSet of Vars (same layout as ``flatten``)."""
    weights, biases = [], []
    k = offset
    for r, c in spec.layer_shapes():
        weights.append(theta.tape.apply("slice", theta, start=k, stop=k + r * c, shape=(r, c)))
        k += r * c
        biases.append(theta.tape.apply("slice", theta, start=k, stop=k + r, shape=(r,)))
        k += r
    return ParameterSet(weights, biases)


def tape_forward(spec: ArchitectureSpec, params: ParameterSet, x):
    """Network forward expressed in tape primitives (works on Vars or arrays)."""
    h = x
    for l in range(1, spec.n_hidden + 1):
        z = affine(h, params.weights[l - 1], params.biases[l - 1])
        a = tanh(z) if spec.activation == "tanh" else z
        p = spec.skip_power(l)
        h = a if p is None else a + power(h, p)
    return affine(h, params.weights[-1], params.biases[-1])


def grad_wrt_params(loss_eval: Callable, theta) -> tuple:
    """Value and gradient of ``loss_eval(theta_var)`` via the reverse tape.

    ``loss_eval`` receives a :class:`Var` holding the flat vector and must
    return a scalar Var built from registered primitives.
    """
    tape = Tape()
    v = tape.var(np.asarray(theta, dtype=np.float64))
    out = loss_eval(v)
    if not isinstance(out, Var):
        raise ContractError("loss_eval must return a tape variable")
    if np.ndim(out.value) != 0:
        raise ContractError("loss_eval must return a scalar")
    return float(out.value), tape.grad(out, v)


class Jet2:
    """Truncated second-order Taylor number.

    ``value``; ``d1`` one first derivative per tracked direction (<= 2);
    ``d2`` the second derivative along the first direction.  Components may
    be floats, numpy arrays or tape Vars.
    """

    __slots__ = ("value", "d1", "d2")

    def __init__(self, value, d1: Sequence, d2):
        d1 = tuple(d1)
        if not 1 <= len(d1) <= 2:
            raise ContractError("a jet tracks one or two directions")
        self.value = value
        self.d1 = d1
        self.d2 = d2

    @classmethod
    def constant(cls, value, n_dirs: int = 2) -> "Jet2":
        z = 0.0 * np.asarray(value_of(value), dtype=np.float64)
        return cls(value, (z,) * n_dirs, z)

    @classmethod
    def variable(cls, value, n_dirs: int = 2, which: int = 0) -> "Jet2":
        """Scalar input seeded with unit derivative along direction ``which``."""
        d1 = [0.0] * n_dirs
        d1[which] = 1.0
        return cls(value, d1, 0.0)

    def _lift(self, o) -> "Jet2":
        return o if isinstance(o, Jet2) else Jet2.constant(o, len(self.d1))

    def __add__(self, o):
        if not isinstance(o, Jet2):
            return Jet2(self.value + o, self.d1, self.d2)
        return Jet2(self.value + o.value, tuple(a + b for a, b in zip(self.d1, o.d1)), self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.value, tuple(-a for a in self.d1), -self.d2)

    def __sub__(self, o):
        return self + (-self._lift(o))

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if not isinstance(o, Jet2):
            return Jet2(self.value * o, tuple(a * o for a in self.d1), self.d2 * o)
        a, b = self, o
        d2 = a.value * b.d2 + 2.0 * (a.d1[0] * b.d1[0]) + a.d2 * b.value
        return Jet2(a.value * b.value, tuple(a.value * db + da * b.value for da, db in zip(a.d1, b.d1)), d2)

    __rmul__ = __mul__

    def __pow__(self, p):
        return jet_power(self, p)

    def tanh(self):
        return jet_tanh(self)

    def __repr__(self):
        return f"Jet2(value={self.value!r}, d1={self.d1!r}, d2={self.d2!r})"


def jet_tanh(j: Jet2) -> Jet2:
    s = tanh(j.value)
    s1 = 1.0 - s * s
    s2 = -2.0 * (s * s1)
    d1 = tuple(s1 * d for d in j.d1)
    return Jet2(s, d1, s1 * j.d2 + s2 * (j.d1[0] * j.d1[0]))


def jet_power(j: Jet2, p: int) -> Jet2:
    if int(p) != p or p < 1:
        raise ContractError("jet power needs an integer exponent >= 1")
    p = int(p)
    if p == 1:
        return j
    dp = p * power(j.value, p - 1)
    d1 = tuple(dp * d for d in j.d1)
    sq = j.d1[0] * j.d1[0]
    curv = sq if p == 2 else power(j.value, p - 2) * sq
    return Jet2(power(j.value, p), d1, dp * j.d2 + float(p * (p - 1)) * curv)


def jet_affine(j: Jet2, W, b=None) -> Jet2:
    return Jet2(affine(j.value, W, b), tuple(affine(d, W) for d in j.d1), affine(j.d2, W))


def _network_jet(spec: ArchitectureSpec, params: ParameterSet, j: Jet2) -> Jet2:
    h = j
    for l in range(1, spec.n_hidden + 1):
        z = jet_affine(h, params.weights[l - 1], params.biases[l - 1])
        a = jet_tanh(z) if spec.activation == "tanh" else z
        p = spec.skip_power(l)
        h = a if p is None else a + jet_power(h, p)
    return jet_affine(h, params.weights[-1], params.biases[-1])


def jet_forward(spec: ArchitectureSpec, params: ParameterSet, x, directions=(0, 1)):
    """Network value, first derivatives along each direction, and the second
    derivative along the first direction.

    ``x`` is one point ``(d,)`` or a batch ``(n, d)``.  A direction is an
    input-axis index or an explicit direction vector.  ``params`` may hold
    numpy arrays or tape Vars.  Returns ``(value, (d_dir1[, d_dir2]), d2_dir1)``.
    """
    if spec.output_dim != 1:
        raise ContractError("jet_forward supports scalar-output networks only")
    if all(not isinstance(w, Var) for w in params.weights):
        check_params(spec, params)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != spec.input_dim:
        raise ContractError(f"input must have trailing dimension {spec.input_dim}")
    dirs = []
    for d in directions:
        if np.ndim(d) == 0:
            e = np.zeros(spec.input_dim)
            e[int(d)] = 1.0
        else:
            e = np.asarray(d, dtype=np.float64)
        dirs.append(np.broadcast_to(e, X.shape))
    j = Jet2(X, dirs, np.zeros_like(X))
    out = _network_jet(spec, params, j)

    def squeeze(c):
        if isinstance(c, Var):
            c = c.tape.apply("column", c, k=0)
            return c
        c = np.asarray(c)[:, 0]
        return c[0] if single else c

    return squeeze(out.value), tuple(squeeze(d) for d in out.d1), squeeze(out.d2)


def finite_difference_check(f: Callable, point, step: float = 1e-5, grad=None,
                            coords=None) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f(x)`` returns ``(value, gradient)`` unless ``grad`` is given separately.
    ``coords`` restricts the check to a subset of coordinates.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    x = np.array(point, dtype=np.float64, ndmin=1)
    scalar = np.ndim(point) == 0

    def call(v):
        arg = v[0] if scalar else v
        return f(arg)

    if grad is None:
        _, g = call(x)
    else:
        g = grad(x[0] if scalar else x)
    g = np.array(g, dtype=np.float64, ndmin=1)

    def value(v):
        r = call(v)
        return float(r[0] if isinstance(r, tuple) else r)

    worst = 0.0
    idx = range(x.size) if coords is None else coords
    for i in idx:
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        fd = (value(xp) - value(xm)) / (2.0 * step)
        worst = max(worst, abs(g[i] - fd) / max(1.0, abs(g[i])))
    return worst


# --- fused jet pass ----------------------------------------------------------------
#
# The generic Jet2 path records every operation on a tape, which is flexible
# but slow for large collocation sets.  The fused pass below keeps the four
# jet components of a layer stacked as one (4n, w) array (value, d/d dir1,
# d/d dir2, d2/d dir1^2) so each affine map is a single matrix product, and
# its reverse pass is written out by hand.

class JetCache:
    __slots__ = ("n", "inputs", "pre", "act", "last")

    def __init__(self, n):
        self.n = n
        self.inputs = []   # stacked layer inputs H^(l-1)
        self.pre = []      # stacked pre-activations Z^(l)
        self.act = []      # activation values a^(l)
        self.last = None   # stacked input of the output layer


def _blocks(A, n):
    return A[:n], A[n:2 * n], A[2 * n:3 * n], A[3 * n:]


def _skip_factors(v, p):
    """``p v^(p-1)``, ``p(p-1) v^(p-2)`` and ``p(p-1)(p-2) v^(p-3)`` (``None`` when zero)."""
    if p == 2:
        return 2.0 * v, 2.0, None
    if p == 3:
        return 3.0 * (v * v), 6.0 * v, 6.0
    return p * v ** (p - 1), p * (p - 1) * v ** (p - 2), p * (p - 1) * (p - 2) * v ** (p - 3)


def _tanh_derivs(a):
    s1 = a * a
    np.subtract(1.0, s1, out=s1)
    s2 = a * s1
    s2 *= -2.0
    s3 = s1 * s1
    s3 += a * s2
    s3 *= -2.0
    return s1, s2, s3


def jet_forward_fused(spec: ArchitectureSpec, params: ParameterSet, X, directions=(0, 1)):
    """Batch version of :func:`jet_forward` for numpy parameters.

    Returns ``((N, N_dir1, N_dir2, N_dir1dir1), cache)``, each of shape ``(n,)``.
    """
    if spec.output_dim != 1:
        raise ContractError("jet_forward_fused supports scalar-output networks only")
    check_params(spec, params)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    if d != spec.input_dim or len(directions) != 2:
        raise ContractError("need inputs of width input_dim and exactly two directions")
    H = np.zeros((4 * n, d))
    H[:n] = X
    for k, e in enumerate(directions, start=1):
        if np.ndim(e) == 0:
            H[k * n:(k + 1) * n, int(e)] = 1.0
        else:
            H[k * n:(k + 1) * n] = np.asarray(e, dtype=np.float64)
    tanh = spec.activation == "tanh"
    cache = JetCache(n)
    for l in range(1, spec.n_hidden + 1):
        W, b = params.weights[l - 1], params.biases[l - 1]
        Z = H @ W.T
        Z[:n] += b
        w = Z.shape[1]
        out = np.empty_like(Z)
        ov, ox = out[:n], out[n:2 * n]
        os_ = out[3 * n:]
        zx = Z[n:2 * n]
        if tanh:
            np.tanh(Z[:n], out=ov)
            a = ov.copy()
            s1 = a * a
            np.subtract(1.0, s1, out=s1)
            # derivative blocks share the factor s1; second order adds s2 zx^2, s2 = -2 a s1
            np.multiply(s1, Z[n:].reshape(3, n, w), out=out[n:].reshape(3, n, w))
            q = a * s1
            q *= zx
            q *= zx
            q *= 2.0
            os_ -= q
        else:
            out[...] = Z
            a = None
        p = spec.skip_power(l)
        if p == 1:
            out += H
        elif p is not None:
            v, x = H[:n], H[n:2 * n]
            dp, ddp, _ = _skip_factors(v, p)
            ov += v ** p if p != 2 else v * v
            t3 = H[n:].reshape(3, n, w) * dp
            out[n:] += t3.reshape(3 * n, w)
            q = x * x
            q *= ddp
            os_ += q
        cache.inputs.append(H)
        cache.pre.append(Z)
        cache.act.append(a)
        H = out
    cache.last = H
    Y = H @ params.weights[-1].T
    Y[:n] += params.biases[-1]
    return tuple(c[:, 0] for c in _blocks(Y, n)), cache


def jet_backward(spec: ArchitectureSpec, params: ParameterSet, cache: JetCache, adjoints) -> ParameterSet:
    """Parameter gradient given adjoints of ``(N, N_dir1, N_dir2, N_dir1dir1)``."""
    n = cache.n
    Ybar = np.concatenate([np.asarray(a, dtype=np.float64).reshape(n) for a in adjoints])[:, None]
    L = spec.n_hidden
    gW = [None] * (L + 1)
    gb = [None] * (L + 1)
    gW[L] = Ybar.T @ cache.last
    gb[L] = Ybar[:n].sum(axis=0)
    Obar = Ybar @ params.weights[L]
    for l in range(L, 0, -1):
        H, Z, a = cache.inputs[l - 1], cache.pre[l - 1], cache.act[l - 1]
        w = Z.shape[1]
        Vb, Xb, Tb, Sb = _blocks(Obar, n)
        z, zx, zt, zs = _blocks(Z, n)
        if a is None:
            Zbar = Obar.copy()
        else:
            s1, s2, s3 = _tanh_derivs(a)
            Zbar = np.empty_like(Z)
            zv_, zx_ = Zbar[:n], Zbar[n:2 * n]
            np.multiply(s1, Obar[n:].reshape(3, n, w), out=Zbar[n:].reshape(3, n, w))
            u = s2 * Sb
            q = u * zx
            q *= 2.0
            zx_ += q
            np.multiply(s1, Vb, out=zv_)
            q = zx * Xb
            q += zt * Tb
            q += zs * Sb
            q *= s2
            zv_ += q
            q = zx * zx
            q *= Sb
            q *= s3
            zv_ += q
        gW[l - 1] = Zbar.T @ H
        gb[l - 1] = Zbar[:n].sum(axis=0)
        Hbar = Zbar @ params.weights[l - 1]
        p = spec.skip_power(l)
        if p == 1:
            Hbar += Obar
        elif p is not None:
            v, x, t, s = _blocks(H, n)
            dp, ddp, dddp = _skip_factors(v, p)
            t3 = Obar[n:].reshape(3, n, w) * dp
            Hbar[n:] += t3.reshape(3 * n, w)
            hv, hx = Hbar[:n], Hbar[n:2 * n]
            q = x * Xb
            q += t * Tb
            q += s * Sb
            q *= ddp
            q += dp * Vb
            hv += q
            if dddp is not None:
                q = x * x
                q *= Sb
                q *= dddp
                hv += q
            q = x * Sb
            q *= ddp
            q *= 2.0
            hx += q
        Obar = Hbar
    return ParameterSet(gW, gb)
