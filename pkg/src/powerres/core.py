"""Dense linear-algebra substrate, seeded randomness and parameter containers."""
from __future__ import annotations

import ctypes
import ctypes.util
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def tune_allocator(threshold: int = 64 << 20) -> bool:
    """Keep large numpy temporaries on the glibc heap instead of fresh mmaps.

    Training loops allocate the same few-MB arrays thousands of times; with the
    default mmap threshold each one is page-faulted in again.  No-op (returns
    False) where glibc ``mallopt`` is unavailable.
    """
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    M_TRIM_THRESHOLD, M_MMAP_THRESHOLD = -1, -3
    return bool(mallopt(M_MMAP_THRESHOLD, threshold)) and bool(mallopt(M_TRIM_THRESHOLD, 2 * threshold))


class ContractError(ValueError):
    """Raised when a caller violates an operation's preconditions."""


class RngStream:
    """Seeded counter-based random stream (Philox).

    Child streams are derived from the parent seed plus a key path, so
    parallel workers never share state.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        if seed < 0:
            raise ContractError("seed must be non-negative")
        self.seed = int(seed)
        self._path = tuple(_path)
        ss = np.random.SeedSequence([self.seed, *self._path])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, key: int) -> "RngStream":
        return RngStream(self.seed, self._path + (int(key),))

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ContractError(f"cannot multiply {m.shape} matrix by {v.shape} vector")
    return m @ v


def frobenius_norm(matrices: Sequence[np.ndarray]) -> float:
    """Root of the summed squares of every entry across ``matrices``."""
    if isinstance(matrices, np.ndarray):
        matrices = [matrices]
    if len(matrices) == 0:
        raise ContractError("frobenius_norm needs at least one matrix")
    total = 0.0
    for m in matrices:
        a = np.asarray(m, dtype=np.float64)
        total += float(np.sum(a * a))
    return float(np.sqrt(total))


def glorot_uniform_init(fan_in: int, fan_out: int, rng: RngStream) -> np.ndarray:
    """Weight matrix of shape (fan_out, fan_in), entries U[-a, a], a = sqrt(6/(fan_in+fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ContractError("fan_in and fan_out must be >= 1")
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


@dataclass
class ParameterSet:
    """Per-layer weights ``W[l]`` (h_l x h_{l-1}) and biases ``b[l]`` (h_l,)."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "ParameterSet":
        return ParameterSet([np.array(w, copy=True) for w in self.weights],
                            [np.array(b, copy=True) for b in self.biases])

    def scaled(self, c: float) -> "ParameterSet":
        return ParameterSet([c * w for w in self.weights], [c * b for b in self.biases])

    def fingerprint(self) -> int:
        h = 0
        for w, b in zip(self.weights, self.biases):
            h = zlib.crc32(np.ascontiguousarray(w, dtype=np.float64).tobytes(), h)
            h = zlib.crc32(np.ascontiguousarray(b, dtype=np.float64).tobytes(), h)
        return h

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterSet) or self.n_layers != other.n_layers:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)) and all(
            np.array_equal(a, b) for a, b in zip(self.biases, other.biases))


def flatten(params: ParameterSet) -> np.ndarray:
    """Layer by layer: W row-major, then b."""
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ravel(w))
        parts.append(np.ravel(b))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts).astype(np.float64, copy=False)


def unflatten(v: np.ndarray, spec) -> ParameterSet:
    """Inverse of :func:`flatten`; ``spec`` supplies ``layer_shapes()``."""
    v = np.asarray(v, dtype=np.float64)
    shapes = spec.layer_shapes()
    total = sum(r * c + r for r, c in shapes)
    if v.ndim != 1 or v.shape[0] != total:
        raise ContractError(f"expected flat vector of length {total}, got shape {v.shape}")
    weights, biases = [], []
    k = 0
    for r, c in shapes:
        weights.append(v[k:k + r * c].reshape(r, c).copy())
        k += r * c
        biases.append(v[k:k + r].copy())
        k += r
    return ParameterSet(weights, biases)
