"""Benchmark functions, samplers, datasets and file loaders."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import ContractError, RngStream


class DataFormatError(ContractError):
    """Malformed input file; the message names the offending line."""


# --- closed-form test functions -------------------------------------------------

def f1(x1, x2):
    """Franke's function."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    return (0.75 * np.exp(-0.25 * ((9 * x1 - 2) ** 2 + (9 * x2 - 2) ** 2))
            + 0.75 * np.exp(-((9 * x1 + 1) ** 2) / 49.0 - (9 * x2 + 1) ** 2 / 10.0)
            + 0.5 * np.exp(-0.25 * ((9 * x1 - 7) ** 2 + (9 * x2 - 3) ** 2))
            - 0.2 * np.exp(-((9 * x1 - 4) ** 2) - (9 * x2 - 7) ** 2))


def f2(x1, x2):
    """Peak with a pole just outside the unit square at (1.01, 1.01)."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    return 0.0025 / ((x1 - 1.01) ** 2 + (x2 - 1.01) ** 2)


def f3(x1, x2):
    """Pyramid with a kink at the centre and along the diagonals' level sets."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    return (64.0 - 81.0 * (np.abs(x1 - 0.5) + np.abs(x2 - 0.5))) / 9.0 - 0.5


def f4(x1, x2, x3):
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    x3 = np.asarray(x3, dtype=np.float64)
    r2 = (x1 - 0.5) ** 2 + (x2 - 0.5) ** 2 + (x3 - 0.5) ** 2
    return np.exp(-81.0 / 16.0 * r2) / 3.0


TEST_FUNCTIONS = {"f1": (f1, 2), "f2": (f2, 2), "f3": (f3, 2), "f4": (f4, 3)}


def evaluate_function(name: str, points) -> np.ndarray:
    try:
        fn, d = TEST_FUNCTIONS[name.lower()]
    except KeyError:
        raise ContractError(f"unknown test function {name!r}; choose from {sorted(TEST_FUNCTIONS)}") from None
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if P.shape[1] != d:
        raise ContractError(f"{name} takes {d}-D points, got {P.shape[1]}-D")
    return fn(*P.T)


# --- domains and samplers ---------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    bounds: tuple

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not b or any(not lo < hi for lo, hi in b):
            raise ContractError(f"invalid domain bounds {self.bounds}")
        object.__setattr__(self, "bounds", b)

    @classmethod
    def unit(cls, d: int) -> "Domain":
        return cls(((0.0, 1.0),) * d)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    def contains(self, points) -> np.ndarray:
        P = np.atleast_2d(points)
        return np.all((P >= self.lo) & (P <= self.hi), axis=1)


def sample_uniform(domain: Domain, n: int, rng: RngStream) -> np.ndarray:
    if n < 1:
        raise ContractError("n must be >= 1")
    u = rng.uniform(0.0, 1.0, size=(n, domain.dim))
    return domain.lo + u * (domain.hi - domain.lo)


def grid(domain: Domain, counts) -> np.ndarray:
    """Tensor-product lattice including the endpoints; first axis varies slowest."""
    if np.ndim(counts) == 0:
        counts = (int(counts),) * domain.dim
    if len(counts) != domain.dim or min(counts) < 2:
        raise ContractError("need one count >= 2 per dimension")
    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(domain.bounds, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


# --- datasets ---------------------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    """Per-dimension affine maps for inputs and targets."""

    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: float = 0.0
    out_scale: float = 1.0

    def inputs(self, X):
        return (np.asarray(X) - self.in_shift) / self.in_scale

    def inputs_inverse(self, Xn):
        return np.asarray(Xn) * self.in_scale + self.in_shift

    def targets(self, y):
        return (np.asarray(y) - self.out_shift) / self.out_scale

    def targets_inverse(self, yn):
        return np.asarray(yn) * self.out_scale + self.out_shift

    def to_dict(self) -> dict:
        return {"in_shift": self.in_shift.tolist(), "in_scale": self.in_scale.tolist(),
                "out_shift": self.out_shift, "out_scale": self.out_scale}


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    tag: str = "all"
    normalizer: Normalizer | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.ravel(np.asarray(self.targets, dtype=np.float64))
        if len(self.inputs) < 1:
            raise ContractError("a dataset needs at least one point")
        if len(self.inputs) != len(self.targets):
            raise ContractError("inputs and targets differ in length")

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def raw(self) -> "Dataset":
        """Undo the stored normalization."""
        if self.normalizer is None:
            return self
        nz = self.normalizer
        return Dataset(nz.inputs_inverse(self.inputs), nz.targets_inverse(self.targets), self.tag, None, self.meta)


NORMALIZATION_SCHEMES = ("input_unit_box", "target_zscore", "none")


def parse_scheme(scheme) -> set:
    if isinstance(scheme, str):
        parts = [p.strip() for p in scheme.replace(",", "+").split("+") if p.strip()]
    else:
        parts = list(scheme)
    for p in parts:
        if p not in NORMALIZATION_SCHEMES:
            raise ContractError(f"unknown normalization scheme {p!r}")
    return set(parts) - {"none"}


def fit_normalizer(dataset: Dataset, scheme="input_unit_box+target_zscore") -> Normalizer:
    parts = parse_scheme(scheme)
    X, y = dataset.inputs, dataset.targets
    in_shift = np.zeros(X.shape[1])
    in_scale = np.ones(X.shape[1])
    out_shift, out_scale = 0.0, 1.0
    if "input_unit_box" in parts:
        lo, hi = X.min(axis=0), X.max(axis=0)
        if np.any(hi - lo <= 0):
            raise ContractError(f"degenerate input dimension(s) {np.flatnonzero(hi - lo <= 0).tolist()}")
        in_shift, in_scale = lo, hi - lo
    if "target_zscore" in parts:
        sd = float(np.std(y))
        if not sd > 0:
            raise ContractError("targets are constant; cannot z-score")
        out_shift, out_scale = float(np.mean(y)), sd
    return Normalizer(in_shift, in_scale, out_shift, out_scale)


def apply_normalizer(dataset: Dataset, nz: Normalizer) -> Dataset:
    if dataset.normalizer is not None:
        raise ContractError("dataset is already normalized")
    return Dataset(nz.inputs(dataset.inputs), nz.targets(dataset.targets), dataset.tag, nz, dataset.meta)


def normalize(dataset: Dataset, scheme="input_unit_box+target_zscore"):
    """Fit maps on ``dataset`` and apply them; returns ``(normalized, normalizer)``."""
    nz = fit_normalizer(dataset, scheme)
    return apply_normalizer(dataset, nz), nz


def split(dataset: Dataset, n_train: int, rng: RngStream):
    """Random disjoint train/validation partition with ``n_train`` training points."""
    n = dataset.n
    if not 1 <= n_train < n:
        raise ContractError(f"n_train must be in [1, {n - 1}], got {n_train}")
    perm = rng.permutation(n)
    tr, va = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    mk = lambda idx, tag: Dataset(dataset.inputs[idx], dataset.targets[idx], tag, dataset.normalizer,
                                  dict(dataset.meta, indices=idx))
    return mk(tr, "train"), mk(va, "validation")


def function_datasets(name: str, n_train: int, rng: RngStream, n_val_per_dim: int = 100):
    """Uniform random training points on the unit box, validation on a full lattice."""
    _, d = TEST_FUNCTIONS[name.lower()]
    dom = Domain.unit(d)
    Xtr = sample_uniform(dom, n_train, rng)
    Xva = grid(dom, n_val_per_dim)
    meta = {"source": name.lower(), "grid_shape": [n_val_per_dim] * d}
    return (Dataset(Xtr, evaluate_function(name, Xtr), "train", meta={"source": name.lower()}),
            Dataset(Xva, evaluate_function(name, Xva), "validation", meta=meta))


# --- file formats -----------------------------------------------------------------

def _float(tok: str, path, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise DataFormatError(f"{path}:{lineno}: non-finite value {tok!r}")
    return v


def load_csv_dataset(path) -> Dataset:
    """CSV with header ``x1,x2[,x3],y``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}:1: empty file") from None
        d = len(header) - 1
        if d < 1 or header[-1] != "y" or header[:-1] != [f"x{i + 1}" for i in range(d)]:
            raise DataFormatError(f"{path}:1: expected header x1,...,xd,y, got {','.join(header)}")
        rows = []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 1:
                raise DataFormatError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            rows.append([_float(c.strip(), path, lineno) for c in row])
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    a = np.array(rows)
    return Dataset(a[:, :d], a[:, d], meta={"source": str(path)})


def load_elevation_grid(path) -> Dataset:
    ds = load_csv_dataset(path)
    if ds.dim != 2:
        raise DataFormatError(f"{path}: elevation data must have columns x1,x2,y")
    return ds


def write_csv_dataset(path, inputs, targets) -> None:
    X = np.atleast_2d(inputs)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(X.shape[1])] + ["y"])
        for row, y in zip(X, np.ravel(targets)):
            w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def grid_to_csv(matrix_path, out_path, spacing: float = 10.0) -> int:
    """Convert a plain elevation matrix (rows of numbers, whitespace or comma
    separated) to the ``x1,x2,y`` format.  Row ``i``, column ``j`` maps to
    ``(i * spacing, j * spacing)``.  Returns the number of points written.
    """
    rows = []
    for lineno, line in enumerate(Path(matrix_path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.replace(",", " ").split()
        rows.append([_float(t, matrix_path, lineno) for t in toks])
    if not rows:
        raise DataFormatError(f"{matrix_path}: no data")
    if len({len(r) for r in rows}) != 1:
        raise DataFormatError(f"{matrix_path}: ragged matrix")
    Z = np.array(rows)
    ii, jj = np.meshgrid(np.arange(Z.shape[0]), np.arange(Z.shape[1]), indexing="ij")
    X = np.stack([ii.ravel() * spacing, jj.ravel() * spacing], axis=1)
    write_csv_dataset(out_path, X, Z.ravel())
    return Z.size


def load_point_cloud(path, scale: float = 10.0) -> np.ndarray:
    """Read ``x y z`` points (whitespace or comma separated, ``#`` comments).

    ASCII PLY files are accepted too; only the vertex block is read.
    Coordinates are multiplied by ``scale``.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    start, limit = 0, None
    if lines and lines[0].strip() == "ply":
        for i, line in enumerate(lines):
            toks = line.split()
            if toks[:2] == ["element", "vertex"]:
                limit = int(toks[2])
            if line.strip() == "end_header":
                start = i + 1
                break
        else:
            raise DataFormatError(f"{path}: PLY header without end_header")
    pts = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if limit is not None and len(pts) == limit:
            break
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        toks = s.replace(",", " ").split()
        if len(toks) < 3 or (limit is None and len(toks) != 3):
            raise DataFormatError(f"{path}:{lineno}: expected 3 coordinates, got {len(toks)}")
        pts.append([_float(t, path, lineno) for t in toks[:3]])
    if not pts:
        raise DataFormatError(f"{path}: no points")
    return np.array(pts) * float(scale)


def point_cloud_dataset(path, scale: float = 10.0, function: str = "f4") -> Dataset:
    """Surface points with targets from a 3-D test function."""
    P = load_point_cloud(path, scale)
    return Dataset(P, evaluate_function(function, P), meta={"source": str(path), "scale": scale})
