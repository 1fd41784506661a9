"""Probability vectors on finite metric spaces.

Holds the finite-space types used everywhere else (``FiniteSpace``, ``Dist``,
``SimplexGrid``), exact 1-Wasserstein distances (network simplex) and
the discretization of the probability simplex into a regular grid.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import Sequence

import numpy as np

NORM_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


class DimensionError(ValueError):
    """Raised when two objects live on incompatible spaces."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """Labelled finite metric space.

    ``coords`` has shape (n, d); the default metric is the sum of absolute
    coordinate differences, which is also how product spaces are built.
    """

    labels: tuple
    coords: np.ndarray
    metric: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        if len(set(labels)) != len(labels):
            raise ValidationError("space labels must be unique")
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        metric = np.asarray(self.metric, dtype=float)
        n = len(labels)
        if coords.shape[0] != n or metric.shape != (n, n):
            raise DimensionError(f"coords/metric do not match {n} labels")
        if not np.allclose(metric, metric.T, rtol=0, atol=1e-12):
            raise ValidationError("metric is not symmetric")
        if np.any(np.diag(metric) != 0) or np.any(metric[~np.eye(n, dtype=bool)] <= 0):
            raise ValidationError("metric must vanish exactly on the diagonal only")
        # triangle inequality d(i,k) <= d(i,j) + d(j,k) on all triples
        if n > 2 and np.any(metric[:, None, :] > metric[:, :, None] + metric[None, :, :] + 1e-12):
            raise ValidationError("metric violates the triangle inequality")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "metric", _frozen(metric))

    @classmethod
    def from_coords(cls, labels: Sequence, coords=None, metric=None) -> "FiniteSpace":
        labels = tuple(labels)
        if coords is None:
            coords = np.asarray(labels, dtype=float)
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if metric is None:
            metric = np.abs(coords[:, None, :] - coords[None, :, :]).sum(axis=-1)
        return cls(labels, coords, metric)

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, FiniteSpace):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.metric, other.metric)

    def __hash__(self) -> int:
        return hash(self.labels)

    def index(self, label) -> int:
        return self.labels.index(label)

    @property
    def is_line(self) -> bool:
        """True when points sit on a line in label order with metric |x - y|."""
        if self.coords.shape[1] != 1:
            return False
        x = self.coords[:, 0]
        if len(x) > 1 and np.any(np.diff(x) <= 0):
            return False
        return np.allclose(self.metric, np.abs(x[:, None] - x[None, :]), rtol=0, atol=1e-12)

    @property
    def diameter(self) -> float:
        return float(self.metric.max())


def product_space(left: FiniteSpace, right: FiniteSpace) -> FiniteSpace:
    """Product space with row-major labels (l, r) and metric d_left + d_right."""
    labels = [(a, b) for a in left.labels for b in right.labels]
    nl, nr = len(left), len(right)
    coords = np.hstack([np.repeat(left.coords, nr, axis=0), np.tile(right.coords, (nl, 1))])
    metric = (left.metric[:, None, :, None] + right.metric[None, :, None, :]).reshape(nl * nr, nl * nr)
    return FiniteSpace(tuple(labels), coords, metric)


def check_weights(weights, n: int | None = None, tol: float = NORM_TOL) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise DimensionError("weights must be one-dimensional")
    if n is not None and w.shape[0] != n:
        raise DimensionError(f"expected {n} weights, got {w.shape[0]}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValidationError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > tol:
        raise ValidationError(f"weights sum to {w.sum()!r}, not 1")
    return w


def renorm(weights) -> np.ndarray:
    """Explicit renormalization; the only place weights are rescaled."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ValidationError("cannot renormalize a vector with zero mass")
    return w / total


@dataclass(frozen=True, eq=False)
class Dist:
    space: FiniteSpace
    weights: np.ndarray

    def __post_init__(self):
        w = check_weights(self.weights, len(self.space))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def dirac(cls, space: FiniteSpace, label) -> "Dist":
        w = np.zeros(len(space))
        w[space.index(label)] = 1.0
        return cls(space, w)

    @classmethod
    def uniform(cls, space: FiniteSpace) -> "Dist":
        return cls(space, np.full(len(space), 1.0 / len(space)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dist):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.weights, other.weights)

    def __hash__(self) -> int:
        return hash((self.space, self.weights.tobytes()))

    def __repr__(self) -> str:
        return f"Dist({np.array2string(self.weights, precision=4)})"


# ---------------------------------------------------------------------------
# exact optimal transport
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _emd2():
    """POT's network simplex; array backends other than numpy are not needed."""
    for name in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot
    return ot.emd2


def w1_weights(a, b, cost) -> float:
    """Exact optimal transport cost between two probability vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (a.shape[0], b.shape[0]):
        raise DimensionError("cost matrix does not match the marginals")
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    a, b = a[rows], b[cols]
    C = cost[np.ix_(rows, cols)]
    if len(a) == 1:
        return float(C[0] @ b)
    if len(b) == 1:
        return float(a @ C[:, 0])
    return max(float(_emd2()(a, b, C)), 0.0)


def w1_finite(mu: Dist, nu: Dist, metric=None) -> float:
    """1-Wasserstein distance between two laws on the same finite space."""
    if not (isinstance(mu, Dist) and isinstance(nu, Dist)):
        raise ValidationError("w1_finite expects Dist arguments")
    if mu.space != nu.space:
        raise DimensionError("distributions live on different spaces")
    cost = mu.space.metric if metric is None else np.asarray(metric, dtype=float)
    if cost.shape != (len(mu.space), len(mu.space)):
        raise DimensionError("metric does not match the space")
    return w1_weights(mu.weights, nu.weights, cost)


def w1_product(joint_a, joint_b) -> float:
    """W1 between two joint laws on S x A under the metric d_S + d_A."""
    if joint_a.space_s != joint_b.space_s or joint_a.space_a != joint_b.space_a:
        raise DimensionError("joint laws live on different product spaces")
    wa = np.asarray(joint_a.weights)
    wb = np.asarray(joint_b.weights)
    if wa.shape != wb.shape:
        raise DimensionError("joint weight shapes differ")
    cost = product_cost(joint_a.space_s, joint_a.space_a)
    return w1_weights(wa.ravel(), wb.ravel(), cost)


def product_cost(space_s: FiniteSpace, space_a: FiniteSpace) -> np.ndarray:
    ns, na = len(space_s), len(space_a)
    return (space_s.metric[:, None, :, None] + space_a.metric[None, :, None, :]).reshape(ns * na, ns * na)


def w1_line_batch(a: np.ndarray, b: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Vectorized W1 for spaces on a sorted line (CDF formula)."""
    gaps = np.diff(np.asarray(coords, dtype=float).ravel())
    fa = np.cumsum(a, axis=-1)[..., :-1]
    fb = np.cumsum(b, axis=-1)[..., :-1]
    return np.abs(fa - fb) @ gaps


def w1_matrix(points: np.ndarray, space: FiniteSpace) -> np.ndarray:
    """Pairwise W1 distances between the rows of ``points``."""
    points = np.asarray(points, dtype=float)
    g = len(points)
    if space.is_line:
        x = space.coords[:, 0]
        return np.stack([w1_line_batch(points[i], points, x) for i in range(g)])
    out = np.zeros((g, g))
    for i in range(g):
        for j in range(i + 1, g):
            out[i, j] = out[j, i] = w1_weights(points[i], points[j], space.metric)
    return out


# ---------------------------------------------------------------------------
# simplex grid
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _compositions(k: int, n: int) -> np.ndarray:
    if n == 1:
        return np.array([[k]], dtype=np.int64)
    blocks = []
    for c0 in range(k + 1):
        sub = _compositions(k - c0, n - 1)
        blocks.append(np.column_stack([np.full(len(sub), c0, dtype=np.int64), sub]))
    return np.vstack(blocks)


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """All laws on ``space`` whose weights are multiples of 1/k, in lexicographic order of counts."""

    space: FiniteSpace
    resolution: int
    counts: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def k(self) -> int:
        return self.resolution

    def rank(self, counts) -> np.ndarray:
        """Canonical index of integer compositions (vectorized over leading axes)."""
        c = np.asarray(counts, dtype=np.int64)
        n = c.shape[-1]
        table = _binom_table(self.resolution + n)
        remaining = np.full(c.shape[:-1], self.resolution, dtype=np.int64)
        idx = np.zeros(c.shape[:-1], dtype=np.int64)
        for i in range(n - 1):
            p = n - 1 - i
            idx += table[remaining + p, p] - table[remaining - c[..., i] + p, p]
            remaining = remaining - c[..., i]
        return idx

    def dist(self, index: int) -> Dist:
        return Dist(self.space, self.points[index])


@lru_cache(maxsize=None)
def _binom_table(size: int) -> np.ndarray:
    t = np.zeros((size + 1, size + 1), dtype=np.int64)
    for a in range(size + 1):
        for b in range(a + 1):
            t[a, b] = comb(a, b)
    return t


def build_simplex_grid(space: FiniteSpace, k: int) -> SimplexGrid:
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValidationError("grid resolution k must be a positive integer")
    counts = _compositions(int(k), len(space)).copy()
    counts.setflags(write=False)
    points = counts / float(k)
    points.setflags(write=False)
    return SimplexGrid(space, int(k), counts, points)


def grid_size(n: int, k: int) -> int:
    return comb(k + n - 1, n - 1)


def project_weights(weights, grid: SimplexGrid, norm: str = "W1") -> np.ndarray:
    """Nearest grid indices for a batch of weight vectors (shape (..., n)).

    Ties go to the lowest canonical index.
    """
    if len(grid) == 0:
        raise ValidationError("empty grid")
    w = np.asarray(weights, dtype=float)
    lead = w.shape[:-1]
    w2 = w.reshape(-1, w.shape[-1])
    norm = norm.upper()
    if norm == "W1" and grid.space.is_line:
        out = _project_line(w2, grid)
    elif norm == "L1":
        out = _project_scan(w2, grid, lambda block: np.abs(block[:, None, :] - grid.points[None, :, :]).sum(-1))
    elif norm == "W1":
        metric = grid.space.metric
        out = _project_scan(
            w2, grid,
            lambda block: np.array([[w1_weights(x, p, metric) for p in grid.points] for x in block]),
        )
    else:
        raise ValidationError(f"unknown norm {norm!r}")
    return out.reshape(lead)


def _project_line(w: np.ndarray, grid: SimplexGrid) -> np.ndarray:
    # W1 on a line is a positively weighted L1 distance between CDFs; rounding
    # each partial sum to the nearest multiple of 1/k is optimal and monotone.
    k = grid.resolution
    scaled = np.cumsum(w, axis=1)[:, :-1] * k
    scaled = np.clip(scaled, 0.0, k)
    low = np.floor(scaled)
    frac = scaled - low
    up = frac > 0.5 + 1e-11  # exact halves round down: lowest canonical index
    cdf = (low + up).astype(np.int64)
    cdf = np.maximum.accumulate(cdf, axis=1)
    full = np.column_stack([np.zeros(len(w), dtype=np.int64), cdf, np.full(len(w), k, dtype=np.int64)])
    counts = np.diff(full, axis=1)
    return grid.rank(counts)


def _project_scan(w: np.ndarray, grid: SimplexGrid, distances, block: int = 256) -> np.ndarray:
    out = np.empty(len(w), dtype=np.int64)
    for start in range(0, len(w), block):
        d = distances(w[start:start + block])
        best = d.min(axis=1, keepdims=True)
        out[start:start + block] = np.argmax(d <= best + 1e-12, axis=1)
    return out


def project_to_grid(mu, grid: SimplexGrid, norm: str = "W1") -> int:
    weights = mu.weights if isinstance(mu, Dist) else np.asarray(mu, dtype=float)
    if isinstance(mu, Dist) and mu.space != grid.space:
        raise DimensionError("distribution and grid live on different spaces")
    return int(project_weights(weights[None, :], grid, norm)[0])
