"""Categorical graph states shared by every stage of the pipeline.

A graph is a node matrix ``X`` (n x a) and a symmetric edge tensor ``E``
(n x n x b).  In ``discrete`` mode every row and fiber is one-hot; in
``soft`` mode they are arbitrary points on the probability simplex.  Edge
category 0 is reserved for "no bond" and the diagonal fibers are pinned to
it, so self-bonds can never appear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

ROW_SUM_TOL = 1e-9
SAMPLE_SUM_TOL = 1e-6


class GraphStateError(ValueError):
    """A graph state violates its normalization/symmetry invariants."""


@lru_cache(maxsize=None)
def upper_triangle_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays for the strict upper triangle, in (i<j) row-major order."""
    iu, ju = np.triu_indices(n, k=1)
    iu.setflags(write=False)
    ju.setflags(write=False)
    return iu, ju


@lru_cache(maxsize=None)
def _flat_arange(n: int) -> np.ndarray:
    idx = np.arange(n)
    idx.setflags(write=False)
    return idx


@dataclass
class GraphState:
    """Node matrix and symmetric edge tensor with a discrete/soft mode flag."""

    X: np.ndarray          # (n, a)
    E: np.ndarray          # (n, n, b)
    mode: str = "discrete"  # "discrete" | "soft"
    n: int = field(init=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.E = np.asarray(self.E, dtype=np.float64)
        if self.X.ndim != 2 or self.E.ndim != 3:
            raise GraphStateError("X must be 2-D and E must be 3-D")
        if self.E.shape[0] != self.E.shape[1] or self.E.shape[0] != self.X.shape[0]:
            raise GraphStateError(f"shape mismatch: X {self.X.shape}, E {self.E.shape}")
        if self.mode not in ("discrete", "soft"):
            raise GraphStateError(f"unknown mode {self.mode!r}")
        self.n = self.X.shape[0]

    @property
    def a(self) -> int:
        return self.X.shape[1]

    @property
    def b(self) -> int:
        return self.E.shape[2]

    @classmethod
    def from_indices(cls, node_idx, edge_idx, a: int, b: int) -> "GraphState":
        """Build a discrete state from integer category assignments.

        ``edge_idx`` is an (n, n) symmetric integer matrix whose diagonal is
        ignored (forced to the no-bond category).
        """
        node_idx = np.asarray(node_idx, dtype=np.intp)
        edge_idx = np.asarray(edge_idx, dtype=np.intp)
        n = node_idx.shape[0]
        if edge_idx.shape != (n, n):
            raise GraphStateError(f"edge_idx must be ({n}, {n}), got {edge_idx.shape}")
        if not np.array_equal(edge_idx, edge_idx.T):
            raise GraphStateError("edge_idx must be symmetric")
        if node_idx.size and (node_idx.min() < 0 or node_idx.max() >= a):
            raise GraphStateError("node category out of range")
        if edge_idx.size and (edge_idx.min() < 0 or edge_idx.max() >= b):
            raise GraphStateError("edge category out of range")
        X = np.zeros((n, a))
        X[_flat_arange(n), node_idx] = 1.0
        E = np.zeros((n, n, b))
        E.reshape(n * n, b)[_flat_arange(n * n), edge_idx.ravel()] = 1.0
        _pin_diagonal(E)
        return cls(X=X, E=E, mode="discrete")

    def node_categories(self) -> np.ndarray:
        """Per-node argmax category indices (intended for discrete states)."""
        return np.argmax(self.X, axis=1)

    def edge_categories(self) -> np.ndarray:
        """(n, n) argmax category matrix (intended for discrete states)."""
        return np.argmax(self.E, axis=2)

    def copy(self) -> "GraphState":
        return GraphState(X=self.X.copy(), E=self.E.copy(), mode=self.mode)

    def validate(self, tol: float = ROW_SUM_TOL):
        """Raise GraphStateError on any normalization/symmetry violation."""
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.E)):
            raise GraphStateError("non-finite entries")
        if np.any(self.X < 0) or np.any(self.E < 0):
            raise GraphStateError("negative entries")
        row_sums = self.X.sum(axis=1)
        if self.n and np.max(np.abs(row_sums - 1.0)) > tol:
            raise GraphStateError(f"node row sums deviate from 1 by {np.max(np.abs(row_sums - 1.0)):g}")
        fiber_sums = self.E.sum(axis=2)
        if self.n and np.max(np.abs(fiber_sums - 1.0)) > tol:
            raise GraphStateError("edge fiber sums deviate from 1")
        if not np.allclose(self.E, np.transpose(self.E, (1, 0, 2)), atol=0, rtol=0):
            raise GraphStateError("edge tensor not symmetric")
        diag = self.E[np.arange(self.n), np.arange(self.n)]
        expected = np.zeros_like(diag)
        expected[:, 0] = 1.0
        if not np.array_equal(diag, expected):
            raise GraphStateError("diagonal fibers must be one-hot no-bond")
        if self.mode == "discrete":
            if not _rows_one_hot(self.X) or not _rows_one_hot(self.E.reshape(-1, self.b)):
                raise GraphStateError("discrete state has non one-hot rows")

    def equals(self, other: "GraphState") -> bool:
        return (
            self.mode == other.mode
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.E, other.E)
        )


def _rows_one_hot(rows: np.ndarray) -> bool:
    return bool(np.all(np.isin(rows, (0.0, 1.0))) and np.all(rows.sum(axis=1) == 1.0))


def _pin_diagonal(E: np.ndarray):
    n = E.shape[0]
    E[np.arange(n), np.arange(n), :] = 0.0
    E[np.arange(n), np.arange(n), 0] = 1.0


def categorical_rows(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row: smallest k with u < sum(rows[:k+1]).

    ``u`` holds one uniform per row.  Rows must be non-negative with sums
    within SAMPLE_SUM_TOL of 1.
    """
    rows = np.asarray(rows, dtype=np.float64)
    sums = rows.sum(axis=1)
    if rows.shape[0] and np.max(np.abs(sums - 1.0)) > SAMPLE_SUM_TOL:
        raise GraphStateError(f"cannot sample: row sum off by {np.max(np.abs(sums - 1.0)):g}")
    cum = np.cumsum(rows, axis=1)
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, rows.shape[1] - 1)


def sample_discrete(g: GraphState, rng: np.random.Generator) -> GraphState:
    """Sample a discrete graph from a soft one.

    Consumes uniforms in a fixed order: one per node row (i = 0..n-1), then
    one per upper-triangle edge fiber in (i<j) row-major order.  The lower
    triangle is mirrored and the diagonal forced to no-bond.
    """
    if g.mode != "soft":
        raise GraphStateError("sample_discrete expects a soft state")
    n, a, b = g.n, g.a, g.b
    node_idx = categorical_rows(g.X, rng.random(n))
    iu, ju = upper_triangle_indices(n)
    edge_idx = np.zeros((n, n), dtype=np.intp)
    if iu.size:
        fibers = g.E[iu, ju, :]
        drawn = categorical_rows(fibers, rng.random(iu.size))
        edge_idx[iu, ju] = drawn
        edge_idx[ju, iu] = drawn
    return GraphState.from_indices(node_idx, edge_idx, a, b)


def argmax_discrete(g: GraphState) -> GraphState:
    """Deterministic decoding: max-probability category, ties to lowest index."""
    if g.mode != "soft":
        raise GraphStateError("argmax_discrete expects a soft state")
    node_idx = np.argmax(g.X, axis=1)
    iu, ju = upper_triangle_indices(g.n)
    edge_idx = np.zeros((g.n, g.n), dtype=np.intp)
    if iu.size:
        drawn = np.argmax(g.E[iu, ju, :], axis=1)
        edge_idx[iu, ju] = drawn
        edge_idx[ju, iu] = drawn
    return GraphState.from_indices(node_idx, edge_idx, g.a, g.b)


def project_rows(raw: np.ndarray, fallback: np.ndarray | None = None) -> np.ndarray:
    """Clamp negatives to zero and renormalize each row to sum 1.

    Rows whose clamped mass is zero are replaced by the matching ``fallback``
    row, or by the uniform distribution when no fallback is given.
    """
    clamped = np.maximum(np.asarray(raw, dtype=np.float64), 0.0)
    sums = clamped.sum(axis=1)
    dead = sums <= 0.0
    sums[dead] = 1.0  # avoid divide-by-zero; dead rows are overwritten below
    out = clamped / sums[:, None]
    if np.any(dead):
        if fallback is not None:
            out[dead] = fallback[dead]
        else:
            out[dead] = 1.0 / raw.shape[1]
    return out


def project_simplex(g: GraphState, fallback: GraphState | None = None) -> GraphState:
    """Project node rows and edge fibers onto the simplex (clamp + renormalize)."""
    fx = fallback.X if fallback is not None else None
    X = project_rows(g.X, fx)
    iu, ju = upper_triangle_indices(g.n)
    E = np.zeros_like(g.E)
    _pin_diagonal(E)
    if iu.size:
        fe = fallback.E[iu, ju, :] if fallback is not None else None
        fibers = project_rows(g.E[iu, ju, :], fe)
        E[iu, ju, :] = fibers
        E[ju, iu, :] = fibers
    return GraphState(X=X, E=E, mode="soft")
