"""Exact stationary solves and the r-weighted total variation distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DimensionMismatch, IterationLimit, ReducibleKernel
from .kernel import SparseDist, StateId, WeightFn
from .truncation import AugmentedKernel

# Above this size the elimination loop runs through the jitted backend.
_GTH_JIT_CUTOFF = 400


@dataclass
class StationaryResult:
    """Stationary distribution of a finite kernel plus solve diagnostics."""

    pi: SparseDist
    residual: float
    method: str
    level: int | None = None

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "pi": [[int(x), float(p)] for x, p in self.pi],
            "residual": float(self.residual),
            "method": self.method,
        }

    def vector(self, states) -> np.ndarray:
        return np.array([self.pi.mass(x) for x in states])


def _as_matrix(P) -> tuple[np.ndarray, np.ndarray, int | None]:
    if isinstance(P, AugmentedKernel):
        return np.array(P.matrix, dtype=float), np.asarray(P.states), P.level
    M = np.asarray(P, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    return M.copy(), np.arange(M.shape[0]), None


def _recurrent_class(M: np.ndarray) -> np.ndarray:
    """Indices of the unique recurrent class; ReducibleKernel if not unique."""
    support = csr_matrix(M > 0.0)
    ncomp, labels = connected_components(support, directed=True, connection="strong")
    # a class is recurrent iff no edge leaves it
    leaves = np.zeros(ncomp, dtype=bool)
    rows, cols = support.nonzero()
    mask = labels[rows] != labels[cols]
    leaves[np.unique(labels[rows[mask]])] = True
    recurrent = [c for c in range(ncomp) if not leaves[c]]
    if len(recurrent) != 1:
        raise ReducibleKernel(
            f"{len(recurrent)} recurrent classes detected; need exactly 1")
    return np.nonzero(labels == recurrent[0])[0]


def _gth_vectorized(A: np.ndarray) -> np.ndarray:
    """Grassmann/Taksar/Heyman state reduction, subtraction-free.

    The diagonal is never referenced: each elimination divides by the
    off-diagonal row sum, so no difference of like-signed quantities is
    formed and the result is accurate to machine precision.
    """
    n = A.shape[0]
    scale = np.ones(n)
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        scale[k] = s
        A[k, :k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    u = np.zeros(n)
    u[0] = 1.0
    for k in range(1, n):
        u[k] = (u[:k] @ A[:k, k]) / scale[k]
    return u / u.sum()


def solve_stationary_elimination(P, states=None) -> StationaryResult:
    """Stationary distribution by censoring (GTH) elimination.

    Accepts an :class:`AugmentedKernel` or a raw square row-stochastic
    matrix.  If the chain has transient states outside its unique
    recurrent class, they receive mass zero; more than one recurrent
    class raises :class:`ReducibleKernel`.
    """
    M, state_ids, level = _as_matrix(P)
    if states is not None:
        state_ids = np.asarray(states)
        if len(state_ids) != M.shape[0]:
            raise DimensionMismatch("state list length does not match matrix")
    n = M.shape[0]
    pi = np.zeros(n)
    if n == 1:
        pi[0] = 1.0
    else:
        rec = _recurrent_class(M)
        sub = M[np.ix_(rec, rec)]
        if len(rec) == 1:
            pi[rec[0]] = 1.0
        elif len(rec) >= _GTH_JIT_CUTOFF:
            from . import _kernels
            pi[rec] = _kernels.call("gth_solve", np.array(sub))
        else:
            pi[rec] = _gth_vectorized(np.array(sub))
    residual = float(np.abs(pi @ M - pi).sum())
    dist = SparseDist({int(state_ids[i]): float(pi[i])
                       for i in range(n) if pi[i] > 0.0})
    return StationaryResult(pi=dist, residual=residual, method="gth", level=level)


def power_iterate(P, tol: float = 1e-12, max_iters: int = 100_000,
                  states=None) -> StationaryResult:
    """Stationary distribution by repeated left-multiplication.

    A 1/2 lazy damping step (which leaves the stationary vector
    unchanged) is switched on only when a period-2 oscillation is
    detected: the iterate returns to its value from two steps ago while
    still moving step to step.
    """
    M, state_ids, level = _as_matrix(P)
    if states is not None:
        state_ids = np.asarray(states)
    n = M.shape[0]
    pi = np.full(n, 1.0 / n)
    damped = False
    prev = pi.copy()
    prev2 = pi.copy()
    residual = np.inf
    for it in range(1, max_iters + 1):
        nxt = pi @ M
        if damped:
            nxt = 0.5 * (nxt + pi)
        residual = float(np.abs(nxt - pi).sum())
        if residual <= tol:
            pi = nxt
            break
        if (not damped and it >= 2
                and float(np.abs(nxt - prev2).sum()) <= max(tol, 1e-14)
                and residual > tol):
            damped = True
        prev2 = prev
        prev = pi
        pi = nxt
    else:
        raise IterationLimit(
            f"power iteration did not reach tol {tol} in {max_iters} iterations",
            iterate=SparseDist({int(state_ids[i]): float(pi[i])
                                for i in range(n) if pi[i] > 0}),
            residual=residual)
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    dist = SparseDist({int(state_ids[i]): float(pi[i])
                       for i in range(n) if pi[i] > 0.0})
    return StationaryResult(pi=dist, residual=residual,
                            method="power", level=level)


def weighted_tv(mu1: SparseDist, mu2: SparseDist,
                r: WeightFn | None = None) -> float:
    """r-weighted total variation distance sum_x r(x) |mu1(x) - mu2(x)|.

    This realizes the supremum of integral f d(mu1 - mu2) over |f| <= r,
    attained at f = r * sign(mu1 - mu2).  With r == 1 it equals twice the
    classical (half-sum) total variation for probability measures.
    """
    total = 0.0
    support = set(mu1.support()) | set(mu2.support())
    for x in support:
        diff = mu1.mass(x) - mu2.mass(x)
        if diff != 0.0:
            w = 1.0 if r is None else float(r(x))
            total += w * abs(diff)
    return total
