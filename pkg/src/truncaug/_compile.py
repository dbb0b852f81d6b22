"""Packing of kernels, certificates, and truncation data into the dense
padded-row arrays consumed by the simulation kernels.

A *window* is a finite breadth-first enumeration of states large enough
to contain everything a simulation is expected to touch; transitions to
un-enumerated states become explicit escape entries (column -1).  Batch
runners grow the window and re-run on escape, which is deterministic
because random streams are keyed by (seed, global trial index).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .drift import SmallSetCert, m_step_confined_kernel
from .errors import (InvalidCert, NegativeResidual, NumericalError,
                     ReentryOutsideA1)
from .kernel import KernelSpec, SparseDist, StateId, kernel_row
from .truncation import TruncationScheme

RESIDUAL_TOL = 1e-12
WINDOW_CAP = 1 << 20


@dataclass
class Window:
    kernel: KernelSpec
    states: np.ndarray            # sorted global ids
    pos: dict                     # global -> local
    pcols: np.ndarray             # padded successor local ids (-1 = escape)
    pcum: np.ndarray              # normalized cumulative row masses
    pnnz: np.ndarray

    @property
    def size(self) -> int:
        return len(self.states)

    def local(self, x: StateId) -> int:
        return self.pos[int(x)]

    def mask(self, members: Iterable[StateId]) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.uint8)
        for x in members:
            i = self.pos.get(int(x))
            if i is not None:
                out[i] = 1
        return out


def bfs_states(k: KernelSpec, seeds: Iterable[StateId], target: int) -> list[int]:
    """Collect up to ``target`` states breadth-first from the seeds."""
    seen: dict[int, None] = {}
    queue: deque[int] = deque()
    for s in seeds:
        s = int(s)
        if s not in seen:
            seen[s] = None
            queue.append(s)
    while queue and len(seen) < target:
        x = queue.popleft()
        for y, _ in kernel_row(k, x):
            if y not in seen:
                seen[y] = None
                queue.append(y)
                if len(seen) >= target:
                    break
    return sorted(seen)


def _pack_rows(rows: list[list[tuple[int, float]]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad per-row (col, prob) entry lists and normalize cumulative sums.

    Empty rows get a never-sampled placeholder so kernels can index them
    unconditionally.
    """
    n = len(rows)
    width = max(1, max((len(r) for r in rows), default=1))
    cols = np.full((n, width), -1, dtype=np.int64)
    cum = np.full((n, width), 1.0)
    nnz = np.ones(n, dtype=np.int64)
    for i, entries in enumerate(rows):
        if not entries:
            continue
        total = sum(p for _, p in entries)
        if total <= 0.0:
            continue
        acc = 0.0
        nnz[i] = len(entries)
        for j, (c, p) in enumerate(entries):
            acc += p
            cols[i, j] = c
            cum[i, j] = acc / total
        cum[i, len(entries) - 1] = 1.0
    return cols, cum, nnz


def build_window(k: KernelSpec, seeds: Iterable[StateId], target: int) -> Window:
    states = np.asarray(bfs_states(k, seeds, target), dtype=np.int64)
    pos = {int(s): i for i, s in enumerate(states)}
    rows = []
    for x in states:
        interior: list[tuple[int, float]] = []
        escape = 0.0
        for y, p in kernel_row(k, int(x)):
            j = pos.get(y)
            if j is None:
                escape += p
            else:
                interior.append((j, p))
        if escape > 0.0:
            interior.append((-1, escape))
        rows.append(interior)
    pcols, pcum, pnnz = _pack_rows(rows)
    return Window(kernel=k, states=states, pos=pos,
                  pcols=pcols, pcum=pcum, pnnz=pnnz)


def pack_dist(dist: SparseDist, window: Window, what: str = "distribution"):
    cols, weights = [], []
    for x, p in dist:
        i = window.pos.get(int(x))
        if i is None:
            raise NumericalError(f"{what} state {x} outside simulation window")
        cols.append(i)
        weights.append(p)
    total = sum(weights)
    cum = np.cumsum(np.asarray(weights) / total)
    cum[-1] = 1.0
    return np.asarray(cols, dtype=np.int64), cum


def residual_row(row: SparseDist, lam: float, phi: SparseDist) -> list[tuple[int, float]]:
    """Entries of P(x,.) - lam*phi(.), validated nonnegative."""
    support = set(row.support()) | set(phi.support())
    out = []
    for y in sorted(support):
        v = row.mass(y) - lam * phi.mass(y)
        if v < -RESIDUAL_TOL:
            raise NegativeResidual(
                f"residual mass {v} at state {y}: lambda too large for phi")
        if v > 0.0:
            out.append((y, v))
    return out


@dataclass
class SplitData:
    c_idx: np.ndarray
    lam: float
    hcols: np.ndarray
    hcum: np.ndarray
    hnnz: np.ndarray
    phi_cols: np.ndarray
    phi_cum: np.ndarray
    c_states: list


def pack_split(k: KernelSpec, cert: SmallSetCert, window: Window) -> SplitData:
    """Residual rows H(x,.) = (P(x,.) - lam*phi)/(1 - lam) for x in C."""
    if cert.m != 1:
        raise InvalidCert("one-step split requires a cert with m = 1")
    c_states = sorted(cert.C)
    c_idx = np.full(window.size, -1, dtype=np.int64)
    hrows = []
    for r, x in enumerate(c_states):
        i = window.pos.get(int(x))
        if i is None:
            raise NumericalError(f"small-set state {x} outside window")
        c_idx[i] = r
        entries = residual_row(kernel_row(k, int(x)), cert.lam, cert.phi)
        packed = []
        for y, v in entries:
            j = window.pos.get(y, -1)
            packed.append((j, v))
        hrows.append(packed)
    hcols, hcum, hnnz = _pack_rows(hrows)
    phi_cols, phi_cum = pack_dist(cert.phi, window, "phi")
    return SplitData(c_idx=c_idx, lam=cert.lam, hcols=hcols, hcum=hcum,
                     hnnz=hnnz, phi_cols=phi_cols, phi_cum=phi_cum,
                     c_states=c_states)


@dataclass
class TruncatedData:
    in_set: np.ndarray
    exitm: np.ndarray
    tcols: np.ndarray
    tcum: np.ndarray
    tnnz: np.ndarray
    thcols: np.ndarray
    thcum: np.ndarray
    thnnz: np.ndarray
    nu_cols: np.ndarray
    nu_cum: np.ndarray


def pack_truncated(k: KernelSpec, cert: SmallSetCert, scheme: TruncationScheme,
                   n: int, window: Window, split: SplitData) -> TruncatedData:
    """Interior-conditioned rows and exit masses for the level-n dynamics."""
    scheme.validate_reentry()
    members = scheme.members(n)
    if not scheme.covers(n, cert.phi.support()):
        raise NumericalError(f"phi support must lie inside A_{n}")
    missing = [x for x in members if int(x) not in window.pos]
    if missing:
        raise NumericalError(f"window does not cover A_{n} (missing {missing[:3]}...)")
    in_set = window.mask(members)
    exitm = np.zeros(window.size)
    trows: list[list[tuple[int, float]]] = [[] for _ in range(window.size)]
    for x in members:
        i = window.pos[int(x)]
        interior = []
        inside = 0.0
        for y, p in kernel_row(k, int(x)):
            j = window.pos.get(y, -1)
            if j >= 0 and in_set[j] == 1:
                interior.append((j, p))
                inside += p
        exitm[i] = min(1.0, max(0.0, 1.0 - inside))
        trows[i] = interior
    tcols, tcum, tnnz = _pack_rows(trows)

    throws = []
    for x in split.c_states:
        if not scheme.contains(n, x):
            raise NumericalError(f"small-set state {x} outside A_{n}")
        entries = residual_row(kernel_row(k, int(x)), cert.lam, cert.phi)
        packed = []
        for y, v in entries:
            j = window.pos.get(y, -1)
            if j >= 0 and in_set[j] == 1:
                packed.append((j, v))
        throws.append(packed)
    thcols, thcum, thnnz = _pack_rows(throws)
    nu_cols, nu_cum = pack_dist(scheme.reentry, window, "re-entry")
    return TruncatedData(in_set=in_set, exitm=exitm, tcols=tcols, tcum=tcum,
                         tnnz=tnnz, thcols=thcols, thcum=thcum, thnnz=thnnz,
                         nu_cols=nu_cols, nu_cum=nu_cum)


def pack_functionals(functionals: Mapping[str, Callable[[StateId], float]],
                     window: Window) -> tuple[list[str], np.ndarray]:
    names = list(functionals)
    fvals = np.zeros((len(names), window.size))
    for q, name in enumerate(names):
        f = functionals[name]
        for i, x in enumerate(window.states):
            fvals[q, i] = float(f(int(x)))
    return names, fvals


def pack_mstep(k: KernelSpec, cert: SmallSetCert, A1: Iterable[StateId],
               window: Window) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Confinement mask, C row index, K_m rows, and phi pmf over the window.

    Raises :class:`InvalidCert` unless K_m(x, y) >= lam*phi(y) everywhere,
    which is what makes the thinning probabilities valid.
    """
    a1_states = sorted(int(s) for s in A1)
    in_a1 = window.mask(a1_states)
    confined = m_step_confined_kernel(k, a1_states, cert.m)
    c_states = sorted(cert.C)
    cm_idx = np.full(window.size, -1, dtype=np.int64)
    km = np.zeros((len(c_states), window.size))
    for r, x in enumerate(c_states):
        i = window.pos.get(int(x))
        if i is None:
            raise NumericalError(f"small-set state {x} outside window")
        cm_idx[i] = r
        row = confined.row(int(x))
        for y, p in row:
            j = window.pos.get(y)
            if j is not None:
                km[r, j] = p
        for y, q in cert.phi:
            if cert.lam * q > row.mass(y) + RESIDUAL_TOL:
                raise InvalidCert(
                    f"lam*phi({y}) = {cert.lam * q} exceeds K_m({x},{y}) = {row.mass(y)}")
    phi_pmf = np.zeros(window.size)
    for y, q in cert.phi:
        phi_pmf[window.pos[int(y)]] = q
    return in_a1, cm_idx, km, phi_pmf
