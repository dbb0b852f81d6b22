"""Truncation schemes A_n and augmented kernels P_n.

An augmentation completes the sub-stochastic restriction of P to a finite
set A_n by redirecting each row's exit mass to a fixed re-entry
distribution supported in A_1:  P_n(x,y) = P(x,y) + P(x, A_n^c) nu(y).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (KernelValidationError, NonFiniteLevelSet,
                     ReentryOutsideA1, StateOutsideTruncation)
from .kernel import (KernelSpec, LyapunovFn, SparseDist, StateId,
                     enumerate_states, kernel_row)

EXIT_TOL = 1e-12


@dataclass
class TruncationScheme:
    """Increasing family of finite truncation sets plus a re-entry law.

    ``set_fn(n)`` returns the members of A_n; results are cached and the
    nesting A_n <= A_{n+1} is spot-checked on access.  The re-entry
    distribution nu is shared by all levels.
    """

    set_fn: Callable[[int], Iterable[StateId]]
    reentry: SparseDist
    name: str = "scheme"
    _cache: dict = field(default_factory=dict, repr=False)

    def members(self, n: int) -> tuple[StateId, ...]:
        if n < 1:
            raise StateOutsideTruncation(f"truncation level {n} < 1")
        got = self._cache.get(n)
        if got is None:
            got = tuple(sorted(int(s) for s in self.set_fn(n)))
            if not got:
                raise StateOutsideTruncation(f"A_{n} is empty")
            prev = self._cache.get(n - 1)
            if prev is not None and not set(prev) <= set(got):
                raise KernelValidationError(f"A_{n-1} not a subset of A_{n}")
            self._cache[n] = got
        return got

    def contains(self, n: int, x: StateId) -> bool:
        return int(x) in self._member_set(n)

    def _member_set(self, n: int) -> frozenset:
        key = ("set", n)
        got = self._cache.get(key)
        if got is None:
            got = frozenset(self.members(n))
            self._cache[key] = got
        return got

    def covers(self, n: int, states: Iterable[StateId]) -> bool:
        return set(int(s) for s in states) <= self._member_set(n)

    def validate_reentry(self) -> None:
        if not self.covers(1, self.reentry.support()):
            raise ReentryOutsideA1(
                f"re-entry support {self.reentry.support()} not inside A_1")
        if abs(self.reentry.total() - 1.0) > 1e-12:
            raise ReentryOutsideA1("re-entry distribution must have mass 1")


def prefix_scheme(reentry: SparseDist, sizes: Sequence[int] | None = None,
                  name: str = "prefix") -> TruncationScheme:
    """A_n = {0, ..., size_n - 1}; by default size_n = n, widened at the
    low levels so that A_1 always covers the re-entry support."""
    if sizes is not None:
        sizes = [int(s) for s in sizes]
        if any(b < a for a, b in zip(sizes, sizes[1:])) or min(sizes) < 1:
            raise KernelValidationError("prefix sizes must be positive and nondecreasing")
    floor = 1 + max(reentry.support(), default=0)

    def set_fn(n: int):
        size = max(n, floor) if sizes is None else sizes[n - 1]
        return range(size)

    scheme = TruncationScheme(set_fn=set_fn, reentry=reentry, name=name)
    scheme.validate_reentry()
    return scheme


def explicit_scheme(sets: Sequence[Iterable[StateId]], reentry: SparseDist,
                    name: str = "explicit") -> TruncationScheme:
    listed = [tuple(sorted(int(s) for s in block)) for block in sets]

    def set_fn(n: int):
        if n > len(listed):
            raise StateOutsideTruncation(f"scheme defines only {len(listed)} levels")
        return listed[n - 1]

    scheme = TruncationScheme(set_fn=set_fn, reentry=reentry, name=name)
    scheme.validate_reentry()
    return scheme


def level_sets_from_g(g: LyapunovFn, thresholds: Sequence[float], seed: StateId,
                      kernel: KernelSpec, reentry: SparseDist | None = None,
                      cap: int = 200_000) -> TruncationScheme:
    """Truncation sets A_n = {x : g(x) <= t_n} by breadth-first enumeration.

    Exploration starts at ``seed`` and never expands states above the top
    threshold, so infinite complements are never visited.
    """
    thresholds = [float(t) for t in thresholds]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise KernelValidationError("thresholds must be strictly increasing")
    top = thresholds[-1]
    try:
        reachable = enumerate_states(kernel, [seed], cap,
                                     expand=lambda x: g(x) <= top)
    except KernelValidationError as err:
        raise NonFiniteLevelSet(str(err)) from err
    levels = [tuple(x for x in reachable if g(x) <= t) for t in thresholds]
    if not levels[0]:
        raise NonFiniteLevelSet("lowest threshold excludes every reachable state")
    if reentry is None:
        reentry = SparseDist.point(levels[0][0])
    return explicit_scheme(levels, reentry, name="levelset")


@dataclass
class AugmentedKernel:
    """Finite row-stochastic kernel P_n on A_n (dense)."""

    states: np.ndarray          # sorted global state ids of A_n
    matrix: np.ndarray          # row-stochastic, indexed by local position
    level: int
    exit_mass: np.ndarray       # P(x, A_n^c) per local state
    reentry: SparseDist
    base: KernelSpec | None = None

    def __post_init__(self):
        if self.matrix.shape != (len(self.states), len(self.states)):
            raise KernelValidationError("augmented kernel shape mismatch")

    def local(self, x: StateId) -> int:
        idx = int(np.searchsorted(self.states, x))
        if idx >= len(self.states) or self.states[idx] != x:
            raise StateOutsideTruncation(f"state {x} not in A_{self.level}")
        return idx

    def row(self, x: StateId) -> SparseDist:
        i = self.local(x)
        r = self.matrix[i]
        return SparseDist({int(self.states[j]): float(r[j])
                           for j in np.nonzero(r)[0]})

    def prob(self, x: StateId, y: StateId) -> float:
        return float(self.matrix[self.local(x), self.local(y)])


def exit_mass(k: KernelSpec, scheme: TruncationScheme, n: int, x: StateId) -> float:
    """P(x, A_n^c), computed as 1 minus the interior row mass.

    Negative float residue below 1e-12 is clamped to zero; anything more
    negative indicates a super-stochastic row and is an error.
    """
    k.require_countable("exit_mass")
    if not scheme.contains(n, x):
        raise StateOutsideTruncation(f"state {x} not in A_{n}")
    inside = scheme._member_set(n)
    interior = sum(p for y, p in kernel_row(k, x) if y in inside)
    em = 1.0 - interior
    if em < -EXIT_TOL:
        raise KernelValidationError(
            f"interior mass {interior} of row {x} exceeds 1")
    return min(1.0, max(0.0, em))


def augment(k: KernelSpec, scheme: TruncationScheme, n: int,
            validate: bool = True) -> AugmentedKernel:
    """Build P_n(x,y) = P(x,y) + P(x, A_n^c) nu(y) on A_n."""
    k.require_countable("augment")
    scheme.validate_reentry()
    states = np.asarray(scheme.members(n), dtype=np.int64)
    pos = {int(s): i for i, s in enumerate(states)}
    m = len(states)
    mat = np.zeros((m, m))
    exits = np.zeros(m)
    nu = scheme.reentry
    for i, x in enumerate(states):
        row = kernel_row(k, int(x))
        interior = 0.0
        for y, p in row:
            j = pos.get(y)
            if j is not None:
                mat[i, j] += p
                interior += p
        em = 1.0 - interior
        if em < -EXIT_TOL:
            raise KernelValidationError(f"interior mass of row {x} exceeds 1")
        em = min(1.0, max(0.0, em))
        exits[i] = em
        if em > 0.0:
            for y, q in nu:
                mat[i, pos[y]] += em * q
    aug = AugmentedKernel(states=states, matrix=mat, level=n,
                          exit_mass=exits, reentry=nu, base=k)
    if validate:
        sums = mat.sum(axis=1)
        bad = np.argmax(np.abs(sums - 1.0))
        if abs(sums[bad] - 1.0) > 1e-12:
            raise KernelValidationError(
                f"augmented row {states[bad]} sums to {sums[bad]!r}")
    return aug


def fixed_state_augment(k: KernelSpec, scheme: TruncationScheme, n: int,
                        z: StateId) -> AugmentedKernel:
    """Augmentation returning all exit mass to the single state z."""
    if not scheme.contains(1, z):
        raise ReentryOutsideA1(f"fixed state {z} not in A_1")
    pinned = TruncationScheme(set_fn=scheme.set_fn, reentry=SparseDist.point(z),
                              name=f"{scheme.name}|delta_{z}")
    pinned._cache = scheme._cache  # share level listings
    return augment(k, pinned, n)


def self_loop_completion(k: KernelSpec, scheme: TruncationScheme, n: int) -> AugmentedKernel:
    """Completion adding each row's exit mass to its own diagonal.

    This is still an augmentation (P_n >= P on A_n) but not of the fixed
    re-entry form; used by the bad-augmentation demonstration.
    """
    k.require_countable("self_loop_completion")
    states = np.asarray(scheme.members(n), dtype=np.int64)
    pos = {int(s): i for i, s in enumerate(states)}
    m = len(states)
    mat = np.zeros((m, m))
    exits = np.zeros(m)
    for i, x in enumerate(states):
        interior = 0.0
        for y, p in kernel_row(k, int(x)):
            j = pos.get(y)
            if j is not None:
                mat[i, j] += p
                interior += p
        em = min(1.0, max(0.0, 1.0 - interior))
        exits[i] = em
        mat[i, i] += em
    return AugmentedKernel(states=states, matrix=mat, level=n,
                           exit_mass=exits, reentry=SparseDist({}), base=k)


def scheme_from_config(cfg: dict, kernel: KernelSpec | None = None,
                       g: LyapunovFn | None = None,
                       seed_state: StateId = 0) -> TruncationScheme:
    """Build a scheme from the JSON layout
    ``{"truncation": {"type": ..., ...}, "reentry": {"type": ..., ...}}``.
    """
    from .errors import ConfigError

    tr = cfg.get("truncation", {"type": "prefix"})
    re_cfg = cfg.get("reentry", {"type": "point", "state": 0})
    kind = re_cfg.get("type", "point")
    if kind == "point":
        reentry = SparseDist.point(int(re_cfg.get("state", 0)))
    elif kind == "table":
        table = re_cfg.get("table") or re_cfg.get("entries")
        if not table:
            raise ConfigError("table re-entry needs 'table' entries")
        if isinstance(table, dict):
            reentry = SparseDist({int(x): float(p) for x, p in table.items()})
        else:
            reentry = SparseDist({int(x): float(p) for x, p in table})
    else:
        raise ConfigError(f"unknown reentry type {kind!r}")

    tkind = tr.get("type", "prefix")
    if tkind == "prefix":
        return prefix_scheme(reentry, sizes=tr.get("sizes"))
    if tkind == "levelset":
        if kernel is None or g is None:
            raise ConfigError("levelset truncation needs a kernel and g")
        return level_sets_from_g(g, tr["thresholds"], seed_state, kernel,
                                 reentry=reentry)
    raise ConfigError(f"unknown truncation type {tkind!r}")
