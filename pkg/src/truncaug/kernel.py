"""State spaces, transition kernels, and sparse measures.

Countable states are canonicalized to nonnegative integer ids; everything
solver-facing sees integers.  General (continuous) state spaces are
sampler-only and raise :class:`GeneralModeError` from any operation that
needs row enumeration.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import GeneralModeError, KernelValidationError

ROW_TOL = 1e-12

StateId = int


class SparseDist:
    """Finite nonnegative measure on integer states, stored sparsely.

    Sub-stochastic totals are permitted; total mass must not exceed
    1 + 1e-12.  Instances are treated as immutable.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[StateId, float]):
        cleaned = {}
        for x, p in entries.items():
            p = float(p)
            if p < -ROW_TOL:
                raise KernelValidationError(f"negative mass {p} at state {x}")
            if p > 0.0:
                cleaned[int(x)] = p
        total = sum(cleaned.values())
        if total > 1.0 + ROW_TOL:
            raise KernelValidationError(f"total mass {total} exceeds 1")
        self._entries = cleaned

    @classmethod
    def point(cls, x: StateId) -> "SparseDist":
        return cls({x: 1.0})

    @property
    def entries(self) -> dict[StateId, float]:
        return dict(self._entries)

    def mass(self, x: StateId) -> float:
        return self._entries.get(int(x), 0.0)

    def support(self) -> tuple[StateId, ...]:
        return tuple(sorted(self._entries))

    def total(self) -> float:
        return sum(self._entries.values())

    def restricted(self, states: Iterable[StateId]) -> "SparseDist":
        keep = set(states)
        return SparseDist({x: p for x, p in self._entries.items() if x in keep})

    def __iter__(self):
        return iter(sorted(self._entries.items()))

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        return isinstance(other, SparseDist) and self._entries == other._entries

    def __repr__(self):
        items = ", ".join(f"{x}: {p:.6g}" for x, p in sorted(self._entries.items()))
        return f"SparseDist({{{items}}})"


# Weight and Lyapunov functions are plain callables StateId -> float;
# r must be >= 1 and g >= 0 where used.  Checked opportunistically at use
# sites rather than wrapped in classes.
WeightFn = Callable[[StateId], float]
LyapunovFn = Callable[[StateId], float]


@dataclass
class KernelSpec:
    """Transition kernel: enumerable sparse rows or a state sampler.

    Countable mode supplies ``row_fn`` returning the full one-step
    distribution of a state.  General mode supplies ``sampler(x, rng)``
    drawing a successor (optionally with a transition ``density`` used by
    split-chain simulation).
    """

    row_fn: Callable[[StateId], Mapping[StateId, float]] | None = None
    sampler: Callable[[float, np.random.Generator], float] | None = None
    density: Callable[[float, float], float] | None = None
    name: str = ""
    _row_cache: dict = field(default_factory=dict, repr=False)

    @property
    def countable(self) -> bool:
        return self.row_fn is not None

    def require_countable(self, op: str) -> None:
        if not self.countable:
            raise GeneralModeError(f"{op} requires an enumerable kernel")


def kernel_row(k: KernelSpec, x: StateId) -> SparseDist:
    """Return P(x, .) as a validated, normalized sparse distribution.

    Rows whose mass differs from 1 by more than 1e-12 are rejected;
    within tolerance they are renormalized so float noise cannot
    accumulate downstream.
    """
    k.require_countable("kernel_row")
    x = int(x)
    cached = k._row_cache.get(x)
    if cached is not None:
        return cached
    raw = k.row_fn(x)
    entries = {int(y): float(p) for y, p in (raw.items() if hasattr(raw, "items") else raw)}
    total = 0.0
    for y, p in entries.items():
        if p < -ROW_TOL:
            raise KernelValidationError(f"P({x},{y}) = {p} < 0")
        total += p
    if abs(total - 1.0) > ROW_TOL:
        raise KernelValidationError(f"row {x} sums to {total!r}, not 1")
    if total != 1.0 and total > 0.0:
        entries = {y: p / total for y, p in entries.items()}
    row = SparseDist(entries)
    k._row_cache[x] = row
    return row


def apply_kernel(k: KernelSpec, w: Callable[[StateId], float], x: StateId) -> float:
    """(Pw)(x) = sum_y P(x,y) w(y)."""
    k.require_countable("apply_kernel")
    row = kernel_row(k, x)
    return sum(p * float(w(y)) for y, p in row)


def measure_integral(mu: SparseDist, w: Callable[[StateId], float]) -> float:
    """Integrate w against a finite sparse measure."""
    return sum(p * float(w(x)) for x, p in mu)


def indicator(states: Iterable[StateId]) -> Callable[[StateId], float]:
    members = frozenset(int(s) for s in states)
    return lambda x: 1.0 if x in members else 0.0


def enumerate_states(k: KernelSpec, seeds: Iterable[StateId], cap: int,
                     expand: Callable[[StateId], bool] | None = None) -> list[StateId]:
    """Breadth-first enumeration of row supports from seed states.

    ``expand`` can prune exploration (e.g. sublevel sets); states failing
    it are recorded but not expanded.  Raises if more than ``cap`` states
    are discovered.
    """
    k.require_countable("enumerate_states")
    seen: dict[StateId, None] = {}
    frontier = []
    for s in seeds:
        s = int(s)
        if s not in seen:
            seen[s] = None
            frontier.append(s)
    while frontier:
        nxt = []
        for x in frontier:
            if expand is not None and not expand(x):
                continue
            for y, _ in kernel_row(k, x):
                if y not in seen:
                    if len(seen) >= cap:
                        raise KernelValidationError(
                            f"state enumeration exceeded cap {cap}")
                    seen[y] = None
                    nxt.append(y)
        frontier = nxt
    return sorted(seen)


def kernel_from_table(rows: Mapping[StateId, Mapping[StateId, float]],
                      name: str = "table") -> KernelSpec:
    """Kernel backed by an explicit row table."""
    table = {int(x): {int(y): float(p) for y, p in r.items()} for x, r in rows.items()}

    def row_fn(x: StateId):
        try:
            return table[int(x)]
        except KeyError:
            raise KernelValidationError(f"no row for state {x}") from None

    k = KernelSpec(row_fn=row_fn, name=name)
    k.states_hint = sorted(table)  # type: ignore[attr-defined]
    return k


def load_kernel_csv(path) -> KernelSpec:
    """Load a sparse kernel from (row, col, prob) CSV triples."""
    table: dict[int, dict[int, float]] = {}
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            if rec[0].strip().lower() in ("row", "src", "from"):
                continue  # header
            x, y, p = int(rec[0]), int(rec[1]), float(rec[2])
            table.setdefault(x, {})[y] = table.setdefault(x, {}).get(y, 0.0) + p
    if not table:
        raise KernelValidationError(f"no kernel entries in {path}")
    return kernel_from_table(table, name=str(path))


def load_model_json(source):
    """Load a model from ``{"model": name, "params": {...}}``.

    Accepts a path, a JSON string, or an already-parsed mapping and
    dispatches to the named builder in :mod:`truncaug.models`.
    """
    from . import models  # deferred: models imports this module

    if isinstance(source, Mapping):
        doc = dict(source)
    else:
        text = None
        try:
            with open(source) as fh:
                text = fh.read()
        except (OSError, TypeError):
            text = source
        doc = json.loads(text)
    return models.build_model(doc["model"], doc.get("params", {}))
