"""Numerical verification of drift and minorization certificates.

All checks run over finite windows: a pass is a machine certificate on
the window stated in the report, not a theorem on the full state space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (InvalidCert, NoStabilization, SingularSystem,
                     UnboundedG)
from .kernel import (KernelSpec, LyapunovFn, SparseDist, StateId, WeightFn,
                     kernel_row, measure_integral)

DRIFT_TOL = 1e-10
RESIDUAL_TOL = 1e-12
# safety factor applied when a maximal minorization constant is reused
# for splitting, keeping the residual kernel nonnegative under float error
LAMBDA_SAFETY = 0.999


@dataclass
class SmallSetCert:
    """Certified small set (C, lambda, phi, m) for Nummelin splitting.

    phi is usually a probability on C, but supports reaching outside C
    are accepted: embedded chains of jump processes have zero diagonal,
    so regeneration out of a singleton C necessarily lands elsewhere.
    Checks that rely on phi(C) = 1 assert it where they need it.
    """

    C: frozenset
    lam: float
    phi: SparseDist
    m: int = 1

    def __post_init__(self):
        self.C = frozenset(int(x) for x in self.C)
        if not self.C:
            raise InvalidCert("small set C must be nonempty")
        if not (0.0 < self.lam <= 1.0):
            raise InvalidCert(f"lambda must be in (0, 1], got {self.lam}")
        if self.m < 1:
            raise InvalidCert(f"m must be >= 1, got {self.m}")
        if abs(self.phi.total() - 1.0) > 1e-12:
            raise InvalidCert("phi must be a probability")

    def to_json(self) -> dict:
        return {"C": sorted(self.C), "lambda": self.lam,
                "phi": [[x, p] for x, p in self.phi], "m": self.m}


@dataclass
class GeneralSmallSet:
    """Small-set data for sampler-only kernels.

    ``phi_density`` is taken with respect to the same dominating measure
    as the kernel's transition density; atoms must carry zero phi mass.
    """

    member: Callable[[float], bool]
    lam: float
    phi_sampler: Callable[[np.random.Generator], float]
    phi_density: Callable[[float], float]
    m: int = 1


@dataclass
class DriftCert:
    """Foster-Lyapunov data (g, r, b, C) checked over a finite window."""

    g: LyapunovFn
    r: WeightFn
    b: float
    C: frozenset
    window: tuple

    def __post_init__(self):
        self.C = frozenset(int(x) for x in self.C)
        self.window = tuple(sorted(int(x) for x in self.window))
        if not self.C:
            raise InvalidCert("drift cert needs a nonempty C")
        if not self.C <= set(self.window):
            raise InvalidCert("C must lie inside the checked window")
        if self.b < 0:
            raise InvalidCert("b must be nonnegative")


@dataclass
class DriftReport:
    passed: bool
    worst_slack: float
    worst_state: StateId
    window_size: int
    sup_g_on_C: float

    def to_json(self) -> dict:
        return {"passed": self.passed, "worst_slack": self.worst_slack,
                "worst_state": self.worst_state,
                "window_size": self.window_size,
                "sup_g_on_C": self.sup_g_on_C}


def _eval_g(g: LyapunovFn, x: StateId) -> float:
    try:
        v = float(g(x))
    except (OverflowError, ValueError) as err:
        raise UnboundedG(f"g not evaluable at state {x}") from err
    if not math.isfinite(v):
        raise UnboundedG(f"g({x}) = {v}")
    return v


def check_drift(k: KernelSpec, cert: DriftCert) -> DriftReport:
    """Check (Pg)(x) <= g(x) - r(x) + b I_C(x) over the window."""
    k.require_countable("check_drift")
    worst = -math.inf
    worst_state = None
    for x in cert.window:
        gx = _eval_g(cert.g, x)
        pg = sum(p * _eval_g(cert.g, y) for y, p in kernel_row(k, x))
        slack = pg - gx + float(cert.r(x)) - (cert.b if x in cert.C else 0.0)
        if slack > worst:
            worst = slack
            worst_state = x
    sup_g = max(_eval_g(cert.g, x) for x in sorted(cert.C))
    return DriftReport(passed=worst <= DRIFT_TOL, worst_slack=worst,
                       worst_state=worst_state, window_size=len(cert.window),
                       sup_g_on_C=sup_g)


@dataclass
class ConfinedKernel:
    """m-step kernel on A_1 over paths that never leave A_1 (sub-stochastic)."""

    states: np.ndarray
    matrix: np.ndarray
    m: int
    _pos: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._pos = {int(s): i for i, s in enumerate(self.states)}

    def row(self, x: StateId) -> SparseDist:
        i = self._pos[int(x)]
        r = self.matrix[i]
        return SparseDist({int(self.states[j]): float(r[j])
                           for j in np.nonzero(r)[0]})

    def mass(self, x: StateId) -> float:
        return float(self.matrix[self._pos[int(x)]].sum())

    def prob(self, x: StateId, y: StateId) -> float:
        j = self._pos.get(int(y))
        if j is None:
            return 0.0
        return float(self.matrix[self._pos[int(x)], j])


def m_step_confined_kernel(k: KernelSpec, A1: Iterable[StateId], m: int) -> ConfinedKernel:
    """K_m(x, y) = P_x(X_m = y, chain stays in A_1 through step m)."""
    k.require_countable("m_step_confined_kernel")
    states = np.asarray(sorted(int(s) for s in A1), dtype=np.int64)
    pos = {int(s): i for i, s in enumerate(states)}
    n = len(states)
    P1 = np.zeros((n, n))
    for i, x in enumerate(states):
        for y, p in kernel_row(k, int(x)):
            j = pos.get(y)
            if j is not None:
                P1[i, j] = p
    M = np.linalg.matrix_power(P1, m) if m > 1 else P1
    return ConfinedKernel(states=states, matrix=M, m=m)


def max_minorization_lambda(k, C: Iterable[StateId], phi: SparseDist,
                            m: int = 1, A1: Iterable[StateId] | None = None) -> float:
    """Largest lambda with row(x) >= lambda * phi pointwise over x in C.

    For m = 1 the rows are one-step kernel rows; for m > 1 they come from
    the confined m-step kernel on A1.  Returns 0 when some phi-state is
    unreachable, meaning no minorization holds with this phi.
    """
    if m > 1 or isinstance(k, ConfinedKernel):
        confined = k if isinstance(k, ConfinedKernel) else \
            m_step_confined_kernel(k, A1, m)
        rows = {int(x): confined.row(int(x)) for x in C}
    else:
        rows = {int(x): kernel_row(k, int(x)) for x in C}
    lam = math.inf
    for x, row in rows.items():
        for y, q in phi:
            lam = min(lam, row.mass(y) / q)
    if not math.isfinite(lam):
        return 0.0
    return min(1.0, max(0.0, lam))


def split_lambda(k, C, phi, m: int = 1, A1=None) -> float:
    """Maximal minorization constant scaled by the splitting safety factor."""
    return LAMBDA_SAFETY * max_minorization_lambda(k, C, phi, m=m, A1=A1)


@dataclass
class FirstPassageCost:
    """Solution h of h = r + P h off C, h = 0 on C, over a finite window."""

    states: tuple
    values: np.ndarray
    _pos: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._pos = {int(s): i for i, s in enumerate(self.states)}

    def __call__(self, x: StateId) -> float:
        return float(self.values[self._pos[int(x)]])

    def covers(self, x: StateId) -> bool:
        return int(x) in self._pos


def first_passage_cost(k: KernelSpec, C: Iterable[StateId], r: WeightFn,
                       window: Iterable[StateId]) -> FirstPassageCost:
    """Expected r-cost accumulated strictly before hitting C.

    Transitions leaving the window are treated as absorption at zero
    cost, so the result is a (tight, for recurrent chains) lower
    approximation that converges as the window grows.
    """
    k.require_countable("first_passage_cost")
    window = tuple(sorted(int(x) for x in window))
    wpos = {x: i for i, x in enumerate(window)}
    cset = frozenset(int(x) for x in C)
    interior = [x for x in window if x not in cset]
    n = len(interior)
    values = np.zeros(len(window))
    if n:
        pos = {x: i for i, x in enumerate(interior)}
        rows, cols, probs = [], [], []
        rhs = np.empty(n)
        for i, x in enumerate(interior):
            rhs[i] = float(r(x))
            for y, p in kernel_row(k, x):
                j = pos.get(y)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
                    probs.append(p)
        M = sp.csr_matrix((probs, (rows, cols)), shape=(n, n))
        A = (sp.identity(n, format="csr") - M).tocsc()
        try:
            h = spla.spsolve(A, rhs)
            h = h + spla.spsolve(A, rhs - A @ h)  # one refinement round
        except Exception as err:
            raise SingularSystem(f"first-passage solve failed: {err}") from err
        if not np.all(np.isfinite(h)):
            raise SingularSystem("first-passage solution is not finite")
        resid = np.abs(A @ h - rhs).max()
        if resid > 1e-8 * max(1.0, np.abs(h).max()):
            raise SingularSystem(
                f"first-passage residual {resid}; confined kernel likely has "
                "spectral radius >= 1")
        for x, i in pos.items():
            values[wpos[x]] = h[i]
    return FirstPassageCost(states=window, values=values)


@dataclass
class RRegularityReport:
    passed: bool
    bound: float
    ladder_values: list
    windows: list
    g_integral: float | None = None

    def to_json(self) -> dict:
        return {"passed": self.passed, "bound": self.bound,
                "ladder_values": self.ladder_values, "windows": self.windows,
                "g_integral": self.g_integral}


def _as_window(spec_item) -> tuple:
    if isinstance(spec_item, int):
        return tuple(range(spec_item))
    return tuple(sorted(int(x) for x in spec_item))


def check_r_regularity(k: KernelSpec, nu: SparseDist, C: Iterable[StateId],
                       r: WeightFn, window_ladder: Sequence,
                       g: LyapunovFn | None = None,
                       rel_tol: float = 1e-8) -> RRegularityReport:
    """Estimate E_nu of the pre-C r-cost over an increasing window ladder.

    Passes when consecutive ladder values agree to ``rel_tol`` relative
    change with the nu-support fully covered; an exhausted ladder raises
    :class:`NoStabilization` (evidence of possible non-r-regularity, not
    a proof).
    """
    cset = frozenset(int(x) for x in C)
    support = nu.support()
    values, sizes = [], []
    prev = None
    for item in window_ladder:
        window = _as_window(item)
        h = first_passage_cost(k, cset, r, window)
        covered = all(h.covers(x) for x in support)
        value = sum(q * h(x) for x, q in nu if h.covers(x))
        values.append(value)
        sizes.append(len(window))
        if prev is not None and covered:
            if abs(value - prev) <= rel_tol * max(1.0, abs(value)):
                g_int = measure_integral(nu, g) if g is not None else None
                return RRegularityReport(passed=True, bound=value,
                                         ladder_values=values, windows=sizes,
                                         g_integral=g_int)
        prev = value if covered else None
    raise NoStabilization(
        f"ladder exhausted after {len(values)} windows without stabilizing",
        ladder_values=values)


def default_ladder(base: int = 128, steps: int = 6) -> list[int]:
    return [base * (2 ** i) for i in range(steps)]
