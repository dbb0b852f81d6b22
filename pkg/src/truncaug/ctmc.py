"""Markov jump processes: rate kernels, embedded chains, truncated
generators, exact stationary solves, and time-integral cycle simulation.

No operation here assumes a bound on the jump rates: the stationary
solve goes through the embedded chain with 1/beta reweighting, and the
simulators draw exact exponential holding times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import _kernels as backend
from ._compile import (build_window, pack_dist, pack_functionals, pack_split,
                       pack_truncated, WINDOW_CAP)
from .drift import SmallSetCert, _eval_g
from .errors import (CycleLengthCap, GeneralModeError, KernelValidationError,
                     NumericalError, ReentryOutsideA1, StateOutsideTruncation,
                     ZeroExitRate)
from .kernel import KernelSpec, SparseDist, StateId, kernel_row
from .regen import (BATCH, DEFAULT_CAP, JumpCycleRecord, SimDiagnostics,
                    _Escaped, _cert_seeds, _initial_target, _run_batched,
                    _seed_int, _truncated_parts)
from .solve import StationaryResult, solve_stationary_elimination
from .truncation import TruncationScheme


@dataclass
class RateKernel:
    """Rate transition kernel Q: per-state rates to other states.

    ``rate_row_fn(x)`` maps successor -> rate (no diagonal entry; the
    diagonal is implicitly -beta(x)).  ``states`` marks finite kernels
    that support exact solves.  ``beta_fn`` overrides the exit rate when
    it is known exactly (used by truncations to preserve it).
    """

    rate_row_fn: Callable[[StateId], Mapping[StateId, float]]
    states: tuple | None = None
    beta_fn: Callable[[StateId], float] | None = None
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def row(self, x: StateId) -> dict[StateId, float]:
        x = int(x)
        got = self._cache.get(x)
        if got is None:
            got = {}
            for y, rate in self.rate_row_fn(x).items():
                y = int(y)
                rate = float(rate)
                if y == x:
                    raise KernelValidationError(
                        f"rate row {x} contains a diagonal entry")
                if rate < 0.0:
                    raise KernelValidationError(f"Q({x},{y}) = {rate} < 0")
                if rate > 0.0:
                    got[y] = rate
            self._cache[x] = got
        return got

    def beta(self, x: StateId) -> float:
        if self.beta_fn is not None:
            b = float(self.beta_fn(int(x)))
        else:
            b = sum(self.row(x).values())
        if not (b > 0.0):
            raise ZeroExitRate(f"state {x} has total exit rate {b}")
        if not math.isfinite(b):
            raise ZeroExitRate(f"state {x} has infinite exit rate")
        return b


def embedded_chain(Q: RateKernel) -> KernelSpec:
    """Discrete chain of visited states: R(x,y) = Q(x,y)/beta(x), zero diagonal."""

    def row_fn(x: StateId):
        b = Q.beta(x)
        return {y: rate / b for y, rate in Q.row(x).items()}

    k = KernelSpec(row_fn=row_fn, name=f"embedded({Q.name})")
    if Q.states is not None:
        k.states_hint = tuple(Q.states)  # type: ignore[attr-defined]
    return k


def truncate_rate_kernel(Q: RateKernel, scheme: TruncationScheme,
                         n: int) -> RateKernel:
    """Q_n(x,y) = Q(x,y) + Q(x, A_n^c) nu(y) on A_n, exit rate preserved.

    The redirected mass is the complement beta(x) - Q(x, A_n), so the
    total exit rate of every state is carried over exactly.
    """
    scheme.validate_reentry()
    members = scheme.members(n)
    mset = frozenset(members)
    if not scheme.covers(1, scheme.reentry.support()):
        raise ReentryOutsideA1("re-entry support must lie in A_1")
    nu = scheme.reentry

    def rate_row_fn(x: StateId):
        x = int(x)
        if x not in mset:
            raise StateOutsideTruncation(f"state {x} not in A_{n}")
        base = Q.row(x)
        interior = {y: r for y, r in base.items() if y in mset}
        exit_rate = Q.beta(x) - sum(interior.values())
        exit_rate = max(0.0, exit_rate)
        if exit_rate > 0.0:
            for y, qm in nu:
                interior[y] = interior.get(y, 0.0) + exit_rate * qm
        return interior

    return RateKernel(rate_row_fn=rate_row_fn, states=tuple(members),
                      beta_fn=Q.beta, name=f"{Q.name}|A_{n}")


def generator_matrix(Q: RateKernel, states=None) -> tuple[np.ndarray, np.ndarray]:
    """Dense generator with diagonal -beta; needs a finite state list."""
    if states is None:
        states = Q.states
    if states is None:
        raise GeneralModeError("rate kernel has no finite state list")
    states = np.asarray(sorted(int(s) for s in states), dtype=np.int64)
    pos = {int(s): i for i, s in enumerate(states)}
    G = np.zeros((len(states), len(states)))
    for i, x in enumerate(states):
        for y, rate in Q.row(int(x)).items():
            j = pos.get(y)
            if j is not None:
                G[i, j] = rate
        G[i, i] = -Q.beta(int(x))
    return G, states


def solve_stationary_ctmc(Qn: RateKernel) -> StationaryResult:
    """Stationary law of a finite jump process via its embedded chain.

    Solves eta stationary for R_n by GTH elimination, reweights
    pi(x) proportional to eta(x)/beta(x), and reports the global balance
    residual max_y |sum_x pi(x) Q_n(x,y)|.
    """
    if Qn.states is None:
        raise GeneralModeError("stationary solve needs a finite rate kernel")
    states = sorted(int(s) for s in Qn.states)
    emb = embedded_chain(Qn)
    pos = {s: i for i, s in enumerate(states)}
    nstate = len(states)
    R = np.zeros((nstate, nstate))
    for i, x in enumerate(states):
        for y, p in kernel_row(emb, x):
            j = pos.get(y)
            if j is not None:
                R[i, j] = p
    eta_result = solve_stationary_elimination(R, states=states)
    betas = np.array([Qn.beta(x) for x in states])
    eta = eta_result.vector(states)
    pi = eta / betas
    pi /= pi.sum()
    G, _ = generator_matrix(Qn, states)
    residual = float(np.abs(pi @ G).max())
    dist = SparseDist({states[i]: float(pi[i]) for i in range(nstate)
                       if pi[i] > 0.0})
    return StationaryResult(pi=dist, residual=residual, method="embedded-gth")


@dataclass
class CtmcDriftReport:
    passed: bool
    worst_slack: float
    worst_state: StateId | None
    c_bound: float
    window_size: int

    def to_json(self) -> dict:
        return {"passed": self.passed, "worst_slack": self.worst_slack,
                "worst_state": self.worst_state, "c_bound": self.c_bound,
                "window_size": self.window_size}


def check_ctmc_drift(Q: RateKernel, g, r, C: Iterable[StateId],
                     window: Iterable[StateId]) -> CtmcDriftReport:
    """Check sum_y Q(x,y)(g(y) - g(x)) <= -r(x) off C over the window.

    Also evaluates the finiteness bound
    sup_C [beta*g + 1/beta + g + beta*(Rg)] and reports it.
    """
    cset = frozenset(int(x) for x in C)
    window = sorted(int(x) for x in window)
    worst = -math.inf
    worst_state = None
    for x in window:
        if x in cset:
            continue
        gx = _eval_g(g, x)
        drift = sum(rate * (_eval_g(g, y) - gx) for y, rate in Q.row(x).items())
        slack = drift + float(r(x))
        if slack > worst:
            worst = slack
            worst_state = x
    c_bound = 0.0
    for x in sorted(cset):
        b = Q.beta(x)
        gx = _eval_g(g, x)
        rg = sum(rate * _eval_g(g, y) for y, rate in Q.row(x).items()) / b
        c_bound = max(c_bound, b * gx + 1.0 / b + gx + b * rg)
    passed = (worst <= 1e-10) if worst_state is not None else True
    if worst_state is None:
        worst = 0.0
    return CtmcDriftReport(passed=passed, worst_slack=worst,
                           worst_state=worst_state, c_bound=c_bound,
                           window_size=len(window))


def simulate_jump_cycles(Q: RateKernel, cert: SmallSetCert, n_cycles: int,
                         functionals: Mapping[str, Callable], seed,
                         scheme: TruncationScheme | None = None,
                         level: int | None = None,
                         cap: int = DEFAULT_CAP):
    """Regenerative cycles of the jump process (optionally truncated).

    The split acts on the embedded chain at visits to C; holding times
    are exact exponentials with mean 1/beta.  With a scheme and level the
    dynamics follow Q_n with re-entry on attempted exits (beta = 2).
    """
    emb = embedded_chain(Q)
    master = backend.seed_state(_seed_int(seed))
    truncated = scheme is not None and level is not None
    target = None
    while True:
        if truncated:
            window, split, trunc = _truncated_parts(emb, cert, scheme, level)
            exitm = trunc.exitm
            tcols, tcum, tnnz = trunc.tcols, trunc.tcum, trunc.tnnz
            thcols, thcum, thnnz = trunc.thcols, trunc.thcum, trunc.thnnz
            nu_cols, nu_cum = trunc.nu_cols, trunc.nu_cum
        else:
            if target is None:
                target = _initial_target(len(_cert_seeds(cert)))
            window = build_window(emb, _cert_seeds(cert), target)
            split = pack_split(emb, cert, window)
            exitm = np.zeros(window.size)
            tcols, tcum, tnnz = window.pcols, window.pcum, window.pnnz
            thcols, thcum, thnnz = split.hcols, split.hcum, split.hnnz
            nu_cols, nu_cum = split.phi_cols, split.phi_cum  # never drawn
        rate = np.array([Q.beta(int(x)) for x in window.states])
        names, fvals = pack_functionals(functionals, window)

        def worker(bi, bn):
            bseed = backend.derive_seed(master, bi)
            out = backend.call("jump_cycles", bseed, bn,
                               split.phi_cols, split.phi_cum, exitm,
                               tcols, tcum, tnnz, split.c_idx, split.lam,
                               thcols, thcum, thnnz,
                               split.phi_cols, split.phi_cum,
                               nu_cols, nu_cum, rate, fvals, np.int64(cap))
            if out[5] == 1:
                raise _Escaped
            if out[5] == 2:
                raise CycleLengthCap(f"cycle exceeded {cap} jumps")
            return out
        try:
            parts = _run_batched(worker, n_cycles)
        except _Escaped:
            if truncated:
                raise NumericalError("escape from a truncated jump simulation")
            target *= 4
            if target > WINDOW_CAP:
                raise NumericalError("jump simulation window exhausted")
            continue
        records = []
        for jumps, total_time, tints, vsums, gamma, _st in parts:
            for i in range(len(jumps)):
                records.append(JumpCycleRecord(
                    total_time=float(total_time[i]),
                    time_integrals={nm: float(tints[i, q])
                                    for q, nm in enumerate(names)},
                    jump_count=int(jumps[i]), gamma_count=int(gamma[i]),
                    truncation_level=level if truncated else None,
                    visit_sums={nm: float(vsums[i, q])
                                for q, nm in enumerate(names)}))
        times = np.array([r.total_time for r in records])
        gammas = np.array([r.gamma_count for r in records])
        diag = SimDiagnostics(n_cycles=n_cycles, mean_tau=float(times.mean()),
                              gamma_rate=float(gammas.mean()), c_visits=-1,
                              regenerations=n_cycles, window_size=window.size)
        return records, diag


def simulate_jump_cycle(Q: RateKernel, cert: SmallSetCert, functionals, rng,
                        cap: int = DEFAULT_CAP) -> JumpCycleRecord:
    records, _ = simulate_jump_cycles(Q, cert, 1, functionals,
                                      _seed_int(rng), cap=cap)
    return records[0]


def rate_kernel_from_table(rates: Iterable, name: str = "rates") -> RateKernel:
    """Rate kernel from (x, y, rate) triples; states are the union seen."""
    table: dict[int, dict[int, float]] = {}
    states = set()
    for x, y, rate in rates:
        x, y, rate = int(x), int(y), float(rate)
        states.add(x)
        states.add(y)
        table.setdefault(x, {})[y] = table.setdefault(x, {}).get(y, 0.0) + rate

    def rate_row_fn(x: StateId):
        return table.get(int(x), {})

    return RateKernel(rate_row_fn=rate_row_fn, states=tuple(sorted(states)),
                      name=name)
