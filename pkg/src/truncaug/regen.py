"""Split-chain simulation and regeneration-based ratio estimators.

Countable kernels are compiled to padded-row arrays and driven through
the backend kernels in fixed-size batches; each cycle owns a random
stream keyed by (master seed, batch, index), so results are independent
of threading and identical across backends.  Sampler-only (general
state) kernels run through plain-Python loops.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import _kernels as backend
from ._compile import (Window, build_window, pack_dist, pack_functionals,
                       pack_mstep, pack_split, pack_truncated, residual_row,
                       WINDOW_CAP)
from .drift import GeneralSmallSet, SmallSetCert
from .errors import (CycleLengthCap, DegenerateDenominator, InsufficientCycles,
                     InvalidCert, NegativeResidual, NumericalError)
from .kernel import KernelSpec, SparseDist, StateId, kernel_row
from .truncation import TruncationScheme

BATCH = 16384
DEFAULT_CAP = 10_000_000


@dataclass
class CycleRecord:
    """One regenerative cycle: length, functional sums, exit attempts."""

    tau: int
    f_sums: dict[str, float]
    gamma_count: int = 0
    truncation_level: int | None = None

    @property
    def duration(self) -> float:
        return float(self.tau)


@dataclass
class JumpCycleRecord:
    """One jump-process cycle: elapsed time, time integrals, jump count.

    ``visit_sums`` carries the plain (unweighted by holding time) sums of
    each functional over the visited states, e.g. visit counts for
    indicator functionals.
    """

    total_time: float
    time_integrals: dict[str, float]
    jump_count: int
    gamma_count: int = 0
    truncation_level: int | None = None
    visit_sums: dict[str, float] | None = None

    @property
    def duration(self) -> float:
        return self.total_time

    @property
    def f_sums(self) -> dict[str, float]:
        return self.time_integrals


@dataclass
class RatioEstimate:
    point: float
    std_error: float
    n_cycles: int

    def z_against(self, target: float) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.point == target else math.inf
        return (self.point - target) / self.std_error

    def to_json(self) -> dict:
        return {"point": self.point, "std_error": self.std_error,
                "n_cycles": self.n_cycles}


@dataclass
class SimDiagnostics:
    n_cycles: int
    mean_tau: float
    gamma_rate: float
    c_visits: int
    regenerations: int
    window_size: int

    def to_json(self) -> dict:
        return {"n_cycles": self.n_cycles, "mean_tau": self.mean_tau,
                "gamma_rate": self.gamma_rate, "c_visits": self.c_visits,
                "regenerations": self.regenerations,
                "window_size": self.window_size}


def _threads() -> int:
    n = int(os.environ.get("TRUNCAUG_THREADS", "0") or 0)
    if n <= 0:
        n = min(4, os.cpu_count() or 1)
    return n


def _batches(total: int) -> list[tuple[int, int]]:
    out = []
    start = idx = 0
    while start < total:
        out.append((idx, min(BATCH, total - start)))
        start += BATCH
        idx += 1
    return out


def _run_batched(worker, total: int):
    plan = _batches(total)
    if len(plan) == 1:
        return [worker(*plan[0])]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        return list(pool.map(lambda args: worker(*args), plan))


class _Escaped(Exception):
    pass


def _seed_int(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63 - 1))
    return int(rng)


def sample_sparse(dist: SparseDist, rng: np.random.Generator) -> StateId:
    states = dist.support()
    cum = np.cumsum([dist.mass(s) for s in states])
    u = rng.random() * cum[-1]
    return states[int(np.searchsorted(cum, u, side="right"))]


def residual_distribution(k: KernelSpec, cert: SmallSetCert, x: StateId) -> SparseDist:
    """H(x,.) = (P(x,.) - lam*phi)/(1 - lam); arbitrary (phi) when lam = 1."""
    if cert.lam >= 1.0:
        return cert.phi
    entries = residual_row(kernel_row(k, x), cert.lam, cert.phi)
    scale = 1.0 - cert.lam
    return SparseDist({y: v / scale for y, v in entries})


def split_step(k: KernelSpec, cert, x, rng: np.random.Generator):
    """One split-chain transition out of a small-set state.

    Returns (next_state, beta) with beta = 1 exactly when the chain
    regenerates (probability lam, landing law phi); the marginal law of
    the next state is exactly P(x, .).
    """
    if isinstance(cert, GeneralSmallSet):
        return _general_split_step(k, cert, x, rng)
    if cert.m != 1:
        raise InvalidCert("split_step requires m = 1; use m_step_split_step")
    if int(x) not in cert.C:
        raise InvalidCert(f"state {x} is not in the small set")
    if rng.random() < cert.lam:
        return sample_sparse(cert.phi, rng), 1
    return sample_sparse(residual_distribution(k, cert, int(x)), rng), 0


def _general_split_step(k: KernelSpec, cert: GeneralSmallSet, x, rng):
    if k.sampler is None:
        raise InvalidCert("general split needs a sampler kernel")
    if rng.random() < cert.lam:
        return cert.phi_sampler(rng), 1
    if k.density is None:
        raise InvalidCert("general split needs a transition density")
    # rejection against the residual (P - lam*phi)/(1 - lam)
    for _ in range(1_000_000):
        y = k.sampler(x, rng)
        phid = cert.phi_density(y)
        if phid <= 0.0:
            return y, 0
        pd = k.density(x, y)
        if pd <= 0.0:
            raise NegativeResidual(
                f"density 0 at sampled point {y} with phi density {phid}")
        if rng.random() < 1.0 - cert.lam * phid / pd:
            return y, 0
    raise NegativeResidual("residual rejection sampling did not terminate")


def _eval_functionals(functionals, x) -> list[float]:
    return [float(f(x)) for f in functionals.values()]


def _general_cycle(k: KernelSpec, cert: GeneralSmallSet, functionals,
                   rng: np.random.Generator, cap: int) -> CycleRecord:
    names = list(functionals)
    sums = np.zeros(len(names))
    x = cert.phi_sampler(rng)
    t = 0
    while True:
        if t >= cap:
            raise CycleLengthCap(f"cycle exceeded {cap} steps")
        sums += _eval_functionals(functionals, x)
        if cert.member(x):
            x, beta = _general_split_step(k, cert, x, rng)
        else:
            x, beta = k.sampler(x, rng), 0
        t += 1
        if beta == 1:
            return CycleRecord(tau=t, f_sums=dict(zip(names, sums)))


def _cert_seeds(cert: SmallSetCert, extra=()) -> list[int]:
    seeds = sorted(set(cert.C) | set(cert.phi.support()) | set(int(s) for s in extra))
    return seeds


def _initial_target(n_seed_states: int) -> int:
    return max(1024, 8 * n_seed_states)


def simulate_cycles(k: KernelSpec, cert, n_cycles: int,
                    functionals: Mapping[str, Callable], seed,
                    cap: int = DEFAULT_CAP):
    """Batch of regenerative cycles under the untruncated kernel.

    Returns (records, diagnostics).  The enumeration window grows and the
    whole batch reruns if any trajectory escapes it, so output depends
    only on the seed and cycle count.
    """
    if isinstance(cert, GeneralSmallSet) or not k.countable:
        rng = np.random.default_rng(_seed_int(seed))
        records = [_general_cycle(k, cert, functionals, rng, cap)
                   for _ in range(n_cycles)]
        taus = [r.tau for r in records]
        diag = SimDiagnostics(n_cycles=n_cycles, mean_tau=float(np.mean(taus)),
                              gamma_rate=0.0, c_visits=-1,
                              regenerations=n_cycles, window_size=-1)
        return records, diag
    master = backend.seed_state(_seed_int(seed))
    target = _initial_target(len(_cert_seeds(cert)))
    while True:
        window = build_window(k, _cert_seeds(cert), target)
        split = pack_split(k, cert, window)
        names, fvals = pack_functionals(functionals, window)
        unused_mask = np.ones(window.size, dtype=np.uint8)

        def worker(bi, bn):
            bseed = backend.derive_seed(master, bi)
            out = backend.call("killed_cycles", bseed, bn,
                               split.phi_cols, split.phi_cum,
                               window.pcols, window.pcum, window.pnnz,
                               split.c_idx, split.lam,
                               split.hcols, split.hcum, split.hnnz,
                               split.phi_cols, split.phi_cum,
                               unused_mask, np.uint8(0), fvals, np.int64(cap))
            if out[5] == 1:
                raise _Escaped
            if out[5] == 2:
                raise CycleLengthCap(f"cycle exceeded {cap} steps")
            return out
        try:
            parts = _run_batched(worker, n_cycles)
        except _Escaped:
            target *= 4
            if target > WINDOW_CAP:
                raise NumericalError(
                    f"simulation window exceeded {WINDOW_CAP} states; "
                    "chain appears transient")
            continue
        records = []
        cvisits = regens = 0
        for tau, fsums, _killed, cv, rg, _st in parts:
            cvisits += int(cv)
            regens += int(rg)
            for i in range(len(tau)):
                records.append(CycleRecord(
                    tau=int(tau[i]),
                    f_sums={nm: float(fsums[i, q]) for q, nm in enumerate(names)}))
        taus = np.array([r.tau for r in records])
        diag = SimDiagnostics(n_cycles=n_cycles, mean_tau=float(taus.mean()),
                              gamma_rate=0.0, c_visits=cvisits,
                              regenerations=regens, window_size=window.size)
        return records, diag


def simulate_cycle(k: KernelSpec, cert, functionals, rng,
                   cap: int = DEFAULT_CAP) -> CycleRecord:
    """Single regenerative cycle started from phi."""
    if isinstance(cert, GeneralSmallSet) or not k.countable:
        gen = rng if isinstance(rng, np.random.Generator) \
            else np.random.default_rng(_seed_int(rng))
        return _general_cycle(k, cert, functionals, gen, cap)
    records, _ = simulate_cycles(k, cert, 1, functionals, _seed_int(rng), cap)
    return records[0]


def _truncated_parts(k, cert, scheme, n, window=None):
    members = scheme.members(n)
    seeds = _cert_seeds(cert, extra=list(members) + list(scheme.reentry.support()))
    if window is None:
        window = build_window(k, seeds, max(1024, 2 * len(seeds)))
    split = pack_split(k, cert, window)
    trunc = pack_truncated(k, cert, scheme, n, window, split)
    return window, split, trunc


def simulate_truncated_cycles(k: KernelSpec, cert: SmallSetCert,
                              scheme: TruncationScheme, n: int, n_cycles: int,
                              functionals: Mapping[str, Callable], seed,
                              cap: int = DEFAULT_CAP, start: SparseDist | None = None):
    """Batch of split-chain cycles under the augmented kernel P_n.

    Attempted exits record beta = 2 and re-enter through the scheme's
    distribution; cycles end at the first regeneration (beta = 1).
    """
    master = backend.seed_state(_seed_int(seed))
    window, split, trunc = _truncated_parts(k, cert, scheme, n)
    names, fvals = pack_functionals(functionals, window)
    if start is None:
        start_cols, start_cum = split.phi_cols, split.phi_cum
    else:
        start_cols, start_cum = pack_dist(start, window, "start")

    def worker(bi, bn):
        bseed = backend.derive_seed(master, bi)
        out = backend.call("truncated_cycles", bseed, bn, start_cols, start_cum,
                           trunc.exitm, trunc.tcols, trunc.tcum, trunc.tnnz,
                           split.c_idx, split.lam,
                           trunc.thcols, trunc.thcum, trunc.thnnz,
                           split.phi_cols, split.phi_cum,
                           trunc.nu_cols, trunc.nu_cum, fvals, np.int64(cap))
        if out[5] == 2:
            raise CycleLengthCap(f"cycle exceeded {cap} steps")
        return out

    parts = _run_batched(worker, n_cycles)
    records = []
    cvisits = regens = 0
    for tau, fsums, gamma, cv, rg, _st in parts:
        cvisits += int(cv)
        regens += int(rg)
        for i in range(len(tau)):
            records.append(CycleRecord(
                tau=int(tau[i]),
                f_sums={nm: float(fsums[i, q]) for q, nm in enumerate(names)},
                gamma_count=int(gamma[i]), truncation_level=n))
    taus = np.array([r.tau for r in records])
    gammas = np.array([r.gamma_count for r in records])
    diag = SimDiagnostics(n_cycles=n_cycles, mean_tau=float(taus.mean()),
                          gamma_rate=float(gammas.mean()), c_visits=cvisits,
                          regenerations=regens, window_size=window.size)
    return records, diag


def simulate_truncated_cycle(k, cert, scheme, n, functionals, rng,
                             cap: int = DEFAULT_CAP) -> CycleRecord:
    records, _ = simulate_truncated_cycles(k, cert, scheme, n, 1, functionals,
                                           _seed_int(rng), cap)
    return records[0]


def ratio_estimator(cycles, functional_id: str) -> RatioEstimate:
    """Regenerative ratio estimate mean(f)/mean(duration).

    The standard error follows the delta method for the ratio of means:
    sd(f_i - point * tau_i) / (mean(tau) * sqrt(N)).
    """
    n = len(cycles)
    if n < 2:
        raise InsufficientCycles(f"need at least 2 cycles, got {n}")
    try:
        f = np.array([c.f_sums[functional_id] for c in cycles])
    except KeyError:
        raise KeyError(f"functional {functional_id!r} missing from cycle records") \
            from None
    taus = np.array([c.duration for c in cycles])
    mean_tau = taus.mean()
    point = f.mean() / mean_tau
    resid = f - point * taus
    se = float(resid.std(ddof=1) / (mean_tau * math.sqrt(n)))
    return RatioEstimate(point=float(point), std_error=se, n_cycles=n)


def m_step_split_step(k: KernelSpec, cert: SmallSetCert, A1, x, rng,
                      confined=None):
    """Simulate one m-block from x in C with thinned regeneration.

    Runs m forward steps under the plain kernel; if the path stays inside
    A_1, regeneration is accepted with probability
    lam*phi(X_m)/K_m(x, X_m).  Returns (path, beta_at_m) where path holds
    the m generated states.
    """
    from .drift import m_step_confined_kernel

    x = int(x)
    if x not in cert.C:
        raise InvalidCert(f"state {x} not in the small set")
    gen = rng if isinstance(rng, np.random.Generator) \
        else np.random.default_rng(_seed_int(rng))
    if confined is None:
        confined = m_step_confined_kernel(k, A1, cert.m)
    a1 = frozenset(int(s) for s in A1)
    path = []
    cur = x
    inside = True
    for _ in range(cert.m):
        cur = sample_sparse(kernel_row(k, cur), gen)
        path.append(cur)
        if cur not in a1:
            inside = False
    beta = 0
    if inside:
        km = confined.prob(x, cur)
        num = cert.lam * cert.phi.mass(cur)
        if num > 0.0:
            if num > km + 1e-12:
                raise InvalidCert(
                    f"lam*phi({cur}) = {num} exceeds K_m({x},{cur}) = {km}")
            if gen.random() < min(1.0, num / km):
                beta = 1
    return tuple(path), beta


def simulate_mstep_cycles(k: KernelSpec, cert: SmallSetCert, A1,
                          n_cycles: int, functionals: Mapping[str, Callable],
                          seed, cap: int = DEFAULT_CAP):
    """Cycles under m-step block regeneration (countable kernels only).

    Returns (records, diagnostics, block_stats) where block_stats carries
    the total number of C-blocks and accepted regenerations.
    """
    master = backend.seed_state(_seed_int(seed))
    a1_list = sorted(int(s) for s in A1)
    target = _initial_target(len(a1_list) + len(_cert_seeds(cert)))
    while True:
        window = build_window(k, _cert_seeds(cert, extra=a1_list), target)
        in_a1, cm_idx, km, phi_pmf = pack_mstep(k, cert, a1_list, window)
        phi_cols, phi_cum = pack_dist(cert.phi, window, "phi")
        names, fvals = pack_functionals(functionals, window)

        def worker(bi, bn):
            bseed = backend.derive_seed(master, bi)
            out = backend.call("mstep_cycles", bseed, bn,
                               window.pcols, window.pcum, window.pnnz,
                               in_a1, cm_idx, cert.lam, km,
                               phi_cols, phi_cum, phi_pmf, fvals,
                               np.int64(cert.m), np.int64(cap))
            if out[4] == 1:
                raise _Escaped
            if out[4] == 2:
                raise CycleLengthCap(f"cycle exceeded {cap} steps")
            if out[4] == 3:
                raise InvalidCert("thinning ratio exceeded 1: invalid m-step cert")
            return out
        try:
            parts = _run_batched(worker, n_cycles)
        except _Escaped:
            target *= 4
            if target > WINDOW_CAP:
                raise NumericalError("m-step simulation window exhausted")
            continue
        records = []
        blocks = accepts = 0
        for tau, fsums, nb, na, _st in parts:
            blocks += int(nb)
            accepts += int(na)
            for i in range(len(tau)):
                records.append(CycleRecord(
                    tau=int(tau[i]),
                    f_sums={nm: float(fsums[i, q]) for q, nm in enumerate(names)}))
        taus = np.array([r.tau for r in records])
        diag = SimDiagnostics(n_cycles=n_cycles, mean_tau=float(taus.mean()),
                              gamma_rate=0.0, c_visits=blocks,
                              regenerations=accepts, window_size=window.size)
        return records, diag, {"blocks": blocks, "accepts": accepts}


@dataclass
class CouplingReport:
    """Per-horizon comparison of the pre-exit path laws."""

    horizon: int
    trials: int
    p_untruncated: np.ndarray
    p_truncated: np.ndarray
    std_error: np.ndarray
    z_scores: np.ndarray
    max_abs_diff: float
    max_abs_z: float

    def to_json(self) -> dict:
        return {"horizon": self.horizon, "trials": self.trials,
                "p_untruncated": self.p_untruncated.tolist(),
                "p_truncated": self.p_truncated.tolist(),
                "std_error": self.std_error.tolist(),
                "z_scores": self.z_scores.tolist(),
                "max_abs_diff": self.max_abs_diff,
                "max_abs_z": self.max_abs_z}


def coupling_check(k: KernelSpec, cert: SmallSetCert, scheme: TruncationScheme,
                   n: int, B: Iterable[StateId], horizon: int, trials: int,
                   seed) -> CouplingReport:
    """Empirical check of the pre-exit equality in distribution.

    Estimates P_phi(X_k in B, tau and T_n > k) with the untruncated
    simulator and the corresponding beta = 2 (Gamma) event probability
    with the truncated one; the two should agree for every k up to
    Monte Carlo error.
    """
    master = backend.seed_state(_seed_int(seed))
    window, split, trunc = _truncated_parts(k, cert, scheme, n)
    b_mask = window.mask(int(x) for x in B)
    seed_u = backend.derive_seed(master, 1)
    seed_t = backend.derive_seed(master, 2)

    def worker_u(bi, bn):
        return backend.call("coupling_untruncated", backend.derive_seed(seed_u, bi),
                            bn, horizon, split.phi_cols, split.phi_cum,
                            window.pcols, window.pcum, window.pnnz,
                            split.c_idx, split.lam,
                            split.hcols, split.hcum, split.hnnz,
                            trunc.in_set, b_mask)

    def worker_t(bi, bn):
        return backend.call("coupling_truncated", backend.derive_seed(seed_t, bi),
                            bn, horizon, split.phi_cols, split.phi_cum,
                            trunc.exitm, trunc.tcols, trunc.tcum, trunc.tnnz,
                            split.c_idx, split.lam,
                            trunc.thcols, trunc.thcum, trunc.thnnz,
                            trunc.nu_cols, trunc.nu_cum, b_mask)

    counts_u = sum(_run_batched(worker_u, trials))
    counts_t = sum(_run_batched(worker_t, trials))
    p_u = counts_u / trials
    p_t = counts_t / trials
    var = p_u * (1 - p_u) / trials + p_t * (1 - p_t) / trials
    se = np.sqrt(var)
    diff = p_u - p_t
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf))
    return CouplingReport(horizon=horizon, trials=trials,
                          p_untruncated=p_u, p_truncated=p_t, std_error=se,
                          z_scores=z, max_abs_diff=float(np.abs(diff).max()),
                          max_abs_z=float(np.abs(z).max()))


def _killed_batch(k, cert, scheme, n, start: SparseDist, n_cycles, b_mask_set,
                  seed, cap):
    """Untruncated cycles killed at the exit time of A_n.

    Returns per-cycle (f, tau_and_Tn, killed) arrays for the indicator of
    the target set.
    """
    window, split, trunc = _truncated_parts(k, cert, scheme, n)
    start_cols, start_cum = pack_dist(start, window, "start")
    fvals = np.zeros((1, window.size))
    for x in b_mask_set:
        i = window.pos.get(int(x))
        if i is not None:
            fvals[0, i] = 1.0

    def worker(bi, bn):
        bseed = backend.derive_seed(seed, bi)
        out = backend.call("killed_cycles", bseed, bn, start_cols, start_cum,
                           window.pcols, window.pcum, window.pnnz,
                           split.c_idx, split.lam,
                           split.hcols, split.hcum, split.hnnz,
                           split.phi_cols, split.phi_cum,
                           trunc.in_set, np.uint8(1), fvals, np.int64(cap))
        if out[5] == 2:
            raise CycleLengthCap(f"cycle exceeded {cap} steps")
        return out

    parts = _run_batched(worker, n_cycles)
    f = np.concatenate([p[1][:, 0] for p in parts])
    tau = np.concatenate([p[0] for p in parts]).astype(float)
    killed = np.concatenate([p[2] for p in parts]).astype(float)
    return f, tau, killed


def pi_n_via_ratio_formula(k: KernelSpec, cert: SmallSetCert,
                           scheme: TruncationScheme, n: int,
                           B: Iterable[StateId], cycles_phi: int,
                           cycles_nu: int, seed,
                           cap: int = DEFAULT_CAP) -> RatioEstimate:
    """Estimate pi_n(B) from killed cycles of the *untruncated* chain.

    Combines phi-started and nu-started cycles killed at the exit of A_n:

        pi_n(B) = [E_phi S_B + P_phi(kill) E_nu S_B / P_nu(survive)]
                  / [E_phi L + P_phi(kill) E_nu L / P_nu(survive)]

    with S_B the pre-kill occupation of B and L = tau and T_n.  The
    standard error comes from the delta method over the five sample
    means, using within-group covariances (the two groups are
    independent).
    """
    if cycles_phi < 2 or cycles_nu < 2:
        raise InsufficientCycles("need at least 2 cycles per start law")
    master = backend.seed_state(_seed_int(seed))
    b_set = frozenset(int(x) for x in B)
    phi_f, phi_t, phi_kill = _killed_batch(
        k, cert, scheme, n, cert.phi, cycles_phi, b_set,
        backend.derive_seed(master, 1), cap)
    nu_f, nu_t, nu_kill = _killed_batch(
        k, cert, scheme, n, scheme.reentry, cycles_nu, b_set,
        backend.derive_seed(master, 2), cap)
    nu_surv = 1.0 - nu_kill

    A = phi_f.mean()
    T = phi_t.mean()
    p = phi_kill.mean()
    Bm = nu_f.mean()
    U = nu_t.mean()
    q = nu_surv.mean()
    if q <= 0.0:
        raise DegenerateDenominator(
            "no nu-started cycle regenerated before exiting A_n")
    w = p / q
    N = A + w * Bm
    D = T + w * U
    h = N / D

    # gradient of h wrt (A, T, p) and (B, U, q)
    gA = 1.0 / D
    gT = -h / D
    gp = (Bm / q - h * U / q) / D
    gB = w / D
    gU = -h * w / D
    gq = -(p / q ** 2) * (Bm - h * U) / D
    var = 0.0
    if cycles_phi > 1:
        cov_phi = np.cov(np.vstack([phi_f, phi_t, phi_kill]))
        grad = np.array([gA, gT, gp])
        var += float(grad @ np.atleast_2d(cov_phi) @ grad) / cycles_phi
    if cycles_nu > 1:
        cov_nu = np.cov(np.vstack([nu_f, nu_t, nu_surv]))
        grad = np.array([gB, gU, gq])
        var += float(grad @ np.atleast_2d(cov_nu) @ grad) / cycles_nu
    return RatioEstimate(point=float(h), std_error=math.sqrt(max(var, 0.0)),
                         n_cycles=cycles_phi + cycles_nu)
