"""Canonical test models with analytically known stationary laws.

Builders self-check on construction: analytic stationary distributions
are verified against the kernel on a 200-state window to 1e-12, and the
default certificates are verified by the drift/minorization checkers.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ctmc import RateKernel, check_ctmc_drift, embedded_chain
from .drift import DriftCert, GeneralSmallSet, SmallSetCert, check_drift, \
    max_minorization_lambda
from .errors import InvalidCert, MinorizationRejected, ParamOutOfRange
from .kernel import KernelSpec, SparseDist, kernel_row
from .solve import solve_stationary_elimination, weighted_tv
from .truncation import prefix_scheme, self_loop_completion, augment

SELF_CHECK_WINDOW = 200
SELF_CHECK_TOL = 1e-12


@dataclass
class ModelSpec:
    """A named model: kernel or rate kernel, analytic law, default certs."""

    name: str
    params: dict
    kernel: KernelSpec | None = None
    rates: RateKernel | None = None
    analytic_pi: Callable[[int], SparseDist] | None = None
    cert: SmallSetCert | GeneralSmallSet | None = None
    g: Callable | None = None
    r: Callable | None = None
    drift_b: float | None = None
    drift_C: frozenset | None = None

    @property
    def is_ctmc(self) -> bool:
        return self.rates is not None

    def analytic_dist(self, upto: int = 512) -> SparseDist:
        if self.analytic_pi is None:
            raise InvalidCert(f"model {self.name} has no analytic stationary law")
        return self.analytic_pi(upto)

    def drift_cert(self, window=None) -> DriftCert:
        if self.g is None or self.r is None or self.drift_b is None:
            raise InvalidCert(f"model {self.name} has no default drift data")
        if window is None:
            window = range(101)
        return DriftCert(g=self.g, r=self.r, b=self.drift_b,
                         C=self.drift_C, window=tuple(window))


def _check_dtmc_invariance(k: KernelSpec, pi: SparseDist,
                           window: int = SELF_CHECK_WINDOW) -> None:
    acc = defaultdict(float)
    for x in range(window + 2):
        px = pi.mass(x)
        if px == 0.0:
            continue
        for y, p in kernel_row(k, x):
            acc[y] += px * p
    for y in range(window):
        if abs(acc[y] - pi.mass(y)) > SELF_CHECK_TOL:
            raise InvalidCert(
                f"analytic pi fails invariance at state {y}: "
                f"{acc[y]} vs {pi.mass(y)}")


def _check_ctmc_invariance(Q: RateKernel, pi: SparseDist,
                           window: int = SELF_CHECK_WINDOW) -> None:
    acc = defaultdict(float)
    for x in range(window + 2):
        px = pi.mass(x)
        if px == 0.0:
            continue
        for y, rate in Q.row(x).items():
            acc[y] += px * rate
        acc[x] -= px * Q.beta(x)
    for y in range(window):
        if abs(acc[y]) > SELF_CHECK_TOL:
            raise InvalidCert(f"analytic pi fails global balance at {y}: {acc[y]}")


def reflected_walk(p: float) -> ModelSpec:
    """Reflected random walk on Z_+: up with probability p, down else.

    Stationary law is geometric with ratio rho = p/(1-p).  Default
    certificate: C = {0}, phi = delta_0, lambda = P(0,0) = 1-p; Lyapunov
    data g(x) = x/(1-2p), r = 1, b = (1-p)/(1-2p) (drift slack is zero
    off C, so the builder's self-check runs at exact equality).
    """
    p = float(p)
    if not (0.0 < p < 0.5):
        raise ParamOutOfRange(f"reflected_walk needs 0 < p < 1/2, got {p}")
    q = 1.0 - p
    rho = p / q

    def row_fn(x: int):
        if x == 0:
            return {0: q, 1: p}
        return {x - 1: q, x + 1: p}

    def analytic(upto: int) -> SparseDist:
        return SparseDist({x: (1.0 - rho) * rho ** x for x in range(upto)})

    kernel = KernelSpec(row_fn=row_fn, name=f"reflected_walk(p={p})")
    scale = 1.0 / (1.0 - 2.0 * p)
    model = ModelSpec(
        name="reflected_walk", params={"p": p}, kernel=kernel,
        analytic_pi=analytic,
        cert=SmallSetCert(C=frozenset({0}), lam=q, phi=SparseDist.point(0)),
        g=lambda x: x * scale, r=lambda x: 1.0, drift_b=q * scale,
        drift_C=frozenset({0}))
    _check_dtmc_invariance(kernel, analytic(SELF_CHECK_WINDOW + 2))
    report = check_drift(kernel, model.drift_cert())
    if not report.passed:
        raise InvalidCert(f"walk drift self-check failed: {report}")
    if max_minorization_lambda(kernel, model.cert.C, model.cert.phi) <= 0:
        raise InvalidCert("walk minorization self-check failed")
    return model


def _bd_model(name: str, params: dict, up_rate, down_rate, analytic,
              g_scale: float) -> ModelSpec:
    def rate_row_fn(x: int):
        if x == 0:
            return {1: up_rate(0)}
        return {x + 1: up_rate(x), x - 1: down_rate(x)}

    rates = RateKernel(rate_row_fn=rate_row_fn, name=name)
    model = ModelSpec(
        name=name, params=params, rates=rates, analytic_pi=analytic,
        cert=SmallSetCert(C=frozenset({0}), lam=1.0, phi=SparseDist.point(1)),
        g=lambda x: x / g_scale, r=lambda x: 1.0, drift_b=0.0,
        drift_C=frozenset({0}))
    _check_ctmc_invariance(rates, analytic(SELF_CHECK_WINDOW + 2))
    report = check_ctmc_drift(rates, model.g, model.r, model.drift_C,
                              range(101))
    if not report.passed:
        raise InvalidCert(f"{name} drift self-check failed: {report}")
    emb = embedded_chain(rates)
    if max_minorization_lambda(emb, model.cert.C, model.cert.phi) <= 0:
        raise InvalidCert(f"{name} minorization self-check failed")
    return model


def birth_death_ctmc(up: float, down: float) -> ModelSpec:
    """Birth-death jump process with constant rates, up < down.

    Stationary law is geometric with ratio up/down.  The embedded chain
    leaves 0 deterministically to 1, so the default certificate is
    C = {0}, phi = delta_1, lambda = 1 (regeneration at every departure
    from 0).
    """
    up, down = float(up), float(down)
    if not (0.0 < up < down):
        raise ParamOutOfRange(f"need 0 < up < down, got ({up}, {down})")
    theta = up / down

    def analytic(upto: int) -> SparseDist:
        return SparseDist({x: (1.0 - theta) * theta ** x for x in range(upto)})

    return _bd_model("birth_death_ctmc", {"up": up, "down": down},
                     lambda x: up, lambda x: down, analytic,
                     g_scale=down - up)


def unbounded_rate_bd(up: float) -> ModelSpec:
    """Birth-death jump process with state-proportional down rates.

    Q(x, x+1) = up and Q(x, x-1) = 2*up*x, so the exit rates
    beta(x) = up*(1+2x) are unbounded; detailed balance gives a Poisson
    stationary law with mean 1/2 (independent of up).
    """
    up = float(up)
    if up <= 0.0:
        raise ParamOutOfRange(f"need up > 0, got {up}")

    def analytic(upto: int) -> SparseDist:
        masses = {}
        m = math.exp(-0.5)
        for x in range(upto):
            masses[x] = m
            m *= 0.5 / (x + 1)
        return SparseDist(masses)

    return _bd_model("unbounded_rate_bd", {"up": up},
                     lambda x: up, lambda x: 2.0 * up * x, analytic,
                     g_scale=up)


def continuous_reflected_ar(a: float, noise_scale: float, c: float = 1.0,
                            lam: float | None = None,
                            check_samples: int = 100_000) -> ModelSpec:
    """Reflected AR(1) on [0, inf): X' = max(a X + N(0, scale), 0).

    Sampler-only.  The small set is C = [0, c] with phi uniform on (0, c];
    the declared lambda (0.9 safety times the analytic floor by default)
    is validated by a Monte Carlo lower-bound check of the transition
    density over C x C.
    """
    a, noise_scale, c = float(a), float(noise_scale), float(c)
    if not (0.0 < a < 1.0):
        raise ParamOutOfRange(f"need 0 < a < 1, got {a}")
    if noise_scale <= 0.0 or c <= 0.0:
        raise ParamOutOfRange("noise_scale and c must be positive")

    norm = 1.0 / (noise_scale * math.sqrt(2.0 * math.pi))

    def noise_density(v: float) -> float:
        return norm * math.exp(-0.5 * (v / noise_scale) ** 2)

    def sampler(x: float, rng: np.random.Generator) -> float:
        return max(a * x + rng.normal(0.0, noise_scale), 0.0)

    def density(x: float, y: float) -> float:
        # density of the absolutely continuous part; the atom at 0 has
        # zero phi mass so it never enters the rejection ratio
        if y <= 0.0:
            return 0.0
        return noise_density(y - a * x)

    floor = c * noise_density(c)
    declared = 0.9 * floor if lam is None else float(lam)
    rng = np.random.default_rng(20_260_810)
    xs = rng.uniform(0.0, c, size=check_samples)
    ys = rng.uniform(0.0, c, size=check_samples)
    dens = norm * np.exp(-0.5 * ((ys - a * xs) / noise_scale) ** 2)
    if float(dens.min()) < declared / c:
        raise MinorizationRejected(
            f"declared lambda {declared} exceeds empirical density floor "
            f"{float(dens.min()) * c}")

    cert = GeneralSmallSet(
        member=lambda x: 0.0 <= x <= c,
        lam=declared,
        phi_sampler=lambda g: float(g.uniform(0.0, c)),
        phi_density=lambda y: (1.0 / c) if 0.0 < y <= c else 0.0)
    kernel = KernelSpec(sampler=sampler, density=density,
                        name=f"reflected_ar(a={a})")
    return ModelSpec(name="continuous_reflected_ar",
                     params={"a": a, "noise_scale": noise_scale, "c": c,
                             "lambda": declared},
                     kernel=kernel, cert=cert)


def bad_augmentation_demo(p: float, levels=None) -> list[dict]:
    """Side-by-side l1 error of re-entry versus self-loop completions.

    Both are augmentations of the reflected walk truncation; the table
    shows how the re-entry (nu = delta_0) column behaves against the
    diagonal self-loop completion.  No claim is made about limits.
    """
    model = reflected_walk(p)
    if levels is None:
        levels = range(1, 41)
    scheme = prefix_scheme(SparseDist.point(0))
    reference = model.analytic_dist(2048)
    rows = []
    for n in levels:
        pin = solve_stationary_elimination(augment(model.kernel, scheme, n))
        ploop = solve_stationary_elimination(
            self_loop_completion(model.kernel, scheme, n))
        rows.append({
            "level": int(n),
            "dist_reentry": weighted_tv(pin.pi, reference),
            "dist_selfloop": weighted_tv(ploop.pi, reference),
        })
    return rows


_REGISTRY = {
    "reflected_walk": reflected_walk,
    "birth_death_ctmc": birth_death_ctmc,
    "unbounded_rate_bd": unbounded_rate_bd,
    "continuous_reflected_ar": continuous_reflected_ar,
}


def build_model(name: str, params: dict) -> ModelSpec:
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise ParamOutOfRange(
            f"unknown model {name!r}; known: {sorted(_REGISTRY)}") from None
    return builder(**params)
