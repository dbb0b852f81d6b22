"""Config-driven experiment runners: convergence studies, verification
reports, cross-validation of exact solves against simulation."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import models as models_mod
from .ctmc import (check_ctmc_drift, embedded_chain, rate_kernel_from_table,
                   simulate_jump_cycles, solve_stationary_ctmc,
                   truncate_rate_kernel)
from .drift import (SmallSetCert, check_drift, check_r_regularity,
                    default_ladder, max_minorization_lambda, DriftCert)
from .errors import ConfigError, NoStabilization, NumericalError, TruncaugError
from .kernel import SparseDist, indicator, load_kernel_csv
from .models import ModelSpec
from .regen import ratio_estimator, simulate_cycles, simulate_truncated_cycles
from .solve import power_iterate, solve_stationary_elimination, weighted_tv
from .truncation import augment, scheme_from_config

CSV_HEADER = "level,set_size,distance_r,solver_residual,method"


def _weight_fn(name: str) -> Callable[[int], float]:
    if name in ("unit", "one", "1"):
        return lambda x: 1.0
    if name in ("one_plus_x", "1+x", "affine"):
        return lambda x: 1.0 + float(x)
    raise ConfigError(f"unknown weight {name!r}; use 'unit' or 'one_plus_x'")


def _dist_from_cfg(doc) -> SparseDist:
    if isinstance(doc, Mapping):
        return SparseDist({int(x): float(p) for x, p in doc.items()})
    return SparseDist({int(x): float(p) for x, p in doc})


@dataclass
class ExperimentConfig:
    """Validated experiment description (see README for the JSON layout)."""

    model: ModelSpec
    scheme: object
    levels: list[int]
    r: Callable[[int], float]
    r_name: str
    solver: dict
    simulation: dict
    reference: dict
    outputs: dict
    cert: SmallSetCert | None
    drift_cfg: dict | None
    rreg_cfg: dict | None
    cross_cfg: dict | None
    raw: dict = field(default_factory=dict)


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a JSON object")
    model_doc = doc.get("model")
    if model_doc is None:
        raise ConfigError("config needs a 'model' entry")
    try:
        if isinstance(model_doc, str):
            model = models_mod.build_model(model_doc, {})
        elif "rates" in model_doc:
            rk = rate_kernel_from_table(model_doc["rates"], name="config-rates")
            model = ModelSpec(name="config-rates", params={}, rates=rk)
        elif "kernel_csv" in model_doc:
            k = load_kernel_csv(model_doc["kernel_csv"])
            model = ModelSpec(name="config-kernel", params={}, kernel=k)
        else:
            model = models_mod.build_model(model_doc["model"],
                                           model_doc.get("params", {}))
    except TruncaugError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad model entry: {err}") from err

    base_kernel = model.kernel if model.kernel is not None else \
        (embedded_chain(model.rates) if model.rates is not None else None)
    try:
        scheme = scheme_from_config(doc, kernel=base_kernel, g=model.g)
    except TruncaugError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad truncation entry: {err}") from err

    levels = [int(n) for n in doc.get("levels", [])]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("levels must be strictly increasing")

    simulation = dict(doc.get("simulation", {}))
    if simulation and "seed" not in simulation:
        raise ConfigError("simulation options require a seed")

    cert = model.cert
    if "cert" in doc:
        cd = doc["cert"]
        C = [int(x) for x in cd.get("C", [])]
        if not C:
            raise ConfigError("cert override needs a nonempty C")
        cert = SmallSetCert(C=frozenset(C), lam=float(cd["lambda"]),
                            phi=_dist_from_cfg(cd["phi"]),
                            m=int(cd.get("m", 1)))

    return ExperimentConfig(
        model=model, scheme=scheme, levels=levels,
        r=_weight_fn(doc.get("weight", "unit")),
        r_name=doc.get("weight", "unit"),
        solver=dict(doc.get("solver", {})),
        simulation=simulation,
        reference=dict(doc.get("reference", {})),
        outputs=dict(doc.get("outputs", {})),
        cert=cert,
        drift_cfg=doc.get("drift"),
        rreg_cfg=doc.get("r_regularity"),
        cross_cfg=doc.get("cross_validation"),
        raw=dict(doc))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return parse_config(doc)


def _threads() -> int:
    n = int(os.environ.get("TRUNCAUG_THREADS", "0") or 0)
    return n if n > 0 else min(4, os.cpu_count() or 1)


def _solve_level(cfg: ExperimentConfig, n: int):
    if cfg.model.is_ctmc:
        Qn = truncate_rate_kernel(cfg.model.rates, cfg.scheme, n)
        return solve_stationary_ctmc(Qn), len(cfg.scheme.members(n))
    aug = augment(cfg.model.kernel, cfg.scheme, n)
    method = cfg.solver.get("method", "gth")
    if method == "power":
        result = power_iterate(aug, tol=cfg.solver.get("tol", 1e-12),
                               max_iters=cfg.solver.get("max_iters", 100_000))
    elif method == "gth":
        result = solve_stationary_elimination(aug)
    else:
        raise ConfigError(f"unknown solver method {method!r}")
    result.level = n
    return result, len(aug.states)


def _reference_pi(cfg: ExperimentConfig) -> tuple[SparseDist, dict]:
    ref = dict(cfg.reference)
    kind = ref.get("type", "analytic" if cfg.model.analytic_pi else "surrogate")
    if kind == "analytic":
        if cfg.model.analytic_pi is None:
            raise ConfigError("model has no analytic stationary law; "
                              "use a surrogate reference")
        return cfg.model.analytic_dist(2048), {"type": "analytic"}
    n_ref = int(ref.get("level", 4 * max(cfg.levels))) if cfg.levels else \
        int(ref["level"])
    result, _ = _solve_level(cfg, n_ref)
    return result.pi, {"type": "surrogate", "level": n_ref,
                       "caveat": "reference is itself a truncation; distances "
                                 "below its own error are not meaningful"}


def run_convergence_study(cfg: ExperimentConfig) -> dict:
    """Solve every level, measure the r-weighted distance to the reference.

    Per-level numerical failures are recorded as row entries and do not
    stop the other levels.  Rows are assembled in level order regardless
    of the worker pool's schedule.
    """
    if not cfg.levels:
        raise ConfigError("convergence study needs a 'levels' list")
    reference, ref_info = _reference_pi(cfg)

    def one(n: int):
        try:
            result, size = _solve_level(cfg, n)
            return {"level": n, "set_size": size,
                    "distance_r": weighted_tv(result.pi, reference, cfg.r),
                    "solver_residual": result.residual,
                    "method": result.method}
        except NumericalError as err:
            return {"level": n, "set_size": None, "distance_r": None,
                    "solver_residual": None, "method": "error",
                    "error": f"{type(err).__name__}: {err}"}

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = list(pool.map(one, cfg.levels))
    good = [row["distance_r"] for row in rows if row["distance_r"] is not None]
    tail = good[len(good) // 2:]
    monotone = all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(tail, tail[1:]))
    return {"rows": rows, "reference": ref_info, "weight": cfg.r_name,
            "monotone_tail": bool(monotone)}


def study_csv_lines(report: dict) -> list[str]:
    lines = [CSV_HEADER]
    for row in report["rows"]:
        if row["distance_r"] is None:
            lines.append(f"{row['level']},,,,{row['method']}")
        else:
            lines.append(f"{row['level']},{row['set_size']},"
                         f"{row['distance_r']!r},{row['solver_residual']!r},"
                         f"{row['method']}")
    return lines


def write_study_outputs(report: dict, outputs: dict, outdir: str) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    written = []
    csv_path = os.path.join(outdir, outputs.get("csv", "study.csv"))
    with open(csv_path, "w") as fh:
        fh.write("\n".join(study_csv_lines(report)) + "\n")
    written.append(csv_path)
    json_path = os.path.join(outdir, outputs.get("json", "study.json"))
    with open(json_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(json_path)
    plot_path = os.path.join(outdir, outputs.get("plot", "study.dat"))
    with open(plot_path, "w") as fh:
        for row in report["rows"]:
            if row["distance_r"] is not None:
                fh.write(f"{row['level']} {row['distance_r']!r}\n")
    written.append(plot_path)
    script_path = plot_path.rsplit(".", 1)[0] + ".gp"
    with open(script_path, "w") as fh:
        fh.write("set logscale y\n"
                 "set xlabel 'truncation level'\n"
                 "set ylabel 'weighted TV distance'\n"
                 f"plot '{os.path.basename(plot_path)}' using 1:2 "
                 "with linespoints title 'distance'\n")
    written.append(script_path)
    return written


def run_verification(cfg: ExperimentConfig) -> dict:
    """Aggregate drift, minorization, and r-regularity checks."""
    model = cfg.model
    report: dict = {"model": model.name}
    window = range(int((cfg.drift_cfg or {}).get("window", 101)))
    if model.is_ctmc:
        if model.g is None:
            raise ConfigError("verification needs drift data (g, r)")
        drift_rep = check_ctmc_drift(model.rates, model.g, model.r,
                                     model.drift_C, window)
        report["drift"] = drift_rep.to_json()
        base = embedded_chain(model.rates)
    else:
        dcfg = cfg.drift_cfg or {}
        cert = DriftCert(g=model.g, r=model.r,
                         b=float(dcfg.get("b", model.drift_b)),
                         C=frozenset(dcfg.get("C", model.drift_C)),
                         window=tuple(window))
        drift_rep = check_drift(model.kernel, cert)
        report["drift"] = drift_rep.to_json()
        base = model.kernel
    lam_max = 0.0
    if cfg.cert is not None:
        lam_max = max_minorization_lambda(base, cfg.cert.C, cfg.cert.phi,
                                          m=cfg.cert.m,
                                          A1=cfg.scheme.members(1)
                                          if cfg.cert.m > 1 else None)
        report["minorization"] = {
            "lambda_max": lam_max,
            "cert_lambda": cfg.cert.lam,
            "passed": bool(lam_max > 0.0 and cfg.cert.lam <= lam_max + 1e-12),
        }
    if not model.is_ctmc and model.r is not None:
        rcfg = cfg.rreg_cfg or {}
        nu = _dist_from_cfg(rcfg["nu"]) if "nu" in rcfg else cfg.scheme.reentry
        ladder = rcfg.get("ladder", default_ladder())
        C = cfg.cert.C if cfg.cert is not None else model.drift_C
        try:
            rrep = check_r_regularity(base, nu, C, model.r, ladder,
                                      g=model.g)
            report["r_regularity"] = rrep.to_json()
        except NoStabilization as err:
            report["r_regularity"] = {"passed": False,
                                      "ladder_values": err.ladder_values,
                                      "error": str(err)}
    passes = [report["drift"]["passed"]]
    if "minorization" in report:
        passes.append(report["minorization"]["passed"])
    if "r_regularity" in report:
        passes.append(report["r_regularity"]["passed"])
    report["all_pass"] = bool(all(passes))
    return report


def _sim_functionals(cfg: ExperimentConfig) -> dict[str, Callable]:
    spec = cfg.simulation.get("functionals")
    if not spec:
        return {"ind_0": indicator([0])}
    out = {}
    for name, states in spec.items():
        out[name] = indicator(states)
    return out


def run_simulation(cfg: ExperimentConfig) -> dict:
    """Regenerative simulation per the config; returns estimates + diagnostics."""
    sim = cfg.simulation
    if not sim:
        raise ConfigError("config has no 'simulation' section")
    if cfg.cert is None:
        raise ConfigError("simulation needs a certificate")
    cycles = int(sim.get("cycles", 10_000))
    seed = int(sim["seed"])
    cap = int(sim.get("cap", 10_000_000))
    level = sim.get("level")
    functionals = _sim_functionals(cfg)
    if cfg.model.is_ctmc:
        records, diag = simulate_jump_cycles(
            cfg.model.rates, cfg.cert, cycles, functionals, seed,
            scheme=cfg.scheme if level is not None else None,
            level=int(level) if level is not None else None, cap=cap)
    elif level is not None:
        records, diag = simulate_truncated_cycles(
            cfg.model.kernel, cfg.cert, cfg.scheme, int(level), cycles,
            functionals, seed, cap=cap)
    else:
        records, diag = simulate_cycles(cfg.model.kernel, cfg.cert, cycles,
                                        functionals, seed, cap=cap)
    estimates = []
    for name in functionals:
        est = ratio_estimator(records, name)
        estimates.append({"functional": name, **est.to_json()})
    return {"estimates": estimates,
            "diagnostics": {"gamma_rate": diag.gamma_rate,
                            "mean_tau": diag.mean_tau}}


def run_cross_validation(cfg: ExperimentConfig) -> dict:
    """Compare exact level-n stationary masses against simulation estimates."""
    cross = cfg.cross_cfg or {}
    sim = cfg.simulation
    if not sim:
        raise ConfigError("cross validation needs simulation options")
    if cfg.cert is None:
        raise ConfigError("cross validation needs a certificate")
    level = int(cross.get("level", sim.get("level", max(cfg.levels, default=0))))
    if level < 1:
        raise ConfigError("cross validation needs a positive level")
    cycles = int(cross.get("cycles", sim.get("cycles", 10_000)))
    seed = int(sim["seed"])
    sets = cross.get("sets") or [[0], [1]]
    functionals = {f"set_{i}": indicator(states)
                   for i, states in enumerate(sets)}
    exact, _ = _solve_level(cfg, level)
    if cfg.model.is_ctmc:
        records, diag = simulate_jump_cycles(cfg.model.rates, cfg.cert, cycles,
                                             functionals, seed,
                                             scheme=cfg.scheme, level=level)
    else:
        records, diag = simulate_truncated_cycles(cfg.model.kernel, cfg.cert,
                                                  cfg.scheme, level, cycles,
                                                  functionals, seed)
    entries = []
    all_within = True
    for i, states in enumerate(sets):
        est = ratio_estimator(records, f"set_{i}")
        target = sum(exact.pi.mass(x) for x in states)
        z = est.z_against(target)
        if target >= 1e-3 and abs(z) > 3.0:
            all_within = False
        entries.append({"set": [int(x) for x in states], "exact": target,
                        "estimate": est.point, "std_error": est.std_error,
                        "z": z})
    return {"level": level, "entries": entries, "all_within_3se": all_within,
            "diagnostics": {"gamma_rate": diag.gamma_rate,
                            "mean_tau": diag.mean_tau}}


def run_solve(cfg: ExperimentConfig, level: int | None = None) -> dict:
    n = level if level is not None else (max(cfg.levels) if cfg.levels else None)
    if n is None:
        raise ConfigError("solve needs a level (config 'levels' or --level)")
    result, size = _solve_level(cfg, int(n))
    out = result.to_json()
    out["level"] = int(n)
    out["set_size"] = size
    return out
