"""Running configured experiments and writing their outputs."""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..sampling import Sampler
from ..solvers import (IterateTrace, SolverConfig, StepSchedule, run_accelerated_vr, run_adaptive,
                       run_admm, run_condat_vu, run_fista, run_gd, run_nag, run_pd3o, run_pdhg, run_pgd,
                       run_saga, run_sgd, run_spdhg, run_svrg)
from .problems import ConfigError, ExperimentConfig, Problem, Reference, build_problem, compute_reference

__all__ = [
    "CSV_SCHEMA",
    "CSV_COLUMNS",
    "MetricsRow",
    "ExperimentResult",
    "run_algorithm",
    "run_experiment",
    "metrics_rows",
    "write_csv",
    "read_csv",
    "write_pgm",
    "write_raw",
    "read_raw",
    "format_float",
]

CSV_SCHEMA = 1
CSV_COLUMNS = ("experiment", "algorithm", "seed", "k", "data_passes", "seconds", "objective", "subopt",
               "rel_dist")
STOCHASTIC = ("sgd", "saga", "sag", "svrg", "lsvrg", "acc-svrg", "acc-saga", "spdhg", "adagrad", "adam")


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    algorithm: str
    seed: int
    k: int
    data_passes: Fraction
    seconds: float | None
    objective: float
    subopt: float | None
    rel_dist: float | None


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    problem: Problem
    reference: Reference
    trace: IterateTrace
    rows: list[MetricsRow]

    @property
    def diverged(self) -> bool:
        return self.trace.diverged


def format_float(v) -> str:
    """Shortest round-trip decimal; empty for missing values."""
    if v is None:
        return ""
    return repr(float(v))


def _solver_config(cfg: ExperimentConfig, ref: Reference | None, **extra) -> SolverConfig:
    return SolverConfig(tau=cfg.tau, sigma=cfg.sigma, restart=cfg.restart, max_passes=cfg.passes,
                        x_ref=None if ref is None else ref.x, phi_ref=None if ref is None else ref.phi,
                        target_rel_dist=cfg.target_rel_dist,
                        log_every=Fraction(cfg.log_every).limit_denominator(10**6),
                        record_wall_time=cfg.record_wall_time, **extra)


def _need(problem: Problem, attr: str, algorithm: str):
    value = getattr(problem, attr)
    if value is None:
        raise ConfigError(["algorithm"], f"algorithm {algorithm!r} is not available for {problem.name}")
    return value


def run_algorithm(problem: Problem, cfg: ExperimentConfig, reference: Reference | None = None) -> IterateTrace:
    """Dispatch ``cfg.algorithm`` on ``problem``."""
    alg = cfg.algorithm
    sc = _solver_config(cfg, reference)
    x0 = problem.x0
    if alg in ("gd", "nag", "nag-sc"):
        h = _need(problem, "h", alg)
        if type(problem.g).__name__ != "ZeroFunctional":
            raise ConfigError(["algorithm"], f"{alg} needs a problem without a nonsmooth term")
        if alg == "gd":
            return run_gd(h, sc, x0)
        if alg == "nag-sc":
            sc = _solver_config(cfg, reference, momentum="nag-sc", mu=problem.extras.get("mu_sc", 0.0))
        return run_nag(h, sc, x0)
    if alg in ("pgd", "fista"):
        h = _need(problem, "h", alg)
        return (run_pgd if alg == "pgd" else run_fista)(problem.g, h, sc, x0)
    if alg in ("pdhg", "admm"):
        f, A, g = _need(problem, "pd", alg)
        return (run_pdhg if alg == "pdhg" else run_admm)(f, A, g, sc, x0)
    if alg in ("condat-vu", "pd3o"):
        f, A, g, h = _need(problem, "three", alg)
        nA = A.norm()
        L = float(h.lipschitz)
        tau = cfg.tau if cfg.tau is not None else 1.0 / (L / 2 + nA)
        sigma = cfg.sigma if cfg.sigma is not None else 0.99 * (1.0 / tau - L / 2) / nA**2
        if alg == "pd3o":
            tau = cfg.tau if cfg.tau is not None else 1.0 / L
            sigma = cfg.sigma if cfg.sigma is not None else 0.99 / (tau * nA**2)
        sc = _solver_config(cfg, reference)
        sc.tau, sc.sigma = tau, sigma
        return (run_condat_vu if alg == "condat-vu" else run_pd3o)(f, A, g, h, sc, x0, norm_A=nA)
    pp = _need(problem, "partitioned", alg)
    sampler = Sampler(cfg.sampler, pp.n, cfg.seed)
    if alg == "sgd":
        sched = None
        if cfg.tau is None or cfg.schedule != "constant":
            tau0 = cfg.tau if cfg.tau is not None else 1.0 / (2 * pp.n * pp.smoothness.L_max)
            sched = StepSchedule(cfg.schedule, tau0, cfg.schedule_c, cfg.schedule_power, pp.n)
        return run_sgd(pp, sched, sampler, sc, x0)
    if alg in ("saga", "sag"):
        return run_saga(pp, sc, sampler, form=cfg.saga_form, estimator="sag" if alg == "sag" else None,
                        allow_large_step=cfg.allow_large_step, warm_start_passes=cfg.warm_start_passes, x0=x0)
    if alg in ("svrg", "lsvrg"):
        p = cfg.loopless_p if cfg.loopless_p is not None else (1.0 / (2 * pp.n) if alg == "lsvrg" else None)
        return run_svrg(pp, sc, sampler, inner=cfg.svrg_inner, loopless_p=p, seed=cfg.seed,
                        warm_start_passes=cfg.warm_start_passes, x0=x0)
    if alg in ("acc-svrg", "acc-saga"):
        return run_accelerated_vr(pp, alg[4:], sc, sampler=sampler, inner=cfg.svrg_inner, x0=x0)
    if alg == "spdhg":
        return run_spdhg(pp, sc, sampler, x0=x0)
    sched = None
    if cfg.schedule != "constant":
        sched = StepSchedule(cfg.schedule, cfg.tau if cfg.tau is not None else 1e-2, cfg.schedule_c,
                             cfg.schedule_power, pp.n)
    return run_adaptive(pp, sc, "diag-accum" if alg == "adagrad" else "adam", sampler, schedule=sched, x0=x0)


def metrics_rows(cfg: ExperimentConfig, trace: IterateTrace) -> list[MetricsRow]:
    return [MetricsRow(cfg.experiment, cfg.algorithm, cfg.seed, r.k, r.passes, r.seconds, r.objective,
                       r.subopt, r.rel_dist) for r in trace.rows]


def write_csv(path, rows) -> None:
    """Metrics CSV: a ``schema=N`` line, the header, one line per logged row."""
    lines = [f"schema={CSV_SCHEMA}", ",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join([r.experiment, r.algorithm, str(r.seed), str(r.k), format_float(r.data_passes),
                               format_float(r.seconds), format_float(r.objective), format_float(r.subopt),
                               format_float(r.rel_dist)]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"schema={CSV_SCHEMA}":
        raise ValueError(f"{path}: not a schema={CSV_SCHEMA} metrics file")
    header = lines[1].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[2:]]


def write_pgm(path, image) -> None:
    """16-bit binary PGM, linearly scaled from the image range to [0, 65535]."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 1:
        img = img.reshape(1, -1)
    lo, hi = float(np.min(img)), float(np.max(img))
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    data = np.round(scaled * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def write_raw(path, array) -> None:
    """Little-endian float64 data plus a JSON header ``<path>.json`` with shape and dtype."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    with open(str(path) + ".json", "w") as fh:
        json.dump({"shape": list(arr.shape), "dtype": "<f8"}, fh)


def read_raw(path) -> np.ndarray:
    with open(str(path) + ".json") as fh:
        header = json.load(fh)
    return np.fromfile(path, dtype=header["dtype"]).reshape(header["shape"])


def write_config(path, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    doc = {"config": cfg.to_dict()}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def run_experiment(cfg: ExperimentConfig, out_dir=None, reference: Reference | None = None,
                   problem: Problem | None = None) -> ExperimentResult:
    """Build, solve and (if ``out_dir`` or ``cfg.out`` is set) save metrics, images and the config."""
    cfg.validate()
    problem = build_problem(cfg) if problem is None else problem
    reference = compute_reference(problem) if reference is None else reference
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        trace = run_algorithm(problem, cfg, reference)
    rows = metrics_rows(cfg, trace)
    out = out_dir if out_dir is not None else cfg.out
    if out is not None:
        save_outputs(out, cfg, problem, reference, trace, rows)
    return ExperimentResult(cfg, problem, reference, trace, rows)


def save_outputs(out, cfg, problem, reference, trace, rows, stem: str | None = None) -> None:
    os.makedirs(out, exist_ok=True)
    stem = stem or cfg.algorithm
    write_csv(os.path.join(out, f"{stem}.csv"), rows)
    img = problem.image(trace.x)
    write_pgm(os.path.join(out, f"{stem}.pgm"), img)
    write_raw(os.path.join(out, f"{stem}.f64"), img)
    write_config(os.path.join(out, f"{stem}.config.json"), cfg,
                 {"phi_ref": reference.phi, "stop_reason": trace.stop_reason, "diverged": trace.diverged,
                  "final_passes": trace.final().passes if trace.rows else None,
                  "final_objective": None if not trace.rows or not math.isfinite(trace.final().objective)
                  else trace.final().objective})
