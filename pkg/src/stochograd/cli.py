"""Command-line entry point ``stochograd``.

Subcommands: ``phantom``, ``reference``, ``run``, ``compare``, ``diagnose``.
Settings are resolved as defaults < ``--config`` JSON file < flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .experiments import (ALGORITHMS, EXPERIMENTS, ConfigError, ExperimentConfig, build_problem,
                          compute_reference, run_experiment, write_csv, write_pgm, write_raw)
from .experiments.harness import write_config
from .experiments.problems import Reference
from .solvers import spdhg_step_guard

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_USAGE = 64
EXIT_CONFIG = 65

DEFAULT_COMPARE = {
    "spikes-deblur": ("pgd", "fista", "saga"),
    "ct-shepp-logan": ("pgd", "sgd", "saga"),
    "denoise-tv": ("pgd", "fista", "pdhg"),
    "denoise-tgv": ("pdhg",),
    "tridiag-ls": ("gd", "nag", "saga", "svrg"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON configuration file")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--algorithm", metavar="NAME",
                   help="solver name (comma-separated list for compare)")
    p.add_argument("--subsets", type=int, metavar="N", help="number of subsets n")
    p.add_argument("--passes", type=float, metavar="N", help="budget in data passes")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration field (value parsed as JSON when possible)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stochograd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    helps = {
        "phantom": "write the ground truth and the simulated data",
        "reference": "compute and save a high-accuracy reference solution",
        "run": "run one algorithm and write metrics and images",
        "compare": "run several algorithms against a shared reference",
        "diagnose": "print smoothness constants and step-size guard verdicts",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text))
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> tuple[ExperimentConfig, list[str]]:
    """Merge defaults, the config file and flag overrides.

    Returns the configuration and, for ``compare``, the algorithm list.
    """
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(["config"], f"cannot read {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(["config"], f"{args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(["config"], f"{args.config} must hold a JSON object")
        data.update(loaded.get("config", loaded) if set(loaded) <= {"config", "phi_ref", "stop_reason",
                                                                   "diverged", "final_passes",
                                                                   "final_objective"} else loaded)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        data[key.strip()] = _parse_value(value)
    flags = {"experiment": args.experiment, "seed": args.seed, "n_subsets": args.subsets,
             "passes": args.passes, "out": args.out}
    data.update({k: v for k, v in flags.items() if v is not None})
    algorithms = []
    if args.algorithm is not None:
        algorithms = [a.strip() for a in args.algorithm.split(",") if a.strip()]
        bad = [a for a in algorithms if a not in ALGORITHMS]
        if bad:
            raise ConfigError(["algorithm"], f"unknown algorithm(s): {', '.join(bad)}")
        if algorithms:
            data["algorithm"] = algorithms[0]
    cfg = ExperimentConfig.from_dict(data)
    return cfg, algorithms


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("STOCHOGRAD_THREADS", "1")))
    except ValueError:
        return 1


def _out(cfg: ExperimentConfig) -> str:
    return cfg.out if cfg.out is not None else os.path.join("runs", cfg.experiment)


def cmd_phantom(cfg: ExperimentConfig) -> int:
    problem = build_problem(cfg)
    out = _out(cfg)
    os.makedirs(out, exist_ok=True)
    truth = problem.image(problem.x_true)
    write_pgm(os.path.join(out, "truth.pgm"), truth)
    write_raw(os.path.join(out, "truth.f64"), truth)
    data = problem.data
    op = problem.extras.get("operator")
    if op is not None and hasattr(op, "n_angles"):
        data = data.reshape(op.n_angles, -1)
    write_pgm(os.path.join(out, "data.pgm"), data)
    write_raw(os.path.join(out, "data.f64"), data)
    write_config(os.path.join(out, "phantom.config.json"), cfg)
    print(f"wrote truth and data for {cfg.experiment} to {out}")
    return EXIT_OK


def cmd_reference(cfg: ExperimentConfig) -> int:
    problem = build_problem(cfg)
    ref = compute_reference(problem)
    out = _out(cfg)
    os.makedirs(out, exist_ok=True)
    write_raw(os.path.join(out, "reference.f64"), ref.x)
    write_pgm(os.path.join(out, "reference.pgm"), problem.image(ref.x))
    write_config(os.path.join(out, "reference.config.json"), cfg,
                 {"phi_ref": ref.phi, "iterations": ref.iterations, "converged": ref.converged})
    print(f"phi* = {ref.phi!r} after {ref.iterations} iterations (converged: {ref.converged})")
    return EXIT_OK


def _summary(res) -> str:
    last = res.trace.final()
    sub = "" if last.subopt is None else f" subopt={last.subopt:.6g}"
    return (f"{res.cfg.algorithm}: passes={float(last.passes):g} k={last.k} objective={last.objective:.10g}"
            f"{sub} stop={res.trace.stop_reason}")


def cmd_run(cfg: ExperimentConfig) -> int:
    if cfg.out is None:
        cfg.out = _out(cfg)
    res = run_experiment(cfg)
    print(_summary(res))
    return EXIT_DIVERGED if res.diverged else EXIT_OK


def _compare_worker(cfg_dict: dict, ref_x: np.ndarray, ref_phi: float):
    # each worker builds its own problem and sampler
    cfg = ExperimentConfig.from_dict(cfg_dict)
    problem = build_problem(cfg)
    res = run_experiment(cfg, reference=Reference(ref_x, ref_phi, 0, True), problem=problem)
    return res.rows, res.diverged, _summary(res)


def cmd_compare(cfg: ExperimentConfig, algorithms: list[str]) -> int:
    algorithms = algorithms or list(DEFAULT_COMPARE[cfg.experiment])
    out = _out(cfg)
    cfg.out = out
    problem = build_problem(cfg)
    ref = compute_reference(problem)
    configs = [cfg.replace(algorithm=a).to_dict() for a in algorithms]
    workers = min(_threads(), len(configs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_compare_worker, configs, [ref.x] * len(configs),
                                    [ref.phi] * len(configs)))
    else:
        results = [_compare_worker(c, ref.x, ref.phi) for c in configs]
    merged = [row for rows, _, _ in results for row in rows]
    write_csv(os.path.join(out, "merged.csv"), merged)
    for _, _, line in results:
        print(line)
    return EXIT_DIVERGED if any(div for _, div, _ in results) else EXIT_OK


def _verdict(ok: bool) -> str:
    return "ok" if ok else "VIOLATED"


def cmd_diagnose(cfg: ExperimentConfig) -> int:
    problem = build_problem(cfg)
    print(f"experiment: {cfg.experiment}")
    pp = problem.partitioned
    if problem.h is not None:
        print(f"L (full gradient): {float(problem.h.lipschitz)!r}")
        if cfg.tau is not None:
            print(f"guard pgd tau <= 1/L: {_verdict(cfg.tau <= 1.0 / float(problem.h.lipschitz))}")
    if pp is None:
        print("no finite-sum form; stochastic diagnostics skipped")
        return EXIT_OK
    info = pp.smoothness
    n = pp.n
    print(f"n (subsets): {n}")
    print(f"L: {info.L!r}")
    print(f"L_max: {info.L_max!r}")
    print(f"Upsilon = L/L_max: {info.upsilon:.12g}")
    sgd = 1.0 / (2 * n * info.L_max)
    saga = 1.0 / (3 * n * info.L_max)
    print(f"default tau sgd 1/(2 n L_max): {sgd!r}")
    print(f"default tau saga/svrg 1/(3 n L_max): {saga!r}")
    if cfg.tau is not None:
        print(f"guard saga tau <= 1/(3 n L_max): {_verdict(cfg.tau <= saga)}")
        print(f"guard sgd tau <= 1/(2 n L_max): {_verdict(cfg.tau <= sgd)}")
    if cfg.tau is not None and cfg.sigma is not None:
        violated = spdhg_step_guard(cfg.sigma, cfg.tau, n, np.sqrt(info.L_i))
        print(f"guard spdhg sigma*tau*n*max||A_i||^2 < 1: {_verdict(not violated)}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg, algorithms = resolve_config(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"invalid configuration: {', '.join(exc.keys)}\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            if args.command == "phantom":
                return cmd_phantom(cfg)
            if args.command == "reference":
                return cmd_reference(cfg)
            if args.command == "run":
                return cmd_run(cfg)
            if args.command == "compare":
                return cmd_compare(cfg, algorithms)
            return cmd_diagnose(cfg)
        except ConfigError as exc:
            print(f"invalid configuration: {', '.join(exc.keys)}\n{exc}", file=sys.stderr)
            return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
