"""Synthetic data, problem builders, references and the run harness."""

from .data import (SHEPP_LOGAN_ELLIPSES, add_gaussian_noise, beer_lambert_noise, gen_piecewise_image,
                   gen_shepp_logan, gen_sparse_spikes, spike_positions)
from .harness import (CSV_COLUMNS, CSV_SCHEMA, ExperimentResult, MetricsRow, format_float, metrics_rows,
                      read_csv, read_raw, run_algorithm, run_experiment, save_outputs, write_csv, write_pgm,
                      write_raw)
from .problems import (ALGORITHMS, EXPERIMENTS, ConfigError, ExperimentConfig, Problem, Reference,
                       build_problem, compute_reference)

__all__ = [
    "SHEPP_LOGAN_ELLIPSES", "add_gaussian_noise", "beer_lambert_noise", "gen_piecewise_image",
    "gen_shepp_logan", "gen_sparse_spikes", "spike_positions",
    "CSV_COLUMNS", "CSV_SCHEMA", "ExperimentResult", "MetricsRow", "format_float", "metrics_rows",
    "read_csv", "read_raw", "run_algorithm", "run_experiment", "save_outputs", "write_csv", "write_pgm",
    "write_raw",
    "ALGORITHMS", "EXPERIMENTS", "ConfigError", "ExperimentConfig", "Problem", "Reference",
    "build_problem", "compute_reference",
]
