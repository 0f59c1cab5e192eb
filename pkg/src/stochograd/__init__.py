"""First-order solvers for variational regularisation of linear inverse problems."""

from . import experiments, functionals, linops, sampling, solvers

__version__ = "0.1.0"

__all__ = ["experiments", "functionals", "linops", "sampling", "solvers", "__version__"]
