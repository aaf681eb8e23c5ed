"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so keep the taxonomy small:
bad values/config, degenerate numerical input, and refused enumeration
budgets. Plain OSError covers I/O.
"""


class ConfigError(ValueError):
    """Inconsistent or out-of-range configuration / argument values."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input (e.g. all-zero precoder, rank-deficient ZF)."""


class BudgetError(RuntimeError):
    """Requested computation exceeds an explicit enumeration budget."""
