#!/usr/bin/env python3
"""
Exception hierarchy for the forecasting pipeline.

Library code raises these; only ``pipeline.py`` turns them into exit codes.

Exit codes
----------
0 : success
1 : configuration error
2 : data error (parsing, calendar structure, insufficient history)
3 : numeric error (degenerate windows, solver failures, singular matrices)

Usage
-----
from utils.errors import DataError, RangeError

try:
    ...
except RangeError as err:
    raise err.add_context(day='2017-06-29', hour=5)
"""
from __future__ import annotations

from typing import Any, Optional

import numpy as np


class PipelineError(Exception):
    """Base error carrying an exit code and stage context."""

    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: dict[str, Any] = dict(context)

    def add_context(self, **context: Any) -> 'PipelineError':
        """Attach context (day, hour, vst, model, ...) and return self."""
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.message
        ctx = ', '.join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} [{ctx}]"


# ============================================================
# CONFIGURATION
# ============================================================

class ConfigError(PipelineError, ValueError):
    """Invalid run configuration or parameter outside its validity range."""

    exit_code = 1


# ============================================================
# DATA
# ============================================================

class DataError(PipelineError, ValueError):
    """Problem with input data."""

    exit_code = 2


class ParseError(DataError):
    """Malformed input row."""

    def __init__(self, message: str, line: Optional[int] = None, **context: Any):
        if line is not None:
            context['line'] = line
        super().__init__(message, **context)
        self.line = line


class StructuralError(DataError):
    """Calendar is not contiguous or the panel is not rectangular."""


class UnrepairableError(DataError):
    """Gap in the hourly series too long to interpolate."""


class RangeError(DataError, IndexError):
    """Not enough history before the requested day."""


# ============================================================
# NUMERIC
# ============================================================

class NumericError(PipelineError, ArithmeticError):
    """Numerical failure."""

    exit_code = 3


class DegenerateWindowError(NumericError):
    """Calibration sample with zero mean absolute deviation."""


class SolverError(NumericError):
    """Optimization problem could not be solved."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None, **context: Any):
        super().__init__(message, **context)
        self.diagnostics = diagnostics or {}


class ConvergenceError(SolverError):
    """Iterative solver stopped short of its tolerance (budget spent or line search stalled)."""

    def __init__(self, message: str, last_iterate: Optional[np.ndarray] = None,
                 diagnostics: Optional[dict] = None, **context: Any):
        super().__init__(message, diagnostics=diagnostics, **context)
        self.last_iterate = last_iterate


class SingularMatrixError(NumericError):
    """Covariance or design matrix could not be inverted."""


class ContractViolation(NumericError):
    """Input violates a documented precondition (e.g. non-monotone curve)."""


class InvariantViolation(NumericError):
    """Internal state left its admissible set."""
