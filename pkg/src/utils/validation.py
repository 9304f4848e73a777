#!/usr/bin/env python3
"""
Rule-based checks on long hourly market frames.

Rules are small callables over a DataFrame in the ``date, hour, price, load``
layout returning ``(passed, message)``. A validator runs them in order and
collects a report; ingest turns error-level failures into typed data errors.

Usage
-----
from utils.validation import DataValidator, required_columns, finite_values

report = DataValidator().add_rules([
    required_columns(['date', 'hour', 'price', 'load']),
    finite_values(['price', 'load']),
]).validate(df)
report.raise_for_errors(StructuralError, "Panel failed validation")
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Type

import numpy as np
import pandas as pd

from utils.errors import DataError


Severity = Literal['error', 'warning']


# ============================================================
# DATA STRUCTURES
# ============================================================

@dataclass
class ValidationRule:
    """
    A named check.

    Attributes
    ----------
    name : str
        Short rule name shown in reports
    check : Callable
        DataFrame -> (passed, message)
    severity : str
        'error' failures block ingest; 'warning' failures are only reported
    """
    name: str
    check: Callable[[pd.DataFrame], tuple[bool, str]]
    severity: Severity = 'error'


@dataclass
class ValidationResult:
    rule_name: str
    passed: bool
    message: str
    severity: Severity


@dataclass
class ValidationReport:
    """Outcome of every rule, in the order they ran."""
    results: list = field(default_factory=list)

    def failures(self, severity: Optional[Severity] = None) -> list:
        return [r for r in self.results
                if not r.passed and (severity is None or r.severity == severity)]

    @property
    def has_errors(self) -> bool:
        return bool(self.failures('error'))

    @property
    def has_warnings(self) -> bool:
        return bool(self.failures('warning'))

    @property
    def passed(self) -> bool:
        return not self.failures()

    def format(self) -> str:
        """One line per failed rule, errors first."""
        failed = self.failures('error') + self.failures('warning')
        if not failed:
            return f"All {len(self.results)} checks passed"
        return "\n".join(f"  [{r.severity.upper()}] {r.rule_name}: {r.message}" for r in failed)

    def raise_for_errors(self, error_cls: Type[DataError] = DataError,
                         message: str = "Validation failed", **context) -> 'ValidationReport':
        """
        Raise ``error_cls`` listing the failed error-level rules, if any.

        Returns the report otherwise, so calls can be chained.
        """
        if self.has_errors:
            raise error_cls(f"{message}:\n{self.format()}", **context)
        return self


# ============================================================
# VALIDATOR
# ============================================================

class DataValidator:
    """
    Ordered collection of rules.

    Examples
    --------
    >>> report = DataValidator().add_rule(contiguous_dates()).validate(df)
    >>> report.has_errors
    False
    """

    def __init__(self):
        self.rules: list[ValidationRule] = []

    def add_rule(self, rule: ValidationRule) -> 'DataValidator':
        self.rules.append(rule)
        return self

    def add_rules(self, rules: list[ValidationRule]) -> 'DataValidator':
        self.rules.extend(rules)
        return self

    def validate(self, df: pd.DataFrame) -> ValidationReport:
        """
        Run every rule on ``df``.

        A rule that raises is recorded as a failure with its exception text,
        so one broken rule does not hide the others.
        """
        report = ValidationReport()
        for rule in self.rules:
            try:
                passed, message = rule.check(df)
            except Exception as e:
                passed, message = False, f"Rule execution error: {e}"
            report.results.append(ValidationResult(rule.name, bool(passed), message,
                                                   rule.severity))
        return report


# ============================================================
# COLUMN RULES
# ============================================================

def required_columns(columns: list[str], severity: Severity = 'error') -> ValidationRule:
    """All of ``columns`` are present."""
    def check(df: pd.DataFrame) -> tuple[bool, str]:
        missing = [c for c in columns if c not in df.columns]
        if missing:
            return False, f"Missing columns {missing}; found {list(df.columns)}"
        return True, "All columns present"

    return ValidationRule('required_columns', check, severity)


def no_missing_values(columns: list[str], severity: Severity = 'error') -> ValidationRule:
    """No NaN in ``columns`` (absent columns are left to ``required_columns``)."""
    def check(df: pd.DataFrame) -> tuple[bool, str]:
        counts = {c: int(df[c].isna().sum()) for c in columns if c in df.columns}
        missing = {c: n for c, n in counts.items() if n}
        if missing:
            return False, f"Missing values {missing}"
        return True, "No missing values"

    return ValidationRule('no_missing_values', check, severity)


def finite_values(columns: list[str], severity: Severity = 'error') -> ValidationRule:
    """Numeric ``columns`` hold no NaN or +/-inf."""
    def check(df: pd.DataFrame) -> tuple[bool, str]:
        bad = {}
        for col in columns:
            if col in df.columns:
                values = pd.to_numeric(df[col], errors='coerce').to_numpy(dtype=float)
                n_bad = int((~np.isfinite(values)).sum())
                if n_bad:
                    bad[col] = n_bad
        if bad:
            return False, f"Non-finite values {bad}"
        return True, "All values finite"

    return ValidationRule('finite_values', check, severity)


def value_range(
    column: str,
    min_val: Optional[float] = None,
    max_val: Optional[float] = None,
    severity: Severity = 'error',
) -> ValidationRule:
    """
    Values of ``column`` lie in ``[min_val, max_val]``.

    Parameters
    ----------
    column : str
        Column to check
    min_val, max_val : float, optional
        Inclusive bounds; None leaves that side open
    severity : str
        'error' or 'warning'
    """
    def check(df: pd.DataFrame) -> tuple[bool, str]:
        if column not in df.columns:
            return False, f"Column '{column}' not found"
        values = df[column].dropna()
        issues = []
        if min_val is not None and (values < min_val).any():
            issues.append(f"{int((values < min_val).sum())} below {min_val}")
        if max_val is not None and (values > max_val).any():
            issues.append(f"{int((values > max_val).sum())} above {max_val}")
        if issues:
            return False, f"'{column}': " + ", ".join(issues)
        return True, f"'{column}' within [{min_val}, {max_val}]"

    return ValidationRule(f'value_range:{column}', check, severity)


# ============================================================
# CALENDAR RULES
# ============================================================

def rectangular_panel(
    date_col: str = 'date',
    hours_per_day: int = 24,
    severity: Severity = 'error',
) -> ValidationRule:
    """Every date carries exactly ``hours_per_day`` rows."""
    def check(df: pd.DataFrame) -> tuple[bool, str]:
        counts = df.groupby(date_col).size()
        bad = counts[counts != hours_per_day]
        if len(bad):
            sample = {str(k): int(v) for k, v in bad.head(5).items()}
            return False, f"{len(bad)} days without {hours_per_day} hours, e.g. {sample}"
        return True, f"All {len(counts)} days have {hours_per_day} hours"

    return ValidationRule('rectangular_panel', check, severity)


def contiguous_dates(date_col: str = 'date', severity: Severity = 'error') -> ValidationRule:
    """No calendar day is missing between the first and last date."""
    def check(df: pd.DataFrame) -> tuple[bool, str]:
        dates = pd.DatetimeIndex(pd.to_datetime(pd.Series(df[date_col].unique()))).sort_values()
        if len(dates) == 0:
            return False, "No dates"
        missing = pd.date_range(dates[0], dates[-1], freq='D').difference(dates)
        if len(missing):
            first = missing[0].date().isoformat()
            return False, f"{len(missing)} calendar days missing (first: {first})"
        return True, f"{len(dates)} contiguous days"

    return ValidationRule('contiguous_dates', check, severity)
