#!/usr/bin/env python3
"""
Tests for src/utils/validation.py

Tests cover:
- DataValidator operations and chaining
- Built-in validators on market frames
- Calendar rules (rectangular panel, contiguous dates)
- ValidationReport formatting
"""
from __future__ import annotations

import pytest
import numpy as np
from pathlib import Path
import sys

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent / 'src'))

from utils.errors import StructuralError
from utils.validation import (
    ValidationRule,
    ValidationReport,
    DataValidator,
    contiguous_dates,
    finite_values,
    no_missing_values,
    rectangular_panel,
    required_columns,
    value_range,
)


# ============================================================
# VALIDATOR TESTS
# ============================================================

class TestDataValidator:
    """Tests for DataValidator class."""

    def test_method_chaining(self):
        """add_rule and add_rules return the validator."""
        validator = DataValidator()
        result = validator.add_rule(required_columns(['date'])).add_rules([
            no_missing_values(['date']),
        ])
        assert result is validator
        assert len(validator.rules) == 2

    def test_validate_all_pass(self, market_df):
        """A clean market frame passes every rule."""
        report = DataValidator().add_rules([
            required_columns(['date', 'hour', 'price', 'load']),
            no_missing_values(['price', 'load']),
            value_range('hour', 1, 24, severity='error'),
        ]).validate(market_df)
        assert report.passed
        assert not report.has_errors

    def test_rule_exception_is_failure(self, market_df):
        """A rule that raises is recorded as failed, not propagated."""
        def boom(df):
            raise KeyError('nope')

        report = DataValidator().add_rule(ValidationRule('boom', boom)).validate(market_df)
        assert report.has_errors
        assert 'Rule execution error' in report.results[0].message

    def test_raise_for_errors(self, market_df):
        """Error-level failures raise the requested DataError subclass."""
        df = market_df.drop(columns=['load'])
        report = DataValidator().add_rule(required_columns(['load'])).validate(df)
        with pytest.raises(StructuralError, match='Bad frame') as exc:
            report.raise_for_errors(StructuralError, 'Bad frame', file='x.csv')
        assert exc.value.context == {'file': 'x.csv'}
        assert exc.value.exit_code == 2

    def test_warning_does_not_raise(self, market_df):
        """Warning-level failures are reported but do not raise."""
        report = DataValidator().add_rule(
            value_range('price', max_val=0.0, severity='warning')
        ).validate(market_df).raise_for_errors()
        assert report.has_warnings
        assert not report.has_errors


# ============================================================
# BUILT-IN VALIDATOR TESTS
# ============================================================

class TestColumnRules:
    """Tests for column-level rules."""

    def test_missing_column(self, market_df):
        ok, msg = required_columns(['date', 'spot']).check(market_df)
        assert not ok
        assert 'spot' in msg

    def test_missing_values(self, market_df):
        df = market_df.copy()
        df.loc[3, 'price'] = np.nan
        ok, _ = no_missing_values(['price']).check(df)
        assert not ok

    def test_non_finite(self, market_df):
        df = market_df.copy()
        df.loc[0, 'load'] = np.inf
        ok, _ = finite_values(['load']).check(df)
        assert not ok

    def test_hour_range(self, market_df):
        df = market_df.copy()
        df.loc[5, 'hour'] = 25
        ok, msg = value_range('hour', 1, 24).check(df)
        assert not ok
        assert 'above 24' in msg


class TestCalendarRules:
    """Tests for panel-shape rules."""

    def test_rectangular(self, market_df):
        ok, _ = rectangular_panel('date', 24).check(market_df)
        assert ok

    def test_short_day(self, market_df):
        ok, msg = rectangular_panel('date', 24).check(market_df.iloc[1:])
        assert not ok
        assert '1 days' in msg

    def test_contiguous(self, market_df):
        ok, _ = contiguous_dates('date').check(market_df)
        assert ok

    def test_gap_detected(self, market_df):
        df = market_df[market_df['date'] != '2021-03-02']
        ok, msg = contiguous_dates('date').check(df)
        assert not ok
        assert '2021-03-02' in msg


# ============================================================
# VALIDATION REPORT TESTS
# ============================================================

class TestValidationReport:
    """Tests for ValidationReport class."""

    def test_empty_report(self):
        report = ValidationReport()
        assert report.passed
        assert not report.has_errors

    def test_report_format(self, market_df):
        report = DataValidator().add_rule(required_columns(['spot'])).validate(market_df)
        assert report.format().startswith('  [ERROR] required_columns: Missing columns')

    def test_passing_report_format(self, market_df):
        report = DataValidator().add_rule(contiguous_dates('date')).validate(market_df)
        assert report.format() == 'All 1 checks passed'
        assert report.failures() == []
