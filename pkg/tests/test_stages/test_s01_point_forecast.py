#!/usr/bin/env python3
"""
Tests for src/stages/s01_point_forecast.py

Tests cover:
- Expert-model regressors and weekday dummies
- OLS fits (full rank and minimum-norm)
- Rolling point forecasts per VST
- Forecast file round trip and the stage entry point
"""
from __future__ import annotations

import pytest
import pandas as pd
import numpy as np
from pathlib import Path
import sys

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent / 'src'))

from stages.s01_point_forecast import (
    N_FEATURES,
    PointForecastMatrix,
    build_design,
    dow_dummies,
    fit_ols,
    forecast_day,
    main,
    point_mae_table,
    run_point_pipeline,
)
from utils.errors import ContractViolation, DegenerateWindowError, RangeError
from utils.panel import HOURS, HourlyPanel
from utils.transforms import make_vst


# ============================================================
# EXPERT MODEL
# ============================================================

class TestExpertModel:
    """Tests for the regressors of the expert model."""

    def test_dow_dummies(self):
        days = pd.date_range('2021-03-01', periods=7)  # Monday..Sunday
        np.testing.assert_array_equal(dow_dummies(days), np.eye(7))

    def test_build_design(self, ramp_panel):
        row = build_design(ramp_panel.price, ramp_panel.load, ramp_panel.days, day=8, hour=5)
        assert row.shape == (N_FEATURES,)
        # price = 10*day + hour, load = 100 + hour
        np.testing.assert_array_equal(row[:7], [75.0, 65.0, 15.0, 94.0, 94.0, 71.0, 105.0])
        # 2021-03-09 is a Tuesday
        np.testing.assert_array_equal(row[7:], [0, 1, 0, 0, 0, 0, 0])

    def test_build_design_needs_seven_days(self, ramp_panel):
        with pytest.raises(RangeError):
            build_design(ramp_panel.price, ramp_panel.load, ramp_panel.days, day=6, hour=1)

    def test_build_design_hour_range(self, ramp_panel):
        with pytest.raises(ContractViolation):
            build_design(ramp_panel.price, ramp_panel.load, ramp_panel.days, day=8, hour=25)


class TestFitOls:
    """Tests for fit_ols."""

    def test_exact_recovery(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 4))
        beta = np.array([1.0, -2.0, 0.5, 3.0])
        fit = fit_ols(X, X @ beta)
        np.testing.assert_allclose(fit.coef, beta, atol=1e-10)
        assert fit.rank == 4
        assert not fit.rank_deficient

    def test_rank_deficient_minimum_norm(self):
        x = np.arange(1.0, 11.0)
        X = np.column_stack([x, x])
        fit = fit_ols(X, 2 * x)
        assert fit.rank_deficient
        np.testing.assert_allclose(fit.coef, [1.0, 1.0], atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            fit_ols(np.ones((5, 2)), np.ones(4))


# ============================================================
# FORECASTING
# ============================================================

class TestForecastDay:
    """Tests for forecast_day."""

    @pytest.mark.parametrize('kind', ['asinh', 'boxcox', 'mlog', 'poly', 'npit'])
    def test_finite_forecasts(self, small_panel, kind):
        out = forecast_day(small_panel, 50, make_vst(kind), window_days=40)
        assert out.shape == (HOURS,)
        assert np.isfinite(out).all()

    def test_forecasts_near_price_level(self, small_panel):
        out = forecast_day(small_panel, 50, make_vst('asinh'), window_days=40)
        window = small_panel.price[10:50]
        assert window.min() - 50 < out.mean() < window.max() + 50

    def test_window_too_long(self, small_panel):
        with pytest.raises(RangeError):
            forecast_day(small_panel, 30, make_vst('asinh'), window_days=40)

    def test_day_beyond_panel(self, small_panel):
        with pytest.raises(RangeError):
            forecast_day(small_panel, 60, make_vst('asinh'), window_days=40)

    def test_constant_window(self):
        days = pd.date_range('2021-01-01', periods=30)
        panel = HourlyPanel(days=days, price=np.full((30, HOURS), 40.0),
                            load=np.tile(np.arange(1.0, 25.0), (30, 1)))
        with pytest.raises(DegenerateWindowError):
            forecast_day(panel, 25, make_vst('asinh'), window_days=20)

    def test_diagnostics(self, small_panel):
        res = forecast_day(small_panel, 50, make_vst('npit'), window_days=40,
                           with_diagnostics=True)
        assert res.forecasts.shape == (HOURS,)
        assert 0 <= res.clipped_hours <= HOURS


class TestRunPointPipeline:
    """Tests for run_point_pipeline."""

    def test_shape_and_order(self, small_panel):
        matrix = run_point_pipeline(small_panel, 40, 44, vsts=['asinh', 'npit'], window_days=40)
        assert matrix.values.shape == (5, HOURS, 2)
        assert matrix.vsts == ['asinh', 'npit']
        assert matrix.days[0] == small_panel.days[40]
        single = forecast_day(small_panel, 42, make_vst('npit'), window_days=40)
        np.testing.assert_array_equal(matrix.for_vst('npit')[2], single)

    def test_parallel_matches_sequential(self, small_panel):
        seq = run_point_pipeline(small_panel, 40, 43, vsts=['asinh', 'poly'], window_days=40)
        par = run_point_pipeline(small_panel, 40, 43, vsts=['asinh', 'poly'], window_days=40,
                                 n_jobs=2)
        np.testing.assert_array_equal(seq.values, par.values)

    def test_first_day_inside_window(self, small_panel):
        with pytest.raises(RangeError):
            run_point_pipeline(small_panel, 39, 45, window_days=40)

    def test_last_day_beyond_panel(self, small_panel):
        with pytest.raises(RangeError):
            run_point_pipeline(small_panel, 40, 60, window_days=40)

    def test_error_carries_context(self):
        days = pd.date_range('2021-01-01', periods=30)
        panel = HourlyPanel(days=days, price=np.full((30, HOURS), 40.0),
                            load=np.tile(np.arange(1.0, 25.0), (30, 1)))
        with pytest.raises(DegenerateWindowError) as exc:
            run_point_pipeline(panel, 20, 21, vsts=['boxcox'], window_days=20)
        assert exc.value.context['day'] == '2021-01-21'
        assert exc.value.context['vst'] == 'boxcox'


class TestPointForecastMatrix:
    """Tests for PointForecastMatrix."""

    def test_frame_roundtrip(self, small_panel):
        matrix = run_point_pipeline(small_panel, 40, 42, vsts=['asinh', 'mlog'], window_days=40)
        back = PointForecastMatrix.from_frame(matrix.to_frame())
        assert back.vsts == matrix.vsts
        assert back.days.equals(matrix.days)
        np.testing.assert_array_equal(back.values, matrix.values)

    def test_frame_layout(self):
        days = pd.date_range('2021-01-01', periods=2)
        values = np.arange(2 * HOURS * 3, dtype=float).reshape(2, HOURS, 3)
        df = PointForecastMatrix(days=days, vsts=['a', 'b', 'c'], values=values).to_frame()
        assert list(df.columns) == ['date', 'hour', 'vst', 'forecast']
        assert df.iloc[0].tolist() == ['2021-01-01', 1, 'a', 0.0]
        assert df.iloc[4].tolist() == ['2021-01-01', 2, 'b', 4.0]

    def test_mean(self):
        days = pd.date_range('2021-01-01', periods=1)
        values = np.stack([np.full((1, HOURS), 10.0), np.full((1, HOURS), 20.0)], axis=2)
        matrix = PointForecastMatrix(days=days, vsts=['a', 'b'], values=values)
        assert np.all(matrix.mean() == 15.0)

    def test_shape_checked(self):
        with pytest.raises(ContractViolation):
            PointForecastMatrix(days=pd.date_range('2021-01-01', periods=2), vsts=['a'],
                                values=np.zeros((2, HOURS, 2)))

    def test_incomplete_file(self):
        days = pd.date_range('2021-01-01', periods=1)
        df = PointForecastMatrix(days=days, vsts=['a', 'b'], values=np.zeros((1, HOURS, 2))).to_frame()
        with pytest.raises(ContractViolation):
            PointForecastMatrix.from_frame(df.iloc[:-1])


class TestMain:
    """Tests for the stage entry point."""

    def test_main_writes_outputs(self, temp_dir, small_panel):
        out = temp_dir / 'work' / 'forecasts.csv'
        matrix = main(small_panel, out, vsts=['asinh'], window_days=40, first_day=55)
        assert matrix.n_days == 5
        assert len(pd.read_csv(out)) == 5 * HOURS
        mae = pd.read_csv(temp_dir / 'work' / 'diagnostics' / 'point_mae.csv')
        assert mae['forecast'].tolist() == ['asinh', 'mean', 'naive']

    def test_point_mae_table(self, small_panel):
        matrix = run_point_pipeline(small_panel, 40, 41, vsts=['asinh'], window_days=40)
        table = point_mae_table(matrix, small_panel)
        asinh = table.set_index('forecast').loc['asinh', 'mae']
        expected = np.mean(np.abs(small_panel.price[40:42] - matrix.for_vst('asinh')))
        assert asinh == pytest.approx(expected)
