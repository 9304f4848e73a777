#!/usr/bin/env python3
"""
Tests for src/stages/s03_evaluation.py

Tests cover:
- MAE, coverage and PICP
- Kupiec unconditional-coverage test and its null p-value distribution
- Pinball scores and their aggregates
- CPA test and the per-period score report
- Stage entry point outputs
"""
from __future__ import annotations

import json

import pytest
import pandas as pd
import numpy as np
from scipy.stats import binom, kstest
from pathlib import Path
import sys

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent / 'src'))

from stages.s01_point_forecast import PointForecastMatrix
from stages.s02_prob_forecast import CurveSet
from stages.s03_evaluation import (
    EXTREME_PERCENTILES,
    aggregate_pinball,
    coverage,
    cpa_matrix,
    cpa_test,
    daily_loss,
    kupiec_test,
    main,
    mae,
    pinball,
    pinball_scores,
    score_period,
)
from utils.config import PeriodSpec
from utils.errors import ContractViolation, RangeError, SingularMatrixError
from utils.panel import HOURS
from utils.quantile_solvers import QUANTILE_GRID


def _ladder(n_days: int = 1) -> np.ndarray:
    """Curves whose k-th percentile equals k for every cell."""
    return np.tile(np.arange(1.0, 100.0), (n_days, HOURS, 1))


def _kupiec_null(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Distinct Kupiec p-values of n Bernoulli(alpha) hits and their null CDF."""
    hits = np.arange(n + 1)
    pvals = np.array([kupiec_test(np.r_[np.ones(k), np.zeros(n - k)], alpha).p_value
                      for k in hits])
    values, inverse = np.unique(pvals, return_inverse=True)
    mass = np.bincount(inverse.reshape(-1), weights=binom.pmf(hits, n, alpha))
    return values, np.cumsum(mass)


# ============================================================
# POINT AND COVERAGE
# ============================================================

class TestMae:
    """Tests for mae."""

    def test_perfect(self):
        p = np.arange(48.0).reshape(2, HOURS)
        assert mae(p, p) == 0.0

    def test_constant_error(self):
        p = np.zeros((3, HOURS))
        assert mae(p + 2.0, p) == pytest.approx(2.0)

    def test_single_outlier(self):
        errors = np.ones((1, HOURS))
        errors[0, 7] = 25.0
        assert mae(errors, np.zeros((1, HOURS))) == pytest.approx(2.0)

    def test_misaligned(self):
        with pytest.raises(ContractViolation):
            mae(np.zeros((2, HOURS)), np.zeros((3, HOURS)))


class TestCoverage:
    """Tests for coverage and PICP."""

    def test_always_inside(self):
        cov = coverage(_ladder(2), np.full((2, HOURS), 50.0), 90)
        assert cov.picp == 100.0

    def test_closed_interval(self):
        # 90% PI of the ladder is [5, 95]
        assert coverage(_ladder(), np.full((1, HOURS), 95.0), 90).picp == 100.0
        assert coverage(_ladder(), np.full((1, HOURS), 5.0), 90).picp == 100.0
        assert coverage(_ladder(), np.full((1, HOURS), 95.01), 90).picp == 0.0

    def test_fraction_level(self):
        prices = np.full((1, HOURS), 80.0)
        assert coverage(_ladder(), prices, 0.5).picp == coverage(_ladder(), prices, 50).picp == 0.0

    def test_alternating(self):
        prices = np.tile([50.0, 99.0], (1, HOURS // 2))
        cov = coverage(_ladder(), prices, 50)
        assert cov.picp == 50.0

    def test_by_hour(self):
        prices = np.full((4, HOURS), 50.0)
        prices[:2, 0] = 99.0
        cov = coverage(_ladder(4), prices, 70)
        assert cov.picp_by_hour[0] == 50.0
        assert cov.picp_by_hour[1] == 100.0

    def test_odd_level(self):
        with pytest.raises(ContractViolation):
            coverage(_ladder(), np.zeros((1, HOURS)), 75)

    def test_picp_matches_kupiec_input(self):
        rng = np.random.default_rng(0)
        prices = rng.uniform(0, 100, size=(5, HOURS))
        cov = coverage(_ladder(5), prices, 90)
        hits = sum(kupiec_test(cov.indicator[:, h], 90).hits for h in range(HOURS))
        assert cov.picp == hits / cov.indicator.size * 100.0


class TestKupiec:
    """Tests for kupiec_test."""

    def test_exact_coverage(self):
        res = kupiec_test(np.r_[np.ones(500), np.zeros(500)], 0.5)
        assert res.lr == pytest.approx(0.0, abs=1e-9)
        assert res.p_value == pytest.approx(1.0)

    def test_hand_value(self):
        res = kupiec_test(np.r_[np.ones(40), np.zeros(60)], 50)
        assert res.lr == pytest.approx(4.027, abs=1e-3)
        assert res.p_value == pytest.approx(0.0448, abs=1e-4)
        assert not res.rejected(0.01)
        assert res.rejected(0.05)

    def test_all_hits(self):
        res = kupiec_test(np.ones(10), 90)
        assert res.lr == pytest.approx(-20 * np.log(0.9), abs=1e-9)

    def test_no_hits(self):
        res = kupiec_test(np.zeros(10), 0.5)
        assert res.lr == pytest.approx(-20 * np.log(0.5), abs=1e-9)

    def test_empty(self):
        with pytest.raises(ContractViolation):
            kupiec_test([], 0.5)

    def test_size_under_null(self):
        """Rejection rates on Bernoulli(alpha) series stay near the nominal level."""
        rng = np.random.default_rng(1)
        pvals = np.array([kupiec_test(rng.random(2012) < 0.9, 0.9).p_value
                          for _ in range(2000)])
        assert abs(np.mean(pvals < 0.05) - 0.05) < 0.035
        assert abs(np.mean(pvals < 0.10) - 0.10) < 0.045


class TestKupiecUniformity:
    """Kupiec p-values under correct coverage (2012-day series)."""

    N_DAYS = 2012

    def test_exact_null_close_to_uniform(self):
        values, cdf = _kupiec_null(self.N_DAYS, 0.9)
        before = np.r_[0.0, cdf[:-1]]
        distance = max(np.abs(cdf - values).max(), np.abs(before - values).max())
        assert distance < 0.05

    def test_simulated_pvalues(self):
        """1000 simulated series follow the null CDF; KS distance to U(0,1) below 0.05 plus its gap."""
        values, cdf = _kupiec_null(self.N_DAYS, 0.9)
        before = np.r_[0.0, cdf[:-1]]
        gap = max(np.abs(cdf - values).max(), np.abs(before - values).max())

        rng = np.random.default_rng(2012)
        pvals = np.sort([kupiec_test(rng.random(self.N_DAYS) < 0.9, 0.9).p_value
                         for _ in range(1000)])
        empirical = np.searchsorted(pvals, values, side='right') / pvals.size
        assert np.abs(empirical - cdf).max() < 0.05
        assert kstest(pvals, 'uniform').statistic < 0.05 + gap


# ============================================================
# PINBALL
# ============================================================

class TestPinball:
    """Tests for pinball scores."""

    def test_examples(self):
        assert pinball(10.0, 12.0, 0.5) == pytest.approx(1.0)
        assert pinball(10.0, 8.0, 0.9) == pytest.approx(0.2)
        assert pinball(10.0, 10.0, 0.3) == 0.0

    def test_median_is_half_abs_error(self):
        rng = np.random.default_rng(2)
        f, p = rng.normal(size=100), rng.normal(size=100)
        np.testing.assert_allclose(pinball(f, p, 0.5), np.abs(f - p) / 2)

    def test_level_range(self):
        with pytest.raises(ContractViolation):
            pinball(1.0, 1.0, 1.0)

    def test_perfect_curve_zero(self):
        curves = np.zeros((1, HOURS, 99))
        assert aggregate_pinball(curves, np.zeros((1, HOURS))) == 0.0

    def test_aggregate_is_mean(self):
        curves = np.zeros((1, 1, 99))
        prices = np.array([[2.0]])
        # q = 0.1 -> 0.2, q = 0.5 -> 1.0
        assert aggregate_pinball(curves, prices, [10, 50]) == pytest.approx(0.6)

    def test_empty_set(self):
        with pytest.raises(ContractViolation):
            aggregate_pinball(_ladder(), np.zeros((1, HOURS)), [])

    def test_extreme_set(self):
        scores = pinball_scores(_ladder(), np.zeros((1, HOURS)), EXTREME_PERCENTILES)
        assert scores.shape == (1, HOURS, 10)

    def test_true_quantiles_score_best(self, make_curves):
        """Proper scoring: the true quantiles beat shifted or scaled ones."""
        rng = np.random.default_rng(3)
        prices = rng.normal(size=(500, HOURS))
        true = make_curves(np.zeros((500, HOURS)), 1.0)
        base = aggregate_pinball(true, prices)
        for other in (make_curves(np.full((500, HOURS), 0.3), 1.0),
                      make_curves(np.zeros((500, HOURS)), 1.5),
                      make_curves(np.zeros((500, HOURS)), 0.6)):
            assert base < aggregate_pinball(other, prices)

    def test_daily_loss(self):
        curves = np.zeros((2, HOURS, 99))
        prices = np.ones((2, HOURS))
        expected = HOURS * np.mean(QUANTILE_GRID)
        np.testing.assert_allclose(daily_loss(curves, prices), [expected, expected])


# ============================================================
# CPA
# ============================================================

class TestCpa:
    """Tests for the conditional predictive ability test."""

    def test_identical_losses(self):
        loss = np.random.default_rng(4).random(60)
        res = cpa_test(loss, loss)
        assert res.statistic == 0.0
        assert res.p_value == 1.0
        assert res.better == 'none'

    def test_constant_instrument_value(self):
        d = np.r_[np.ones(20), -np.ones(10)]
        res = cpa_test(d, np.zeros(30), instruments='constant')
        # n * mean(d)^2 / mean(d^2) = 30 / 9
        assert res.statistic == pytest.approx(30 / 9)
        assert res.direction == 1.0
        assert res.better == 'y'

    def test_better_model_detected(self):
        rng = np.random.default_rng(5)
        y = rng.gamma(2.0, 1.0, size=500)
        x = y - rng.uniform(0.1, 0.5, size=500)
        res = cpa_test(x, y)
        assert res.p_value < 0.01
        assert res.better == 'x'

    def test_swap_flips_direction(self):
        rng = np.random.default_rng(6)
        x, y = rng.random(100), rng.random(100) + 0.05
        a, b = cpa_test(x, y), cpa_test(y, x)
        assert a.statistic == pytest.approx(b.statistic)
        assert a.direction == -b.direction

    def test_singular(self):
        with pytest.raises(SingularMatrixError):
            cpa_test(np.ones(40), np.zeros(40))

    def test_too_short(self):
        with pytest.raises(ContractViolation):
            cpa_test(np.ones(29), np.zeros(29))

    def test_matrix_skips_singular_pairs(self):
        rng = np.random.default_rng(7)
        base = rng.random(40)
        losses = {'A': base, 'B': base + 1.0, 'C': base + rng.random(40)}
        table, skipped = cpa_matrix(losses)
        assert skipped == 2
        assert np.isnan(table.loc['A', 'B'])
        assert np.isfinite(table.loc['A', 'C'])
        assert np.isnan(table.loc['A', 'A'])


# ============================================================
# SCORE REPORT AND MAIN
# ============================================================

@pytest.fixture
def scored(make_curves):
    rng = np.random.default_rng(8)
    days = pd.date_range('2019-12-01', periods=60)
    median = 40.0 + rng.normal(size=(60, HOURS))
    prices = median + rng.normal(size=(60, HOURS))
    curves = {'GOOD': make_curves(median, 1.0), 'WIDE': make_curves(median, 3.0)}
    return days, prices, curves, median


class TestScorePeriod:
    """Tests for score_period."""

    def test_structure(self, scored):
        days, prices, curves, median = scored
        report = score_period('full', curves, prices, days,
                              point_forecasts={'mean': median})
        assert report.n_days == 60
        assert report.first_day == '2019-12-01'
        good = report.models['GOOD']
        assert set(good) == {'mae_median', 'aps', 'extreme_ps', 'coverage'}
        assert set(good['coverage']) == {'50', '70', '90'}
        assert report.point_mae['mean'] == pytest.approx(good['mae_median'])
        assert len(report.by_hour) == 2 * 3 * HOURS

    def test_calibration_flags(self, scored):
        days, prices, curves, _ = scored
        report = score_period('full', curves, prices, days)
        good = report.models['GOOD']['coverage']['90']
        wide = report.models['WIDE']['coverage']['90']
        assert good['within_tolerance'] and not good['far_off']
        assert wide['far_off']
        assert good['majority_pass']
        assert report.models['GOOD']['aps'] < report.models['WIDE']['aps']

    def test_cpa_favours_calibrated_model(self, scored):
        days, prices, curves, _ = scored
        report = score_period('full', curves, prices, days)
        assert report.cpa['GOOD']['WIDE'] < 0.01

    def test_cpa_needs_thirty_days(self, scored):
        days, prices, curves, _ = scored
        short = {m: c[:20] for m, c in curves.items()}
        report = score_period('short', short, prices[:20], days[:20])
        assert report.cpa == {}

    def test_to_dict_json_safe(self, scored):
        days, prices, curves, _ = scored
        report = score_period('full', curves, prices, days)
        report.cpa['GOOD']['WIDE'] = float('nan')
        d = report.to_dict()
        assert d['cpa_pvalues']['GOOD']['WIDE'] is None
        json.dumps(d)

    def test_summary_rows(self, scored):
        days, prices, curves, _ = scored
        rows = score_period('full', curves, prices, days).summary_rows(90)
        assert [r['model'] for r in rows] == ['GOOD', 'WIDE']
        assert rows[0]['picp_90'] is not None


class TestMain:
    """Tests for the stage entry point."""

    def test_periods_and_outputs(self, temp_dir, small_panel, make_curves):
        rng = np.random.default_rng(9)
        median = small_panel.price + rng.normal(size=small_panel.price.shape)
        curves = CurveSet(models=['HS', 'QRA'], days=small_panel.days,
                          values=np.stack([make_curves(median, 4.0),
                                           make_curves(median, 6.0)]))
        matrix = PointForecastMatrix(days=small_panel.days, vsts=['asinh'],
                                     values=median[..., None])
        periods = [PeriodSpec('nov', end='2019-11-30'), PeriodSpec('dec', start='2019-12-01')]
        out = temp_dir / 'work' / 'report.json'
        reports = main(curves, small_panel, out, periods=periods, matrix=matrix)

        assert [r.period for r in reports] == ['nov', 'dec']
        data = json.loads(out.read_text())
        assert set(data) == {'nov', 'dec'}
        assert data['nov']['n_days'] == 30
        assert set(data['dec']['point_mae']) == {'asinh', 'mean'}
        assert (temp_dir / 'work' / 'diagnostics' / 'coverage_by_hour.csv').exists()
        cpa = pd.read_csv(temp_dir / 'work' / 'diagnostics' / 'cpa_pvalues.csv')
        assert len(cpa) == 4

    def test_empty_period_rejected(self, temp_dir, small_panel, make_curves):
        curves = CurveSet(models=['HS'], days=small_panel.days,
                          values=make_curves(small_panel.price[None], 2.0))
        periods = [PeriodSpec('dec', start='2019-12-01'), PeriodSpec('later', start='2021-01-01')]
        with pytest.raises(RangeError, match='later'):
            main(curves, small_panel, temp_dir / 'report.json', periods=periods)
        assert not (temp_dir / 'report.json').exists()

    def test_default_period(self, temp_dir, small_panel, make_curves):
        curves = CurveSet(models=['HS'], days=small_panel.days[10:],
                          values=make_curves(small_panel.price[None, 10:], 2.0))
        reports = main(curves, small_panel, temp_dir / 'report.json')
        assert [r.period for r in reports] == ['full']
        assert reports[0].n_days == 50
        assert reports[0].models['HS']['mae_median'] == pytest.approx(0.0, abs=1e-12)
