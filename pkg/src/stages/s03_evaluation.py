#!/usr/bin/env python3
"""
Stage 03: Forecast Evaluation

Purpose: Score point and probabilistic forecasts.

This stage handles:
- MAE of each point forecast, of their mean and of every model's median
- Coverage indicators and PICP per PI level, overall and per hour
- Kupiec unconditional-coverage test per hour series
- Pinball scores: all 99 percentiles (APS) and the 10 extreme percentiles
- Conditional predictive ability (CPA) test for every ordered model pair
- Everything per named evaluation period

Input Files
-----------
- data_work/curves.parquet
- data_work/panel.csv
- data_work/forecasts.csv (optional, point MAE)

Output Files
------------
- data_work/report.json
- data_work/diagnostics/coverage_by_hour.csv
- data_work/diagnostics/cpa_pvalues.csv

Usage
-----
    python src/pipeline.py evaluate --curves curves.parquet --prices panel.csv --report report.json
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union
import sys

# Add parent directory for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd
from scipy.special import xlogy
from scipy.stats import chi2

from utils.errors import ContractViolation, SingularMatrixError
from utils.helpers import format_pvalue, save_diagnostic, save_json
from utils.panel import HOURS
from utils.quantile_solvers import QUANTILE_GRID


# ============================================================
# CONFIGURATION
# ============================================================

EXTREME_PERCENTILES = [1, 2, 3, 4, 5, 95, 96, 97, 98, 99]
ALL_PERCENTILES = list(range(1, 100))

KUPIEC_SIGNIFICANCE = 0.01
PICP_TOLERANCE = 2.5
PICP_FAR = 5.0
MAJORITY_HOURS = 12

MIN_CPA_DAYS = 30


def _as_fraction(alpha: float) -> float:
    """PI level as a probability; values above 1 are read as percent."""
    alpha = float(alpha)
    return alpha / 100.0 if alpha > 1 else alpha


def _as_percent(alpha: float) -> int:
    alpha = float(alpha)
    return int(round(alpha * 100)) if alpha <= 1 else int(round(alpha))


# ============================================================
# POINT SCORES
# ============================================================

def mae(forecasts, prices) -> float:
    """
    Mean absolute error over all (day, hour) cells.

    Raises
    ------
    ContractViolation
        If the arrays are not aligned
    """
    forecasts = np.asarray(forecasts, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if forecasts.shape != prices.shape:
        raise ContractViolation(
            f"Forecasts {forecasts.shape} and prices {prices.shape} are not aligned"
        )
    if forecasts.size == 0:
        raise ContractViolation("MAE of an empty range")
    return float(np.mean(np.abs(prices - forecasts)))


# ============================================================
# COVERAGE
# ============================================================

@dataclass
class CoverageSeries:
    """Inside-PI indicators for one PI level."""
    alpha: int
    indicator: np.ndarray

    @property
    def picp(self) -> float:
        """Percentage of prices inside the PI."""
        return float(self.indicator.mean() * 100.0)

    @property
    def picp_by_hour(self) -> np.ndarray:
        return self.indicator.mean(axis=0) * 100.0


def coverage(curves: np.ndarray, prices, alpha) -> CoverageSeries:
    """
    Coverage indicators of the closed alpha% central PI.

    Parameters
    ----------
    curves : np.ndarray
        (n_days, 24, 99) percentile curves
    prices : np.ndarray
        (n_days, 24) realized prices
    alpha : int or float
        PI level, even percent (e.g. 90) or fraction (0.9)
    """
    pct = _as_percent(alpha)
    if pct % 2 or not 2 <= pct <= 98:
        raise ContractViolation(f"PI level {pct}% is not on the even-percent grid")
    curves = np.asarray(curves, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if curves.shape[:-1] != prices.shape:
        raise ContractViolation(f"Curves {curves.shape} and prices {prices.shape} misaligned")
    lower = curves[..., (100 - pct) // 2 - 1]
    upper = curves[..., (100 + pct) // 2 - 1]
    inside = (prices >= lower) & (prices <= upper)
    return CoverageSeries(alpha=pct, indicator=inside.astype(int))


@dataclass
class KupiecResult:
    lr: float
    p_value: float
    n: int
    hits: int

    def rejected(self, significance: float = KUPIEC_SIGNIFICANCE) -> bool:
        return self.p_value < significance


def kupiec_test(indicators, alpha) -> KupiecResult:
    """
    Unconditional-coverage likelihood ratio of inside-PI indicators.

    LR = -2 [ln((1-p)^(n-x) p^x) - ln((1-pi)^(n-x) pi^x)], p = alpha,
    x = hits inside, pi = x/n, with 0 ln 0 = 0; p-value from chi2(1).
    """
    ind = np.asarray(indicators).reshape(-1)
    n = int(ind.size)
    if n < 1:
        raise ContractViolation("Kupiec test needs at least one observation")
    p = _as_fraction(alpha)
    if not 0 < p < 1:
        raise ContractViolation(f"Nominal coverage must lie in (0, 1), got {p}")
    x = int(ind.sum())
    pi = x / n
    log_null = xlogy(n - x, 1 - p) + xlogy(x, p)
    log_alt = xlogy(n - x, 1 - pi) + xlogy(x, pi)
    lr = max(0.0, float(-2.0 * (log_null - log_alt)))
    return KupiecResult(lr=lr, p_value=float(chi2.sf(lr, 1)), n=n, hits=x)


# ============================================================
# PINBALL
# ============================================================

def pinball(value, price, q) -> np.ndarray:
    """(1-q)(value - price) if price < value else q(price - value)."""
    value = np.asarray(value, dtype=float)
    price = np.asarray(price, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ContractViolation("Pinball levels must lie in (0, 1)")
    return np.where(price < value, (1.0 - q) * (value - price), q * (price - value))


def pinball_scores(curves: np.ndarray, prices, percentiles: Sequence[int] = ALL_PERCENTILES
                   ) -> np.ndarray:
    """(n_days, 24, len(percentiles)) pinball scores."""
    if len(percentiles) == 0:
        raise ContractViolation("Empty percentile set")
    idx = np.asarray(percentiles, dtype=int) - 1
    if idx.min() < 0 or idx.max() >= len(QUANTILE_GRID):
        raise ContractViolation(f"Percentiles must lie in 1..{len(QUANTILE_GRID)}")
    curves = np.asarray(curves, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if curves.shape[:-1] != prices.shape:
        raise ContractViolation(f"Curves {curves.shape} and prices {prices.shape} misaligned")
    return pinball(curves[..., idx], prices[..., None], QUANTILE_GRID[idx])


def aggregate_pinball(curves: np.ndarray, prices, percentiles: Sequence[int] = ALL_PERCENTILES
                      ) -> float:
    """Mean pinball score over (day, hour, percentile)."""
    return float(np.mean(pinball_scores(curves, prices, percentiles)))


def daily_loss(curves: np.ndarray, prices) -> np.ndarray:
    """L1 norm over hours of the per-hour APS: one loss per day."""
    return pinball_scores(curves, prices).mean(axis=2).sum(axis=1)


# ============================================================
# CONDITIONAL PREDICTIVE ABILITY
# ============================================================

@dataclass
class CpaResult:
    statistic: float
    p_value: float
    direction: float
    n: int

    @property
    def better(self) -> str:
        """'x' when the first series has the lower mean loss."""
        if self.direction < 0:
            return 'x'
        if self.direction > 0:
            return 'y'
        return 'none'


def cpa_test(loss_x, loss_y, instruments: str = 'lagged') -> CpaResult:
    """
    Conditional predictive ability test of two daily loss series.

    With d = loss_x - loss_y and instruments h[t-1] = [1, d[t-1]]
    (or [1] for ``instruments='constant'``), z[t] = h[t-1] d[t] and the
    Wald statistic n z_bar' Omega^-1 z_bar, Omega = mean(z z'), is chi2 with
    one degree of freedom per instrument.

    Raises
    ------
    ContractViolation
        If the series are misaligned or shorter than 30 days
    SingularMatrixError
        If Omega is singular while d is not identically zero
    """
    x = np.asarray(loss_x, dtype=float).reshape(-1)
    y = np.asarray(loss_y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ContractViolation(f"Loss series of lengths {x.size} and {y.size}")
    if x.size < MIN_CPA_DAYS:
        raise ContractViolation(f"CPA test needs at least {MIN_CPA_DAYS} days, got {x.size}")
    d = x - y
    direction = float(np.sign(d.mean()))

    if instruments == 'lagged':
        z = np.column_stack([d[1:], d[:-1] * d[1:]])
    elif instruments == 'constant':
        z = d[:, None]
    else:
        raise ContractViolation(f"Unknown instrument set '{instruments}'")
    n = z.shape[0]

    if not np.any(d):
        return CpaResult(statistic=0.0, p_value=1.0, direction=0.0, n=n)

    z_bar = z.mean(axis=0)
    omega = z.T @ z / n
    if np.linalg.matrix_rank(omega) < omega.shape[0]:
        raise SingularMatrixError("CPA covariance matrix is singular")
    stat = float(n * z_bar @ np.linalg.solve(omega, z_bar))
    stat = max(stat, 0.0)
    return CpaResult(statistic=stat, p_value=float(chi2.sf(stat, z.shape[1])),
                     direction=direction, n=n)


def cpa_matrix(losses: dict, instruments: str = 'lagged') -> tuple[pd.DataFrame, int]:
    """
    p-values of the CPA test for every ordered model pair (row X, column Y).

    Pairs whose covariance is singular or whose series are too short get NaN.

    Returns
    -------
    tuple
        (p-value matrix, number of skipped pairs)
    """
    models = list(losses)
    out = pd.DataFrame(np.nan, index=models, columns=models)
    skipped = 0
    for a in models:
        for b in models:
            if a == b:
                continue
            try:
                out.loc[a, b] = cpa_test(losses[a], losses[b], instruments).p_value
            except (SingularMatrixError, ContractViolation):
                skipped += 1
    return out, skipped


# ============================================================
# SCORE REPORT
# ============================================================

def _clean(value):
    """JSON-safe scalar (NaN/inf become null)."""
    if isinstance(value, (np.floating, float)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


@dataclass
class ScoreReport:
    """Scores of one evaluation period."""
    period: str
    n_days: int
    first_day: str
    last_day: str
    models: dict = field(default_factory=dict)
    point_mae: dict = field(default_factory=dict)
    cpa: dict = field(default_factory=dict)
    by_hour: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def clean(obj):
            if isinstance(obj, dict):
                return {str(k): clean(v) for k, v in obj.items()}
            if isinstance(obj, list):
                return [clean(v) for v in obj]
            return _clean(obj)

        return clean({
            'period': self.period,
            'n_days': self.n_days,
            'first_day': self.first_day,
            'last_day': self.last_day,
            'models': self.models,
            'point_mae': self.point_mae,
            'cpa_pvalues': self.cpa,
        })

    def summary_rows(self, coverage_alpha: int = 90) -> list:
        """One row per model for the summary table."""
        rows = []
        for model, scores in self.models.items():
            picp = scores['coverage'].get(str(coverage_alpha), {}).get('picp')
            rows.append({
                'period': self.period,
                'model': model,
                'mae_median': scores['mae_median'],
                'aps': scores['aps'],
                'extreme_ps': scores['extreme_ps'],
                f'picp_{coverage_alpha}': picp,
            })
        return rows


def score_period(
    name: str,
    curves: dict,
    prices: np.ndarray,
    days: pd.DatetimeIndex,
    coverage_alphas: Sequence[int] = (50, 70, 90),
    point_forecasts: Optional[dict] = None,
    significance: float = KUPIEC_SIGNIFICANCE,
    tolerance: float = PICP_TOLERANCE,
    far: float = PICP_FAR,
    instruments: str = 'lagged',
) -> ScoreReport:
    """
    Score every model on one period.

    Parameters
    ----------
    curves : dict
        {model: (n_days, 24, 99) curves}
    prices : np.ndarray
        (n_days, 24) realized prices
    days : pd.DatetimeIndex
        Calendar of the period
    point_forecasts : dict, optional
        {label: (n_days, 24) point forecasts}
    """
    report = ScoreReport(period=name, n_days=len(days),
                         first_day=days[0].date().isoformat(),
                         last_day=days[-1].date().isoformat())

    for label, forecast in (point_forecasts or {}).items():
        report.point_mae[label] = mae(forecast, prices)

    losses = {}
    for model, values in curves.items():
        scores = {
            'mae_median': mae(values[..., 49], prices),
            'aps': aggregate_pinball(values, prices),
            'extreme_ps': aggregate_pinball(values, prices, EXTREME_PERCENTILES),
            'coverage': {},
        }
        for alpha in coverage_alphas:
            cov = coverage(values, prices, alpha)
            kupiec = [kupiec_test(cov.indicator[:, h], alpha) for h in range(HOURS)]
            passed = sum(not k.rejected(significance) for k in kupiec)
            gap = abs(cov.picp - alpha)
            scores['coverage'][str(alpha)] = {
                'picp': cov.picp,
                'within_tolerance': bool(gap <= tolerance),
                'far_off': bool(gap > far),
                'kupiec_pass_hours': passed,
                'majority_pass': bool(passed >= MAJORITY_HOURS),
            }
            for h, k in enumerate(kupiec):
                report.by_hour.append({
                    'period': name, 'model': model, 'alpha': alpha, 'hour': h + 1,
                    'picp': float(cov.picp_by_hour[h]), 'kupiec_lr': k.lr,
                    'kupiec_p': k.p_value,
                })
        report.models[model] = scores
        losses[model] = daily_loss(values, prices)

    if len(losses) > 1 and len(days) >= MIN_CPA_DAYS:
        matrix, _ = cpa_matrix(losses, instruments)
        report.cpa = {a: {b: matrix.loc[a, b] for b in matrix.columns if a != b}
                      for a in matrix.index}
    return report


# ============================================================
# MAIN ENTRY POINT
# ============================================================

def main(
    curves,
    panel,
    report_path: Union[str, Path],
    periods: Sequence = (),
    coverage_alphas: Sequence[int] = (50, 70, 90),
    matrix=None,
    significance: float = KUPIEC_SIGNIFICANCE,
    tolerance: float = PICP_TOLERANCE,
    far: float = PICP_FAR,
    instruments: str = 'lagged',
) -> list:
    """
    Execute the evaluation stage.

    Parameters
    ----------
    curves : CurveSet
        Percentile curves
    panel : HourlyPanel
        Realized prices
    report_path : path
        JSON report
    periods : sequence of PeriodSpec
        Named periods (an empty sequence scores the whole range as 'full')
    matrix : PointForecastMatrix, optional
        Point forecasts for point MAE
    """
    from utils.config import PeriodSpec, check_periods

    print("=" * 60)
    print("Stage 03: Forecast Evaluation")
    print("=" * 60)

    start = panel.day_index(curves.days[0])
    prices = panel.price[start:start + curves.n_days]
    print(f"\n  Scoring {len(curves.models)} models on {curves.n_days:,} days")

    point = {}
    if matrix is not None:
        offset = matrix.days.get_indexer(curves.days)
        if (offset < 0).any():
            raise ContractViolation("Point forecasts do not cover the curve days")
        for kind in matrix.vsts:
            point[kind] = matrix.for_vst(kind)[offset]
        point['mean'] = matrix.mean()[offset]

    periods = list(periods) or [PeriodSpec(name='full')]
    check_periods(periods, curves.days)

    reports = []
    for period in periods:
        mask = period.mask(curves.days)
        print(f"  Period {period.name}: {int(mask.sum()):,} days")
        reports.append(score_period(
            period.name,
            {m: curves.model(m)[mask] for m in curves.models},
            prices[mask],
            curves.days[mask],
            coverage_alphas=coverage_alphas,
            point_forecasts={k: v[mask] for k, v in point.items()},
            significance=significance,
            tolerance=tolerance,
            far=far,
            instruments=instruments,
        ))
        if not reports[-1].cpa:
            print(f"  Note: CPA matrix skipped for '{period.name}' "
                  f"(needs {MIN_CPA_DAYS} days and two models)")

    report_path = Path(report_path)
    print(f"\n  Saving to: {report_path}")
    save_json({r.period: r.to_dict() for r in reports}, report_path)

    diag_dir = report_path.parent / 'diagnostics'
    by_hour = pd.DataFrame([row for r in reports for row in r.by_hour])
    save_diagnostic(by_hour, 'coverage_by_hour', diag_dir)
    cpa_rows = [{'period': r.period, 'model_x': a, 'model_y': b, 'p_value': p}
                for r in reports for a, row in r.cpa.items() for b, p in row.items()]
    save_diagnostic(pd.DataFrame(cpa_rows, columns=['period', 'model_x', 'model_y', 'p_value']),
                    'cpa_pvalues', diag_dir)

    print("\n" + "-" * 60)
    print("SUMMARY")
    print("-" * 60)
    for r in reports:
        print(f"  [{r.period}]")
        for model, scores in r.models.items():
            cov90 = scores['coverage'].get('90') or next(iter(scores['coverage'].values()), {})
            print(f"    {model:<5s} APS {scores['aps']:.3f}  extreme {scores['extreme_ps']:.3f}  "
                  f"PICP {cov90.get('picp', float('nan')):.1f}  "
                  f"Kupiec pass {cov90.get('kupiec_pass_hours', 0)}/24")
        for a, row in r.cpa.items():
            best = [b for b, p in row.items() if p is not None and p < 0.05]
            if best:
                print(f"    CPA {a}: differs from {', '.join(best)} "
                      f"(p {format_pvalue(min(row[b] for b in best))})")

    print("\n" + "=" * 60)
    print("Stage 03 complete.")
    print("=" * 60)

    return reports
