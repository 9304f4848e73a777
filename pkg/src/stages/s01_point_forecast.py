#!/usr/bin/env python3
"""
Stage 01: Point Forecasts

Purpose: Rolling-window expert-model point forecasts, one per VST.

For each forecast day d and each VST the stage
  1. standardizes the calibration window (median / mean absolute deviation),
     prices and load forecasts separately,
  2. applies the VST,
  3. fits one OLS expert model per hour on the window,
  4. predicts hour h of day d and maps the prediction back through the
     inverse VST and inverse standardization.

Expert model (per hour h, no intercept; the weekday dummies span it):

    Y[d,h] = b1 Y[d-1,h] + b2 Y[d-2,h] + b3 Y[d-7,h] + b4 Y[d-1,24]
           + b5 max(Y[d-1,:]) + b6 min(Y[d-1,:]) + b7 L[d,h]
           + sum_j b(7+j) D_j(d)

Weekday dummies D_1..D_7 are Monday..Sunday.

Input Files
-----------
- data_work/panel.csv

Output Files
------------
- data_work/forecasts.csv (date, hour, vst, forecast)
- data_work/diagnostics/point_mae.csv

Usage
-----
    python src/pipeline.py point-forecast --config config/run.yml --output forecasts.csv
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

from utils.errors import ContractViolation, PipelineError, RangeError
from utils.helpers import ensure_dir, parallel_map, save_diagnostic
from utils.panel import HOURS, HourlyPanel, WindowSpec, window
from utils.transforms import VstSpec, apply_vst, invert_vst, make_vst, standardize


# ============================================================
# CONFIGURATION
# ============================================================

POINT_WINDOW = 728
MAX_LAG = 7
N_FEATURES = 14
FEATURE_NAMES = [
    'y_lag1', 'y_lag2', 'y_lag7', 'y_midnight', 'y_max_prev', 'y_min_prev', 'load',
    'dow_mon', 'dow_tue', 'dow_wed', 'dow_thu', 'dow_fri', 'dow_sat', 'dow_sun',
]


# ============================================================
# DATA STRUCTURES
# ============================================================

@dataclass
class OlsFit:
    """Least-squares coefficients and rank information."""
    coef: np.ndarray
    rank: int
    rank_deficient: bool

    def predict(self, rows) -> np.ndarray:
        return np.asarray(rows, dtype=float) @ self.coef


@dataclass
class DayForecast:
    """Forecasts of one day for one VST, with fit diagnostics."""
    forecasts: np.ndarray
    rank_deficient_hours: int = 0
    clipped_hours: int = 0


@dataclass
class PointForecastMatrix:
    """
    Point forecasts for every (day, hour, vst).

    Attributes
    ----------
    days : pd.DatetimeIndex
        Forecast days
    vsts : list[str]
        VST kinds, in column order
    values : np.ndarray
        (n_days, 24, n_vsts) forecasts, currency/MWh
    """
    days: pd.DatetimeIndex
    vsts: list
    values: np.ndarray
    rank_deficient: int = 0
    clipped: int = 0

    def __post_init__(self):
        self.days = pd.DatetimeIndex(self.days)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.days), HOURS, len(self.vsts)):
            raise ContractViolation(
                f"Forecast array {self.values.shape} does not match "
                f"{len(self.days)} days x {HOURS} hours x {len(self.vsts)} VSTs"
            )

    @property
    def n_days(self) -> int:
        return len(self.days)

    def mean(self) -> np.ndarray:
        """(n_days, 24) arithmetic mean of the VST forecasts."""
        return self.values.mean(axis=2)

    def for_vst(self, kind: str) -> np.ndarray:
        return self.values[:, :, self.vsts.index(kind)]

    def slice_days(self, start: int, stop: int) -> 'PointForecastMatrix':
        return PointForecastMatrix(days=self.days[start:stop], vsts=list(self.vsts),
                                   values=self.values[start:stop])

    def to_frame(self) -> pd.DataFrame:
        """Long ``date, hour, vst, forecast`` frame (date-major order)."""
        n, _, v = self.values.shape
        return pd.DataFrame({
            'date': np.repeat(self.days.strftime('%Y-%m-%d'), HOURS * v),
            'hour': np.tile(np.repeat(np.arange(1, HOURS + 1), v), n),
            'vst': np.tile(np.asarray(self.vsts, dtype=object), n * HOURS),
            'forecast': self.values.reshape(-1),
        })

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> 'PointForecastMatrix':
        """Inverse of :meth:`to_frame`."""
        vsts = list(dict.fromkeys(df['vst']))
        wide = df.pivot_table(index=['date', 'hour'], columns='vst', values='forecast',
                              aggfunc='first', sort=True)[vsts]
        days = pd.DatetimeIndex(pd.to_datetime(wide.index.get_level_values('date').unique()))
        values = wide.to_numpy().reshape(len(days), HOURS, len(vsts))
        if not np.isfinite(values).all():
            raise ContractViolation("Point forecast file is incomplete")
        return cls(days=days, vsts=vsts, values=values)


# ============================================================
# EXPERT MODEL
# ============================================================

def dow_dummies(days: pd.DatetimeIndex) -> np.ndarray:
    """(n, 7) weekday indicators, column 0 = Monday."""
    out = np.zeros((len(days), 7))
    out[np.arange(len(days)), pd.DatetimeIndex(days).dayofweek] = 1.0
    return out


def design_matrix(y: np.ndarray, load: np.ndarray, dummies: np.ndarray,
                  rows: np.ndarray, hour: int) -> np.ndarray:
    """
    Expert-model rows for target days ``rows`` at ``hour`` (1-based).

    Parameters
    ----------
    y : np.ndarray
        (n, 24) transformed prices
    load : np.ndarray
        (n, 24) transformed load forecasts
    dummies : np.ndarray
        (n, 7) weekday indicators
    rows : np.ndarray
        Target day indices (each >= 7)
    hour : int
        Market hour 1..24
    """
    rows = np.asarray(rows, dtype=int)
    h = hour - 1
    prev = y[rows - 1]
    return np.column_stack([
        y[rows - 1, h],
        y[rows - 2, h],
        y[rows - 7, h],
        prev[:, HOURS - 1],
        prev.max(axis=1),
        prev.min(axis=1),
        load[rows, h],
        dummies[rows],
    ])


def build_design(y: np.ndarray, load: np.ndarray, days: pd.DatetimeIndex,
                 day: int, hour: int) -> np.ndarray:
    """
    One expert-model row for (day, hour).

    Raises
    ------
    RangeError
        If fewer than 7 days precede ``day``
    """
    if day < MAX_LAG:
        raise RangeError(f"Expert model needs {MAX_LAG} days of lags; day index {day}",
                         day=day, hour=hour)
    if not 1 <= hour <= HOURS:
        raise ContractViolation(f"Hour must be 1..{HOURS}, got {hour}")
    return design_matrix(y, load, dow_dummies(days), np.array([day]), hour)[0]


def fit_ols(rows, targets) -> OlsFit:
    """
    Least squares via ``np.linalg.lstsq``.

    A rank-deficient design yields the minimum-norm solution with
    ``rank_deficient`` set.
    """
    X = np.asarray(rows, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ContractViolation(f"Incompatible OLS shapes {X.shape} and {y.shape}")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    return OlsFit(coef=coef, rank=int(rank), rank_deficient=bool(rank < X.shape[1]))


# ============================================================
# FORECASTING
# ============================================================

def _transform(values: np.ndarray, sample: np.ndarray, vst: VstSpec):
    """Standardize with ``sample`` and apply the VST calibrated on it."""
    z_sample, params = standardize(sample, sample)
    spec = vst.with_sample(z_sample)
    return apply_vst(spec, params.apply(values)), params, spec


def forecast_day(panel: HourlyPanel, day: int, vst: VstSpec,
                 window_days: int = POINT_WINDOW,
                 with_diagnostics: bool = False):
    """
    24 point forecasts of day index ``day`` for one VST.

    Parameters
    ----------
    panel : HourlyPanel
        Full panel (load of ``day`` must be present)
    day : int
        Forecast day index
    vst : VstSpec
        Transformation (npit calibrated here on the window)
    window_days : int
        Calibration window length
    with_diagnostics : bool
        Return a DayForecast instead of the bare array

    Raises
    ------
    RangeError
        If the window does not fit before ``day``
    DegenerateWindowError
        If the window prices or loads are constant
    """
    if day >= panel.n_days:
        raise RangeError(f"No load forecast for day index {day}", day=day)
    calib = window(panel, WindowSpec(window_days, window_days), day)

    # window days followed by the target day
    load = np.vstack([calib.load, panel.load[day:day + 1]])
    days = panel.days[day - window_days:day + 1]

    y_window, price_params, price_spec = _transform(calib.price, calib.price, vst)
    l_all, _, _ = _transform(load, calib.load, vst)
    y_all = np.vstack([y_window, np.zeros((1, HOURS))])

    dummies = dow_dummies(days)
    train = np.arange(MAX_LAG, window_days)
    if train.size == 0:
        raise RangeError(f"Window of {window_days} days leaves no training rows", day=day)
    target = np.array([window_days])

    forecasts = np.empty(HOURS)
    rank_deficient = 0
    for hour in range(1, HOURS + 1):
        X = design_matrix(y_all, l_all, dummies, train, hour)
        fit = fit_ols(X, y_window[train, hour - 1])
        rank_deficient += int(fit.rank_deficient)
        forecasts[hour - 1] = fit.predict(design_matrix(y_all, l_all, dummies, target, hour))[0]

    z_hat, clipped = invert_vst(price_spec, forecasts, with_flag=True)
    prices = price_params.invert(z_hat)

    if with_diagnostics:
        return DayForecast(forecasts=prices, rank_deficient_hours=rank_deficient,
                           clipped_hours=int(clipped.sum()))
    return prices


def _forecast_task(panel: HourlyPanel, day: int, vst: VstSpec, window_days: int) -> DayForecast:
    try:
        return forecast_day(panel, day, vst, window_days, with_diagnostics=True)
    except PipelineError as err:
        raise err.add_context(day=panel.days[day].date().isoformat(), vst=vst.kind)


def run_point_pipeline(
    panel: HourlyPanel,
    first_day: int,
    last_day: int,
    vsts: Optional[Sequence[Union[str, VstSpec]]] = None,
    vst_params: Optional[dict] = None,
    window_days: int = POINT_WINDOW,
    n_jobs: int = 1,
) -> PointForecastMatrix:
    """
    Point forecasts for day indices ``first_day..last_day`` (inclusive).

    Every (day, vst) task is independent; results are assembled in task
    order so sequential and parallel runs agree bitwise.
    """
    vsts = [v if isinstance(v, VstSpec) else make_vst(v, vst_params)
            for v in (vsts or ['asinh', 'boxcox', 'mlog', 'poly', 'npit'])]
    if first_day < window_days:
        raise RangeError(
            f"First forecast day index {first_day} precedes the end of the "
            f"{window_days}-day window"
        )
    if last_day < first_day or last_day >= panel.n_days:
        raise RangeError(f"Invalid forecast range {first_day}..{last_day} "
                         f"for a {panel.n_days}-day panel")

    day_range = range(first_day, last_day + 1)
    tasks = [(panel, d, v, window_days) for d in day_range for v in vsts]
    results = parallel_map(_forecast_task, tasks, n_jobs=n_jobs)

    values = np.empty((len(day_range), HOURS, len(vsts)))
    rank_deficient = clipped = 0
    for k, res in enumerate(results):
        i, j = divmod(k, len(vsts))
        values[i, :, j] = res.forecasts
        rank_deficient += res.rank_deficient_hours
        clipped += res.clipped_hours

    return PointForecastMatrix(
        days=panel.days[first_day:last_day + 1],
        vsts=[v.kind for v in vsts],
        values=values,
        rank_deficient=rank_deficient,
        clipped=clipped,
    )


# ============================================================
# DIAGNOSTICS
# ============================================================

def point_mae_table(matrix: PointForecastMatrix, panel: HourlyPanel) -> pd.DataFrame:
    """MAE of each VST, of the mean of all VSTs and of the naive d-1 forecast."""
    start = panel.day_index(matrix.days[0])
    actual = panel.price[start:start + matrix.n_days]
    rows = [{'forecast': kind, 'mae': float(np.mean(np.abs(actual - matrix.for_vst(kind))))}
            for kind in matrix.vsts]
    rows.append({'forecast': 'mean', 'mae': float(np.mean(np.abs(actual - matrix.mean())))})
    if start >= 1:
        naive = panel.price[start - 1:start - 1 + matrix.n_days]
        rows.append({'forecast': 'naive', 'mae': float(np.mean(np.abs(actual - naive)))})
    return pd.DataFrame(rows)


# ============================================================
# MAIN ENTRY POINT
# ============================================================

def main(
    panel: HourlyPanel,
    output_path: Union[str, Path],
    vsts: Optional[Sequence[str]] = None,
    vst_params: Optional[dict] = None,
    window_days: int = POINT_WINDOW,
    first_day: Optional[int] = None,
    last_day: Optional[int] = None,
    n_jobs: int = 1,
) -> PointForecastMatrix:
    """
    Execute the point-forecast stage.

    Parameters
    ----------
    panel : HourlyPanel
        Repaired panel
    output_path : path
        Forecast CSV
    first_day, last_day : int, optional
        Day index range (default: every day with a full window)
    """
    print("=" * 60)
    print("Stage 01: Point Forecasts")
    print("=" * 60)

    first_day = window_days if first_day is None else first_day
    last_day = panel.n_days - 1 if last_day is None else last_day
    vsts = list(vsts or ['asinh', 'boxcox', 'mlog', 'poly', 'npit'])

    print(f"\n  Window: {window_days} days; VSTs: {', '.join(vsts)}")
    print(f"  Forecast days: {panel.days[first_day].date()} .. {panel.days[last_day].date()} "
          f"({last_day - first_day + 1:,} days)")

    try:
        matrix = run_point_pipeline(panel, first_day, last_day, vsts=vsts,
                                    vst_params=vst_params, window_days=window_days,
                                    n_jobs=n_jobs)
    except PipelineError as e:
        print(f"\nERROR: {e}")
        raise
    print(f"    -> {matrix.values.size:,} forecasts")
    if matrix.rank_deficient:
        print(f"  Warning: {matrix.rank_deficient} rank-deficient hourly fits (minimum-norm solution)")
    if matrix.clipped:
        print(f"  Warning: {matrix.clipped} npit back-transforms clipped to the sample range")

    output_path = Path(output_path)
    ensure_dir(output_path.parent)
    print(f"\n  Saving to: {output_path}")
    matrix.to_frame().to_csv(output_path, index=False, lineterminator='\n')

    mae = point_mae_table(matrix, panel)
    save_diagnostic(mae, 'point_mae', output_path.parent / 'diagnostics')

    print("\n" + "-" * 60)
    print("SUMMARY")
    print("-" * 60)
    for _, row in mae.iterrows():
        print(f"  MAE {row['forecast']:<8s} {row['mae']:.3f}")

    print("\n" + "=" * 60)
    print("Stage 01 complete.")
    print("=" * 60)

    return matrix
