#!/usr/bin/env python3
"""
Stage 02: Probabilistic Forecasts

Purpose: Turn the five point forecasts into 99-percentile curves with seven
forecast-combination models over a rolling window of past point forecasts.

Models
------
HS    : mean of the five forecasts plus empirical quantiles of its past errors
QRA   : quantile regression of price on [1, f1..f5]
QRM   : quantile regression of price on [1, mean(f1..f5)]
QRF   : five regressions on [1, fi], merged by averaging their CDFs
SQRA, SQRM, SQRF : the same with the Gaussian-smoothed check loss and a
        rule-of-thumb bandwidth reselected per hour and per percentile

Every curve is sorted across the percentile grid before it is stored.

Input Files
-----------
- data_work/forecasts.csv
- data_work/panel.csv

Output Files
------------
- data_work/curves.parquet (date, hour, model, q, value)
- data_work/diagnostics/prob_fit_diagnostics.csv

Usage
-----
    python src/pipeline.py prob-forecast --models hs,qra,sqra --output curves.parquet
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union
import sys

# Add parent directory for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd

from utils.errors import ContractViolation, PipelineError, RangeError
from utils.helpers import ensure_dir, load_data, parallel_map, save_data, save_diagnostic
from utils.panel import HOURS
from utils.quantile_solvers import QUANTILE_GRID, SolverOptions, fit_quantile_grid


# ============================================================
# CONFIGURATION
# ============================================================

PROB_WINDOW = 182
MODEL_KINDS = ('HS', 'QRA', 'QRM', 'QRF', 'SQRA', 'SQRM', 'SQRF')
N_LEVELS = len(QUANTILE_GRID)

# Regressor families shared by the exact and smoothed variants
FAMILY = {'QRA': 'A', 'SQRA': 'A', 'QRM': 'M', 'SQRM': 'M', 'QRF': 'F', 'SQRF': 'F'}

# Tolerance when comparing an averaged CDF against a level
CDF_EPS = 1e-12


# ============================================================
# QUANTILE CURVES
# ============================================================

@dataclass
class QuantileCurve:
    """
    99 percentile forecasts for one (day, hour).

    ``values[k - 1]`` is the k% percentile.
    """
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.shape != (N_LEVELS,):
            raise ContractViolation(f"A curve has {N_LEVELS} levels, got {self.values.shape}")

    @staticmethod
    def index(percent: int) -> int:
        if not 1 <= percent <= N_LEVELS:
            raise ContractViolation(f"Percentile {percent} outside 1..{N_LEVELS}")
        return percent - 1

    def at(self, percent: int) -> float:
        return float(self.values[self.index(percent)])

    def lower(self, alpha: int) -> float:
        """Lower bound of the alpha% central PI (the (100 - alpha)/2 percentile)."""
        return self.at((100 - alpha) // 2)

    def upper(self, alpha: int) -> float:
        """Upper bound of the alpha% central PI (the (100 + alpha)/2 percentile)."""
        return self.at((100 + alpha) // 2)

    @property
    def median(self) -> float:
        return self.at(50)

    @property
    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))


def sort_curve(curve: Union[QuantileCurve, np.ndarray]) -> QuantileCurve:
    """Ascending rearrangement of the percentile values."""
    values = curve.values if isinstance(curve, QuantileCurve) else curve
    return QuantileCurve(np.sort(np.asarray(values, dtype=float)))


def count_crossings(values: np.ndarray) -> int:
    """Number of adjacent percentile pairs in decreasing order."""
    return int(np.sum(np.diff(values, axis=-1) < 0))


# ============================================================
# PROBABILITY AVERAGING
# ============================================================

def _curve_cdf(values: np.ndarray, x: np.ndarray, left: bool) -> np.ndarray:
    """
    Piecewise-linear CDF through (value[k], q[k]), flat at 0.01 / 0.99 beyond
    the outer knots. Right-continuous; ``left=True`` gives left limits.
    """
    q = QUANTILE_GRID
    n = values.size
    count = np.searchsorted(values, x, side='left' if left else 'right')
    out = np.empty(x.shape)
    below = count == 0
    above = count == n
    inner = ~(below | above)
    j = count[inner] - 1
    lo, hi = values[j], values[j + 1]
    out[inner] = q[j] + (x[inner] - lo) / (hi - lo) * (q[j + 1] - q[j])
    out[below] = q[0]
    out[above] = q[-1]
    return out


def prob_average(curves: Sequence[Union[QuantileCurve, np.ndarray]]) -> QuantileCurve:
    """
    Quantiles of the average of the curves' CDFs.

    Each curve defines a piecewise-linear CDF. The averaged CDF is inverted
    exactly on the union of knots: output[q] is the leftmost x within the
    range of all curve values where the average CDF reaches q.

    Raises
    ------
    ContractViolation
        If a curve is not non-decreasing or not finite
    """
    stack = np.array([c.values if isinstance(c, QuantileCurve) else np.asarray(c, dtype=float)
                      for c in curves], dtype=float)
    if stack.ndim != 2 or stack.shape[1] != N_LEVELS or stack.shape[0] == 0:
        raise ContractViolation(f"Expected curves of {N_LEVELS} levels, got {stack.shape}")
    if not np.isfinite(stack).all():
        raise ContractViolation("Curves to average contain non-finite values")
    if np.any(np.diff(stack, axis=1) < 0):
        raise ContractViolation("Probability averaging requires non-decreasing curves")

    knots = np.unique(stack)
    right = np.sort([_curve_cdf(v, knots, left=False) for v in stack], axis=0).mean(axis=0)
    left = np.sort([_curve_cdf(v, knots, left=True) for v in stack], axis=0).mean(axis=0)
    right = np.maximum.accumulate(right)
    left = np.minimum(left, right)

    out = np.empty(N_LEVELS)
    for k, q in enumerate(QUANTILE_GRID):
        target = q - CDF_EPS
        i = int(np.searchsorted(right, target, side='left'))
        i = min(i, knots.size - 1)
        if i == 0 or left[i] < target:
            out[k] = knots[i]
            continue
        # root on the linear piece (knots[i-1], knots[i])
        f0, f1 = right[i - 1], left[i]
        frac = 1.0 if f1 <= f0 else np.clip((q - f0) / (f1 - f0), 0.0, 1.0)
        out[k] = knots[i - 1] + frac * (knots[i] - knots[i - 1])
    return QuantileCurve(np.maximum.accumulate(out))


# ============================================================
# MODELS
# ============================================================

def _window_rows(day: int, window_days: int) -> slice:
    if day < window_days:
        raise RangeError(
            f"Probabilistic window needs {window_days} days of point forecasts before "
            f"day index {day}", day=day
        )
    return slice(day - window_days, day)


def empirical_quantiles(sample, levels=QUANTILE_GRID) -> np.ndarray:
    """Linear interpolation between order statistics placed at (i - 0.5)/N."""
    sample = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    n = sample.size
    positions = (np.arange(1, n + 1) - 0.5) / n
    return np.interp(levels, positions, sample)


def hs_forecast(forecasts: np.ndarray, prices: np.ndarray, day: int, hour: int,
                window_days: int = PROB_WINDOW) -> QuantileCurve:
    """
    Historical-simulation curve.

    Parameters
    ----------
    forecasts : np.ndarray
        (n_days, 24, n_vsts) point forecasts
    prices : np.ndarray
        (n_days, 24) realized prices aligned with ``forecasts``
    day : int
        Target day index
    hour : int
        Market hour 1..24
    """
    rows = _window_rows(day, window_days)
    h = hour - 1
    mean = forecasts[:, h, :].mean(axis=1)
    errors = prices[rows, h] - mean[rows]
    return sort_curve(mean[day] + empirical_quantiles(errors))


def _regressors(forecasts: np.ndarray, family: str, member: Optional[int] = None) -> np.ndarray:
    """Design [1, ...] for one hour: all forecasts, their mean or one member."""
    ones = np.ones((forecasts.shape[0], 1))
    if family == 'A':
        return np.hstack([ones, forecasts])
    if family == 'M':
        return np.hstack([ones, forecasts.mean(axis=1, keepdims=True)])
    return np.hstack([ones, forecasts[:, member:member + 1]])


def _family_curves(forecasts: np.ndarray, prices: np.ndarray, day: int, hour: int,
                   family: str, smoothed: bool, window_days: int,
                   options: Optional[SolverOptions]) -> dict:
    """
    Exact and smoothed raw (unsorted) curves of one regressor family.

    Returns a dict with keys 'qr' and (when ``smoothed``) 'sqr'; for family F
    each entry is a list of five curves. Also returns diagnostics under
    'n_floored'.
    """
    rows = _window_rows(day, window_days)
    h = hour - 1
    members = range(forecasts.shape[2]) if family == 'F' else [None]
    qr_curves, sqr_curves, n_floored = [], [], 0
    for member in members:
        X = _regressors(forecasts[:, h, :], family, member)
        grid = fit_quantile_grid(X[rows], prices[rows, h], smoothed=smoothed, options=options)
        qr_curves.append(grid.predict(X[day]))
        if smoothed:
            sqr_curves.append(grid.predict(X[day], smoothed=True))
        n_floored += grid.n_floored
    if family != 'F':
        return {'qr': qr_curves[0], 'sqr': sqr_curves[0] if smoothed else None,
                'n_floored': n_floored}
    return {'qr': qr_curves, 'sqr': sqr_curves if smoothed else None, 'n_floored': n_floored}


def _finish(raw, family: str) -> tuple[QuantileCurve, int]:
    """Sort (and for F, sort members then average) a raw fit; returns crossings."""
    if family == 'F':
        crossings = sum(count_crossings(c) for c in raw)
        return sort_curve(prob_average([sort_curve(c) for c in raw])), crossings
    return sort_curve(raw), count_crossings(raw)


def qra_like_forecast(kind: str, forecasts: np.ndarray, prices: np.ndarray, day: int,
                      hour: int, window_days: int = PROB_WINDOW,
                      options: Optional[SolverOptions] = None) -> QuantileCurve:
    """QRA / SQRA: regress price on [1, f1..f5]."""
    if kind not in ('QRA', 'SQRA'):
        raise ContractViolation(f"qra_like_forecast does not handle {kind}")
    smoothed = kind == 'SQRA'
    fits = _family_curves(forecasts, prices, day, hour, 'A', smoothed, window_days, options)
    return _finish(fits['sqr' if smoothed else 'qr'], 'A')[0]


def qrm_like_forecast(kind: str, forecasts: np.ndarray, prices: np.ndarray, day: int,
                      hour: int, window_days: int = PROB_WINDOW,
                      options: Optional[SolverOptions] = None) -> QuantileCurve:
    """QRM / SQRM: regress price on [1, mean forecast]."""
    if kind not in ('QRM', 'SQRM'):
        raise ContractViolation(f"qrm_like_forecast does not handle {kind}")
    smoothed = kind == 'SQRM'
    fits = _family_curves(forecasts, prices, day, hour, 'M', smoothed, window_days, options)
    return _finish(fits['sqr' if smoothed else 'qr'], 'M')[0]


def qrf_like_forecast(kind: str, forecasts: np.ndarray, prices: np.ndarray, day: int,
                      hour: int, window_days: int = PROB_WINDOW,
                      options: Optional[SolverOptions] = None) -> QuantileCurve:
    """QRF / SQRF: one regression per forecast, merged by probability averaging."""
    if kind not in ('QRF', 'SQRF'):
        raise ContractViolation(f"qrf_like_forecast does not handle {kind}")
    smoothed = kind == 'SQRF'
    fits = _family_curves(forecasts, prices, day, hour, 'F', smoothed, window_days, options)
    return _finish(fits['sqr' if smoothed else 'qr'], 'F')[0]


# ============================================================
# CURVE STORE
# ============================================================

@dataclass
class CurveSet:
    """
    Curves for every (model, day, hour).

    Attributes
    ----------
    models : list[str]
        Model kinds, in axis order
    days : pd.DatetimeIndex
        Forecast days
    values : np.ndarray
        (n_models, n_days, 24, 99)
    """
    models: list
    days: pd.DatetimeIndex
    values: np.ndarray
    crossings: Optional[dict] = None
    n_floored: int = 0

    def __post_init__(self):
        self.days = pd.DatetimeIndex(self.days)
        self.values = np.asarray(self.values, dtype=float)
        expected = (len(self.models), len(self.days), HOURS, N_LEVELS)
        if self.values.shape != expected:
            raise ContractViolation(f"Curve array {self.values.shape} != {expected}")

    @property
    def n_days(self) -> int:
        return len(self.days)

    def model(self, kind: str) -> np.ndarray:
        """(n_days, 24, 99) curves of one model."""
        return self.values[self.models.index(kind)]

    def curve(self, kind: str, day: int, hour: int) -> QuantileCurve:
        return QuantileCurve(self.model(kind)[day, hour - 1])

    def to_frame(self) -> pd.DataFrame:
        """Long ``date, hour, model, q, value`` frame."""
        m, d, _, k = self.values.shape
        per_model = d * HOURS * k
        return pd.DataFrame({
            'date': np.tile(np.repeat(self.days.strftime('%Y-%m-%d'), HOURS * k), m),
            'hour': np.tile(np.repeat(np.arange(1, HOURS + 1), k), m * d),
            'model': np.repeat(np.asarray(self.models, dtype=object), per_model),
            'q': np.tile(QUANTILE_GRID, m * d * HOURS),
            'value': self.values.reshape(-1),
        })

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> 'CurveSet':
        """Inverse of :meth:`to_frame` (row order free)."""
        models = list(dict.fromkeys(df['model']))
        dates = pd.to_datetime(df['date'])
        days = pd.DatetimeIndex(np.sort(dates.unique()))
        values = np.full((len(models), len(days), HOURS, N_LEVELS), np.nan)
        m_idx = pd.Categorical(df['model'], categories=models).codes
        d_idx = days.get_indexer(dates)
        h_idx = df['hour'].to_numpy(dtype=int) - 1
        q_idx = np.rint(df['q'].to_numpy(dtype=float) * 100).astype(int) - 1
        values[m_idx, d_idx, h_idx, q_idx] = df['value'].to_numpy(dtype=float)
        if not np.isfinite(values).all():
            raise ContractViolation("Curve store is incomplete")
        return cls(models=models, days=days, values=values)

    def save(self, path: Union[str, Path]) -> Path:
        return save_data(self.to_frame(), path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'CurveSet':
        return cls.from_frame(load_data(path))


# ============================================================
# PIPELINE
# ============================================================

def forecast_curves(forecasts: np.ndarray, prices: np.ndarray, day: int,
                    kinds: Sequence[str], window_days: int = PROB_WINDOW,
                    options: Optional[SolverOptions] = None) -> tuple[dict, dict]:
    """
    Sorted curves of every requested kind for all 24 hours of one day.

    Exact and smoothed variants of a regressor family share the exact fits.

    Returns
    -------
    tuple
        ({kind: (24, 99) array}, {'crossings': {kind: int}, 'n_floored': int})
    """
    out = {kind: np.empty((HOURS, N_LEVELS)) for kind in kinds}
    crossings = {kind: 0 for kind in kinds}
    n_floored = 0
    families = {}
    for kind in kinds:
        if kind != 'HS':
            families.setdefault(FAMILY[kind], set()).add(kind)

    for hour in range(1, HOURS + 1):
        try:
            if 'HS' in out:
                out['HS'][hour - 1] = hs_forecast(forecasts, prices, day, hour, window_days).values
            for family, members in families.items():
                smoothed = any(k.startswith('S') for k in members)
                fits = _family_curves(forecasts, prices, day, hour, family, smoothed,
                                      window_days, options)
                n_floored += fits['n_floored']
                for kind in members:
                    curve, n_cross = _finish(fits['sqr' if kind.startswith('S') else 'qr'],
                                             family)
                    out[kind][hour - 1] = curve.values
                    crossings[kind] += n_cross
        except PipelineError as err:
            raise err.add_context(hour=hour)
    return out, {'crossings': crossings, 'n_floored': n_floored}


def _curves_task(forecasts: np.ndarray, prices: np.ndarray, day: int, kinds: list,
                 window_days: int, options: Optional[SolverOptions], label: str):
    try:
        return forecast_curves(forecasts, prices, day, kinds, window_days, options)
    except PipelineError as err:
        raise err.add_context(day=label)


def run_prob_pipeline(
    forecasts: np.ndarray,
    prices: np.ndarray,
    days: pd.DatetimeIndex,
    kinds: Sequence[str],
    first_day: int,
    last_day: int,
    window_days: int = PROB_WINDOW,
    options: Optional[SolverOptions] = None,
    n_jobs: int = 1,
) -> CurveSet:
    """
    Curves for every kind over day indices ``first_day..last_day``.

    Parameters
    ----------
    forecasts : np.ndarray
        (n_days, 24, n_vsts) point forecasts
    prices : np.ndarray
        (n_days, 24) realized prices on the same days
    days : pd.DatetimeIndex
        Calendar of ``forecasts``
    kinds : sequence of str
        Model kinds
    """
    kinds = [k.upper() for k in kinds]
    for kind in kinds:
        if kind not in MODEL_KINDS:
            raise ContractViolation(f"Unknown model kind '{kind}'")
    forecasts = np.asarray(forecasts, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if forecasts.shape[:2] != prices.shape or len(days) != prices.shape[0]:
        raise ContractViolation(
            f"Forecasts {forecasts.shape} and prices {prices.shape} are not aligned"
        )
    if first_day < window_days:
        raise RangeError(f"First day index {first_day} has fewer than {window_days} "
                         f"days of point forecasts")
    if last_day < first_day or last_day >= prices.shape[0]:
        raise RangeError(f"Invalid range {first_day}..{last_day}")

    # each task gets only its window and the target day
    tasks = [
        (forecasts[d - window_days:d + 1], prices[d - window_days:d + 1], window_days,
         kinds, window_days, options, days[d].date().isoformat())
        for d in range(first_day, last_day + 1)
    ]
    results = parallel_map(_curves_task, tasks, n_jobs=n_jobs)

    values = np.empty((len(kinds), len(tasks), HOURS, N_LEVELS))
    crossings = {kind: 0 for kind in kinds}
    n_floored = 0
    for i, (curves, diag) in enumerate(results):
        for m, kind in enumerate(kinds):
            values[m, i] = curves[kind]
            crossings[kind] += diag['crossings'][kind]
        n_floored += diag['n_floored']

    return CurveSet(models=kinds, days=days[first_day:last_day + 1], values=values,
                    crossings=crossings, n_floored=n_floored)


# ============================================================
# MAIN ENTRY POINT
# ============================================================

def main(
    matrix,
    prices: np.ndarray,
    output_path: Union[str, Path],
    kinds: Sequence[str] = MODEL_KINDS,
    window_days: int = PROB_WINDOW,
    options: Optional[SolverOptions] = None,
    n_jobs: int = 1,
) -> CurveSet:
    """
    Execute the probabilistic-forecast stage.

    Parameters
    ----------
    matrix : PointForecastMatrix
        Point forecasts
    prices : np.ndarray
        (n_days, 24) realized prices on ``matrix.days``
    output_path : path
        Curve store (.parquet or .csv)
    """
    print("=" * 60)
    print("Stage 02: Probabilistic Forecasts")
    print("=" * 60)

    first_day, last_day = window_days, matrix.n_days - 1
    if last_day < first_day:
        raise RangeError(f"{matrix.n_days} forecast days leave nothing after the "
                         f"{window_days}-day window")
    print(f"\n  Models: {', '.join(kinds)}; window: {window_days} days")
    print(f"  Evaluation days: {matrix.days[first_day].date()} .. "
          f"{matrix.days[last_day].date()} ({last_day - first_day + 1:,} days)")

    try:
        curves = run_prob_pipeline(matrix.values, prices, matrix.days, kinds,
                                   first_day, last_day, window_days=window_days,
                                   options=options, n_jobs=n_jobs)
    except PipelineError as e:
        print(f"\nERROR: {e}")
        raise
    print(f"    -> {curves.values.shape[0] * curves.values.shape[1] * HOURS:,} curves")
    if curves.n_floored:
        print(f"  Warning: {curves.n_floored} bandwidths floored at 1e-6 (zero residual scale)")

    output_path = Path(output_path)
    ensure_dir(output_path.parent)
    print(f"\n  Saving to: {output_path}")
    curves.save(output_path)

    diag = pd.DataFrame({
        'model': list(curves.crossings),
        'crossings_before_sort': list(curves.crossings.values()),
    })
    save_diagnostic(diag, 'prob_fit_diagnostics', output_path.parent / 'diagnostics')

    print("\n" + "-" * 60)
    print("SUMMARY")
    print("-" * 60)
    for _, row in diag.iterrows():
        print(f"  {row['model']:<5s} quantile crossings repaired by sorting: "
              f"{row['crossings_before_sort']:,}")

    print("\n" + "=" * 60)
    print("Stage 02 complete.")
    print("=" * 60)

    return curves
