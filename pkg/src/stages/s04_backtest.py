#!/usr/bin/env python3
"""
Stage 04: Battery Trading Backtest

Purpose: Turn percentile curves into day-ahead limit orders for a battery
and settle them against realized prices.

This stage handles:
- Hour selection on the median curve for each battery state
- Limit-order plans from the alpha% central PI (bid = upper, offer = lower)
- Settlement with 90% charge/discharge efficiency and the 3-state battery
- The unlimited (price-taker) benchmark on point forecasts
- Per-strategy summary, optimal PI level and per-day ledger

Battery: 2.5 MWh, floor 0.5 MWh, 1 MWh blocks. State B in {0, 1, 2} counts
usable blocks above the floor. Buying at hour h stores 1 MWh and costs
P_h / 0.9; selling releases 1 MWh and earns 0.9 P_h.

Input Files
-----------
- data_work/curves.parquet
- data_work/panel.csv
- data_work/forecasts.csv (optional, benchmark)

Output Files
------------
- data_work/trades.csv (model, alpha, total_profit, traded_mwh, profit_per_mwh)
- data_work/ledger.csv
- data_work/diagnostics/backtest_best_alpha.csv
- data_work/diagnostics/backtest_by_period.csv

Usage
-----
    python src/pipeline.py backtest --curves curves.parquet --prices panel.csv --alpha 50..98:2 --report trades.csv
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

from utils.errors import ContractViolation, InvariantViolation, PipelineError
from utils.helpers import ensure_dir, parallel_map, save_data, save_diagnostic


# ============================================================
# CONFIGURATION
# ============================================================

EFFICIENCY = 0.9
BATTERY_STATES = (0, 1, 2)
INITIAL_STATE = 1
MEDIAN_INDEX = 49

LEDGER_COLUMNS = [
    'date', 'model', 'alpha', 'state', 'h1', 'h2', 'h_star', 'bid', 'offer',
    'price_h1', 'price_h2', 'price_h_star', 'bid_accepted', 'offer_accepted',
    'buy_cash', 'sell_cash', 'profit', 'traded_mwh', 'next_state',
]
SUMMARY_COLUMNS = ['model', 'alpha', 'total_profit', 'traded_mwh', 'profit_per_mwh']


def buy_cost(price: float) -> float:
    """Cash paid to store 1 MWh."""
    return price / EFFICIENCY


def sell_revenue(price: float) -> float:
    """Cash earned by releasing 1 MWh."""
    return EFFICIENCY * price


def _as_percent(alpha) -> int:
    alpha = float(alpha)
    pct = int(round(alpha * 100)) if alpha <= 1 else int(round(alpha))
    if pct % 2 or not 2 <= pct <= 98:
        raise ContractViolation(f"PI level {alpha} is not on the even-percent grid")
    return pct


# ============================================================
# HOUR SELECTION
# ============================================================

TIE_TOLERANCE = 1e-9


def _first_best(obj: np.ndarray) -> tuple:
    """Index of the first maximum in C order, treating near-equal values as ties."""
    flat = obj.reshape(-1)
    top = flat.max()
    k = int(np.flatnonzero(flat >= top - TIE_TOLERANCE * max(1.0, abs(top)))[0])
    return np.unravel_index(k, obj.shape)

@dataclass(frozen=True)
class HourChoice:
    """1-based hours chosen for a day; ``h_star`` is None in state 1."""
    h1: int
    h2: int
    h_star: Optional[int] = None
    objective: float = 0.0


def select_hours(median, state: int) -> HourChoice:
    """
    Pick buy/sell hours (and the forced hour) on the median curve.

    Enumerates every admissible combination and keeps the most profitable;
    ties (up to rounding) go to the lexicographically smallest
    (h_star, h1, h2). Hours are pairwise distinct.

    - B=1: maximize 0.9 P(h2) - P(h1)/0.9
    - B=0: maximize 0.9 P(h2) - P(h1)/0.9 - P(h*)/0.9 with h* < h2
    - B=2: maximize 0.9 P(h2) - P(h1)/0.9 + 0.9 P(h*) with h* < h1

    Parameters
    ----------
    median : array-like
        Median forecast per hour (any day length >= 3)
    state : int
        Battery state
    """
    p = np.asarray(median, dtype=float).reshape(-1)
    n = p.size
    if n < 3 or not np.isfinite(p).all():
        raise ContractViolation("Hour selection needs at least 3 finite median forecasts")
    if state not in BATTERY_STATES:
        raise ContractViolation(f"Battery state {state} outside {BATTERY_STATES}")

    sell = EFFICIENCY * p
    buy = p / EFFICIENCY
    idx = np.arange(n)

    if state == 1:
        # [h1, h2]
        obj = sell[None, :] - buy[:, None]
        obj[idx, idx] = -np.inf
        h1, h2 = _first_best(obj)
        return HourChoice(h1=int(h1) + 1, h2=int(h2) + 1, objective=float(obj[h1, h2]))

    # [h*, h1, h2]
    pair = sell[None, :] - buy[:, None]
    forced = -buy if state == 0 else sell
    obj = forced[:, None, None] + pair[None, :, :]
    hs, h1, h2 = np.meshgrid(idx, idx, idx, indexing='ij')
    feasible = (hs != h1) & (hs != h2) & (h1 != h2)
    feasible &= (hs < h2) if state == 0 else (hs < h1)
    obj = np.where(feasible, obj, -np.inf)
    best = _first_best(obj)
    return HourChoice(h1=int(best[1]) + 1, h2=int(best[2]) + 1, h_star=int(best[0]) + 1,
                      objective=float(obj[best]))


# ============================================================
# PLAN AND SETTLEMENT
# ============================================================

@dataclass(frozen=True)
class DayPlan:
    """Orders for one day."""
    h1: int
    h2: int
    h_star: Optional[int]
    bid: float
    offer: float
    alpha: int

    def to_dict(self) -> dict:
        return {'h1': self.h1, 'h2': self.h2, 'h_star': self.h_star,
                'bid': self.bid, 'offer': self.offer, 'alpha': self.alpha}


def make_plan(curves, alpha, state: int) -> DayPlan:
    """
    Build the day's orders from its 24 percentile curves.

    The bid at h1 is the upper PI bound, percentile (100 + alpha)/2; the
    offer at h2 is the lower bound, percentile (100 - alpha)/2.

    Parameters
    ----------
    curves : np.ndarray
        (n_hours, 99) sorted percentile curves
    alpha : int or float
        PI level (percent or fraction)
    state : int
        Battery state at the start of the day
    """
    pct = _as_percent(alpha)
    curves = np.asarray(curves, dtype=float)
    choice = select_hours(curves[:, MEDIAN_INDEX], state)
    return DayPlan(
        h1=choice.h1,
        h2=choice.h2,
        h_star=choice.h_star,
        bid=float(curves[choice.h1 - 1, (100 + pct) // 2 - 1]),
        offer=float(curves[choice.h2 - 1, (100 - pct) // 2 - 1]),
        alpha=pct,
    )


def settle_day(plan: DayPlan, prices, state: int) -> tuple[float, int, dict]:
    """
    Settle a plan against realized prices.

    The bid clears when P(h1) <= bid, the offer when P(h2) >= offer; the
    forced trade at h* (states 0 and 2) always clears at the market price.

    Returns
    -------
    tuple
        (profit, next state, ledger row)

    Raises
    ------
    InvariantViolation
        If the next state leaves {0, 1, 2}
    """
    prices = np.asarray(prices, dtype=float).reshape(-1)
    if (plan.h_star is None) != (state == 1):
        raise ContractViolation(f"Plan does not match battery state {state}")

    p1, p2 = prices[plan.h1 - 1], prices[plan.h2 - 1]
    p_star = prices[plan.h_star - 1] if plan.h_star is not None else np.nan
    bid_ok = bool(p1 <= plan.bid)
    offer_ok = bool(p2 >= plan.offer)

    buy = sell = 0.0
    delta = legs = 0
    if bid_ok:
        buy += buy_cost(p1)
        delta += 1
        legs += 1
    if offer_ok:
        sell += sell_revenue(p2)
        delta -= 1
        legs += 1
    if state == 0:
        buy += buy_cost(p_star)
        delta += 1
        legs += 1
    elif state == 2:
        sell += sell_revenue(p_star)
        delta -= 1
        legs += 1

    next_state = state + delta
    if next_state not in BATTERY_STATES:
        raise InvariantViolation(
            f"Battery state {state} -> {next_state}",
            bid_accepted=bid_ok, offer_accepted=offer_ok,
        )
    profit = sell - buy
    row = {
        'state': state, 'h1': plan.h1, 'h2': plan.h2, 'h_star': plan.h_star,
        'bid': plan.bid, 'offer': plan.offer, 'price_h1': p1, 'price_h2': p2,
        'price_h_star': p_star, 'bid_accepted': bid_ok, 'offer_accepted': offer_ok,
        'buy_cash': buy, 'sell_cash': sell, 'profit': profit, 'traded_mwh': legs,
        'next_state': next_state,
    }
    return profit, next_state, row


# ============================================================
# LEDGER
# ============================================================

@dataclass
class TradeLedger:
    """Per-day rows of one strategy and their totals."""
    model: str
    alpha: Optional[int]
    rows: pd.DataFrame

    @property
    def total_profit(self) -> float:
        return float(self.rows['profit'].sum())

    @property
    def traded_mwh(self) -> int:
        return int(self.rows['traded_mwh'].sum())

    @property
    def profit_per_mwh(self) -> float:
        traded = self.traded_mwh
        return self.total_profit / traded if traded else float('nan')

    @property
    def states(self) -> np.ndarray:
        """State trajectory: start of every day, then the final state."""
        if self.rows.empty:
            return np.array([], dtype=int)
        return np.append(self.rows['state'].to_numpy(dtype=int),
                         int(self.rows['next_state'].iloc[-1]))

    def subset(self, mask) -> 'TradeLedger':
        return TradeLedger(self.model, self.alpha, self.rows[np.asarray(mask)])

    def to_dict(self) -> dict:
        return {
            'model': self.model,
            'alpha': self.alpha,
            'total_profit': self.total_profit,
            'traded_mwh': self.traded_mwh,
            'profit_per_mwh': self.profit_per_mwh,
        }


def _ledger_frame(rows: list, days, model: str, alpha) -> pd.DataFrame:
    df = pd.DataFrame(rows)
    if days is None:
        days = pd.RangeIndex(len(rows))
    else:
        days = pd.DatetimeIndex(days).strftime('%Y-%m-%d')
    df.insert(0, 'date', list(days))
    df.insert(1, 'model', model)
    df.insert(2, 'alpha', alpha)
    return df.reindex(columns=LEDGER_COLUMNS)


def run_strategy(curves, prices, alpha, initial_state: int = INITIAL_STATE,
                 days=None, model: str = '') -> TradeLedger:
    """
    Trade one (model, alpha) strategy day by day.

    Parameters
    ----------
    curves : np.ndarray
        (n_days, 24, 99) percentile curves
    prices : np.ndarray
        (n_days, 24) realized prices
    alpha : int or float
        PI level
    initial_state : int
        Battery state on the first day
    days : pd.DatetimeIndex, optional
        Dates for the ledger
    """
    curves = np.asarray(curves, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if curves.shape[:-1] != prices.shape:
        raise ContractViolation(f"Curves {curves.shape} and prices {prices.shape} misaligned")
    if initial_state not in BATTERY_STATES:
        raise ContractViolation(f"Initial battery state {initial_state} outside {BATTERY_STATES}")
    pct = _as_percent(alpha)

    state = initial_state
    rows = []
    for d in range(prices.shape[0]):
        try:
            plan = make_plan(curves[d], pct, state)
            _, state, row = settle_day(plan, prices[d], state)
        except PipelineError as e:
            raise e.add_context(day=d, model=model, alpha=pct)
        rows.append(row)
    return TradeLedger(model=model, alpha=pct, rows=_ledger_frame(rows, days, model, pct))


def unlimited_benchmark(forecasts, prices, days=None, label: str = 'mean') -> TradeLedger:
    """
    Price-taker benchmark on point forecasts.

    Buys at the hour of the lowest forecast and sells at the hour of the
    highest; both orders always execute and the battery is unconstrained.
    """
    forecasts = np.asarray(forecasts, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if forecasts.shape != prices.shape:
        raise ContractViolation(f"Forecasts {forecasts.shape} and prices {prices.shape} misaligned")
    rows = []
    for d in range(prices.shape[0]):
        choice = select_hours(forecasts[d], 1)
        p1, p2 = prices[d, choice.h1 - 1], prices[d, choice.h2 - 1]
        buy, sell = buy_cost(p1), sell_revenue(p2)
        rows.append({
            'state': INITIAL_STATE, 'h1': choice.h1, 'h2': choice.h2, 'h_star': None,
            'bid': np.nan, 'offer': np.nan, 'price_h1': p1, 'price_h2': p2,
            'price_h_star': np.nan, 'bid_accepted': True, 'offer_accepted': True,
            'buy_cash': buy, 'sell_cash': sell, 'profit': sell - buy, 'traded_mwh': 2,
            'next_state': INITIAL_STATE,
        })
    model = f'UNLIMITED-{label}'
    return TradeLedger(model=model, alpha=None, rows=_ledger_frame(rows, days, model, None))


# ============================================================
# SUMMARIES
# ============================================================

def summary_frame(ledgers: Sequence[TradeLedger]) -> pd.DataFrame:
    """One row per strategy: model, alpha, total_profit, traded_mwh, profit_per_mwh."""
    return pd.DataFrame([lg.to_dict() for lg in ledgers], columns=SUMMARY_COLUMNS)


def best_alpha_table(summary: pd.DataFrame, benchmark: Optional[float] = None) -> pd.DataFrame:
    """
    PI level with the highest profit per MWh for each quantile model.

    Parameters
    ----------
    summary : pd.DataFrame
        Output of :func:`summary_frame`
    benchmark : float, optional
        Profit per MWh of the unlimited benchmark, for the relative improvement
    """
    strategies = summary[summary['alpha'].notna()].dropna(subset=['profit_per_mwh'])
    rows = []
    for model, grp in strategies.groupby('model', sort=False):
        best = grp.loc[grp['profit_per_mwh'].idxmax()]
        improvement = np.nan
        if benchmark is not None and np.isfinite(benchmark) and benchmark != 0:
            improvement = (best['profit_per_mwh'] - benchmark) / abs(benchmark) * 100.0
        rows.append({
            'model': model,
            'best_alpha': int(best['alpha']),
            'profit_per_mwh': float(best['profit_per_mwh']),
            'improvement_pct': improvement,
        })
    return pd.DataFrame(rows, columns=['model', 'best_alpha', 'profit_per_mwh', 'improvement_pct'])


def period_summary(ledgers: Sequence[TradeLedger], periods: Sequence) -> pd.DataFrame:
    """Strategy totals restricted to each named period (state path from the full run)."""
    frames = []
    for period in periods:
        for lg in ledgers:
            mask = period.mask(pd.DatetimeIndex(pd.to_datetime(lg.rows['date'])))
            if not mask.any():
                continue
            row = lg.subset(mask).to_dict()
            row['period'] = period.name
            frames.append(row)
    return pd.DataFrame(frames, columns=['period'] + SUMMARY_COLUMNS)


def backtest_all(curves, prices: np.ndarray, alphas: Sequence[int],
                 initial_state: int = INITIAL_STATE, matrix=None,
                 n_jobs: int = 1) -> tuple[list, list]:
    """
    Run every (model, alpha) strategy plus the unlimited benchmarks.

    Returns
    -------
    tuple
        (strategy ledgers, benchmark ledgers)
    """
    tasks = [(curves.model(m), prices, a, initial_state, curves.days, m)
             for m in curves.models for a in alphas]
    ledgers = parallel_map(run_strategy, tasks, n_jobs=n_jobs)

    benchmarks = []
    if matrix is not None:
        offset = matrix.days.get_indexer(curves.days)
        if (offset < 0).any():
            raise ContractViolation("Point forecasts do not cover the curve days")
        benchmarks.append(unlimited_benchmark(matrix.mean()[offset], prices, curves.days, 'mean'))
        for kind in matrix.vsts:
            benchmarks.append(unlimited_benchmark(matrix.for_vst(kind)[offset], prices,
                                                  curves.days, kind))
    return ledgers, benchmarks


# ============================================================
# MAIN ENTRY POINT
# ============================================================

def main(
    curves,
    panel,
    trades_path: Union[str, Path],
    ledger_path: Optional[Union[str, Path]] = None,
    alphas: Sequence[int] = tuple(range(50, 100, 2)),
    initial_state: int = INITIAL_STATE,
    matrix=None,
    periods: Sequence = (),
    n_jobs: int = 1,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Execute the backtest stage.

    Parameters
    ----------
    curves : CurveSet
        Percentile curves
    panel : HourlyPanel
        Realized prices
    trades_path : path
        Per-strategy summary CSV
    ledger_path : path, optional
        Per-day ledger CSV
    matrix : PointForecastMatrix, optional
        Point forecasts for the unlimited benchmark
    periods : sequence of PeriodSpec
        Named periods for the per-period breakdown

    Returns
    -------
    tuple
        (per-strategy summary, per-period summary)
    """
    print("=" * 60)
    print("Stage 04: Battery Trading Backtest")
    print("=" * 60)

    if periods:
        from utils.config import check_periods
        check_periods(periods, curves.days)

    start = panel.day_index(curves.days[0])
    prices = panel.price[start:start + curves.n_days]
    print(f"\n  Strategies: {len(curves.models)} models x {len(alphas)} PI levels; "
          f"{curves.n_days:,} days; initial state B={initial_state}")

    try:
        ledgers, benchmarks = backtest_all(curves, prices, alphas, initial_state,
                                           matrix=matrix, n_jobs=n_jobs)
    except PipelineError as e:
        print(f"\nERROR: {e}")
        raise
    if not benchmarks:
        print("  Warning: no point forecasts; unlimited benchmark skipped")

    summary = summary_frame(ledgers + benchmarks)
    trades_path = Path(trades_path)
    ensure_dir(trades_path.parent)
    print(f"\n  Saving to: {trades_path}")
    summary.to_csv(trades_path, index=False)
    if ledger_path is not None:
        print(f"  Saving to: {ledger_path}")
        save_data(pd.concat([lg.rows for lg in ledgers + benchmarks], ignore_index=True),
                  ledger_path)

    bench = benchmarks[0].profit_per_mwh if benchmarks else None
    best = best_alpha_table(summary, bench)
    diag_dir = trades_path.parent / 'diagnostics'
    save_diagnostic(best, 'backtest_best_alpha', diag_dir)
    by_period = period_summary(ledgers + benchmarks, periods)
    if periods:
        save_diagnostic(by_period, 'backtest_by_period', diag_dir)

    print("\n" + "-" * 60)
    print("SUMMARY")
    print("-" * 60)
    if benchmarks:
        for lg in benchmarks:
            print(f"  {lg.model:<18s} {lg.profit_per_mwh:8.3f} per MWh")
    for _, row in best.iterrows():
        line = f"  {row['model']:<5s} best alpha {row['best_alpha']}%: {row['profit_per_mwh']:8.3f} per MWh"
        if np.isfinite(row['improvement_pct']):
            line += f" ({row['improvement_pct']:+.1f}% vs benchmark)"
        print(line)

    print("\n" + "=" * 60)
    print("Stage 04 complete.")
    print("=" * 60)

    return summary, by_period
