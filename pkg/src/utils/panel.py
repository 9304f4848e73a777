#!/usr/bin/env python3
"""
Hourly market panel and rolling calibration windows.

A panel holds day-ahead prices and day-ahead load forecasts on a
(day, hour) grid: ``price[d, h]`` and ``load[d, h]`` with ``h`` the market
hour 1..24 stored at column ``h - 1``. Days are contiguous calendar dates.

Usage
-----
from utils.panel import HourlyPanel, WindowSpec, window

spec = WindowSpec(length_days=728, anchor=728)
calib = window(panel, spec, day=800)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from utils.errors import ConfigError, RangeError, StructuralError


HOURS = 24
COLUMNS = ['date', 'hour', 'price', 'load']


# ============================================================
# PANEL
# ============================================================

@dataclass(frozen=True)
class HourlyPanel:
    """
    Rectangular hourly price/load panel.

    Attributes
    ----------
    days : pd.DatetimeIndex
        Strictly increasing, contiguous calendar dates
    price : np.ndarray
        (n_days, 24) day-ahead prices, currency/MWh
    load : np.ndarray
        (n_days, 24) day-ahead load forecasts, MWh
    """
    days: pd.DatetimeIndex
    price: np.ndarray
    load: np.ndarray

    def __post_init__(self):
        days = pd.DatetimeIndex(self.days).normalize()
        price = np.array(self.price, dtype=float)
        load = np.array(self.load, dtype=float)
        if price.ndim != 2 or price.shape[1] != HOURS or load.shape != price.shape:
            raise StructuralError(
                f"Panel arrays must be (n_days, {HOURS}); got price {price.shape}, load {load.shape}"
            )
        if len(days) != price.shape[0]:
            raise StructuralError(f"{len(days)} dates for {price.shape[0]} rows")
        if len(days) > 1 and not (np.diff(days.asi8) == 86_400 * 10**9).all():
            raise StructuralError("Panel days must be strictly increasing and contiguous")
        price.setflags(write=False)
        load.setflags(write=False)
        object.__setattr__(self, 'days', days)
        object.__setattr__(self, 'price', price)
        object.__setattr__(self, 'load', load)

    @property
    def n_days(self) -> int:
        """Number of days in the panel."""
        return len(self.days)

    @property
    def n_cells(self) -> int:
        """Number of (day, hour) cells."""
        return self.price.size

    @property
    def is_finite(self) -> bool:
        """True when every price and load value is finite."""
        return bool(np.isfinite(self.price).all() and np.isfinite(self.load).all())

    def slice(self, start: int, stop: int) -> 'HourlyPanel':
        """Days ``start`` (inclusive) to ``stop`` (exclusive) by index."""
        return HourlyPanel(
            days=self.days[start:stop],
            price=self.price[start:stop],
            load=self.load[start:stop],
        )

    def day_index(self, date) -> int:
        """Index of a calendar date in the panel."""
        ts = pd.Timestamp(date).normalize()
        pos = self.days.get_indexer([ts])[0]
        if pos < 0:
            raise RangeError(f"Date {ts.date()} not in panel "
                             f"({self.days[0].date()}..{self.days[-1].date()})")
        return int(pos)

    def to_frame(self) -> pd.DataFrame:
        """Long ``date, hour, price, load`` frame with ISO dates."""
        n = self.n_days
        return pd.DataFrame({
            'date': np.repeat(self.days.strftime('%Y-%m-%d'), HOURS),
            'hour': np.tile(np.arange(1, HOURS + 1), n),
            'price': self.price.reshape(-1),
            'load': self.load.reshape(-1),
        })

    def summary(self) -> dict:
        """Basic descriptive statistics."""
        return {
            'n_days': self.n_days,
            'first_day': self.days[0].date().isoformat() if self.n_days else None,
            'last_day': self.days[-1].date().isoformat() if self.n_days else None,
            'price_mean': float(np.mean(self.price)) if self.n_days else float('nan'),
            'price_std': float(np.std(self.price)) if self.n_days else float('nan'),
            'load_mean': float(np.mean(self.load)) if self.n_days else float('nan'),
        }


# ============================================================
# ROLLING WINDOWS
# ============================================================

@dataclass(frozen=True)
class WindowSpec:
    """
    Rolling calibration window.

    Attributes
    ----------
    length_days : int
        Number of days in the calibration window
    anchor : int
        Index of the first forecast day
    """
    length_days: int
    anchor: int

    def __post_init__(self):
        if int(self.length_days) < 1:
            raise ConfigError(f"Window length must be >= 1, got {self.length_days}")
        if int(self.anchor) < int(self.length_days):
            raise ConfigError(
                f"Window anchor {self.anchor} precedes the end of the first window "
                f"({self.length_days} days)"
            )


def window_bounds(length_days: int, day: int) -> tuple[int, int]:
    """Index range ``[start, stop)`` of the ``length_days`` days before ``day``."""
    if day < length_days:
        raise RangeError(
            f"Day index {day} has only {max(day, 0)} days of history; "
            f"window needs {length_days}"
        )
    return day - length_days, day


def window(panel: HourlyPanel, spec: WindowSpec, day: int) -> HourlyPanel:
    """
    Slice of the ``spec.length_days`` days strictly preceding ``day``.

    Raises
    ------
    RangeError
        If fewer than ``spec.length_days`` days precede ``day``
    """
    if day > panel.n_days:
        raise RangeError(f"Day index {day} beyond panel end ({panel.n_days} days)")
    start, stop = window_bounds(spec.length_days, day)
    return panel.slice(start, stop)
