#!/usr/bin/env python3
"""
Shared pytest fixtures for the test suite.

This module provides common fixtures used across test modules including:
- Temporary directories
- Small synthetic market panels and raw CSV files
- Percentile-curve arrays with known distributions
- Minimal run configurations
"""
from __future__ import annotations

import os
import sys
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from utils.panel import HourlyPanel
from utils.quantile_solvers import QUANTILE_GRID
from utils.synthetic_data import SyntheticDataGenerator


def pytest_collection_modifyitems(config, items):
    """Skip tests marked slow unless RUN_SLOW=1."""
    if os.environ.get('RUN_SLOW') == '1':
        return
    skip = pytest.mark.skip(reason='slow acceptance run; set RUN_SLOW=1')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale acceptance runs (RUN_SLOW=1)')


# ============================================================
# PATH FIXTURES
# ============================================================

@pytest.fixture
def project_root() -> Path:
    """Get the project root directory."""
    return Path(__file__).parent.parent


@pytest.fixture
def temp_dir():
    """Create a temporary directory that is cleaned up after tests."""
    temp_path = Path(tempfile.mkdtemp())
    yield temp_path
    shutil.rmtree(temp_path, ignore_errors=True)


# ============================================================
# PANEL FIXTURES
# ============================================================

@pytest.fixture
def small_panel() -> HourlyPanel:
    """60-day synthetic panel starting 2019-11-01."""
    return SyntheticDataGenerator(seed=7).generate_market_panel(
        n_days=60, start_date='2019-11-01'
    )


@pytest.fixture
def ramp_panel() -> HourlyPanel:
    """Deterministic 10-day panel: price = 10*day + hour, load = 100 + hour."""
    days = pd.date_range('2021-03-01', periods=10, freq='D')
    d = np.arange(10)[:, None]
    h = np.arange(1, 25)[None, :]
    return HourlyPanel(days=days, price=10.0 * d + h, load=100.0 + h + 0.0 * d)


@pytest.fixture
def market_df(ramp_panel) -> pd.DataFrame:
    """Long raw frame of the first three ramp days."""
    return ramp_panel.slice(0, 3).to_frame()


@pytest.fixture
def market_csv(temp_dir, market_df) -> Path:
    """Clean three-day market CSV."""
    path = temp_dir / 'market.csv'
    market_df.to_csv(path, index=False)
    return path


# ============================================================
# CURVE FIXTURES
# ============================================================

def gaussian_curves(median: np.ndarray, sd: float = 1.0) -> np.ndarray:
    """(..., 99) percentile curves of N(median, sd^2)."""
    return np.asarray(median, dtype=float)[..., None] + sd * norm.ppf(QUANTILE_GRID)


@pytest.fixture
def make_curves():
    """Factory for Gaussian percentile curves."""
    return gaussian_curves


# ============================================================
# CONFIGURATION FIXTURES
# ============================================================

@pytest.fixture
def quick_config(temp_dir) -> dict:
    """Synthetic run small enough for a unit test (HS only, short windows)."""
    return {
        'paths': {'work_dir': str(temp_dir / 'data_work')},
        'synthetic': {'seed': 3, 'days': 800, 'start_date': '2015-01-01'},
        'windows': {'point': 20, 'prob': 10},
        'vst': {'kinds': ['asinh', 'boxcox']},
        'models': ['HS'],
        'alphas': '50..90:20',
        'first_day': '2017-01-21',
        'periods': [{'name': '2017-2019', 'end': '2019-12-31'}, {'name': 'full'}],
    }
