#!/usr/bin/env python3
"""
Tests for src/utils/helpers.py

Tests cover:
- Formatting functions
- Artifact loading and saving
- JSON and diagnostic writers
- The worker pool
"""
from __future__ import annotations

import json
from operator import add

import pytest
import pandas as pd
import numpy as np
from pathlib import Path
import sys

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent / 'src'))

from utils.helpers import (
    ensure_dir,
    format_pvalue,
    get_project_root,
    load_data,
    load_yaml,
    parallel_map,
    resolve_path,
    save_data,
    save_diagnostic,
    save_json,
)


# ============================================================
# FORMATTING TESTS
# ============================================================

class TestFormatPvalue:
    """Tests for format_pvalue function."""

    def test_small_pvalue(self):
        assert format_pvalue(0.0001) == '<0.001'

    def test_normal_pvalue(self):
        assert format_pvalue(0.0456) == '0.046'

    def test_custom_threshold(self):
        assert format_pvalue(0.005, threshold=0.01) == '<0.01'


# ============================================================
# PATH TESTS
# ============================================================

class TestPaths:
    """Tests for project-relative paths."""

    def test_project_root_has_src(self):
        root = get_project_root()
        assert (root / 'src').is_dir()
        assert (root / 'config').is_dir()

    def test_absolute_path_kept(self, temp_dir):
        assert resolve_path(temp_dir / 'x.csv') == temp_dir / 'x.csv'

    def test_relative_path_under_root(self):
        assert resolve_path('data_work/panel.csv') == get_project_root() / 'data_work' / 'panel.csv'

    def test_ensure_dir(self, temp_dir):
        target = ensure_dir(temp_dir / 'a' / 'b')
        assert target.is_dir()


# ============================================================
# DATA I/O TESTS
# ============================================================

class TestLoadSave:
    """Tests for artifact loading and saving."""

    def test_csv_roundtrip(self, temp_dir, market_df):
        path = save_data(market_df, temp_dir / 'out' / 'panel.csv')
        back = load_data(path)
        pd.testing.assert_frame_equal(back, market_df, check_dtype=False)

    def test_parquet_roundtrip(self, temp_dir, market_df):
        path = save_data(market_df, temp_dir / 'panel.parquet')
        back = load_data(path)
        pd.testing.assert_frame_equal(back, market_df, check_dtype=False)

    def test_missing_file(self, temp_dir):
        with pytest.raises(FileNotFoundError):
            load_data(temp_dir / 'nope.csv')

    def test_unsupported_format(self, temp_dir, market_df):
        with pytest.raises(ValueError, match='Unsupported'):
            save_data(market_df, temp_dir / 'panel.xlsx')


class TestWriters:
    """Tests for JSON, diagnostics and YAML helpers."""

    def test_save_json_sorted(self, temp_dir):
        path = save_json({'b': 1, 'a': {'d': 2, 'c': 3}}, temp_dir / 'r.json')
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text)['a']['c'] == 3

    def test_save_diagnostic(self, temp_dir):
        df = pd.DataFrame({'hour': [1, 2], 'picp': [90.0, 88.5]})
        path = save_diagnostic(df, 'coverage', temp_dir / 'diag')
        assert path == temp_dir / 'diag' / 'coverage.csv'
        assert len(pd.read_csv(path)) == 2

    def test_load_yaml(self, temp_dir):
        path = temp_dir / 'run.yml'
        path.write_text('windows:\n  point: 10\n')
        assert load_yaml(path) == {'windows': {'point': 10}}

    def test_load_empty_yaml(self, temp_dir):
        path = temp_dir / 'empty.yml'
        path.write_text('')
        assert load_yaml(path) == {}


# ============================================================
# WORKER POOL TESTS
# ============================================================

class TestParallelMap:
    """Tests for parallel_map."""

    def test_sequential_order(self):
        assert parallel_map(add, [(1, 2), (3, 4), (5, 6)]) == [3, 7, 11]

    def test_pool_matches_sequential(self):
        tasks = [(i, i * i) for i in range(12)]
        assert parallel_map(add, tasks, n_jobs=2) == parallel_map(add, tasks, n_jobs=1)

    def test_empty(self):
        assert parallel_map(add, [], n_jobs=4) == []
