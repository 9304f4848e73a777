#!/usr/bin/env python3
"""
Tests for src/pipeline.py

Tests cover:
- CLI argument parsing
- Exit codes per error family
- The synth command and period checks
- Small end-to-end synthetic runs, with and without the quantile models, and their determinism
"""
from __future__ import annotations

import pytest
import numpy as np
import pandas as pd
import yaml
import sys
from pathlib import Path

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from pipeline import main, parse_args, run_pipeline
from utils.config import RunConfig


def _write_config(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


class TestParseArgs:
    """Tests for argument parsing."""

    def test_synth(self):
        args = parse_args(['synth', '--seed', '5', '--days', '900'])
        assert args.cmd == 'synth'
        assert args.seed == 5
        assert args.days == 900
        assert args.noise is None

    def test_backtest_options(self):
        args = parse_args(['backtest', '--alpha', '50,90', '-r', 'trades.csv', '-c', 'run.yml'])
        assert args.alpha == '50,90'
        assert args.report == 'trades.csv'
        assert args.config == 'run.yml'

    def test_evaluate_defaults(self):
        args = parse_args(['evaluate'])
        assert args.curves is None
        assert args.report is None

    def test_command_required(self):
        with pytest.raises(SystemExit):
            parse_args([])

    def test_invalid_noise(self):
        with pytest.raises(SystemExit):
            parse_args(['synth', '--noise', 'cauchy'])


class TestExitCodes:
    """main() maps error families to exit codes."""

    def test_config_error(self, temp_dir, quick_config):
        quick_config['windows'] = {'point': 0, 'prob': 10}
        cfg = _write_config(temp_dir / 'run.yml', quick_config)
        assert main(['all', '--config', str(cfg)]) == 1

    def test_unknown_key(self, temp_dir):
        cfg = _write_config(temp_dir / 'run.yml', {'windowz': {}})
        assert main(['all', '--config', str(cfg)]) == 1

    def test_missing_artifact(self, temp_dir, quick_config):
        cfg = _write_config(temp_dir / 'run.yml', quick_config)
        assert main(['evaluate', '--config', str(cfg)]) == 2

    def test_parse_error(self, temp_dir, quick_config):
        raw = temp_dir / 'bad.csv'
        raw.write_text('date,hour,price,load\n2020-01-01,1,abc,100\n')
        cfg = _write_config(temp_dir / 'run.yml', quick_config)
        assert main(['ingest', '--config', str(cfg), '--input', str(raw)]) == 2

    def test_degenerate_window(self, temp_dir, quick_config):
        days = pd.date_range('2020-01-01', periods=40)
        raw = pd.DataFrame({
            'date': np.repeat(days.strftime('%Y-%m-%d'), 24),
            'hour': np.tile(np.arange(1, 25), 40),
            'price': 40.0,
            'load': np.tile(np.arange(100.0, 124.0), 40),
        })
        raw.to_csv(temp_dir / 'flat.csv', index=False)
        quick_config.pop('first_day')
        cfg = _write_config(temp_dir / 'run.yml', quick_config)
        assert main(['ingest', '--config', str(cfg), '--input', str(temp_dir / 'flat.csv')]) == 0
        assert main(['point-forecast', '--config', str(cfg)]) == 3


class TestSynthCommand:
    """The synth command only needs the 800-day floor."""

    def test_days_below_forecast_windows(self, temp_dir):
        cfg = _write_config(temp_dir / 'run.yml',
                            {'paths': {'work_dir': str(temp_dir / 'data_work')}})
        out = temp_dir / 'panel.csv'
        assert main(['synth', '--config', str(cfg), '--seed', '1', '--days', '900',
                     '-o', str(out)]) == 0
        panel = pd.read_csv(out)
        assert len(panel) == 21_600
        assert not panel.isna().any().any()

    def test_floor(self, temp_dir):
        cfg = _write_config(temp_dir / 'run.yml',
                            {'paths': {'work_dir': str(temp_dir / 'data_work')}})
        assert main(['synth', '--config', str(cfg), '--days', '799',
                     '-o', str(temp_dir / 'p.csv')]) == 1

    def test_empty_period(self, quick_config, temp_dir):
        quick_config['periods'] = [{'name': 'later', 'start': '2030-01-01'}]
        cfg = _write_config(temp_dir / 'run.yml', quick_config)
        assert main(['all', '--config', str(cfg)]) == 2


class TestEndToEnd:
    """Small synthetic runs through every stage."""

    def test_all_stages(self, quick_config, temp_dir):
        out = run_pipeline(RunConfig.from_dict(quick_config))
        work = temp_dir / 'data_work'
        for name in ('panel.csv', 'forecasts.csv', 'curves.parquet', 'report.json',
                     'trades.csv', 'ledger.csv', 'summary.csv'):
            assert (work / name).exists(), name

        matrix = out['point-forecast']
        assert str(matrix.days[0].date()) == '2017-01-21'
        assert matrix.n_days == 49
        curves = out['prob-forecast']
        assert curves.n_days == 39
        assert np.all(np.diff(curves.values, axis=-1) >= 0)

        trades = pd.read_csv(work / 'trades.csv')
        assert len(trades) == 3 + 3
        summary = out['summary']
        assert set(summary['period']) == {'2017-2019', 'full'}
        assert 'best_profit_per_mwh' in summary.columns

    def test_quantile_models(self, quick_config, temp_dir):
        """Exact and smoothed QR on five near-collinear VST forecasts."""
        quick_config.update({
            'vst': {'kinds': ['asinh', 'boxcox', 'mlog', 'poly', 'npit']},
            'windows': {'point': 20, 'prob': 15},
            'models': ['HS', 'QRA', 'SQRA'],
            'first_day': '2017-02-20',
            'last_day': '2017-03-09',
            'periods': [{'name': 'full'}],
        })
        out = run_pipeline(RunConfig.from_dict(quick_config))

        curves = out['prob-forecast']
        assert curves.models == ['HS', 'QRA', 'SQRA']
        assert curves.n_days == 3
        assert np.isfinite(curves.values).all()
        assert np.all(np.diff(curves.values, axis=-1) >= 0)

        report = out['evaluate'][0]
        assert set(report.models) == {'HS', 'QRA', 'SQRA'}
        trades = pd.read_csv(temp_dir / 'data_work' / 'trades.csv')
        assert len(trades) == 3 * 3 + 6

    def test_stage_commands(self, quick_config, temp_dir):
        cfg = _write_config(temp_dir / 'run.yml', quick_config)
        for cmd in ('synth', 'point-forecast', 'prob-forecast', 'evaluate'):
            assert main([cmd, '--config', str(cfg)]) == 0, cmd
        trades = temp_dir / 'alt_trades.csv'
        assert main(['backtest', '--config', str(cfg), '--alpha', '60',
                     '--report', str(trades)]) == 0
        df = pd.read_csv(trades)
        assert df.loc[df['model'] == 'HS', 'alpha'].tolist() == [60]

    def test_deterministic(self, quick_config, temp_dir):
        first = run_pipeline(RunConfig.from_dict(quick_config))
        quick_config['paths'] = {'work_dir': str(temp_dir / 'second')}
        second = run_pipeline(RunConfig.from_dict(quick_config))
        np.testing.assert_array_equal(first['prob-forecast'].values,
                                      second['prob-forecast'].values)
        pd.testing.assert_frame_equal(first['backtest'], second['backtest'])


@pytest.mark.slow
class TestAcceptance:
    """Desk-scale synthetic runs with the default windows."""

    def test_default_run(self, temp_dir):
        config = RunConfig.from_dict({
            'paths': {'work_dir': str(temp_dir / 'data_work')},
            'synthetic': {'seed': 1, 'days': 1000},
            'models': ['HS', 'QRA', 'SQRA'],
            'n_jobs': -1,
        })
        out = run_pipeline(config)
        report = {r.period: r for r in out['evaluate']}['full']
        for model in ('HS', 'QRA', 'SQRA'):
            picp = report.models[model]['coverage']['90']['picp']
            assert abs(picp - 90) <= 5
        summary = out['backtest']
        assert summary['profit_per_mwh'].notna().all()
