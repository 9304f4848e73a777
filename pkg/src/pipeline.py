#!/usr/bin/env python3
"""
Module: pipeline.py
Purpose: Main orchestration CLI for the forecasting and backtesting pipeline.

This module provides a command-line interface to execute individual stages
of the pipeline. Stages communicate through artifacts under ``data_work/``;
every command reads the run configuration (``config/run.yml`` by default).

Commands
--------
# Data
ingest : Parse and repair a market CSV
    Options: --input, --output
    Output: data_work/panel.csv
synth : Generate a synthetic market panel
    Options: --seed, --days, --noise, --output
    Output: data_work/panel.csv

# Forecasting
point-forecast : Expert-model point forecasts for every VST
    Options: --prices, --output
    Output: data_work/forecasts.csv
prob-forecast : Percentile curves of every probabilistic model
    Options: --forecasts, --prices, --output
    Output: data_work/curves.parquet

# Evaluation and trading
evaluate : MAE, PICP, Kupiec, pinball and CPA scores per period
    Options: --curves, --prices, --forecasts, --report
    Output: data_work/report.json
backtest : Battery trading strategies and the unlimited benchmark
    Options: --curves, --prices, --forecasts, --alpha, --report, --ledger
    Output: data_work/trades.csv, data_work/ledger.csv

# Everything
all : ingest/synth -> point-forecast -> prob-forecast -> evaluate -> backtest
    Output: all of the above plus data_work/summary.csv

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric error.

Usage
-----
    python src/pipeline.py synth --seed 1 --days 1000
    python src/pipeline.py all --config config/run.yml
    python src/pipeline.py backtest --alpha 50..98:2 --report trades.csv
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence
import argparse
import sys

# Add src directory for imports
sys.path.insert(0, str(Path(__file__).parent))

import pandas as pd

from utils.config import RunConfig, parse_alpha_spec
from utils.errors import ConfigError, PipelineError


STAGES = ('ingest', 'point-forecast', 'prob-forecast', 'evaluate', 'backtest')

# Stages each command runs, for stage-aware config validation
COMMAND_STAGES = {
    'ingest': ('ingest',),
    'synth': ('ingest',),
    'point-forecast': ('point-forecast',),
    'prob-forecast': ('prob-forecast',),
    'evaluate': ('evaluate',),
    'backtest': ('backtest',),
    'all': STAGES,
}


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '--config', '-c',
        default=None,
        help='Run configuration YAML (default: config/run.yml)'
    )

    p = argparse.ArgumentParser(
        description='Probabilistic price forecasting and battery backtesting pipeline',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    sub = p.add_subparsers(dest='cmd', required=True)

    # Data Commands
    p_ing = sub.add_parser('ingest', parents=[common], help='Parse and repair a market CSV')
    p_ing.add_argument('--input', '-i', default=None, help='Market CSV (default: paths.input)')
    p_ing.add_argument('--output', '-o', default=None, help='Panel CSV (default: paths.panel)')

    p_syn = sub.add_parser('synth', parents=[common], help='Generate a synthetic panel')
    p_syn.add_argument('--seed', type=int, default=None, help='Generator seed')
    p_syn.add_argument('--days', type=int, default=None, help='Number of days (>= 800)')
    p_syn.add_argument('--noise', choices=['gaussian', 'student'], default=None,
                       help='Innovation distribution')
    p_syn.add_argument('--output', '-o', default=None, help='Panel CSV (default: paths.panel)')

    # Forecasting Commands
    p_pt = sub.add_parser('point-forecast', parents=[common], help='Point forecasts per VST')
    p_pt.add_argument('--prices', default=None, help='Panel CSV (default: paths.panel)')
    p_pt.add_argument('--output', '-o', default=None, help='Forecast CSV (default: paths.forecasts)')

    p_pr = sub.add_parser('prob-forecast', parents=[common], help='Percentile curves per model')
    p_pr.add_argument('--forecasts', default=None, help='Forecast CSV (default: paths.forecasts)')
    p_pr.add_argument('--prices', default=None, help='Panel CSV (default: paths.panel)')
    p_pr.add_argument('--output', '-o', default=None, help='Curve store (default: paths.curves)')

    # Evaluation and Trading Commands
    p_ev = sub.add_parser('evaluate', parents=[common], help='Score the forecasts')
    p_ev.add_argument('--curves', default=None, help='Curve store (default: paths.curves)')
    p_ev.add_argument('--prices', default=None, help='Panel CSV (default: paths.panel)')
    p_ev.add_argument('--forecasts', default=None, help='Forecast CSV for point MAE (optional)')
    p_ev.add_argument('--report', '-r', default=None, help='JSON report (default: paths.report)')

    p_bt = sub.add_parser('backtest', parents=[common], help='Battery trading backtest')
    p_bt.add_argument('--curves', default=None, help='Curve store (default: paths.curves)')
    p_bt.add_argument('--prices', default=None, help='Panel CSV (default: paths.panel)')
    p_bt.add_argument('--forecasts', default=None, help='Forecast CSV for the benchmark (optional)')
    p_bt.add_argument('--alpha', '-a', default=None, help='PI levels, e.g. 50..98:2 or 50,70,90')
    p_bt.add_argument('--report', '-r', default=None, help='Summary CSV (default: paths.trades)')
    p_bt.add_argument('--ledger', default=None, help='Ledger CSV (default: paths.ledger)')

    sub.add_parser('all', parents=[common], help='Run every stage')

    return p.parse_args(argv)


# ============================================================
# ARTIFACT LOADING
# ============================================================

def _path(value: Optional[str], config: RunConfig, key: str) -> Path:
    return Path(value) if value else config.paths.resolve(key)


def _load_panel(path: Path):
    from stages.s00_ingest import load_panel
    return load_panel(path)


def _load_forecasts(path: Path):
    from stages.s01_point_forecast import PointForecastMatrix
    from utils.helpers import load_data
    return PointForecastMatrix.from_frame(load_data(path))


def _load_curves(path: Path):
    from stages.s02_prob_forecast import CurveSet
    return CurveSet.load(path)


def _optional_forecasts(value: Optional[str], config: RunConfig):
    path = _path(value, config, 'forecasts')
    if value is None and not path.exists():
        return None
    return _load_forecasts(path)


def _prices_on(panel, days: pd.DatetimeIndex):
    start = panel.day_index(days[0])
    return panel.price[start:start + len(days)]


def _day_index(panel, date: Optional[str]) -> Optional[int]:
    return None if date is None else panel.day_index(date)


# ============================================================
# STAGE RUNNERS
# ============================================================

def run_ingest(config: RunConfig, input_path=None, output_path=None, **synth):
    from stages import s00_ingest

    output_path = _path(output_path, config, 'panel')
    if input_path is None and config.paths.input is not None and not synth:
        input_path = config.paths.resolve('input')
    if input_path is None and not config.synthetic.enabled and not synth:
        raise ConfigError("No input CSV configured and synthetic generation is disabled")
    settings = {
        'seed': config.synthetic.seed,
        'days': config.synthetic.days,
        'start_date': config.synthetic.start_date,
        'noise': config.synthetic.noise,
    }
    settings.update({k: v for k, v in synth.items() if v is not None})
    return s00_ingest.main(input_path=input_path, output_path=output_path, **settings)


def run_point(config: RunConfig, panel, output_path=None):
    from stages import s01_point_forecast

    return s01_point_forecast.main(
        panel,
        _path(output_path, config, 'forecasts'),
        vsts=config.vst.kinds,
        vst_params=config.vst.params,
        window_days=config.windows.point,
        first_day=_day_index(panel, config.first_day),
        last_day=_day_index(panel, config.last_day),
        n_jobs=config.n_jobs,
    )


def run_prob(config: RunConfig, matrix, panel, output_path=None):
    from stages import s02_prob_forecast

    return s02_prob_forecast.main(
        matrix,
        _prices_on(panel, matrix.days),
        _path(output_path, config, 'curves'),
        kinds=config.models,
        window_days=config.windows.prob,
        options=config.solver,
        n_jobs=config.n_jobs,
    )


def run_evaluate(config: RunConfig, curves, panel, matrix=None, report_path=None):
    from stages import s03_evaluation

    ev = config.evaluation
    return s03_evaluation.main(
        curves,
        panel,
        _path(report_path, config, 'report'),
        periods=config.periods,
        coverage_alphas=config.coverage_alphas,
        matrix=matrix,
        significance=ev.kupiec_significance,
        tolerance=ev.picp_tolerance,
        far=ev.picp_far,
        instruments=ev.cpa_instruments,
    )


def run_backtest(config: RunConfig, curves, panel, matrix=None, alphas=None,
                 trades_path=None, ledger_path=None):
    from stages import s04_backtest

    return s04_backtest.main(
        curves,
        panel,
        _path(trades_path, config, 'trades'),
        ledger_path=_path(ledger_path, config, 'ledger'),
        alphas=alphas or config.alphas,
        initial_state=config.trading.initial_state,
        matrix=matrix,
        periods=config.periods,
        n_jobs=config.n_jobs,
    )


def summary_table(reports: list, by_period: pd.DataFrame, coverage_alpha: int = 90
                  ) -> pd.DataFrame:
    """
    Per-period summary: MAE of the median, APS, PICP and the best profit per MWh.
    """
    rows = [row for r in reports for row in r.summary_rows(coverage_alpha)]
    table = pd.DataFrame(rows)
    if table.empty:
        return table
    if not by_period.empty:
        strategies = by_period[by_period['alpha'].notna()]
        best = (strategies.groupby(['period', 'model'])['profit_per_mwh']
                .max().rename('best_profit_per_mwh').reset_index())
        table = table.merge(best, on=['period', 'model'], how='left')
    return table


def run_pipeline(config: RunConfig, stages: Sequence[str] = STAGES) -> dict:
    """
    Run the requested stages in order, passing artifacts in memory.

    Returns
    -------
    dict
        Stage outputs keyed by stage name, plus ``summary``
    """
    config.validate(stages)
    out = {}
    panel = matrix = curves = None

    if 'ingest' in stages:
        panel = out['ingest'] = run_ingest(config)
    else:
        panel = _load_panel(config.paths.resolve('panel'))

    if 'point-forecast' in stages:
        matrix = out['point-forecast'] = run_point(config, panel)
    elif 'prob-forecast' in stages:
        matrix = _load_forecasts(config.paths.resolve('forecasts'))
    elif any(s in stages for s in ('evaluate', 'backtest')):
        matrix = _optional_forecasts(None, config)

    if 'prob-forecast' in stages:
        curves = out['prob-forecast'] = run_prob(config, matrix, panel)
    elif any(s in stages for s in ('evaluate', 'backtest')):
        curves = _load_curves(config.paths.resolve('curves'))

    reports = []
    if 'evaluate' in stages:
        reports = out['evaluate'] = run_evaluate(config, curves, panel, matrix)

    by_period = pd.DataFrame()
    if 'backtest' in stages:
        trades, by_period = run_backtest(config, curves, panel, matrix)
        out['backtest'] = trades

    if reports:
        table = summary_table(reports, by_period, max(config.coverage_alphas))
        path = config.paths.resolve('summary')
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False)
        out['summary'] = table

        print("\n" + "=" * 60)
        print("RUN SUMMARY")
        print("=" * 60)
        for period, grp in table.groupby('period', sort=False):
            print(f"\n  [{period}]")
            print(grp.drop(columns='period').to_markdown(index=False, floatfmt='.3f'))
        print(f"\n  Saved: {path}")
    return out


# ============================================================
# MAIN ENTRY POINT
# ============================================================

def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = parse_args(argv)

    try:
        config = RunConfig.load(args.config)
        if args.cmd == 'synth' and args.days is not None:
            config.synthetic.days = args.days
        config.validate(stages=COMMAND_STAGES[args.cmd])

        if args.cmd == 'ingest':
            run_ingest(config, input_path=args.input, output_path=args.output)

        elif args.cmd == 'synth':
            run_ingest(config, output_path=args.output, seed=args.seed,
                       days=args.days, noise=args.noise)

        elif args.cmd == 'point-forecast':
            panel = _load_panel(_path(args.prices, config, 'panel'))
            run_point(config, panel, output_path=args.output)

        elif args.cmd == 'prob-forecast':
            panel = _load_panel(_path(args.prices, config, 'panel'))
            matrix = _load_forecasts(_path(args.forecasts, config, 'forecasts'))
            run_prob(config, matrix, panel, output_path=args.output)

        elif args.cmd == 'evaluate':
            panel = _load_panel(_path(args.prices, config, 'panel'))
            curves = _load_curves(_path(args.curves, config, 'curves'))
            matrix = _optional_forecasts(args.forecasts, config)
            run_evaluate(config, curves, panel, matrix, report_path=args.report)

        elif args.cmd == 'backtest':
            panel = _load_panel(_path(args.prices, config, 'panel'))
            curves = _load_curves(_path(args.curves, config, 'curves'))
            matrix = _optional_forecasts(args.forecasts, config)
            alphas = parse_alpha_spec(args.alpha) if args.alpha else None
            run_backtest(config, curves, panel, matrix, alphas=alphas,
                         trades_path=args.report, ledger_path=args.ledger)

        elif args.cmd == 'all':
            run_pipeline(config)

    except PipelineError as e:
        print(f"ERROR [{type(e).__name__}]: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"ERROR [FileNotFoundError]: {e}", file=sys.stderr)
        return 2

    return 0


if __name__ == '__main__':
    sys.exit(main())
