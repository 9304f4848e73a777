#!/usr/bin/env python3
"""
Stage 00: Data Ingestion

Purpose: Load an hourly market CSV, repair the calendar and write the
canonical panel.

This stage handles:
- Parsing rows of (date, hour, price, load) with line-numbered errors
- Averaging doubled hours (DST autumn) and interpolating missing hours
  (DST spring) from the closest observations, across midnight if needed
- Calendar validation (contiguous days, 24 hours per day)
- Synthetic panel generation when no input file is given

Input Files
-----------
- CSV with header ``date,hour,price,load`` (ISO-8601 dates, hours 1..24)
- OR synthetic data (``synth`` command)

Output Files
------------
- data_work/panel.csv (canonical: one row per day and hour, same schema)
- data_work/diagnostics/ingest_repairs.csv

Usage
-----
    python src/pipeline.py ingest --input data_raw/market.csv --output data_work/panel.csv
    python src/pipeline.py synth --seed 1 --days 1000
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union
import re
import sys

# Add parent directory for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd

from utils.errors import ParseError, StructuralError, UnrepairableError
from utils.helpers import ensure_dir, get_data_dir, save_diagnostic
from utils.panel import COLUMNS, HOURS, HourlyPanel
from utils.validation import (
    DataValidator,
    contiguous_dates,
    finite_values,
    no_missing_values,
    rectangular_panel,
    required_columns,
    value_range,
)


# ============================================================
# CONFIGURATION
# ============================================================

OUTPUT_FILE = 'panel.csv'
DATE_FORMAT = '%Y-%m-%d'

# Header occupies line 1
FIRST_DATA_LINE = 2


# ============================================================
# REPAIR LOG
# ============================================================

@dataclass
class RepairLog:
    """Record of calendar repairs."""
    n_rows: int = 0
    n_days: int = 0
    duplicates: list = field(default_factory=list)
    interpolated: list = field(default_factory=list)

    @property
    def n_duplicates(self) -> int:
        return len(self.duplicates)

    @property
    def n_interpolated(self) -> int:
        return len(self.interpolated)

    def to_frame(self) -> pd.DataFrame:
        """One row per repaired cell."""
        rows = (
            [{'date': d, 'hour': h, 'repair': 'averaged'} for d, h in self.duplicates]
            + [{'date': d, 'hour': h, 'repair': 'interpolated'} for d, h in self.interpolated]
        )
        return pd.DataFrame(rows, columns=['date', 'hour', 'repair'])

    def to_dict(self) -> dict:
        return {
            'n_rows': self.n_rows,
            'n_days': self.n_days,
            'n_duplicates': self.n_duplicates,
            'n_interpolated': self.n_interpolated,
        }


# ============================================================
# PARSING
# ============================================================

def _line_from_parser_error(message: str) -> Optional[int]:
    match = re.search(r'line (\d+)', message)
    return int(match.group(1)) if match else None


def read_raw_csv(path: Union[str, Path]) -> pd.DataFrame:
    """
    Read a market CSV into typed ``date, hour, price, load`` columns.

    Raises
    ------
    FileNotFoundError
        If the file does not exist
    ParseError
        On the first malformed row, with its 1-based file line number
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise ParseError(f"Malformed CSV: {exc}", line=_line_from_parser_error(str(exc)),
                         file=str(path)) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError("Empty input file", line=1, file=str(path)) from exc

    validator = DataValidator().add_rule(required_columns(COLUMNS))
    report = validator.validate(raw)
    if report.has_errors:
        raise ParseError(f"Header must be {','.join(COLUMNS)}; got {list(raw.columns)}",
                         line=1, file=str(path))

    dates = pd.to_datetime(raw['date'].str.strip(), format=DATE_FORMAT, errors='coerce')
    hours = pd.to_numeric(raw['hour'], errors='coerce')
    price = pd.to_numeric(raw['price'], errors='coerce')
    load = pd.to_numeric(raw['load'], errors='coerce')

    bad = (
        dates.isna().to_numpy()
        | ~np.isfinite(hours.to_numpy(dtype=float))
        | (hours.to_numpy(dtype=float) % 1 != 0)
        | ~np.isfinite(price.to_numpy(dtype=float))
        | ~np.isfinite(load.to_numpy(dtype=float))
    )
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        row = ','.join(str(raw[c].iloc[i]) for c in COLUMNS)
        raise ParseError(f"Malformed row '{row}'", line=i + FIRST_DATA_LINE, file=str(path))

    df = pd.DataFrame({
        'date': dates,
        'hour': hours.astype(int),
        'price': price.astype(float),
        'load': load.astype(float),
    })

    validator = DataValidator().add_rules([
        no_missing_values(COLUMNS),
        finite_values(['price', 'load']),
        value_range('hour', min_val=1, max_val=HOURS, severity='error'),
        value_range('load', min_val=0, severity='warning'),
    ])
    report = validator.validate(df)
    if report.has_errors:
        out_of_range = ~df['hour'].between(1, HOURS).to_numpy()
        line = int(np.flatnonzero(out_of_range)[0]) + FIRST_DATA_LINE if out_of_range.any() else None
        raise ParseError(f"Invalid rows:\n{report.format()}", line=line, file=str(path))
    if report.has_warnings:
        print(f"  Warning: input checks\n{report.format()}")
    return df


# ============================================================
# CALENDAR REPAIR
# ============================================================

def _fill_isolated(flat: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Average of the two closest observations; single neighbor at the panel edge."""
    out = flat.copy()
    n = flat.size
    for i in np.flatnonzero(missing):
        neighbors = [flat[j] for j in (i - 1, i + 1) if 0 <= j < n and not missing[j]]
        out[i] = float(np.mean(neighbors))
    return out


def repair_calendar(raw: pd.DataFrame, with_log: bool = False):
    """
    Build a rectangular panel from raw (date, hour) cells.

    Doubled hours are replaced by the mean of their values. A missing hour
    gets the average of the closest observations on the hourly series
    (across midnight when the gap sits at hour 1 or 24; the single available
    neighbor at the panel edge).

    Parameters
    ----------
    raw : pd.DataFrame
        Columns date, hour (1..24), price, load
    with_log : bool
        Also return a RepairLog

    Returns
    -------
    HourlyPanel or (HourlyPanel, RepairLog)

    Raises
    ------
    StructuralError
        If whole calendar days are missing
    UnrepairableError
        If two or more consecutive hours are missing
    """
    df = raw.loc[:, COLUMNS].copy()
    df['date'] = pd.to_datetime(df['date']).dt.normalize()
    log = RepairLog(n_rows=len(df))

    if df.empty:
        raise StructuralError("No rows to build a panel from")

    counts = df.groupby(['date', 'hour']).size()
    for (d, h), _ in counts[counts > 1].items():
        log.duplicates.append((d.strftime(DATE_FORMAT), int(h)))
    cells = df.groupby(['date', 'hour'], sort=True)[['price', 'load']].mean()

    DataValidator().add_rule(contiguous_dates('date')).validate(
        cells.reset_index()
    ).raise_for_errors(StructuralError, "Calendar is not contiguous")

    days = pd.date_range(cells.index.get_level_values('date').min(),
                         cells.index.get_level_values('date').max(), freq='D')
    grid = pd.MultiIndex.from_product([days, range(1, HOURS + 1)], names=['date', 'hour'])
    cells = cells.reindex(grid)

    missing = cells['price'].isna().to_numpy()
    if missing.any():
        # runs of >= 2 consecutive missing hours cannot be interpolated
        run_starts = missing[1:] & missing[:-1]
        if run_starts.any():
            i = int(np.flatnonzero(run_starts)[0])
            d, h = grid[i]
            raise UnrepairableError(
                f"Two or more consecutive hours missing from {d.date()} hour {h}",
                day=d.date().isoformat(), hour=int(h),
            )
        for i in np.flatnonzero(missing):
            d, h = grid[i]
            log.interpolated.append((d.strftime(DATE_FORMAT), int(h)))
        if missing.all():
            raise UnrepairableError("No observed hours to interpolate from")
        price = _fill_isolated(cells['price'].to_numpy(), missing)
        load = _fill_isolated(cells['load'].to_numpy(), missing)
    else:
        price = cells['price'].to_numpy()
        load = cells['load'].to_numpy()

    panel = HourlyPanel(days=days,
                        price=price.reshape(-1, HOURS),
                        load=load.reshape(-1, HOURS))
    log.n_days = panel.n_days

    DataValidator().add_rules([
        rectangular_panel('date', HOURS),
        finite_values(['price', 'load']),
    ]).validate(panel.to_frame()).raise_for_errors(
        StructuralError, "Repaired panel failed validation"
    )

    if with_log:
        return panel, log
    return panel


def ingest_csv(path: Union[str, Path], with_log: bool = False):
    """
    Parse and repair a market CSV.

    Returns
    -------
    HourlyPanel or (HourlyPanel, RepairLog)
    """
    return repair_calendar(read_raw_csv(path), with_log=with_log)


def write_panel(panel: HourlyPanel, path: Union[str, Path]) -> Path:
    """Write the canonical CSV (ISO dates, shortest round-trip floats)."""
    path = Path(path)
    ensure_dir(path.parent)
    panel.to_frame().to_csv(path, index=False, lineterminator='\n')
    return path


def load_panel(path: Union[str, Path]) -> HourlyPanel:
    """Read a canonical (or raw) panel CSV."""
    return ingest_csv(path)


# ============================================================
# MAIN ENTRY POINT
# ============================================================

def main(
    input_path: Optional[Union[str, Path]] = None,
    output_path: Optional[Union[str, Path]] = None,
    seed: int = 1,
    days: int = 1000,
    start_date: str = '2015-01-01',
    noise: str = 'gaussian',
) -> HourlyPanel:
    """
    Execute data ingestion.

    Parameters
    ----------
    input_path : path, optional
        Market CSV; a synthetic panel is generated when omitted
    output_path : path, optional
        Canonical panel CSV (default: data_work/panel.csv)
    seed, days, start_date, noise
        Synthetic generator settings
    """
    print("=" * 60)
    print("Stage 00: Data Ingestion")
    print("=" * 60)

    output_path = Path(output_path) if output_path else get_data_dir('work') / OUTPUT_FILE

    if input_path is None:
        from utils.synthetic_data import generate_synthetic, panel_diagnostics

        print(f"\n  Generating synthetic panel (seed={seed}, days={days}, noise={noise})...")
        panel = generate_synthetic(seed=seed, days=days, start_date=start_date, noise=noise)
        log = RepairLog(n_rows=panel.n_cells, n_days=panel.n_days)
        diag = panel_diagnostics(panel)
        print(f"    -> Price mean {diag['price_mean']:.2f}, std {diag['price_std']:.2f}")
        print(f"    -> ACF at lag 168 h: {diag['acf_weekly']:.3f} "
              f"(white-noise band {diag['acf_band']:.3f})")
    else:
        print(f"\n  Loading: {input_path}")
        try:
            panel, log = ingest_csv(input_path, with_log=True)
        except Exception as e:
            print(f"\nERROR: {e}")
            raise
        print(f"    -> {log.n_rows:,} rows, {panel.n_days:,} days")
        if log.n_duplicates:
            print(f"  Warning: {log.n_duplicates} doubled hours averaged")
        if log.n_interpolated:
            print(f"  Warning: {log.n_interpolated} missing hours interpolated")
        if log.n_duplicates or log.n_interpolated:
            save_diagnostic(log.to_frame(), 'ingest_repairs', output_path.parent / 'diagnostics')

    print(f"\n  Saving to: {output_path}")
    write_panel(panel, output_path)

    print("\n" + "-" * 60)
    print("SUMMARY")
    print("-" * 60)
    summary = panel.summary()
    print(f"  Days: {summary['n_days']:,} ({summary['first_day']} .. {summary['last_day']})")
    print(f"  Cells: {panel.n_cells:,}")
    print(f"  Price mean: {summary['price_mean']:.2f}")
    print(f"  Output: {output_path}")

    print("\n" + "=" * 60)
    print("Stage 00 complete.")
    print("=" * 60)

    return panel


if __name__ == '__main__':
    main()
