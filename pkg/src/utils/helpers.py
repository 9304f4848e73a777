#!/usr/bin/env python3
"""
Common utility functions for the forecasting pipeline.

Path utilities, display formatters and artifact I/O shared by all stages.

Usage
-----
from utils.helpers import (
    get_project_root,
    load_data,
    save_data,
    format_pvalue,
)
"""
from __future__ import annotations

from pathlib import Path
from typing import Union
import json


# ============================================================
# PATH UTILITIES
# ============================================================

def get_project_root() -> Path:
    """Get the project root directory."""
    current = Path(__file__).resolve()
    for parent in current.parents:
        if (parent / 'src').exists() and (parent / 'config').exists():
            return parent
    raise RuntimeError("Could not find project root")


def get_data_dir(subdir: str = 'work') -> Path:
    """
    Get data directory path.

    Parameters
    ----------
    subdir : str
        Subdirectory: 'raw', 'work', or 'diagnostics'

    Returns
    -------
    Path
        Path to the data directory
    """
    root = get_project_root()
    if subdir == 'raw':
        return root / 'data_raw'
    elif subdir == 'work':
        return root / 'data_work'
    elif subdir == 'diagnostics':
        return root / 'data_work' / 'diagnostics'
    else:
        return root / f'data_{subdir}'


def resolve_path(path: Union[str, Path]) -> Path:
    """Resolve a relative artifact path against the project root."""
    path = Path(path)
    if path.is_absolute():
        return path
    try:
        return get_project_root() / path
    except RuntimeError:
        return path.resolve()


def ensure_dir(path: Path) -> Path:
    """Ensure a directory exists, creating it if necessary."""
    path.mkdir(parents=True, exist_ok=True)
    return path


# ============================================================
# FORMATTERS
# ============================================================

def format_pvalue(p: float, threshold: float = 0.001) -> str:
    """Format p-value for display."""
    if p < threshold:
        return f"<{threshold}"
    return f"{p:.3f}"


# ============================================================
# ARTIFACT I/O
# ============================================================

# Long-format artifacts: CSV for small tables, parquet for curve stores
ARTIFACT_FORMATS = ('.csv', '.parquet')


def _artifact_format(path: Path) -> str:
    ext = path.suffix.lower()
    if ext not in ARTIFACT_FORMATS:
        from utils.errors import ConfigError
        raise ConfigError(f"Unsupported artifact format '{ext}' for {path}; "
                          f"use one of {ARTIFACT_FORMATS}")
    return ext


def load_data(path: Union[str, Path], **kwargs) -> 'pd.DataFrame':
    """
    Read a long-format artifact; the extension picks the reader.

    Raises
    ------
    FileNotFoundError
        If the artifact does not exist
    ConfigError
        If the extension is neither .csv nor .parquet
    """
    import pandas as pd

    path = Path(path)
    ext = _artifact_format(path)
    if not path.exists():
        raise FileNotFoundError(f"Artifact not found: {path}")
    if ext == '.parquet':
        return pd.read_parquet(path, engine='pyarrow', **kwargs)
    return pd.read_csv(path, **kwargs)


def save_data(df: 'pd.DataFrame', path: Union[str, Path], **kwargs) -> Path:
    """
    Write a long-format artifact without the index, creating parent folders.

    CSV output uses ``\\n`` line endings so reruns are byte-identical.
    """
    path = Path(path)
    ext = _artifact_format(path)
    ensure_dir(path.parent)
    if ext == '.parquet':
        df.to_parquet(path, engine='pyarrow', index=False, **kwargs)
    else:
        df.to_csv(path, index=False, lineterminator='\n', **kwargs)
    return path


def save_json(payload: dict, path: Union[str, Path]) -> Path:
    """Write a JSON document with sorted keys (stable across runs)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2, sort_keys=True, allow_nan=True)
        f.write('\n')
    return path


def save_diagnostic(
    df: 'pd.DataFrame',
    name: str,
    diag_dir: Union[str, Path, None] = None,
) -> Path:
    """
    Save a diagnostic DataFrame as ``<diag_dir>/<name>.csv``.

    Parameters
    ----------
    df : pd.DataFrame
        DataFrame to save
    name : str
        Name for the output file (without .csv extension)
    diag_dir : path, optional
        Target directory (default: data_work/diagnostics/)
    """
    diag_dir = Path(diag_dir) if diag_dir is not None else get_data_dir('diagnostics')
    ensure_dir(diag_dir)
    path = diag_dir / f'{name}.csv'
    df.to_csv(path, index=False)
    return path


# ============================================================
# CONFIGURATION FILES
# ============================================================

def load_yaml(path: Union[str, Path]) -> dict:
    """
    Load a YAML configuration file.

    Returns an empty dict for an empty file.
    """
    import yaml

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config not found: {path}")
    with open(path) as f:
        return yaml.safe_load(f) or {}


# ============================================================
# WORKER POOL
# ============================================================

def parallel_map(func, tasks, n_jobs: int = 1) -> list:
    """
    Apply ``func`` to every task, preserving task order.

    Runs in-process when ``n_jobs == 1``; otherwise on a joblib worker pool
    of ``n_jobs`` processes (-1 = all cores).
    """
    tasks = list(tasks)
    if n_jobs == 1 or len(tasks) <= 1:
        return [func(*task) for task in tasks]

    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(func)(*task) for task in tasks)
