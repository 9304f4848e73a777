#!/usr/bin/env python3
"""
Run configuration.

A run is described by a YAML file (``config/run.yml`` by default). Every key
has a default; unknown keys are rejected. ``RunConfig.validate()`` runs
before any computation and raises ``ConfigError``.

Usage
-----
from utils.config import RunConfig, parse_alpha_spec

config = RunConfig.load('config/run.yml')
config.validate()
alphas = parse_alpha_spec('50..98:2')
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from utils.errors import ConfigError, RangeError
from utils.helpers import load_yaml, resolve_path
from utils.quantile_solvers import SolverOptions
from utils.synthetic_data import MIN_SYNTHETIC_DAYS
from utils.transforms import DEFAULT_VST_PARAMS, PARAM_KEYS, VST_KINDS


# ============================================================
# CONFIGURATION
# ============================================================

DEFAULT_CONFIG = 'config/run.yml'

MODEL_KINDS = ('HS', 'QRA', 'QRM', 'QRF', 'SQRA', 'SQRM', 'SQRF')
N_QUANTILES = 99
DEFAULT_ALPHAS = '50..98:2'
DEFAULT_COVERAGE_ALPHAS = [50, 70, 90]
CPA_INSTRUMENTS = ('constant', 'lagged')
FORECAST_STAGES = ('point-forecast', 'prob-forecast')

DEFAULT_PERIODS = [
    {'name': '2017-2019', 'end': '2019-12-31'},
    {'name': '2020-2022', 'start': '2020-01-01'},
    {'name': 'full'},
]


def parse_alpha_spec(spec: Union[str, int, list, tuple]) -> list[int]:
    """
    Parse PI levels in percent.

    Accepts ``'50..98:2'`` (inclusive range with step), ``'50,70,90'``, a
    single integer or a list. Levels must be even percentages in 2..98 so
    that both PI bounds fall on the percentile grid.
    """
    if isinstance(spec, (list, tuple)):
        values = [int(v) for v in spec]
    elif isinstance(spec, int):
        values = [spec]
    else:
        text = str(spec).strip()
        try:
            if '..' in text:
                rng, _, step = text.partition(':')
                lo, hi = (int(v) for v in rng.split('..'))
                step = int(step) if step else 2
                if step < 1:
                    raise ConfigError(f"Alpha step must be positive in '{text}'")
                values = list(range(lo, hi + 1, step))
            else:
                values = [int(v) for v in text.split(',') if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"Cannot parse alpha specification '{text}'") from exc

    if not values:
        raise ConfigError(f"Empty alpha specification: {spec!r}")
    for alpha in values:
        if not 2 <= alpha <= 98 or alpha % 2:
            raise ConfigError(f"PI level {alpha}% is not an even percentage in 2..98")
    return sorted(set(values))


def _build(cls, section: str, data: Optional[dict]):
    """Instantiate a config dataclass, rejecting unknown keys."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"Section '{section}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in '{section}': {unknown}")
    return cls(**data)


# ============================================================
# SECTIONS
# ============================================================

@dataclass
class PathsConfig:
    """Artifact locations; relative names live under ``work_dir``."""
    input: Optional[str] = None
    work_dir: str = 'data_work'
    panel: str = 'panel.csv'
    forecasts: str = 'forecasts.csv'
    curves: str = 'curves.parquet'
    report: str = 'report.json'
    trades: str = 'trades.csv'
    ledger: str = 'ledger.csv'
    summary: str = 'summary.csv'

    def resolve(self, name: str) -> Path:
        """Absolute path of an artifact key (``panel``, ``curves``, ...)."""
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"paths.{name} is not set")
        path = Path(value)
        if path.is_absolute():
            return path
        if name == 'input':
            return resolve_path(path)
        return resolve_path(self.work_dir) / path


@dataclass
class SyntheticConfig:
    enabled: bool = True
    seed: int = 1
    days: int = 1000
    start_date: str = '2017-06-01'
    noise: str = 'gaussian'


@dataclass
class WindowConfig:
    """Calibration window lengths in days."""
    point: int = 728
    prob: int = 182


@dataclass
class VstConfig:
    kinds: list = field(default_factory=lambda: list(VST_KINDS))
    params: dict = field(default_factory=lambda: dict(DEFAULT_VST_PARAMS))


@dataclass
class PeriodSpec:
    """Named evaluation period; open ends extend to the data."""
    name: str
    start: Optional[str] = None
    end: Optional[str] = None

    def mask(self, days: pd.DatetimeIndex):
        """Boolean mask of ``days`` inside the period."""
        keep = np.ones(len(days), dtype=bool)
        if self.start is not None:
            keep &= days >= pd.Timestamp(self.start)
        if self.end is not None:
            keep &= days <= pd.Timestamp(self.end)
        return keep


def check_periods(periods: Sequence[PeriodSpec], days: pd.DatetimeIndex) -> None:
    """
    Every period holds at least one of ``days``.

    Raises
    ------
    RangeError
        Naming the empty periods and the covered date range
    """
    empty = [p.name for p in periods if not p.mask(days).any()]
    if empty:
        first, last = days[0].date().isoformat(), days[-1].date().isoformat()
        raise RangeError(
            f"Periods {empty} contain no evaluation days ({first} .. {last})",
            periods=empty, first_day=first, last_day=last,
        )


@dataclass
class EvaluationConfig:
    kupiec_significance: float = 0.01
    picp_tolerance: float = 2.5
    picp_far: float = 5.0
    cpa_instruments: str = 'lagged'


@dataclass
class TradingConfig:
    initial_state: int = 1


# ============================================================
# RUN CONFIG
# ============================================================

@dataclass
class RunConfig:
    """
    Complete run configuration.

    Attributes
    ----------
    paths : PathsConfig
        Artifact locations
    synthetic : SyntheticConfig
        Synthetic panel generation (used when no input CSV is given)
    windows : WindowConfig
        Point (728) and probabilistic (182) calibration windows
    vst : VstConfig
        VST kinds and parameters
    models : list[str]
        Probabilistic model kinds
    quantiles : int
        Number of percentile levels (fixed at 99)
    alphas : list[int]
        PI levels (percent) for trading
    coverage_alphas : list[int]
        PI levels (percent) for PICP/Kupiec
    periods : list[PeriodSpec]
        Named evaluation sub-periods
    solver : SolverOptions
        Quantile solver settings
    evaluation : EvaluationConfig
        Scoring thresholds
    trading : TradingConfig
        Battery settings
    n_jobs : int
        Worker pool size (1 = sequential)
    first_day, last_day : str, optional
        Restrict point forecasts to a date range
    """
    paths: PathsConfig = field(default_factory=PathsConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    windows: WindowConfig = field(default_factory=WindowConfig)
    vst: VstConfig = field(default_factory=VstConfig)
    models: list = field(default_factory=lambda: list(MODEL_KINDS))
    quantiles: int = N_QUANTILES
    alphas: list = field(default_factory=lambda: parse_alpha_spec(DEFAULT_ALPHAS))
    coverage_alphas: list = field(default_factory=lambda: list(DEFAULT_COVERAGE_ALPHAS))
    periods: list = field(default_factory=lambda: [PeriodSpec(**p) for p in DEFAULT_PERIODS])
    solver: SolverOptions = field(default_factory=SolverOptions)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    trading: TradingConfig = field(default_factory=TradingConfig)
    n_jobs: int = 1
    first_day: Optional[str] = None
    last_day: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> 'RunConfig':
        """Build from a parsed YAML mapping."""
        data = dict(data or {})
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"Unknown top-level config keys: {unknown}")

        periods = data.pop('periods', None)
        alphas = data.pop('alphas', None)
        coverage = data.pop('coverage_alphas', None)
        models = data.pop('models', None)
        vst = data.pop('vst', None)

        try:
            config = cls(
                paths=_build(PathsConfig, 'paths', data.pop('paths', None)),
                synthetic=_build(SyntheticConfig, 'synthetic', data.pop('synthetic', None)),
                windows=_build(WindowConfig, 'windows', data.pop('windows', None)),
                solver=_build(SolverOptions, 'solver', data.pop('solver', None)),
                evaluation=_build(EvaluationConfig, 'evaluation', data.pop('evaluation', None)),
                trading=_build(TradingConfig, 'trading', data.pop('trading', None)),
                **data,
            )
        except TypeError as exc:
            raise ConfigError(f"Invalid configuration: {exc}") from exc

        if vst is not None:
            vst = _build(VstConfig, 'vst', vst)
            unknown_params = sorted(set(vst.params) - set(DEFAULT_VST_PARAMS))
            if unknown_params:
                raise ConfigError(f"Unknown VST parameters: {unknown_params}")
            config.vst = VstConfig(kinds=list(vst.kinds),
                                   params={**DEFAULT_VST_PARAMS, **vst.params})
        if models is not None:
            config.models = [str(m).upper() for m in models]
        if alphas is not None:
            config.alphas = parse_alpha_spec(alphas)
        if coverage is not None:
            config.coverage_alphas = parse_alpha_spec(coverage)
        if periods is not None:
            config.periods = [_build(PeriodSpec, 'periods', p) for p in periods]
        return config

    @classmethod
    def load(cls, path: Union[str, Path, None] = None) -> 'RunConfig':
        """Load a YAML config; a missing default file yields all defaults."""
        if path is None:
            default = resolve_path(DEFAULT_CONFIG)
            if not default.exists():
                return cls()
            path = default
        try:
            data = load_yaml(path)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc
        except Exception as exc:
            raise ConfigError(f"Cannot parse config {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self, stages: Optional[Sequence[str]] = None) -> 'RunConfig':
        """
        Check every field before any computation.

        Parameters
        ----------
        stages : sequence of str, optional
            Stages about to run (all when omitted); the synthetic length is
            checked against the windows only when a forecasting stage runs

        Raises
        ------
        ConfigError
            On the first invalid field
        """
        if int(self.windows.point) < 1 or int(self.windows.prob) < 1:
            raise ConfigError(
                f"Windows must be positive (point={self.windows.point}, prob={self.windows.prob})"
            )
        if not self.vst.kinds:
            raise ConfigError("At least one VST kind is required")
        for kind in self.vst.kinds:
            if kind not in VST_KINDS:
                raise ConfigError(f"Unknown VST kind '{kind}'; expected one of {VST_KINDS}")
        if len(set(self.vst.kinds)) != len(self.vst.kinds):
            raise ConfigError(f"Duplicate VST kinds: {self.vst.kinds}")
        for kind, key in PARAM_KEYS.items():
            value = self.vst.params.get(key)
            if kind in self.vst.kinds and (value is None or not float(value) > 0):
                raise ConfigError(f"vst.params.{key} must be positive, got {value}")

        if not self.models:
            raise ConfigError("At least one model kind is required")
        for model in self.models:
            if model not in MODEL_KINDS:
                raise ConfigError(f"Unknown model '{model}'; expected one of {MODEL_KINDS}")
        if self.quantiles != N_QUANTILES:
            raise ConfigError(f"The percentile grid is fixed at {N_QUANTILES} levels")

        parse_alpha_spec(self.alphas)
        parse_alpha_spec(self.coverage_alphas)

        names = [p.name for p in self.periods]
        if len(set(names)) != len(names):
            raise ConfigError(f"Duplicate period names: {names}")
        for period in self.periods:
            try:
                start = pd.Timestamp(period.start) if period.start else None
                end = pd.Timestamp(period.end) if period.end else None
            except ValueError as exc:
                raise ConfigError(f"Invalid date in period '{period.name}': {exc}") from exc
            if start is not None and end is not None and start > end:
                raise ConfigError(f"Period '{period.name}' starts after it ends")

        if not 0 < self.evaluation.kupiec_significance < 1:
            raise ConfigError("evaluation.kupiec_significance must lie in (0, 1)")
        if self.evaluation.picp_tolerance < 0 or self.evaluation.picp_far < 0:
            raise ConfigError("PICP thresholds must be non-negative")
        if self.evaluation.cpa_instruments not in CPA_INSTRUMENTS:
            raise ConfigError(
                f"evaluation.cpa_instruments must be one of {CPA_INSTRUMENTS}"
            )
        if self.trading.initial_state not in (0, 1, 2):
            raise ConfigError(
                f"trading.initial_state must be 0, 1 or 2, got {self.trading.initial_state}"
            )
        if int(self.n_jobs) == 0 or int(self.n_jobs) < -1:
            raise ConfigError(f"n_jobs must be >= 1 or -1, got {self.n_jobs}")
        forecasting = stages is None or any(s in FORECAST_STAGES for s in stages)
        if self.synthetic.enabled and not self.paths.input:
            if self.synthetic.days < MIN_SYNTHETIC_DAYS:
                raise ConfigError(
                    f"synthetic.days must be >= {MIN_SYNTHETIC_DAYS}, got {self.synthetic.days}"
                )
            if forecasting and self.synthetic.days < self.windows.point + self.windows.prob + 1:
                raise ConfigError(
                    f"synthetic.days={self.synthetic.days} leaves no evaluation day after "
                    f"the {self.windows.point}+{self.windows.prob}-day windows"
                )
        if not self.synthetic.enabled and not self.paths.input:
            raise ConfigError("Either paths.input or synthetic.enabled is required")
        return self

    def to_dict(self) -> dict:
        """Plain mapping (round-trips through ``from_dict``)."""
        data = asdict(self)
        data['periods'] = [
            {k: v for k, v in p.items() if v is not None} for p in data['periods']
        ]
        return data
