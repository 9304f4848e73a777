"""
Utilities package.

Provides shared utilities for the forecasting pipeline:
- panel: HourlyPanel day x hour container and rolling windows
- transforms: MAD standardization and variance-stabilizing transformations
- quantile_solvers: exact (LP) and smoothed quantile regression
- config: RunConfig loaded from config/run.yml
- errors: exception hierarchy with exit codes
- validation: rule-based data validation
- synthetic_data: synthetic market panels for testing
- helpers: paths, artifact I/O and the worker pool
"""
from .errors import ConfigError, DataError, NumericError, PipelineError
from .panel import HOURS, HourlyPanel, WindowSpec, window
