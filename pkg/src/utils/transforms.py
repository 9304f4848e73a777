#!/usr/bin/env python3
"""
Median/MAD standardization and variance-stabilizing transformations (VSTs).

All transforms act on standardized values ``x = (p - a) / b`` where ``a`` is
the sample median of the calibration window and ``b`` the mean absolute
deviation about it. Every VST is sign-symmetric and strictly increasing on
its domain and has an exact inverse.

Kinds
-----
asinh  : f(x) = ln(x + sqrt(x^2 + 1))
boxcox : f(x) = sgn(x) * ((|x| + 1)^lambda - 1) / lambda       (lambda > 0)
mlog   : f(x) = sgn(x) * (ln(|x| + 1/c) + ln c)                  (c > 0)
poly   : f(x) = sgn(x) * ((|x| + 1)^c - 1)                       (c > 0)
npit   : f(x) = Phi^-1(F(x)), F the rank-based empirical CDF of the window

Usage
-----
from utils.transforms import standardize, make_vst, apply_vst, invert_vst

z, params = standardize(window_prices, window_prices)
spec = make_vst('npit').with_sample(z)
y = apply_vst(spec, z)
x = params.invert(invert_vst(spec, y))
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.special import ndtr, ndtri

from utils.errors import ConfigError, ContractViolation, DegenerateWindowError


# ============================================================
# CONFIGURATION
# ============================================================

VST_KINDS = ('asinh', 'boxcox', 'mlog', 'poly', 'npit')

# Placeholders; substitute literature values through config/run.yml
DEFAULT_VST_PARAMS = {
    'boxcox_lambda': 0.5,
    'mlog_c': 1.0 / 3.0,
    'poly_c': 0.125,
}

# Config key holding the single parameter of each parametric kind
PARAM_KEYS = {
    'boxcox': 'boxcox_lambda',
    'mlog': 'mlog_c',
    'poly': 'poly_c',
}


# ============================================================
# STANDARDIZATION
# ============================================================

@dataclass(frozen=True)
class StandardizationParams:
    """
    Location/scale of a calibration window.

    Attributes
    ----------
    a : float
        Sample median
    b : float
        Mean absolute deviation about the median (> 0)
    """
    a: float
    b: float

    def apply(self, values) -> np.ndarray:
        """(x - a) / b"""
        return (np.asarray(values, dtype=float) - self.a) / self.b

    def invert(self, z) -> np.ndarray:
        """b * z + a"""
        return self.b * np.asarray(z, dtype=float) + self.a


def fit_standardization(sample) -> StandardizationParams:
    """
    Median and mean absolute deviation of a calibration sample.

    Raises
    ------
    DegenerateWindowError
        If the sample has zero mean absolute deviation
    ContractViolation
        If the sample is empty or contains non-finite values
    """
    sample = np.asarray(sample, dtype=float).reshape(-1)
    if sample.size == 0:
        raise ContractViolation("Cannot standardize on an empty sample")
    if not np.isfinite(sample).all():
        raise ContractViolation(
            f"Calibration sample contains {int((~np.isfinite(sample)).sum())} non-finite values"
        )
    a = float(np.median(sample))
    b = float(np.mean(np.abs(sample - a)))
    if not b > 0:
        raise DegenerateWindowError(
            f"Calibration sample has zero mean absolute deviation (median {a:g})"
        )
    return StandardizationParams(a=a, b=b)


def standardize(values, sample) -> tuple[np.ndarray, StandardizationParams]:
    """
    Standardize ``values`` with the median/MAD of ``sample``.

    Parameters
    ----------
    values : array-like
        Values to transform
    sample : array-like
        Calibration window (any shape; flattened)

    Returns
    -------
    tuple
        (standardized values, StandardizationParams)
    """
    params = fit_standardization(sample)
    return params.apply(values), params


def destandardize(z, params: StandardizationParams) -> np.ndarray:
    """Inverse of :func:`standardize`."""
    return params.invert(z)


# ============================================================
# VST SPECIFICATION
# ============================================================

@dataclass(frozen=True)
class VstSpec:
    """
    A variance-stabilizing transformation.

    Attributes
    ----------
    kind : str
        One of ``VST_KINDS``
    param : float or None
        lambda for boxcox, c for mlog/poly; None for asinh/npit
    sample : np.ndarray or None
        Standardized calibration sample (npit only)
    """
    kind: str
    param: Optional[float] = None
    sample: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _knots: Optional[tuple] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in VST_KINDS:
            raise ConfigError(f"Unknown VST kind '{self.kind}'; expected one of {VST_KINDS}")
        if self.kind in PARAM_KEYS:
            if self.param is None or not np.isfinite(self.param) or self.param <= 0:
                raise ConfigError(
                    f"{PARAM_KEYS[self.kind]} must be a positive finite number, got {self.param}"
                )
        if self.kind == 'npit' and self.sample is not None:
            object.__setattr__(self, '_knots', _npit_knots(self.sample))

    @property
    def needs_sample(self) -> bool:
        return self.kind == 'npit'

    def with_sample(self, sample) -> 'VstSpec':
        """Attach a calibration sample (npit); other kinds are returned unchanged."""
        if self.kind != 'npit':
            return self
        return VstSpec(kind=self.kind, param=self.param,
                       sample=np.asarray(sample, dtype=float).reshape(-1))


def make_vst(kind: str, params: Optional[Mapping[str, float]] = None,
             sample=None) -> VstSpec:
    """
    Build a VstSpec from config-level parameters.

    Parameters
    ----------
    kind : str
        VST kind
    params : mapping, optional
        ``boxcox_lambda``, ``mlog_c``, ``poly_c`` (defaults filled in)
    sample : array-like, optional
        npit calibration sample
    """
    merged = {**DEFAULT_VST_PARAMS, **(params or {})}
    param = merged[PARAM_KEYS[kind]] if kind in PARAM_KEYS else None
    spec = VstSpec(kind=kind, param=None if param is None else float(param))
    return spec.with_sample(sample) if sample is not None else spec


# ============================================================
# N-PIT EMPIRICAL CDF
# ============================================================

def _npit_knots(sample: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
    """
    Knots of the rank-based empirical CDF.

    Order statistic i of N maps to (i - 0.5) / N; tied values share the mean
    of their probabilities so the knots are strictly increasing in both axes.
    """
    sample = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    n = sample.size
    if n == 0:
        raise ContractViolation("npit requires a non-empty calibration sample")
    if not np.isfinite(sample).all():
        raise ContractViolation("npit calibration sample contains non-finite values")
    probs = (np.arange(1, n + 1) - 0.5) / n
    values, inverse = np.unique(sample, return_inverse=True)
    mean_probs = np.bincount(inverse, weights=probs) / np.bincount(inverse)
    return values, mean_probs, 0.5 / n, 1.0 - 0.5 / n


def _require_knots(spec: VstSpec):
    if spec._knots is None:
        raise ContractViolation("npit transform used without a calibration sample")
    return spec._knots


# ============================================================
# FORWARD / INVERSE
# ============================================================

def apply_vst(spec: VstSpec, x) -> np.ndarray:
    """
    Apply the VST to standardized values.

    Raises
    ------
    ContractViolation
        If ``x`` is not finite, or npit has no calibration sample
    """
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ContractViolation("VST input contains non-finite values", vst=spec.kind)

    if spec.kind == 'asinh':
        return np.arcsinh(x)
    if spec.kind == 'boxcox':
        lam = spec.param
        return np.sign(x) * (np.power(np.abs(x) + 1.0, lam) - 1.0) / lam
    if spec.kind == 'mlog':
        c = spec.param
        return np.sign(x) * (np.log(np.abs(x) + 1.0 / c) + np.log(c))
    if spec.kind == 'poly':
        c = spec.param
        return np.sign(x) * (np.power(np.abs(x) + 1.0, c) - 1.0)

    values, probs, p_lo, p_hi = _require_knots(spec)
    p = np.clip(np.interp(x, values, probs), p_lo, p_hi)
    return ndtri(p)


def invert_vst(spec: VstSpec, y, with_flag: bool = False):
    """
    Inverse VST back to the standardized scale.

    For npit, probabilities outside the attainable range
    ``[1/(2N), 1 - 1/(2N)]`` are clipped to it.

    Parameters
    ----------
    spec : VstSpec
        Transformation
    y : array-like
        Transformed values
    with_flag : bool
        Also return a boolean array marking clipped npit values

    Returns
    -------
    np.ndarray or tuple
        Standardized values, plus the clip flags if ``with_flag``
    """
    y = np.asarray(y, dtype=float)
    clipped = np.zeros(y.shape, dtype=bool)

    if spec.kind == 'asinh':
        x = np.sinh(y)
    elif spec.kind == 'boxcox':
        lam = spec.param
        x = np.sign(y) * (np.power(lam * np.abs(y) + 1.0, 1.0 / lam) - 1.0)
    elif spec.kind == 'mlog':
        c = spec.param
        x = np.sign(y) * np.expm1(np.abs(y)) / c
    elif spec.kind == 'poly':
        c = spec.param
        x = np.sign(y) * (np.power(np.abs(y) + 1.0, 1.0 / c) - 1.0)
    else:
        values, probs, p_lo, p_hi = _require_knots(spec)
        p = ndtr(y)
        # below the first / above the last knot the empirical quantile is flat
        clipped = (p < probs[0] - 1e-12) | (p > probs[-1] + 1e-12)
        p = np.clip(p, max(p_lo, probs[0]), min(p_hi, probs[-1]))
        x = np.interp(p, probs, values)

    if with_flag:
        return x, clipped
    return x
