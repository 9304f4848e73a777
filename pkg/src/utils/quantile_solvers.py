#!/usr/bin/env python3
"""
Quantile regression solvers.

- ``qr_fit``: exact check-loss quantile regression as a linear program
  (HiGHS through ``scipy.optimize.linprog``).
- ``sqr_fit``: convolution-smoothed quantile regression with a Gaussian
  kernel of bandwidth H; smooth and convex, minimized by damped Newton
  steps warm-started at the QR solution.
- ``rot_bandwidth``: rule-of-thumb bandwidth from QR residuals.

Residual convention: ``u = y - X @ beta``. The smoothed loss is

    l_H(u) = H * phi(u / H) + u * (q - Phi(-u / H))
    l_H'(u) = q - Phi(-u / H)

which tends to the check function ``rho_q(u) = (q - 1{u < 0}) * u`` as
H -> 0.

Usage
-----
from utils.quantile_solvers import QrProblem, qr_fit, sqr_fit, rot_bandwidth

problem = QrProblem(X, y, q=0.9)
qr = qr_fit(problem)
H = rot_bandwidth(problem.y - problem.X @ qr.coef)
sqr = sqr_fit(problem, H, warm_start=qr.coef)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import ndtr
from scipy.stats import norm

from utils.errors import ConfigError, ContractViolation, ConvergenceError, SolverError


# ============================================================
# CONFIGURATION
# ============================================================

QUANTILE_GRID = np.round(np.arange(1, 100) / 100.0, 2)

ROT_CONSTANT = 1.06
IQR_NORMAL_SCALE = 1.349
BANDWIDTH_FLOOR = 1e-6

# Armijo sufficient-decrease constant and backtracking limit
ARMIJO_C = 1e-4
MAX_BACKTRACK = 60

# Duality-gap tolerance above which the dual LP answer is re-solved in primal form
DUAL_GAP_TOL = 1e-7

# Half the Newton decrement below this share of the objective counts as converged
DECREMENT_TOL = 1e-12

SQR_METHODS = ('newton', 'bfgs')
QR_METHODS = ('dual', 'primal')


@dataclass(frozen=True)
class SolverOptions:
    """
    Solver settings shared by all quantile fits of a run.

    Attributes
    ----------
    max_iter : int
        Iteration budget of the smoothed solver
    tol : float
        Relative gradient tolerance, ``||g|| <= tol * (1 + |objective|)``.
        A stalled line search is accepted when ``||g|| <= tol * scale``
        (``gradient_scale`` of the design) or half the Newton decrement is
        below ``tol * (1 + |objective|)``
    iqr_normalized : bool
        Use IQR / 1.349 instead of the raw IQR in the bandwidth rule
    method : str
        Smoothed solver: 'newton' (default) or 'bfgs'
    qr_method : str
        LP form for exact QR: 'dual' (default) or 'primal'
    bandwidth_override : float, optional
        Fixed bandwidth replacing the rule of thumb
    """
    max_iter: int = 500
    tol: float = 1e-8
    iqr_normalized: bool = False
    method: str = 'newton'
    qr_method: str = 'dual'
    bandwidth_override: Optional[float] = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError(f"solver.max_iter must be >= 1, got {self.max_iter}")
        if not self.tol > 0:
            raise ConfigError(f"solver.tol must be positive, got {self.tol}")
        if self.method not in SQR_METHODS:
            raise ConfigError(f"solver.method must be one of {SQR_METHODS}, got '{self.method}'")
        if self.qr_method not in QR_METHODS:
            raise ConfigError(f"solver.qr_method must be one of {QR_METHODS}, got '{self.qr_method}'")
        if self.bandwidth_override is not None and not self.bandwidth_override > 0:
            raise ConfigError(f"bandwidth override must be positive, got {self.bandwidth_override}")


# ============================================================
# DATA STRUCTURES
# ============================================================

@dataclass
class QrProblem:
    """
    One quantile regression problem.

    Attributes
    ----------
    X : np.ndarray
        (N, p) design, intercept column included by the caller
    y : np.ndarray
        (N,) targets
    q : float
        Quantile level in (0, 1)
    """
    X: np.ndarray
    y: np.ndarray
    q: float

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ContractViolation(
                f"Design has {self.X.shape[0]} rows but target has {self.y.shape[0]}"
            )
        if not 0.0 < float(self.q) < 1.0:
            raise ContractViolation(f"Quantile level must lie in (0, 1), got {self.q}")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ContractViolation("Quantile regression data contain non-finite values")
        self.q = float(self.q)

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    def residuals(self, coef: np.ndarray) -> np.ndarray:
        return self.y - self.X @ coef


@dataclass(frozen=True)
class Bandwidth:
    """Smoothing bandwidth H (same units as y)."""
    H: float
    sigma: float = float('nan')
    n_obs: int = 0
    floored: bool = False

    def __post_init__(self):
        if not self.H > 0:
            raise ContractViolation(f"Bandwidth must be positive, got {self.H}")

    def __float__(self) -> float:
        return float(self.H)


@dataclass
class QrFit:
    """Coefficients for one quantile level plus fit diagnostics."""
    coef: np.ndarray
    q: float
    objective: float
    method: str
    bandwidth: Optional[Bandwidth] = None
    n_iter: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    stalled: bool = False
    history: list = field(default_factory=list, repr=False)

    def predict(self, x) -> np.ndarray:
        """Prediction at regressor row(s) ``x``."""
        return np.asarray(x, dtype=float) @ self.coef

    def to_dict(self) -> dict:
        return {
            'q': self.q,
            'method': self.method,
            'objective': self.objective,
            'coef': [float(c) for c in self.coef],
            'bandwidth': None if self.bandwidth is None else self.bandwidth.H,
            'bandwidth_floored': bool(self.bandwidth is not None and self.bandwidth.floored),
            'n_iter': self.n_iter,
            'grad_norm': self.grad_norm,
            'converged': self.converged,
            'stalled': self.stalled,
        }


# ============================================================
# LOSS FUNCTIONS
# ============================================================

def check_loss(u, q: float) -> np.ndarray:
    """Check function rho_q(u) = (q - 1{u < 0}) * u."""
    u = np.asarray(u, dtype=float)
    return u * (q - (u < 0))


def qr_objective(problem: QrProblem, coef: np.ndarray) -> float:
    """Sum of check losses of the residuals."""
    return float(np.sum(check_loss(problem.residuals(coef), problem.q)))


def smoothed_loss(u, q: float, H: Union[float, Bandwidth]) -> tuple[np.ndarray, np.ndarray]:
    """
    Gaussian-smoothed check loss and its derivative in ``u``.

    Returns
    -------
    tuple
        (l_H(u), l_H'(u))
    """
    H = float(H)
    if not H > 0:
        raise ContractViolation(f"Bandwidth must be positive, got {H}")
    u = np.asarray(u, dtype=float)
    z = u / H
    upper = ndtr(-z)
    value = H * norm.pdf(z) + u * (q - upper)
    return value, q - upper


def sqr_objective(problem: QrProblem, coef: np.ndarray, H: float,
                  hessian: bool = False):
    """
    Smoothed objective, gradient (and Hessian) in the coefficients.

    Returns
    -------
    tuple
        (value, gradient) or (value, gradient, hessian)
    """
    u = problem.residuals(coef)
    value, deriv = smoothed_loss(u, problem.q, H)
    grad = -problem.X.T @ deriv
    if not hessian:
        return float(np.sum(value)), grad
    weights = norm.pdf(u / H) / H
    hess = (problem.X * weights[:, None]).T @ problem.X
    return float(np.sum(value)), grad, hess


# ============================================================
# EXACT QUANTILE REGRESSION
# ============================================================

def _solve_dual(problem: QrProblem) -> np.ndarray:
    """
    Dual LP: max y'a s.t. X'a = (1 - q) X'1, 0 <= a <= 1.

    The coefficients are the multipliers of the equality constraints.
    """
    X, y, q = problem.X, problem.y, problem.q
    res = linprog(
        c=-y,
        A_eq=X.T,
        b_eq=(1.0 - q) * X.sum(axis=0),
        bounds=(0.0, 1.0),
        method='highs',
    )
    if res.status != 0 or res.eqlin is None:
        raise SolverError(
            f"Dual quantile LP failed: {res.message}",
            diagnostics={'status': int(res.status), 'message': res.message, 'form': 'dual'},
            q=q,
        )
    coef = -np.asarray(res.eqlin.marginals, dtype=float)
    dual_value = -float(res.fun) - (1.0 - q) * float(y.sum())
    primal_value = qr_objective(problem, coef)
    if abs(primal_value - dual_value) > DUAL_GAP_TOL * (1.0 + abs(dual_value)):
        raise SolverError(
            "Duality gap in quantile LP",
            diagnostics={'primal': primal_value, 'dual': dual_value, 'form': 'dual'},
            q=q,
        )
    return coef


def _solve_primal(problem: QrProblem) -> np.ndarray:
    """
    Primal LP with split residuals: min q'u+ + (1-q)'u- s.t. X b + u+ - u- = y.
    """
    X, y, q = problem.X, problem.y, problem.q
    n, p = X.shape
    eye = np.eye(n)
    c = np.concatenate([np.zeros(p), np.full(n, q), np.full(n, 1.0 - q)])
    bounds = [(None, None)] * p + [(0.0, None)] * (2 * n)
    res = linprog(
        c=c,
        A_eq=np.hstack([X, eye, -eye]),
        b_eq=y,
        bounds=bounds,
        method='highs',
    )
    if res.status != 0:
        raise SolverError(
            f"Primal quantile LP failed: {res.message}",
            diagnostics={'status': int(res.status), 'message': res.message, 'form': 'primal'},
            q=q,
        )
    return np.asarray(res.x[:p], dtype=float)


def qr_fit(problem: QrProblem, method: str = 'dual') -> QrFit:
    """
    Exact quantile regression by linear programming.

    Parameters
    ----------
    problem : QrProblem
        Design, targets and quantile level
    method : str
        'dual' (bounded-variable dual, small and fast) or 'primal'
        (split-variable form). A dual solve with a duality gap is
        re-solved in primal form.

    Returns
    -------
    QrFit
        Minimizer of the summed check loss

    Raises
    ------
    SolverError
        If the LP is reported infeasible, unbounded or failed
    """
    if method not in QR_METHODS:
        raise ConfigError(f"Unknown QR method '{method}'")
    if problem.n_obs < problem.n_params:
        raise SolverError(
            f"Quantile regression needs N >= p (N={problem.n_obs}, p={problem.n_params})",
            diagnostics={'n_obs': problem.n_obs, 'n_params': problem.n_params},
            q=problem.q,
        )

    used = method
    if method == 'dual':
        try:
            coef = _solve_dual(problem)
        except SolverError:
            used = 'primal'
            coef = _solve_primal(problem)
    else:
        coef = _solve_primal(problem)

    return QrFit(
        coef=coef,
        q=problem.q,
        objective=qr_objective(problem, coef),
        method=f'qr-{used}',
    )


# ============================================================
# BANDWIDTH
# ============================================================

def rule_of_thumb(sigma: float, n: int) -> float:
    """H = 1.06 * sigma / n^(1/5)."""
    return ROT_CONSTANT * float(sigma) / float(n) ** 0.2


def residual_scale(residuals, iqr_normalized: bool = False) -> float:
    """min(std, IQR) of residuals; IQR optionally divided by 1.349."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    std = float(np.std(r))
    q75, q25 = np.percentile(r, [75, 25])
    iqr = float(q75 - q25)
    if iqr_normalized:
        iqr /= IQR_NORMAL_SCALE
    return min(std, iqr)


def rot_bandwidth(residuals, n: Optional[int] = None,
                  iqr_normalized: bool = False) -> Bandwidth:
    """
    Rule-of-thumb bandwidth from QR residuals.

    Parameters
    ----------
    residuals : array-like
        Residuals of a prior ``qr_fit`` on the same window
    n : int, optional
        Sample size (defaults to ``len(residuals)``)
    iqr_normalized : bool
        Use IQR / 1.349 in the scale estimate

    Returns
    -------
    Bandwidth
        ``floored`` is set when the residual scale is zero and H was
        floored at 1e-6
    """
    residuals = np.asarray(residuals, dtype=float).reshape(-1)
    n = residuals.size if n is None else int(n)
    if n < 2:
        raise ContractViolation(f"Bandwidth rule needs N >= 2, got {n}")
    sigma = residual_scale(residuals, iqr_normalized=iqr_normalized)
    H = rule_of_thumb(sigma, n)
    if not H > BANDWIDTH_FLOOR:
        return Bandwidth(H=BANDWIDTH_FLOOR, sigma=sigma, n_obs=n, floored=True)
    return Bandwidth(H=H, sigma=sigma, n_obs=n)


# ============================================================
# SMOOTHED QUANTILE REGRESSION
# ============================================================

def gradient_scale(X) -> float:
    """
    1 + largest column L1 norm of the design.

    Upper bound on every gradient component of the smoothed objective
    (|l_H'(u)| < 1).
    """
    X = np.asarray(X, dtype=float)
    return 1.0 + float(np.abs(X).sum(axis=0).max())


def _converged(gnorm: float, decrement: float, value: float, tol: float) -> bool:
    """Relative gradient below ``tol``, or objective resolved to ``DECREMENT_TOL``."""
    return (gnorm <= tol * (1.0 + abs(value))
            or 0.5 * decrement <= DECREMENT_TOL * (1.0 + abs(value)))


def _stalled_at_optimum(gnorm: float, decrement: float, value: float, scale: float,
                        tol: float) -> bool:
    """
    A line search that finds no representable decrease ends at the optimum when
    the gradient is small against the design scale or the Newton decrement is
    below ``tol``.
    """
    return gnorm <= tol * scale or 0.5 * decrement <= tol * (1.0 + abs(value))


def _newton(problem: QrProblem, H: float, beta: np.ndarray,
            options: SolverOptions) -> QrFit:
    """Damped Newton with Armijo backtracking."""
    value, grad, hess = sqr_objective(problem, beta, H, hessian=True)
    scale = gradient_scale(problem.X)
    history = [value]

    def _fit(n_iter, gnorm, stalled=False):
        return QrFit(coef=beta, q=problem.q, objective=value, method='sqr-newton',
                     n_iter=n_iter, grad_norm=gnorm, stalled=stalled, history=history)

    for it in range(options.max_iter):
        gnorm = float(np.linalg.norm(grad))
        # minimum-norm step handles flat directions of a rank-deficient Hessian
        step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
        slope = float(grad @ step)
        decrement = -slope
        if not np.isfinite(slope) or slope >= 0:
            step = -grad
            slope = -gnorm ** 2
            decrement = np.inf
        if _converged(gnorm, decrement, value, options.tol):
            return _fit(it, gnorm)

        t = 1.0
        for _ in range(MAX_BACKTRACK):
            candidate = beta + t * step
            cand_value, cand_grad, cand_hess = sqr_objective(problem, candidate, H, hessian=True)
            if cand_value <= value + ARMIJO_C * t * slope:
                break
            t *= 0.5
        else:
            # no representable decrease along the step
            if _stalled_at_optimum(gnorm, decrement, value, scale, options.tol):
                return _fit(it, gnorm, stalled=True)
            raise ConvergenceError(
                f"Smoothed QR line search found no decrease "
                f"(gradient norm {gnorm:.3e}, design scale {scale:.3e})",
                last_iterate=beta,
                diagnostics={'objective': value, 'grad_norm': gnorm, 'grad_scale': scale,
                             'n_iter': it, 'stalled': True},
                q=problem.q,
            )

        beta, value, grad, hess = candidate, cand_value, cand_grad, cand_hess
        history.append(value)

    gnorm = float(np.linalg.norm(grad))
    if _converged(gnorm, np.inf, value, options.tol):
        return _fit(options.max_iter, gnorm)
    raise ConvergenceError(
        f"Smoothed QR did not converge in {options.max_iter} iterations "
        f"(gradient norm {gnorm:.3e})",
        last_iterate=beta,
        diagnostics={'objective': value, 'grad_norm': gnorm, 'grad_scale': scale,
                     'n_iter': options.max_iter, 'stalled': False},
        q=problem.q,
    )


def _bfgs(problem: QrProblem, H: float, beta: np.ndarray,
          options: SolverOptions) -> QrFit:
    """scipy BFGS on the smoothed objective."""
    history = []
    scale = gradient_scale(problem.X)

    def fun(b):
        value, grad = sqr_objective(problem, b, H)
        history.append(value)
        return value, grad

    res = minimize(fun, beta, jac=True, method='BFGS',
                   options={'maxiter': options.max_iter, 'gtol': 0.0})
    value, grad = sqr_objective(problem, res.x, H)
    gnorm = float(np.linalg.norm(grad))
    # status 2: precision loss in the line search
    stalled = int(res.status) == 2
    if (_converged(gnorm, np.inf, value, options.tol)
            or (stalled and _stalled_at_optimum(gnorm, np.inf, value, scale, options.tol))):
        return QrFit(coef=np.asarray(res.x), q=problem.q, objective=value, method='sqr-bfgs',
                     n_iter=int(res.nit), grad_norm=gnorm, stalled=stalled, history=history)
    raise ConvergenceError(
        f"Smoothed QR (BFGS) stopped with gradient norm {gnorm:.3e}: {res.message}",
        last_iterate=np.asarray(res.x),
        diagnostics={'objective': value, 'grad_norm': gnorm, 'grad_scale': scale,
                     'n_iter': int(res.nit)},
        q=problem.q,
    )


def sqr_fit(problem: QrProblem, H: Union[float, Bandwidth],
            warm_start: Optional[np.ndarray] = None,
            options: Optional[SolverOptions] = None) -> QrFit:
    """
    Convolution-smoothed quantile regression.

    Parameters
    ----------
    problem : QrProblem
        Design, targets and quantile level
    H : float or Bandwidth
        Smoothing bandwidth (> 0)
    warm_start : np.ndarray, optional
        Starting coefficients; the exact QR solution when omitted
    options : SolverOptions, optional
        Iteration budget, tolerance and method

    Returns
    -------
    QrFit
        Minimizer of the summed smoothed loss, with iteration diagnostics

    Raises
    ------
    ConvergenceError
        If the gradient tolerance is not met within the iteration budget, or
        the line search stalls away from the optimum;
        carries the last iterate
    """
    options = options or SolverOptions()
    bandwidth = H if isinstance(H, Bandwidth) else Bandwidth(H=float(H), n_obs=problem.n_obs)

    if warm_start is None:
        warm_start = qr_fit(problem, method=options.qr_method).coef
    beta = np.array(warm_start, dtype=float).reshape(-1)
    if beta.shape[0] != problem.n_params:
        raise ContractViolation(
            f"Warm start has {beta.shape[0]} coefficients, design has {problem.n_params}"
        )

    solver = _newton if options.method == 'newton' else _bfgs
    fit = solver(problem, bandwidth.H, beta, options)
    fit.bandwidth = bandwidth
    return fit


# ============================================================
# QUANTILE GRIDS
# ============================================================

@dataclass
class GridFit:
    """Coefficients for a grid of quantile levels on one design."""
    quantiles: np.ndarray
    qr_coef: np.ndarray
    sqr_coef: Optional[np.ndarray] = None
    bandwidths: Optional[np.ndarray] = None
    n_floored: int = 0

    def predict(self, x, smoothed: bool = False) -> np.ndarray:
        """Predictions at regressor row ``x`` for every level."""
        coef = self.sqr_coef if smoothed else self.qr_coef
        if coef is None:
            raise ContractViolation("Smoothed coefficients were not fitted")
        return coef @ np.asarray(x, dtype=float)


def fit_quantile_grid(X, y, quantiles=QUANTILE_GRID, smoothed: bool = True,
                      options: Optional[SolverOptions] = None) -> GridFit:
    """
    Exact and (optionally) smoothed fits for every quantile level.

    The smoothed fit at each level uses its own rule-of-thumb bandwidth from
    the exact fit's residuals and is warm-started at the exact solution.
    """
    options = options or SolverOptions()
    quantiles = np.asarray(quantiles, dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n_q, p = len(quantiles), X.shape[1] if X.ndim == 2 else 1

    qr_coef = np.empty((n_q, p))
    sqr_coef = np.empty((n_q, p)) if smoothed else None
    bandwidths = np.empty(n_q) if smoothed else None
    n_floored = 0

    for k, q in enumerate(quantiles):
        problem = QrProblem(X, y, q)
        try:
            exact = qr_fit(problem, method=options.qr_method)
        except SolverError as err:
            raise err.add_context(q=float(q))
        qr_coef[k] = exact.coef
        if not smoothed:
            continue
        if options.bandwidth_override is not None:
            bw = Bandwidth(H=options.bandwidth_override, n_obs=problem.n_obs)
        else:
            bw = rot_bandwidth(problem.residuals(exact.coef), problem.n_obs,
                               iqr_normalized=options.iqr_normalized)
        n_floored += int(bw.floored)
        try:
            smooth = sqr_fit(problem, bw, warm_start=exact.coef, options=options)
        except SolverError as err:
            raise err.add_context(q=float(q))
        sqr_coef[k] = smooth.coef
        bandwidths[k] = bw.H

    return GridFit(quantiles=quantiles, qr_coef=qr_coef, sqr_coef=sqr_coef,
                   bandwidths=bandwidths, n_floored=n_floored)
