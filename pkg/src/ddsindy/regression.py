"""Sparse regression: sequential thresholded least squares and coordinate-descent LASSO."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

SOLVERS = ("stls", "lasso")


class RegressionError(ValueError):
    pass


class ConditioningWarning(UserWarning):
    pass


@dataclass
class RegressionProblem:
    design: np.ndarray
    target: np.ndarray
    lam: float
    max_iters: int = 25
    normalize_columns: bool = True

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=float)
        self.target = np.asarray(self.target, dtype=float).ravel()
        if self.design.ndim != 2:
            raise RegressionError("design must be a matrix")
        if self.design.shape[0] != self.target.shape[0]:
            raise RegressionError(
                f"design has {self.design.shape[0]} rows but target has {self.target.shape[0]}"
            )
        if self.design.shape[1] < 1:
            raise RegressionError("design needs at least one column")
        if self.lam < 0:
            raise RegressionError(f"lambda must be >= 0, got {self.lam}")
        if not np.all(np.isfinite(self.design)):
            raise RegressionError("design matrix has non-finite entries")
        if not np.all(np.isfinite(self.target)):
            raise RegressionError("target has non-finite entries")


@dataclass
class SparseCoefficients:
    xi: np.ndarray
    labels: list[str] = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    rank_deficient: bool = False

    @property
    def support(self) -> np.ndarray:
        if self.xi.ndim == 1:
            return np.flatnonzero(self.xi)
        return np.flatnonzero(np.any(self.xi != 0, axis=1))

    def active(self, column: int = 0) -> list[str]:
        x = self.xi if self.xi.ndim == 1 else self.xi[:, column]
        return [self.labels[k] for k in np.flatnonzero(x)]


def _column_scale(design, normalize):
    if not normalize:
        s = np.ones(design.shape[1])
    else:
        s = np.sqrt(np.mean(design**2, axis=0))
    return s


def _lstsq(design, target, scale, support):
    A = design[:, support] / scale[support]
    coef, _, rank, _ = np.linalg.lstsq(A, target, rcond=None)
    return coef / scale[support], rank < int(support.sum())


def stls(problem: RegressionProblem, labels=None) -> SparseCoefficients:
    """Sequential thresholded least squares.

    Each sweep solves least squares on the current support in column-normalised
    space, maps back to raw scale and zeroes coefficients with |xi| < lambda.
    Stops when the support is unchanged.
    """
    Theta, y, lam = problem.design, problem.target, problem.lam
    p = Theta.shape[1]
    scale = _column_scale(Theta, problem.normalize_columns)
    support = scale > 0
    xi = np.zeros(p)
    rank_def = False
    converged = False
    it = 0
    while it < max(1, problem.max_iters):
        it += 1
        xi = np.zeros(p)
        if not support.any():
            converged = True
            break
        coef, rd = _lstsq(Theta, y, scale, support)
        rank_def = rd
        xi[support] = coef
        new_support = support & (np.abs(xi) >= lam)
        if np.array_equal(new_support, support):
            converged = True
            break
        support = new_support
    xi[~support] = 0.0
    if rank_def:
        warnings.warn(
            "rank-deficient support in STLS; minimum-norm solution used",
            ConditioningWarning,
            stacklevel=2,
        )
    if not support.any():
        warnings.warn("STLS returned an empty support", RuntimeWarning, stacklevel=2)
    return SparseCoefficients(xi, list(labels or []), it, converged, rank_def)


def lasso(problem: RegressionProblem, labels=None, tol: float = 1e-8, max_sweeps: int = 20000) -> SparseCoefficients:
    """Coordinate descent for 0.5 * ||y - Theta xi||^2 + lambda * ||xi||_1 (raw scale)."""
    Theta, y, lam = problem.design, problem.target, problem.lam
    p = Theta.shape[1]
    if lam == 0:
        scale = _column_scale(Theta, True)
        scale[scale == 0] = 1.0
        coef, rd = _lstsq(Theta, y, scale, np.ones(p, bool))
        return SparseCoefficients(coef, list(labels or []), 1, True, rd)
    col_sq = np.einsum("ij,ij->j", Theta, Theta)
    xi = np.zeros(p)
    r = y.copy()
    converged = False
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for k in range(p):
            if col_sq[k] == 0:
                continue
            old = xi[k]
            rho = Theta[:, k] @ r + col_sq[k] * old
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[k]
            if new != old:
                r -= Theta[:, k] * (new - old)
                xi[k] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"LASSO did not converge in {max_sweeps} sweeps", RuntimeWarning, stacklevel=2)
    return SparseCoefficients(xi, list(labels or []), sweep, converged, False)


def solve(problem: RegressionProblem, solver: str = "stls", labels=None) -> SparseCoefficients:
    if solver == "stls":
        return stls(problem, labels)
    if solver == "lasso":
        return lasso(problem, labels)
    raise RegressionError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


def fit_all(
    design,
    targets,
    lam: float,
    solver: str = "stls",
    labels=None,
    max_iters: int = 25,
    normalize_columns: bool = True,
) -> SparseCoefficients:
    """Independent sparse fit per target column; returns the stacked (p, n) matrix."""
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    cols = []
    iters, conv, rd = 0, True, False
    for j in range(targets.shape[1]):
        try:
            res = solve(RegressionProblem(design, targets[:, j], lam, max_iters, normalize_columns), solver, labels)
        except RegressionError as exc:
            raise RegressionError(f"component {j}: {exc}") from None
        cols.append(res.xi)
        iters = max(iters, res.iterations)
        conv &= res.converged
        rd |= res.rank_deficient
    return SparseCoefficients(np.column_stack(cols), list(labels or []), iters, conv, rd)
