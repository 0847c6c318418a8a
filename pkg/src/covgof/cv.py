"""K-fold cross-validation for the regularization weight.

Folds are formed over individuals, so every observation row of a held-out
individual leaves the training set at once. For each candidate weight the
estimator is refit on the training individuals and scored by the mean
squared prediction error on the held-out log concentrations. A grid point
at which any fold fails to produce a finite fit is disqualified.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from .estimators import (
    FitOptions,
    fit_combined,
    fit_nonparametric,
    fit_parametric,
    make_workspace,
)
from .families import SATURABLE
from .invlinear import NumericsError
from .kernels import KernelSpec, assemble_mixed_operators
from .pkmodel import Dataset, PkDomainError

ESTIMATOR_KINDS = ("nonparametric", "combined")


def default_grid() -> np.ndarray:
    """Thirteen log-spaced regularization weights from 1e-6 to 1e3."""
    return np.logspace(-6.0, 3.0, 13)


@dataclass(frozen=True, eq=False)
class CvResult:
    grid: np.ndarray
    scores: np.ndarray
    lam: float
    estimator: str
    seed: int
    n_folds: int
    fold_errors: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        scores = np.asarray(self.scores, dtype=float)
        if grid.shape != scores.shape or grid.ndim != 1:
            raise ValueError("grid and scores must be 1-d arrays of equal length")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "scores", scores)

    def standard_errors(self) -> np.ndarray:
        """Across-fold standard error of the mean score at each grid point.

        Columns of disqualified grid points hold too few finite cells for a
        spread estimate and come back as NaN.
        """
        if self.fold_errors is None:
            raise ValueError("fold errors were not recorded")
        cells = np.asarray(self.fold_errors, dtype=float)
        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanstd(cells, axis=0, ddof=1) / np.sqrt(self.n_folds)


def _subset(dataset: Dataset, idx: np.ndarray) -> Dataset:
    return dataclasses.replace(
        dataset,
        ages=dataset.ages[idx],
        weights=dataset.weights[idx],
        y=dataset.y[idx],
    )


def make_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Split range(n) into k shuffled folds with sizes differing by at most one."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > n:
        raise ValueError(f"cannot split {n} individuals into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def _holdout_error(fit, test: Dataset) -> float:
    pred = test.forward_model.predict(fit.theta_star(test.ages), test.weights)
    return float(np.sum((test.y - pred) ** 2))


def cross_validate_lambda(
    dataset: Dataset,
    estimator: str = "nonparametric",
    kernel: KernelSpec | None = None,
    grid: np.ndarray | None = None,
    k: int = 5,
    seed: int = 0,
    family_kind: str = SATURABLE,
    tau0=None,
    options: FitOptions | None = None,
) -> CvResult:
    """Select the regularization weight by k-fold cross-validation.

    ``estimator`` is either ``"nonparametric"`` (the family only seeds the
    solver) or ``"combined"`` (the family is fit per fold and the kernel
    models the deviation from it). Ties, including ties at +inf produced by
    failing grid points, resolve toward the larger weight; if every grid
    point fails a :class:`NumericsError` is raised.
    """
    if estimator not in ESTIMATOR_KINDS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if kernel is None:
        raise ValueError("kernel is required")
    grid = default_grid() if grid is None else np.unique(np.asarray(grid, dtype=float))
    if grid.ndim != 1 or grid.size == 0 or not np.all(grid > 0):
        raise ValueError("grid must be a 1-d array of positive weights")

    folds = make_folds(dataset.n, k, seed)
    all_idx = np.arange(dataset.n)
    cells = np.full((k, grid.size), np.nan)
    alive = np.ones(grid.size, dtype=bool)

    for f, fold in enumerate(folds):
        test = _subset(dataset, fold)
        train = _subset(dataset, np.setdiff1d(all_idx, fold))
        ops = assemble_mixed_operators(kernel, train.ages)
        base = fit_parametric(
            train, family_kind, tau0=tau0,
            options=None if options is None else options.lm,
        )
        for j, lam in enumerate(grid):
            if not alive[j]:
                continue
            ws = make_workspace(train, kernel, lam, ops=ops)
            try:
                if estimator == "combined":
                    fit = fit_combined(
                        train, family_kind, kernel, lam,
                        options=options, parametric_fit=base, workspace=ws,
                    )
                else:
                    fit = fit_nonparametric(
                        train, kernel, lam, options=options,
                        init_fit=base, workspace=ws,
                    )
                err = _holdout_error(fit, test)
            except (PkDomainError, NumericsError, ValueError):
                alive[j] = False
                continue
            if not np.isfinite(err):
                alive[j] = False
                continue
            cells[f, j] = err

    with np.errstate(invalid="ignore"):
        scores = np.where(alive, np.nansum(cells, axis=0) / len(folds), np.inf)
    if not alive.any():
        raise NumericsError("cross-validation failed at every grid point")
    tied = np.flatnonzero(scores <= scores.min())
    best = tied[np.argmax(grid[tied])]
    return CvResult(
        grid=grid, scores=scores, lam=float(grid[best]),
        estimator=estimator, seed=seed, n_folds=k, fold_errors=cells,
    )
