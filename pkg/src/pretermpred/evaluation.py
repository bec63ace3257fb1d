"""Stratified splitting, cross-validated model selection and metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algorithms import make_family
from .preprocess import fit_preprocessor
from .resample import AdasynConfig, adasyn
from .schema import ProblemVariant


class InfeasibleSplitError(ValueError):
    """A class is too small for the requested stratification."""


@dataclass(frozen=True)
class SplitPlan:
    test_fraction: float = 0.2
    seed: int = 0
    fold_count: int = 5
    repeat_count: int = 5

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.fold_count < 2:
            raise ValueError("fold_count must be >= 2")
        if self.repeat_count < 1:
            raise ValueError("repeat_count must be >= 1")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(labels, plan: SplitPlan, run_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per class, move ``round_half_up(test_fraction * class_size)`` rows to test.

    The shuffle is drawn from a stream seeded by ``(plan.seed, run_index)``.
    Returns sorted train and test index arrays.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise InfeasibleSplitError("both classes must be present")
    rng = np.random.default_rng([plan.seed, run_index, 0])
    train, test = [], []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        n_test = _round_half_up(plan.test_fraction * len(idx))
        if len(idx) - n_test < plan.fold_count:
            raise InfeasibleSplitError(
                f"class {c}: {len(idx) - n_test} training rows, fewer than {plan.fold_count} folds"
            )
        perm = rng.permutation(idx)
        test.append(perm[:n_test])
        train.append(perm[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_kfold(labels, fold_count: int, seed) -> np.ndarray:
    """Fold number for every row; per class, fold sizes differ by at most one."""
    labels = np.asarray(labels)
    folds = np.empty(len(labels), dtype=int)
    rng = np.random.default_rng(seed)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < fold_count:
            raise InfeasibleSplitError(f"class {c} has {len(idx)} rows, fewer than {fold_count} folds")
        folds[rng.permutation(idx)] = np.arange(len(idx)) % fold_count
    return folds


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("counts must be nonnegative")

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> ConfusionMatrix:
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        if y_true.shape != y_pred.shape:
            raise ValueError(f"{len(y_true)} labels but {len(y_pred)} predictions")
        pos = y_true == 1
        hit = y_pred == 1
        return cls(
            tp=int(np.sum(pos & hit)),
            fp=int(np.sum(~pos & hit)),
            tn=int(np.sum(~pos & ~hit)),
            fn=int(np.sum(pos & ~hit)),
        )

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp


@dataclass(frozen=True)
class MetricSet:
    sensitivity: float
    specificity: float
    g_mean: float
    flags: tuple[str, ...] = ()


def metrics(cm: ConfusionMatrix) -> MetricSet:
    """Sensitivity, specificity and their geometric mean.

    A rate with an empty denominator is reported as 0 and flagged.
    """
    flags = []
    if cm.positives:
        sens = cm.tp / cm.positives
    else:
        sens = 0.0
        flags.append("no_positives")
    if cm.negatives:
        spec = cm.tn / cm.negatives
    else:
        spec = 0.0
        flags.append("no_negatives")
    return MetricSet(sens, spec, math.sqrt(sens * spec), tuple(flags))


def g_mean_score(y_true, y_pred) -> float:
    return metrics(ConfusionMatrix.from_predictions(y_true, y_pred)).g_mean


# -- model selection --------------------------------------------------------

Resampler = Callable[[np.ndarray, np.ndarray, int], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class GridSearchResult:
    best_index: int
    best_params: dict
    mean_scores: np.ndarray  # NaN where every fold failed to train
    fold_scores: np.ndarray  # (fold_count, grid size)


def _fit_grid(family, X, y, grid):
    fit_grid = getattr(family, "fit_grid", None)
    if fit_grid is not None:
        return fit_grid(X, y, grid)
    models = []
    for params in grid:
        try:
            models.append(family.fit(X, y, params))
        except (ValueError, ArithmeticError, np.linalg.LinAlgError):
            models.append(None)
    return models


def grid_search(
    family,
    grid: Sequence[dict],
    X,
    y,
    plan: SplitPlan,
    seed=0,
    resampler: Resampler | None = None,
) -> GridSearchResult:
    """Pick the grid point with the highest mean cross-validated g-mean.

    Folds are stratified; ``resampler`` (if any) is applied to each training
    fold only.  Ties go to the earlier grid point.
    """
    if not grid:
        raise ValueError("empty parameter grid")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    folds = stratified_kfold(y, plan.fold_count, seed)
    scores = np.full((plan.fold_count, len(grid)), np.nan)
    for k in range(plan.fold_count):
        tr, va = folds != k, folds == k
        Xtr, ytr = X[tr], y[tr]
        if resampler is not None:
            Xtr, ytr = resampler(Xtr, ytr, k)
        for g, model in enumerate(_fit_grid(family, Xtr, ytr, grid)):
            if model is not None:
                scores[k, g] = g_mean_score(y[va], family.predict(model, X[va]))
    valid = ~np.isnan(scores).all(axis=0)
    if not valid.any():
        raise RuntimeError("no grid point could be trained")
    mean = np.full(len(grid), np.nan)
    mean[valid] = np.nanmean(scores[:, valid], axis=0)
    best = int(np.nanargmax(mean))
    return GridSearchResult(best, dict(grid[best]), mean, scores)


# -- experiment -------------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    run_index: int
    confusion: ConfusionMatrix
    metrics: MetricSet
    params: dict
    n_train: int
    n_test: int
    dropped_columns: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()


def _sample_std(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


@dataclass(frozen=True)
class ExperimentReport:
    variant: str
    tick: str
    algorithm: str
    runs: tuple[RunResult, ...] = ()
    n_pos: int = 0
    n_neg: int = 0
    skipped: str | None = None  # reason, for cells that could not be run

    def _values(self, metric: str) -> list[float]:
        return [getattr(r.metrics, metric) for r in self.runs]

    def mean(self, metric: str) -> float:
        vals = self._values(metric)
        return float(np.mean(vals)) if vals else math.nan

    def std(self, metric: str) -> float:
        return _sample_std(self._values(metric)) if self.runs else math.nan

    @property
    def summary(self) -> dict[str, tuple[float, float]]:
        return {m: (self.mean(m), self.std(m)) for m in ("sensitivity", "specificity", "g_mean")}


Observer = Callable[[str, int, np.ndarray], None]


def run_experiment(
    dataset,
    algorithm,
    plan: SplitPlan | None = None,
    *,
    sparse_threshold: float = 0.5,
    resample: bool | None = None,
    adasyn_k: int = 5,
    observer: Observer | None = None,
) -> ExperimentReport:
    """Repeat split -> preprocess -> select -> refit -> test ``plan.repeat_count`` times.

    ``algorithm`` is an algorithm name or a family object from
    :mod:`pretermpred.algorithms`.  ``observer(stage, run, row_indices)`` is
    told which dataset rows each stage reads: ``preprocess_fit``, ``select``
    and ``refit`` see training rows, ``evaluate`` sees test rows.
    """
    plan = plan or SplitPlan()
    family = make_family(algorithm) if isinstance(algorithm, str) else algorithm
    use_resample = family.default_resample if resample is None else resample
    labels = np.asarray(dataset.labels)
    notify = observer or (lambda stage, run, idx: None)

    runs = []
    for r in range(plan.repeat_count):
        try:
            train_idx, test_idx = stratified_split(labels, plan, r)
            train, test = dataset.subset(train_idx), dataset.subset(test_idx)
            ytr, yte = train.labels.astype(int), test.labels.astype(int)
            notes: list[str] = []
            dropped: tuple[str, ...] = ()
            if family.rule_based:
                notify("evaluate", r, test_idx)
                pred = family.predict_raw(test)
                params = family.fixed_params
            else:
                notify("preprocess_fit", r, train_idx)
                pre = fit_preprocessor(train.view, sparse_threshold)
                dropped = pre.dropped
                Xtr = pre.transform(train.view)

                resampler = None
                if use_resample:

                    def resampler(X, y, k, _r=r):
                        # k is the fold number, -1 for the final refit
                        seed = int(np.random.SeedSequence([plan.seed, _r, 2, k + 1]).generate_state(1)[0])
                        return adasyn(X, y, AdasynConfig(k=adasyn_k, seed=seed))

                notify("select", r, train_idx)
                grid = family.make_grid(Xtr, ytr)
                result = grid_search(family, grid, Xtr, ytr, plan, seed=[plan.seed, r, 1], resampler=resampler)
                params = result.best_params

                notify("refit", r, train_idx)
                Xfit, yfit = (resampler(Xtr, ytr, -1) if resampler else (Xtr, ytr))
                model = family.fit(Xfit, yfit, params)
                if not getattr(model, "converged", True):
                    notes.append("not_converged")

                notify("evaluate", r, test_idx)
                pred = family.predict(model, pre.transform(test.view))
            cm = ConfusionMatrix.from_predictions(yte, pred)
            runs.append(
                RunResult(r, cm, metrics(cm), dict(params), len(train_idx), len(test_idx), tuple(dropped), tuple(notes))
            )
        except Exception as exc:
            raise RuntimeError(f"run {r}: {exc}") from exc
    return ExperimentReport(
        variant=ProblemVariant.parse(dataset.variant).value,
        tick=dataset.view.tick.name,
        algorithm=family.name,
        runs=tuple(runs),
        n_pos=dataset.n_pos,
        n_neg=dataset.n_neg,
    )
