"""The eight algorithm families compared by the harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import glm, svm
from .preprocess import encode_record
from .rpd import FactorTable, load_factor_table, score_patient

ALGORITHMS = (
    "lasso",
    "elastic_net",
    "svm_linear",
    "svm_poly2",
    "svm_poly3",
    "svm_rbf",
    "creasy7",
    "creasy13",
)


@dataclass(frozen=True)
class AlgorithmOptions:
    C_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    gamma_scales: tuple[float, ...] = (0.1, 1.0, 10.0)  # gamma = scale / n_features
    svm_tol: float = 1e-3
    svm_max_passes: int = 1000
    n_lambda: int = 100
    lambda_min_ratio: float = 1e-3
    elastic_net_alpha: float = 0.5
    glm_tol: float = 1e-7


class SvmFamily:
    rule_based = False
    default_resample = False

    def __init__(self, name: str, kernel: str, degree: int = 3, options: AlgorithmOptions | None = None):
        self.name = name
        self.kernel = kernel
        self.degree = degree
        self.options = options or AlgorithmOptions()

    def make_grid(self, X, y) -> list[dict]:
        if self.kernel == "linear":
            return [{"C": c} for c in self.options.C_grid]
        return [{"C": c, "gamma_scale": s} for c in self.options.C_grid for s in self.options.gamma_scales]

    def _kernel(self, params, n_features) -> svm.KernelSpec:
        if self.kernel == "linear":
            return svm.KernelSpec.linear()
        gamma = params["gamma_scale"] / max(n_features, 1)
        if self.kernel == "rbf":
            return svm.KernelSpec.rbf(gamma)
        return svm.KernelSpec.poly(self.degree, gamma)

    def fit(self, X, y, params):
        cfg = svm.SvmConfig(C=params["C"], tol=self.options.svm_tol, max_passes=self.options.svm_max_passes)
        return svm.train_svm(X, y, self._kernel(params, X.shape[1]), cfg)

    def fit_grid(self, X, y, grid):
        """Warm-started fits along C for each kernel setting; grid order kept."""
        cfg = svm.SvmConfig(tol=self.options.svm_tol, max_passes=self.options.svm_max_passes)
        by_kernel: dict = {}
        for i, params in enumerate(grid):
            by_kernel.setdefault(params.get("gamma_scale"), []).append(i)
        models = [None] * len(grid)
        for idx in by_kernel.values():
            kernel = self._kernel(grid[idx[0]], X.shape[1])
            Cs = [grid[i]["C"] for i in idx]
            for i, model in zip(idx, svm.train_svm_path(X, y, kernel, Cs, cfg)):
                models[i] = model
        return models

    def predict(self, model, X):
        return svm.predict(model, X)


class GlmFamily:
    rule_based = False
    default_resample = True

    def __init__(self, name: str, alpha: float, options: AlgorithmOptions | None = None):
        self.name = name
        self.alpha = alpha
        self.options = options or AlgorithmOptions()

    def _cfg(self, lambdas=None) -> glm.GlmConfig:
        o = self.options
        return glm.GlmConfig(
            alpha=self.alpha,
            n_lambda=o.n_lambda,
            lambda_min_ratio=o.lambda_min_ratio,
            lambdas=None if lambdas is None else tuple(lambdas),
            tol=o.glm_tol,
        )

    def make_grid(self, X, y) -> list[dict]:
        return [{"lambda": float(lam)} for lam in glm.lambda_path(X, y, self._cfg())]

    def fit_grid(self, X, y, grid):
        return glm.fit_glm(X, y, self._cfg([p["lambda"] for p in grid]))

    def fit(self, X, y, params):
        return glm.fit_glm(X, y, self._cfg([params["lambda"]]))[0]

    def predict(self, model, X):
        return glm.predict_glm(model, X)


class CreasyFamily:
    """Creasy point table with a two-band cutoff; nothing is fitted."""

    rule_based = True
    default_resample = False

    def __init__(self, name: str, cutoff: int, table: FactorTable | None = None):
        self.name = name
        self.cutoff = cutoff
        self.table = table if table is not None else load_factor_table()

    @property
    def fixed_params(self) -> dict:
        return {"cutoff": self.cutoff}

    def predict_raw(self, dataset) -> np.ndarray:
        tick = dataset.view.tick
        features = dataset.view.features
        out = np.empty(len(dataset), dtype=int)
        for i, patient in enumerate(dataset.patients):
            record = encode_record(features, patient.values)
            out[i] = 1 if score_patient(record, tick, self.table).score >= self.cutoff else -1
        return out


def make_family(name: str, options: AlgorithmOptions | None = None):
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {', '.join(ALGORITHMS)}")
    options = options or AlgorithmOptions()
    if name == "lasso":
        return GlmFamily(name, 1.0, options)
    if name == "elastic_net":
        return GlmFamily(name, options.elastic_net_alpha, options)
    if name == "svm_linear":
        return SvmFamily(name, "linear", options=options)
    if name == "svm_poly2":
        return SvmFamily(name, "poly", 2, options)
    if name == "svm_poly3":
        return SvmFamily(name, "poly", 3, options)
    if name == "svm_rbf":
        return SvmFamily(name, "rbf", options=options)
    return CreasyFamily(name, 7 if name == "creasy7" else 13)
