"""Penalised logistic regression (lasso / elastic net) by coordinate descent.

Per penalty level the fitter minimises

    (1/n) sum log(1 + exp(-y_i (b0 + x_i.b))) + lam * (alpha |b|_1 + (1 - alpha) |b|^2 / 2)

on internally standardised columns.  Each outer step builds the weighted
least-squares approximation of the log-likelihood, solves it by cyclic
coordinate descent with soft-thresholding, and backtracks along the step so
the penalised objective never increases.  The path is fitted from the
largest penalty down with warm starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np


def soft_threshold(z: float, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("threshold must be nonnegative")
    return math.copysign(max(abs(z) - gamma, 0.0), z) if z != 0 else 0.0


@dataclass(frozen=True)
class GlmConfig:
    alpha: float = 0.5
    n_lambda: int = 100
    lambda_min_ratio: float = 1e-3
    lambdas: tuple[float, ...] | None = None
    tol: float = 1e-7
    max_iters: int = 100
    max_sweeps: int = 100_000
    standardize: bool = True

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.lambdas is not None:
            lam = np.asarray(self.lambdas, dtype=float)
            if lam.size == 0 or np.any(lam <= 0) or np.any(np.diff(lam) >= 0):
                raise ValueError("lambda path must be positive and strictly decreasing")
        if self.n_lambda < 1 or not 0 < self.lambda_min_ratio < 1:
            raise ValueError("bad lambda path settings")


@dataclass(frozen=True)
class GlmModel:
    intercept: float
    coef: np.ndarray  # original-scale coefficients
    lambda_: float
    alpha: float
    x_mean: np.ndarray = field(repr=False)
    x_scale: np.ndarray = field(repr=False)
    iterations: int = 0
    converged: bool = True

    @property
    def n_features(self) -> int:
        return len(self.coef)

    @property
    def nonzero(self) -> np.ndarray:
        return np.flatnonzero(self.coef)

    @property
    def standardized_coef(self) -> np.ndarray:
        return self.coef * self.x_scale

    @property
    def standardized_intercept(self) -> float:
        return float(self.intercept + self.coef @ self.x_mean)


def _check(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if np.isnan(X).any():
        raise ValueError("X contains NaN")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be +1 or -1")
    if len(y) < 2 or len(np.unique(y)) != 2:
        raise ValueError("need at least two rows and both classes")
    return X, (y > 0).astype(float)


def _standardize(X: np.ndarray, enabled: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not enabled:
        return X, np.zeros(X.shape[1]), np.ones(X.shape[1])
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    safe = np.where(scale > 0, scale, 1.0)
    Xs = (X - mean) / safe
    Xs[:, scale <= 0] = 0.0
    return Xs, mean, np.where(scale > 0, scale, 0.0)


def penalized_objective(X, y, intercept: float, coef, lam: float, alpha: float) -> float:
    """Penalised mean logistic loss, evaluated in the coordinates of ``X``."""
    X = np.asarray(X, dtype=float)
    coef = np.asarray(coef, dtype=float)
    ys = np.where(np.asarray(y) > 0, 1.0, -1.0)
    margin = ys * (intercept + X @ coef)
    loss = np.mean(np.logaddexp(0.0, -margin))
    return float(loss + lam * (alpha * np.abs(coef).sum() + 0.5 * (1 - alpha) * coef @ coef))


def lambda_max(X, y, alpha: float, standardize: bool = True) -> float:
    """Smallest penalty at which every coefficient is zero."""
    if not alpha > 0:
        raise ValueError("alpha must be positive for a finite lambda_max")
    X, y01 = _check(X, y)
    Xs, _, _ = _standardize(X, standardize)
    n = len(y01)
    resid = y01 - y01.mean()
    if not standardize:
        # an unpenalised intercept absorbs the column means
        Xs = Xs - Xs.mean(axis=0)
    return float(np.max(np.abs(Xs.T @ resid)) / (n * alpha))


def lambda_path(X, y, cfg: GlmConfig) -> np.ndarray:
    if cfg.lambdas is not None:
        return np.asarray(cfg.lambdas, dtype=float)
    top = lambda_max(X, y, cfg.alpha, cfg.standardize)
    if top <= 0:
        top = 1e-6
    if cfg.n_lambda == 1:
        return np.array([top])
    return top * cfg.lambda_min_ratio ** (np.arange(cfg.n_lambda) / (cfg.n_lambda - 1))


@numba.njit(cache=True)
def _cd(X, w, z, lam, alpha, b0, beta, xwx, tol, max_sweeps):
    n, p = X.shape
    r = z - b0
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= beta[j] * X[i, j]
    wsum = w.sum()
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        change = 0.0
        d0 = 0.0
        for i in range(n):
            d0 += w[i] * r[i]
        d0 /= wsum
        if d0 != 0.0:
            b0 += d0
            for i in range(n):
                r[i] -= d0
            change = max(change, wsum / n * d0 * d0)
        for j in range(p):
            if xwx[j] <= 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += w[i] * X[i, j] * r[i]
            g = g / n + xwx[j] * beta[j]
            a = abs(g) - l1
            new = 0.0
            if a > 0.0:
                new = (a if g > 0 else -a) / (xwx[j] + l2)
            d = new - beta[j]
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * X[i, j]
                beta[j] = new
                change = max(change, xwx[j] * d * d)
        if change < tol:
            break
    return b0, sweeps


def _objective(X, y01, b0, beta, lam, alpha):
    eta = b0 + X @ beta
    loss = np.mean(np.logaddexp(0.0, eta) - y01 * eta)
    return loss + lam * (alpha * np.abs(beta).sum() + 0.5 * (1 - alpha) * beta @ beta)


def _kkt(X, y01, b0, beta, lam, alpha) -> float:
    """Largest KKT residual, intercept included, in the coordinates of ``X``."""
    p = 1.0 / (1.0 + np.exp(-(b0 + X @ beta)))
    grad = X.T @ (p - y01) / len(y01)
    active = beta != 0
    res = np.maximum(np.abs(grad) - lam * alpha, 0.0)
    res[active] = np.abs(grad[active] + lam * (1 - alpha) * beta[active] + lam * alpha * np.sign(beta[active]))
    return float(max(res.max(initial=0.0), abs(np.mean(p - y01))))


def _fit_one(X, y01, lam, alpha, b0, beta, cfg: GlmConfig, trace=None):
    """Proximal Newton at one penalty level; returns (b0, beta, iters, converged).

    Stops once the KKT residual is within ``cfg.tol``.
    """
    n = len(y01)
    f_old = _objective(X, y01, b0, beta, lam, alpha)
    if trace is not None:
        trace.append(f_old)
    # inner sweeps stop on the curvature-weighted step, squared
    inner_tol = (0.1 * cfg.tol) ** 2
    for it in range(1, cfg.max_iters + 1):
        if _kkt(X, y01, b0, beta, lam, alpha) <= cfg.tol:
            return b0, beta, it - 1, True
        eta = b0 + X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(p * (1 - p), 1e-5)
        z = eta + (y01 - p) / w
        xwx = (w @ (X * X)) / n
        new_beta = beta.copy()
        new_b0, _ = _cd(X, w, z, lam, alpha, b0, new_beta, xwx, inner_tol, cfg.max_sweeps)
        d0, d = new_b0 - b0, new_beta - beta
        t = 1.0
        for _ in range(40):
            f_new = _objective(X, y01, b0 + t * d0, beta + t * d, lam, alpha)
            if f_new <= f_old:
                break
            t *= 0.5
        else:
            # no descent left at machine precision
            return b0, beta, it, _kkt(X, y01, b0, beta, lam, alpha) <= 10 * cfg.tol
        b0, beta = b0 + t * d0, beta + t * d
        f_old = f_new
        if trace is not None:
            trace.append(f_new)
    return b0, beta, cfg.max_iters, _kkt(X, y01, b0, beta, lam, alpha) <= cfg.tol


def fit_glm(X, y, cfg: GlmConfig | None = None) -> list[GlmModel]:
    """Fit one model per penalty level on the (decreasing) path."""
    cfg = cfg or GlmConfig()
    X, y01 = _check(X, y)
    Xs, mean, scale = _standardize(X, cfg.standardize)
    Xf = np.asfortranarray(Xs)
    lambdas = lambda_path(X, np.where(y01 > 0, 1, -1), cfg)
    top = lambda_max(X, np.where(y01 > 0, 1, -1), cfg.alpha, cfg.standardize)
    pbar = y01.mean()
    b0 = math.log(pbar / (1 - pbar))
    beta = np.zeros(X.shape[1])
    inv = np.where(scale > 0, 1.0 / np.where(scale > 0, scale, 1.0), 0.0)
    models = []
    for lam in lambdas:
        if lam >= top:
            b0, beta, iters, ok = math.log(pbar / (1 - pbar)), np.zeros(X.shape[1]), 0, True
        else:
            b0, beta, iters, ok = _fit_one(Xf, y01, lam, cfg.alpha, b0, beta, cfg)
        coef = beta * inv
        models.append(
            GlmModel(
                intercept=float(b0 - coef @ mean),
                coef=coef,
                lambda_=float(lam),
                alpha=cfg.alpha,
                x_mean=mean,
                x_scale=scale,
                iterations=iters,
                converged=ok,
            )
        )
    return models


def predict_proba(model: GlmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} columns, got {X.shape[1]}")
    return 1.0 / (1.0 + np.exp(-(model.intercept + X @ model.coef)))


def predict_glm(model: GlmModel, X, threshold: float = 0.5) -> np.ndarray:
    """+1 where the predicted probability is at least ``threshold``."""
    return np.where(predict_proba(model, X) >= threshold, 1, -1)


def kkt_violation(model: GlmModel, X, y) -> float:
    """Largest KKT residual of ``model`` in the standardised space it was fitted in."""
    X, y01 = _check(X, y)
    scale = np.where(model.x_scale > 0, model.x_scale, 1.0)
    Xs = (X - model.x_mean) / scale
    Xs[:, model.x_scale <= 0] = 0.0
    return _kkt(Xs, y01, model.standardized_intercept, model.standardized_coef, model.lambda_, model.alpha)


# -- flat text serialisation ------------------------------------------------


def dumps(model: GlmModel) -> str:
    lines = [
        "glm_model 1",
        f"alpha {model.alpha!r}",
        f"lambda {model.lambda_!r}",
        f"intercept {model.intercept!r}",
        f"n_features {model.n_features}",
        "coef " + " ".join(f"{j}:{float(model.coef[j])!r}" for j in model.nonzero),
    ]
    return "\n".join(lines) + "\n"


def loads(text: str) -> GlmModel:
    lines = text.splitlines()
    if not lines or lines[0] != "glm_model 1":
        raise ValueError("not a glm_model file")
    header = dict(line.partition(" ")[::2] for line in lines[1:])
    d = int(header["n_features"])
    coef = np.zeros(d)
    for item in header.get("coef", "").split():
        j, _, v = item.partition(":")
        coef[int(j)] = float(v)
    return GlmModel(
        intercept=float(header["intercept"]),
        coef=coef,
        lambda_=float(header["lambda"]),
        alpha=float(header["alpha"]),
        x_mean=np.zeros(d),
        x_scale=np.ones(d),
    )


def save(model: GlmModel, path: str | Path) -> None:
    Path(path).write_text(dumps(model), encoding="utf-8")


def load(path: str | Path) -> GlmModel:
    return loads(Path(path).read_text(encoding="utf-8"))
