"""Class-weighted soft-margin kernel SVM.

The dual

    max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j k(x_i, x_j)
    s.t. 0 <= a_i <= C_{y_i},  sum(a_i y_i) = 0

is solved by pairwise coordinate ascent on the maximal violating pair, with
per-class box bounds C+ and C-.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numba
import numpy as np
from scipy.spatial.distance import cdist

KERNELS = ("linear", "poly", "rbf")
_TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    degree: int = 3
    gamma: float | None = None  # None: 1 / n_features, resolved at training
    coef0: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "poly" and self.degree not in (2, 3):
            raise ValueError("polynomial degree must be 2 or 3")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @classmethod
    def linear(cls) -> KernelSpec:
        return cls("linear")

    @classmethod
    def poly(cls, degree: int, gamma: float | None = None, coef0: float = 1.0) -> KernelSpec:
        return cls("poly", degree=degree, gamma=gamma, coef0=coef0)

    @classmethod
    def rbf(cls, gamma: float | None = None) -> KernelSpec:
        return cls("rbf", gamma=gamma)

    def resolved(self, n_features: int) -> KernelSpec:
        if self.kind == "linear" or self.gamma is not None:
            return self
        return replace(self, gamma=1.0 / max(n_features, 1))


def gram(kernel: KernelSpec, A, B=None) -> np.ndarray:
    """Kernel matrix ``K[i, j] = k(A[i], B[j])``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]} columns")
    kernel = kernel.resolved(A.shape[1])
    if kernel.kind == "linear":
        return A @ B.T
    if kernel.kind == "poly":
        return (kernel.gamma * (A @ B.T) + kernel.coef0) ** kernel.degree
    return np.exp(-kernel.gamma * cdist(A, B, "sqeuclidean"))


def class_costs(n_pos: int, n_neg: int, C: float) -> tuple[float, float]:
    """Per-class costs with ``C_pos * n_pos == C_neg * n_neg`` and ``C_neg = C``."""
    if n_pos < 1 or n_neg < 1:
        raise ValueError("both classes need at least one example")
    if not C > 0:
        raise ValueError("C must be positive")
    return C * n_neg / n_pos, C


@dataclass(frozen=True)
class SvmConfig:
    """Training settings.

    ``weighting="balanced"`` applies :func:`class_costs`; ``"uniform"`` uses
    C for both classes.  ``pos_weight`` overrides both with
    ``C_pos = pos_weight * C``.  Training stops when the maximal KKT gap
    drops below ``tol`` or after ``max_passes * n`` pair updates.
    """

    C: float = 1.0
    weighting: str = "balanced"
    pos_weight: float | None = None
    tol: float = 1e-3
    max_passes: int = 1000

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.weighting not in ("balanced", "uniform"):
            raise ValueError(f"unknown weighting {self.weighting!r}")

    def costs(self, n_pos: int, n_neg: int) -> tuple[float, float]:
        if self.pos_weight is not None:
            return self.pos_weight * self.C, self.C
        if self.weighting == "balanced":
            return class_costs(n_pos, n_neg, self.C)
        return self.C, self.C


@numba.njit(cache=True)
def _smo(K, y, C, tol, max_iter, alpha, grad, trace):
    n = y.shape[0]
    it = 0
    gap = np.inf
    record = trace.shape[0] > 0
    if record:
        trace[0] = 0.5 * np.sum(alpha * (grad - 1.0))
    # the gradient update of one step and the pair selection of the next
    # share a single pass over the data
    pi = 0
    pj = 0
    dai = 0.0
    daj = 0.0
    while True:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            if it > 0:
                grad[t] += y[t] * (K[pi, t] * dai + K[pj, t] * daj)
            yt = y[t]
            v = -yt * grad[t]
            at = alpha[t]
            if yt > 0:
                up = at < C[t]
                low = at > 0
            else:
                up = at > 0
                low = at < C[t]
            if up and v > gmax:
                gmax = v
                i = t
            if low and v < gmin:
                gmin = v
                j = t
        if record and it > 0:
            trace[it] = 0.5 * np.sum(alpha * (grad - 1.0))
        gap = gmax - gmin
        if i < 0 or j < 0 or gap < tol or it >= max_iter:
            return it, gap
        ci = C[i]
        cj = C[j]
        ai = alpha[i]
        aj = alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = _TAU
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > ci - cj:
                if ai > ci:
                    ai = ci
                    aj = ci - diff
            else:
                if aj > cj:
                    aj = cj
                    ai = cj + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > ci:
                if ai > ci:
                    ai = ci
                    aj = total - ci
            else:
                if aj < 0:
                    aj = 0.0
                    ai = total
            if total > cj:
                if aj > cj:
                    aj = cj
                    ai = total - cj
            else:
                if ai < 0:
                    ai = 0.0
                    aj = total
        dai = (ai - alpha[i]) * y[i]
        daj = (aj - alpha[j]) * y[j]
        alpha[i] = ai
        alpha[j] = aj
        pi = i
        pj = j
        it += 1


@dataclass(frozen=True)
class DualSolution:
    alpha: np.ndarray
    bias: float
    iterations: int
    converged: bool
    max_violation: float
    objective_trace: np.ndarray  # dual objective per iteration, when recorded

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1]) if self.objective_trace.size else math.nan


def dual_objective(K: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def _bias(y, alpha, grad, C) -> float:
    yg = y * grad
    upper = alpha >= C
    lower = alpha <= 0
    free = ~(upper | lower)
    if free.any():
        rho = yg[free].mean()
    else:
        ub_mask = (upper & (y < 0)) | (lower & (y > 0))
        lb_mask = (upper & (y > 0)) | (lower & (y < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2
    return float(-rho)


def solve_dual(
    K: np.ndarray,
    y,
    c_pos: float,
    c_neg: float,
    tol: float = 1e-3,
    max_iter: int = 10_000_000,
    record_trace: bool = False,
    alpha0: np.ndarray | None = None,
) -> DualSolution:
    """Solve the weighted dual for a precomputed (symmetric) kernel matrix.

    ``alpha0`` is an optional feasible starting point (box bounds and the
    equality constraint must hold).
    """
    y = np.asarray(y, dtype=float)
    K = np.ascontiguousarray(K, dtype=float)
    n = len(y)
    C = np.where(y > 0, c_pos, c_neg).astype(float)
    if alpha0 is None:
        alpha = np.zeros(n)
        grad = -np.ones(n)
    else:
        alpha = np.clip(np.asarray(alpha0, dtype=float), 0.0, C)
        if abs(float(alpha @ y)) > 1e-9 * max(1.0, float(C.max())):
            raise ValueError("alpha0 violates the equality constraint")
        grad = y * (K @ (alpha * y)) - 1.0
    trace = np.empty(max_iter + 1 if record_trace else 0)
    iterations, gap = _smo(K, y, C, float(tol), int(max_iter), alpha, grad, trace)
    trace = -trace[: iterations + 1] if record_trace else np.empty(0)
    return DualSolution(
        alpha=alpha,
        bias=_bias(y, alpha, grad, C),
        iterations=int(iterations),
        converged=bool(gap < tol),
        max_violation=float(max(gap, 0.0)),
        objective_trace=trace,
    )


@dataclass(frozen=True)
class SvmModel:
    kernel: KernelSpec
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    n_features: int
    c_pos: float = math.nan
    c_neg: float = math.nan
    converged: bool = True
    iterations: int = 0
    support_indices: np.ndarray | None = None

    @property
    def n_support(self) -> int:
        return len(self.dual_coef)


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be +1 or -1")
    if len(np.unique(y)) != 2:
        raise ValueError("both classes must be present")
    return y.astype(float)


def train_svm(X, y, kernel: KernelSpec | None = None, cfg: SvmConfig | None = None) -> SvmModel:
    """Fit a class-weighted soft-margin SVM.

    Non-convergence within the iteration budget returns the current model
    with ``converged=False`` rather than raising.
    """
    kernel = kernel or KernelSpec.linear()
    cfg = cfg or SvmConfig()
    X, yf = _validate(X, y)
    kernel = kernel.resolved(X.shape[1])
    return _fit(X, yf, kernel, cfg, gram(kernel, X))


def _validate(X, y):
    X = np.asarray(X, dtype=float)
    yf = _check_labels(y)
    if X.ndim != 2 or len(X) != len(yf):
        raise ValueError("X must be 2-D with one row per label")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    return X, yf


def _fit(X, yf, kernel, cfg, K, alpha0=None) -> SvmModel:
    n_pos = int(np.sum(yf > 0))
    c_pos, c_neg = cfg.costs(n_pos, len(yf) - n_pos)
    max_iter = max(cfg.max_passes * len(yf), 1000)
    sol = solve_dual(K, yf, c_pos, c_neg, cfg.tol, max_iter, alpha0=alpha0)
    sv = np.flatnonzero(sol.alpha > 0)
    return SvmModel(
        kernel=kernel,
        support_vectors=X[sv].copy(),
        dual_coef=(sol.alpha * yf)[sv],
        bias=sol.bias,
        n_features=X.shape[1],
        c_pos=c_pos,
        c_neg=c_neg,
        converged=sol.converged,
        iterations=sol.iterations,
        support_indices=sv,
    )


def train_svm_path(X, y, kernel: KernelSpec | None, Cs, cfg: SvmConfig | None = None) -> list[SvmModel]:
    """Fit one model per cost in ``Cs``, sharing the kernel matrix.

    Costs are visited in increasing order and each solve starts from the
    previous solution scaled by the cost ratio, which stays feasible because
    both class bounds scale with C.  Models are returned in the order of
    ``Cs``; each meets the same stopping rule as :func:`train_svm`.
    """
    kernel = kernel or KernelSpec.linear()
    cfg = cfg or SvmConfig()
    X, yf = _validate(X, y)
    kernel = kernel.resolved(X.shape[1])
    K = gram(kernel, X)
    models: list[SvmModel | None] = [None] * len(Cs)
    prev = None
    for idx in sorted(range(len(Cs)), key=lambda i: Cs[i]):
        c = float(Cs[idx])
        alpha0 = None
        if prev is not None:
            alpha0 = np.zeros(len(yf))
            alpha0[prev.support_indices] = np.abs(prev.dual_coef) * (c / prev_c)
        models[idx] = prev = _fit(X, yf, kernel, replace(cfg, C=c), K, alpha0)
        prev_c = c
    return models


def decision_function(model: SvmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} columns, got {X.shape[1]}")
    if model.n_support == 0:
        return np.full(len(X), model.bias)
    return gram(model.kernel, X, model.support_vectors) @ model.dual_coef + model.bias


def predict(model: SvmModel, X) -> np.ndarray:
    """Labels ``sign(f(x))`` with a decision value of exactly 0 mapped to +1."""
    return np.where(decision_function(model, X) >= 0, 1, -1)


# -- flat text serialisation ------------------------------------------------


def dumps(model: SvmModel) -> str:
    k = model.kernel
    lines = [
        "svm_model 1",
        f"kernel {k.kind}",
        f"degree {k.degree}",
        f"gamma {float(k.gamma) if k.gamma is not None else 0.0!r}",
        f"coef0 {float(k.coef0)!r}",
        f"bias {float(model.bias)!r}",
        f"c_pos {float(model.c_pos)!r}",
        f"c_neg {float(model.c_neg)!r}",
        f"converged {int(model.converged)}",
        f"n_features {model.n_features}",
        f"n_sv {model.n_support}",
    ]
    for coef, row in zip(model.dual_coef, model.support_vectors):
        lines.append(" ".join(repr(float(v)) for v in (coef, *row)))
    return "\n".join(lines) + "\n"


def loads(text: str) -> SvmModel:
    lines = text.splitlines()
    if not lines or lines[0] != "svm_model 1":
        raise ValueError("not an svm_model file")
    header = dict(line.split(" ", 1) for line in lines[1:11])
    n_sv = int(header["n_sv"])
    d = int(header["n_features"])
    rows = np.array([[float(v) for v in line.split()] for line in lines[11 : 11 + n_sv]]).reshape(n_sv, d + 1)
    gamma = float(header["gamma"])
    kernel = KernelSpec(
        header["kernel"],
        degree=int(header["degree"]),
        gamma=gamma if header["kernel"] != "linear" else None,
        coef0=float(header["coef0"]),
    )
    return SvmModel(
        kernel=kernel,
        support_vectors=rows[:, 1:],
        dual_coef=rows[:, 0],
        bias=float(header["bias"]),
        n_features=d,
        c_pos=float(header["c_pos"]),
        c_neg=float(header["c_neg"]),
        converged=bool(int(header["converged"])),
    )


def save(model: SvmModel, path: str | Path) -> None:
    Path(path).write_text(dumps(model), encoding="utf-8")


def load(path: str | Path) -> SvmModel:
    return loads(Path(path).read_text(encoding="utf-8"))
