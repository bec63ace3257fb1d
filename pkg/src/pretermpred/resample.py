"""ADASYN adaptive synthetic minority oversampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class AdasynConfig:
    """ADASYN settings.

    Parameters
    ----------
    k : int
        Neighbour count for both the hardness ratio and the minority
        neighbours used as segment endpoints.
    beta : float
        Balance level in (0, 1]; 1 targets an exact 1:1 class ratio.
    seed : int
        Root seed; each minority seed point draws from its own stream.
    """

    k: int = 5
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must be in (0, 1]")


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(int)


def _nearest(dist: np.ndarray, k: int) -> np.ndarray:
    # stable sort: equal distances resolve to the lower column index
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def synthetic_counts(ratios: np.ndarray, total: float) -> np.ndarray:
    """Integer per-seed counts summing to ``round(total)``.

    Each seed gets ``round_half_up(ratio * total)``; any global surplus or
    deficit is then settled one sample at a time over seeds in descending
    ratio order (lower index first on ties).
    """
    target = int(_round_half_up(total))
    g = _round_half_up(ratios * total)
    order = np.argsort(-ratios, kind="stable")
    diff = target - int(g.sum())
    while diff > 0:
        for i in order:
            if diff == 0:
                break
            g[i] += 1
            diff -= 1
    while diff < 0:
        progressed = False
        for i in order:
            if diff == 0:
                break
            if g[i] > 0:
                g[i] -= 1
                diff += 1
                progressed = True
        if not progressed:
            break
    return g


def hardness_ratios(X: np.ndarray, y: np.ndarray, minority: int, k: int) -> np.ndarray:
    """Fraction of majority points among each minority point's k nearest neighbours."""
    min_idx = np.flatnonzero(y == minority)
    dist = cdist(X[min_idx], X, "sqeuclidean")
    dist[np.arange(len(min_idx)), min_idx] = np.inf  # exclude self
    k_eff = min(k, len(y) - 1)
    nn = _nearest(dist, k_eff)
    return (y[nn] != minority).sum(axis=1) / k_eff


def adasyn(X, y, cfg: AdasynConfig | None = None, *, return_origins: bool = False):
    """Oversample the minority class of ``(X, y)``.

    Returns the original rows in their original order followed by the
    synthetic rows, grouped by seed point.  With ``return_origins`` a third
    array gives, per synthetic row, the input row indices of its seed and of
    the minority neighbour it was interpolated towards.
    """
    cfg = cfg or AdasynConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    labels = np.unique(y)
    if len(labels) != 2:
        raise ValueError("adasyn needs exactly two classes")
    counts = {int(c): int(np.sum(y == c)) for c in labels}
    minority = min(counts, key=lambda c: (counts[c], -c))
    majority = max(counts, key=lambda c: (counts[c], c))
    ms, ml = counts[minority], counts[majority]
    if ms < 2:
        raise ValueError("adasyn needs at least two minority samples")
    G = (ml - ms) * cfg.beta
    if G < 0.5:
        if return_origins:
            return X.copy(), y.copy(), np.empty((0, 2), dtype=int)
        return X.copy(), y.copy()

    min_idx = np.flatnonzero(y == minority)
    r = hardness_ratios(X, y, minority, cfg.k)
    total = r.sum()
    r_hat = r / total if total > 0 else np.full(ms, 1.0 / ms)
    g = synthetic_counts(r_hat, G)

    X_min = X[min_idx]
    dmin = cdist(X_min, X_min, "sqeuclidean")
    np.fill_diagonal(dmin, np.inf)
    neighbours = _nearest(dmin, min(cfg.k, ms - 1))

    synth = []
    origins = []
    for i in range(ms):
        if g[i] == 0:
            continue
        rng = np.random.default_rng([cfg.seed, i])
        picks = neighbours[i][rng.integers(0, neighbours.shape[1], size=g[i])]
        lam = rng.random(g[i])[:, None]
        synth.append(X_min[i] + lam * (X_min[picks] - X_min[i]))
        origins.append(np.column_stack([np.full(g[i], min_idx[i]), min_idx[picks]]))
    X_new = np.vstack([X, *synth])
    y_new = np.concatenate([y, np.full(int(g.sum()), minority, dtype=y.dtype)])
    if return_origins:
        return X_new, y_new, np.vstack(origins).astype(int)
    return X_new, y_new
