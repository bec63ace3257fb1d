"""Encoding, sparse-column removal, imputation and [0,1] normalisation.

All statistics are fitted on training rows only; the fitted states are
immutable and applied unchanged to validation and test rows.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .schema import MISSING, FeatureSpec, MissingPolicy, Patient, RawView

_YES = {"1", "yes", "y", "true", "1.0"}
_NO = {"0", "no", "n", "false", "0.0"}


class EncodingError(ValueError):
    """A raw token could not be converted for its feature."""


class ImputationError(ValueError):
    pass


def column_names(spec: FeatureSpec) -> tuple[str, ...]:
    if spec.kind == "categorical":
        return tuple(f"{spec.name}_{level}" for level in spec.levels)
    return (spec.name,)


def _as_number(spec: FeatureSpec, token) -> float:
    text = str(token).strip()
    if text in spec.replacements:
        return float(spec.replacements[text])
    try:
        value = float(text)
    except ValueError:
        raise EncodingError(f"{spec.name}: unknown token {text!r}") from None
    if not math.isfinite(value):
        raise EncodingError(f"{spec.name}: non-finite value {text!r}")
    return value


def encode_value(spec: FeatureSpec, token) -> tuple[float, ...]:
    """Encode one raw token; categorical features yield one value per level."""
    if spec.kind == "yesno":
        text = str(token).strip().lower()
        if text in _YES:
            return (1.0,)
        if text in _NO:
            return (0.0,)
        raise EncodingError(f"{spec.name}: unknown token {token!r}")
    if spec.kind == "categorical":
        text = str(token).strip()
        if text in spec.levels:
            hit = spec.levels.index(text)
        else:
            hit = -1
            try:
                value = float(text)
            except ValueError:
                value = None
            if value is not None:
                for i, level in enumerate(spec.levels):
                    try:
                        if float(level) == value:
                            hit = i
                            break
                    except ValueError:
                        continue
            if hit < 0:
                raise EncodingError(f"{spec.name}: unknown token {token!r}")
        return tuple(1.0 if i == hit else 0.0 for i in range(len(spec.levels)))
    return (_as_number(spec, token),)


def decode_value(spec: FeatureSpec, values: Sequence[float]) -> str:
    """Inverse of :func:`encode_value` for yes/no and categorical features."""
    if spec.kind == "yesno":
        return "1" if values[0] >= 0.5 else "0"
    if spec.kind == "categorical":
        return spec.levels[int(np.argmax(values))]
    raise ValueError(f"{spec.name}: numeric features are not decoded")


@dataclass(frozen=True)
class EncodedMatrix:
    """Numeric matrix with NaN at missing cells and a parallel missing mask."""

    values: np.ndarray
    mask: np.ndarray  # True where missing
    columns: tuple[str, ...]
    sources: tuple[str, ...]  # feature name each column came from

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def select(self, columns: Iterable[str]) -> EncodedMatrix:
        index = {c: i for i, c in enumerate(self.columns)}
        idx = [index[c] for c in columns]
        return EncodedMatrix(
            self.values[:, idx],
            self.mask[:, idx],
            tuple(self.columns[i] for i in idx),
            tuple(self.sources[i] for i in idx),
        )

    def rows(self, indices) -> EncodedMatrix:
        idx = np.asarray(indices, dtype=int)
        return EncodedMatrix(self.values[idx], self.mask[idx], self.columns, self.sources)


def _encode_rows(features: Sequence[FeatureSpec], patients: Sequence[Patient]) -> EncodedMatrix:
    columns: list[str] = []
    sources: list[str] = []
    for spec in features:
        for col in column_names(spec):
            columns.append(col)
            sources.append(spec.name)
    values = np.full((len(patients), len(columns)), np.nan)
    for r, patient in enumerate(patients):
        c = 0
        for spec in features:
            width = len(spec.levels) if spec.kind == "categorical" else 1
            token = patient.get(spec.name)
            if token is not MISSING:
                values[r, c : c + width] = encode_value(spec, token)
            c += width
    return EncodedMatrix(values, np.isnan(values), tuple(columns), tuple(sources))


def encode(view: RawView) -> EncodedMatrix:
    """Encode a raw view into numbers.

    yes/no becomes 1/0, a categorical feature with k levels becomes k binary
    columns, and unusual tokens go through the feature's replacement map.
    Features whose missing policy is ``drop`` are left out.
    """
    features = [f for f in view.features if f.missing.kind != "drop"]
    return _encode_rows(features, view.patients)


def encode_record(features: Iterable[FeatureSpec], values: Mapping[str, object]) -> dict[str, float | None]:
    """Encode one patient's raw values by column name; MISSING stays ``None``."""
    out: dict[str, float | None] = {}
    for spec in features:
        token = values.get(spec.name, MISSING)
        names = column_names(spec)
        if token is MISSING:
            out.update(dict.fromkeys(names))
        else:
            out.update(zip(names, encode_value(spec, token)))
    return out


def drop_sparse(matrix: EncodedMatrix, threshold: float = 0.5) -> tuple[EncodedMatrix, list[str]]:
    """Remove columns whose missing fraction exceeds ``threshold``."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    n = matrix.values.shape[0]
    frac = matrix.mask.mean(axis=0) if n else np.zeros(len(matrix.columns))
    keep = [c for c, f in zip(matrix.columns, frac) if f <= threshold]
    dropped = [c for c, f in zip(matrix.columns, frac) if f > threshold]
    return matrix.select(keep), dropped


# -- imputation -------------------------------------------------------------


@dataclass(frozen=True)
class _Fill:
    feature: str
    columns: tuple[int, ...]
    fill: tuple[float, ...]
    base: int | None = None  # offset rule: base column index
    offset: float = 0.0


@dataclass(frozen=True)
class ImputerState:
    columns: tuple[str, ...]
    fills: tuple[_Fill, ...]

    def fill_for(self, feature: str) -> _Fill:
        for f in self.fills:
            if f.feature == feature:
                return f
        raise KeyError(feature)


def _mode(values: np.ndarray) -> float:
    counts = Counter(values.tolist())
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def fit_imputer(matrix: EncodedMatrix, specs: Mapping[str, FeatureSpec]) -> ImputerState:
    """Fit per-feature completion statistics on training rows.

    Policies: ``default(v)`` fixed value, ``mode`` most common value (lowest
    on ties), ``mean`` mean of observed values, ``derived(offset:BASE)`` the
    base feature plus the mean training difference to it.
    """
    groups: dict[str, list[int]] = {}
    for i, src in enumerate(matrix.sources):
        groups.setdefault(src, []).append(i)
    col_index = {c: i for i, c in enumerate(matrix.columns)}

    fills = []
    for feature, cols in groups.items():
        spec = specs[feature]
        policy = spec.missing
        block = matrix.values[:, cols]
        observed = ~matrix.mask[:, cols].any(axis=1)
        if policy.kind == "default":
            fill = encode_value(spec, policy.value)
            if len(fill) != len(cols):
                raise ImputationError(f"{feature}: default does not match column layout")
            fills.append(_Fill(feature, tuple(cols), tuple(fill)))
            continue
        if not observed.any():
            raise ImputationError(f"{feature}: no observed values and no default policy")
        obs = block[observed]
        if spec.kind == "categorical":
            counts = obs.sum(axis=0)
            level = int(np.argmax(counts))  # first level wins ties
            fill = tuple(1.0 if i == level else 0.0 for i in range(len(cols)))
            fills.append(_Fill(feature, tuple(cols), fill))
        elif policy.kind == "mode":
            fills.append(_Fill(feature, tuple(cols), (_mode(obs[:, 0]),)))
        elif policy.kind == "mean":
            fills.append(_Fill(feature, tuple(cols), (float(obs[:, 0].mean()),)))
        elif policy.kind == "derived":
            if policy.base not in col_index:
                raise ImputationError(f"{feature}: derived base {policy.base!r} not in matrix")
            b = col_index[policy.base]
            both = observed & ~matrix.mask[:, b]
            mean = float(obs[:, 0].mean())
            if both.any():
                offset = float(np.mean(matrix.values[both, cols[0]] - matrix.values[both, b]))
            else:
                offset = 0.0
                b = None
            # fill holds the fallback used when the base is missing as well
            fills.append(_Fill(feature, tuple(cols), (mean,), base=b, offset=offset))
        else:
            raise ImputationError(f"{feature}: policy {policy.kind!r} cannot impute")
    return ImputerState(matrix.columns, tuple(fills))


def impute(state: ImputerState, matrix: EncodedMatrix) -> EncodedMatrix:
    """Complete every missing cell; observed cells are returned unchanged."""
    if matrix.columns != state.columns:
        raise ImputationError("column set differs from the fitted imputer")
    values = matrix.values.copy()
    for f in state.fills:
        cols = list(f.columns)
        missing = matrix.mask[:, cols].any(axis=1)
        if not missing.any():
            continue
        if f.base is not None:
            col = cols[0]
            base_ok = missing & ~matrix.mask[:, f.base]
            values[base_ok, col] = matrix.values[base_ok, f.base] + f.offset
            values[missing & matrix.mask[:, f.base], col] = f.fill[0]
        else:
            values[np.ix_(missing, cols)] = np.asarray(f.fill)
    return EncodedMatrix(values, np.zeros_like(matrix.mask), matrix.columns, matrix.sources)


# -- normalisation ----------------------------------------------------------


@dataclass(frozen=True)
class NormalizerState:
    columns: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.upper <= self.lower


def fit_normalizer(matrix: EncodedMatrix) -> NormalizerState:
    if matrix.mask.any():
        raise ValueError("normalizer must be fitted on a complete matrix")
    if matrix.values.shape[0] == 0:
        zeros = np.zeros(len(matrix.columns))
        return NormalizerState(matrix.columns, zeros, zeros.copy())
    return NormalizerState(matrix.columns, matrix.values.min(axis=0), matrix.values.max(axis=0))


def apply_normalizer(state: NormalizerState, matrix: EncodedMatrix | np.ndarray) -> np.ndarray:
    """Map training min to 0 and max to 1, clamping out-of-range values.

    Constant training columns map to 0.
    """
    if isinstance(matrix, EncodedMatrix):
        if matrix.columns != state.columns:
            raise ValueError("column set differs from the fitted normalizer")
        values = matrix.values
    else:
        values = np.asarray(matrix, dtype=float)
    span = state.upper - state.lower
    safe = np.where(span > 0, span, 1.0)
    out = np.clip((values - state.lower) / safe, 0.0, 1.0)
    out[:, span <= 0] = 0.0
    return out


# -- full pipeline ----------------------------------------------------------


@dataclass(frozen=True)
class FittedPreprocessor:
    features: tuple[FeatureSpec, ...]
    columns: tuple[str, ...]
    dropped: tuple[str, ...]
    imputer: ImputerState
    normalizer: NormalizerState

    def transform(self, view: RawView) -> np.ndarray:
        if tuple(f.name for f in view.features) != tuple(f.name for f in self.features):
            raise ValueError("view features differ from the fitted preprocessor")
        matrix = encode(view).select(self.columns)
        return apply_normalizer(self.normalizer, impute(self.imputer, matrix))


def fit_preprocessor(view: RawView, sparse_threshold: float = 0.5) -> FittedPreprocessor:
    """Fit encode -> drop_sparse -> impute -> normalise on ``view``'s rows."""
    specs = {f.name: f for f in view.features}
    matrix, dropped = drop_sparse(encode(view), sparse_threshold)
    # a derived rule whose base column was dropped falls back to the mean policy
    kept = set(matrix.sources)
    for name in kept:
        spec = specs[name]
        if spec.missing.kind == "derived" and spec.missing.base not in kept:
            specs[name] = replace(spec, missing=MissingPolicy("mean"))
    imputer = fit_imputer(matrix, specs)
    complete = impute(imputer, matrix)
    return FittedPreprocessor(
        tuple(view.features), matrix.columns, tuple(dropped), imputer, fit_normalizer(complete)
    )
