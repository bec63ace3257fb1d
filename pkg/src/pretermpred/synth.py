"""Synthetic cohorts with reference class marginals and an injectable signal.

The output is NOT clinical data.  Feature values are drawn per kind from
simple distributions (a few named features get hand-set shapes); the
spontaneous-preterm outcome follows a logistic model over four risk
indicators whose odds multipliers come from the config.  The intercept is
solved per parity group so the expected incidence equals the configured rate.
"""

from __future__ import annotations

import math
import zlib
from statistics import NormalDist
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import brentq

from .schema import MISSING, Cohort, FeatureRegistry, FeatureSpec, Patient, Tick

NON_CLINICAL_NOTE = "synthetic data, not clinical"

# groups that do not exist for a first pregnancy
HISTORY_GROUPS = ("PPH", "PPHD")

_Z = NormalDist().inv_cdf

DEFAULT_EFFECTS = {"prior_ptb": 16.0, "short_cervix": 4.0, "smoking": 2.5, "age_extreme": 2.0}
DEFAULT_SPARSE = {"HGB": 0.7, "GLUC": 0.7, "PLATE": 0.7}


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic cohort settings.

    ``nulliparous_sptb``/``multiparous_sptb`` drive generation; when either is
    None both parities use ``overall_sptb``.  ``effect_sizes`` maps each risk
    indicator (``prior_ptb``, ``short_cervix``, ``smoking``, ``age_extreme``)
    to an odds multiplier; all ones means no signal.
    """

    n_patients: int = 3000
    overall_sptb: float = 0.103
    nulliparous_sptb: float | None = 0.082
    multiparous_sptb: float | None = 0.119
    indicated_ptb: float = 0.04
    nulliparous_fraction: float = 1218 / 2929
    effect_sizes: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_EFFECTS))
    missing_rate: float = 0.05
    sparse_features: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SPARSE))
    retention: tuple[float, float] = (2929 / 3002, 2549 / 3002)  # fraction reaching T1, T3
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        rates = [self.overall_sptb, self.indicated_ptb, self.nulliparous_fraction, self.missing_rate,
                 *self.retention, *self.sparse_features.values()]
        rates += [r for r in (self.nulliparous_sptb, self.multiparous_sptb) if r is not None]
        if any(not 0 <= r <= 1 for r in rates):
            raise ValueError("all rates must lie in [0, 1]")
        if self.missing_rate >= 1:
            raise ValueError("missing_rate must be < 1")
        for parity_rate in self.sptb_rates:
            if parity_rate + self.indicated_ptb > 1:
                raise ValueError("spontaneous plus indicated preterm rate exceeds 1")
        if self.retention[1] > self.retention[0]:
            raise ValueError("retention at T3 cannot exceed retention at T1")
        unknown = set(self.effect_sizes) - set(RISK_INDICATORS)
        if unknown:
            raise ValueError(f"unknown effect sizes: {sorted(unknown)}")
        if any(not m > 0 for m in self.effect_sizes.values()):
            raise ValueError("odds multipliers must be positive")

    @property
    def sptb_rates(self) -> tuple[float, float]:
        """(nulliparous, multiparous) spontaneous preterm rates."""
        if self.nulliparous_sptb is None or self.multiparous_sptb is None:
            return self.overall_sptb, self.overall_sptb
        return self.nulliparous_sptb, self.multiparous_sptb


def _num(values, name):
    token = values.get(name)
    if token is None:
        return None
    return float(str(token).lstrip("≤≥"))


RISK_INDICATORS: dict[str, Callable[[Mapping[str, str | None]], bool]] = {
    "prior_ptb": lambda v: v.get("PRETERM") == "1",
    "short_cervix": lambda v: (_num(v, "BPCRVLT") or 99) < 25,
    "smoking": lambda v: v.get("BPSMOKE") == "1",
    "age_extreme": lambda v: (_num(v, "AGEMOM") or 26) < 18 or (_num(v, "AGEMOM") or 26) >= 35,
}


# -- per-feature value generators (u ~ U(0,1), parity known) ----------------


def _pick(u: float, tokens: tuple[str, ...], probs: tuple[float, ...]) -> str:
    return tokens[min(int(np.searchsorted(np.cumsum(probs), u * sum(probs), side="right")), len(tokens) - 1)]


def _bern(p: float) -> Callable[[float, bool], str]:
    return lambda u, nullip: "1" if u < p else "0"


def _clamped_int(mean, sd, lo, hi) -> Callable[[float, bool], str]:
    def gen(u, nullip):
        x = int(round(mean + sd * _Z(min(max(u, 1e-9), 1 - 1e-9))))
        if x <= lo:
            return f"≤{lo}"
        if x >= hi:
            return f"≥{hi}"
        return str(x)

    return gen


def _normal(mean, sd, lo, hi, digits=1) -> Callable[[float, bool], str]:
    def gen(u, nullip):
        x = mean + sd * _Z(min(max(u, 1e-9), 1 - 1e-9))
        return f"{min(max(x, lo), hi):.{digits}f}"

    return gen


def _tokens(tokens, probs, nullip_token=None) -> Callable[[float, bool], str]:
    def gen(u, nullip):
        if nullip and nullip_token is not None:
            return nullip_token
        return _pick(u, tokens, probs)

    return gen


SPECIAL: dict[str, Callable[[float, bool], str]] = {
    "AGEMOM": _clamped_int(26, 6, 17, 40),
    "SCHOOLYR": _clamped_int(12.5, 2.2, 8, 17),
    "BPMARITL": _tokens(("1", "2", "3", "4"), (0.55, 0.3, 0.1, 0.05)),
    "BPPHONE": _bern(0.88),
    "BPCAR": _bern(0.8),
    "BPINCOME": _bern(0.35),
    "BPWORK": _bern(0.5),
    "BPKIDS": _tokens(("0", "1", "2", "2-3", "3", ">3"), (0.35, 0.3, 0.15, 0.05, 0.08, 0.07), "0"),
    "PRETERM": _bern(0.15),
    "BPINDUCE": _tokens(("0", "1", "2", "3"), (0.75, 0.15, 0.06, 0.04)),
    "SECAB": _tokens(("0", "1"), (0.93, 0.07)),
    "LASTPREG": _tokens(tuple(str(i) for i in range(16)), (0.08,) + (0.92 / 15,) * 15),
    "BPLOWER": _tokens(("1", "2", "3"), (0.9, 0.07, 0.03)),
    "BPHYPER": _bern(0.05),
    "BPABD": _bern(0.02),
    "BPFIBR": _bern(0.03),
    "BPINFEC": _bern(0.1),
    "PYELO": _bern(0.02),
    "BPSMOKE": _bern(0.22),
    "BPJOB": _bern(0.5),
    "BPSTAND": _bern(0.15),
    "BPBREAK": _bern(0.85),
    "BPVIBES": _bern(0.05),
    "BPHRS": _normal(30, 15, 0, 80, 0),
    "HEIGHT": _normal(64, 2.8, 52, 74),
    "WGTPRE": _normal(68, 15, 30, 150),
    "BPCRVLT": _normal(36, 8, 5, 60),
    "BPURINE": _tokens(("0", "1", "2"), (0.9, 0.07, 0.03)),
    "OLIGO": _bern(0.01),
    "BPVAG2ND": _bern(0.05),
    "PERBLD": _bern(0.05),
}


def _feature_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode()), 1])


def _generic(spec: FeatureSpec, seed: int) -> Callable[[float, bool], str]:
    rng = _feature_rng(seed, spec.name)
    if spec.kind == "yesno":
        return _bern(float(rng.uniform(0.02, 0.25)))
    if spec.kind == "categorical":
        return _tokens(spec.levels, tuple(rng.dirichlet(np.full(len(spec.levels), 2.0))))
    lo, hi = spec.lower, spec.upper
    if spec.kind == "ordinal":
        return lambda u, nullip: str(int(min(lo + math.floor(u * (hi - lo + 1)), hi)))
    return lambda u, nullip: f"{lo + u * (hi - lo):.1f}"


def _weights(u1: float, u3: float, wgtpre: float) -> tuple[str, str]:
    v1 = min(max(wgtpre + 5 + 2 * _Z(min(max(u1, 1e-9), 1 - 1e-9)), 35), 160)
    v3 = min(max(v1 + 2.5 + 1.5 * _Z(min(max(u3, 1e-9), 1 - 1e-9)), 35), 170)
    return f"{v1:.1f}", f"{v3:.1f}"


def _calibrate(scores: np.ndarray, rate: float) -> float:
    """Intercept a with mean(sigmoid(a + scores)) == rate."""
    if len(scores) == 0 or rate <= 0 or rate >= 1:
        return -math.inf if rate <= 0 else math.inf
    f = lambda a: float(np.mean(1 / (1 + np.exp(-(a + scores))))) - rate
    return brentq(f, -50, 50, xtol=1e-12)


def generate_cohort(cfg: SynthConfig, registry: FeatureRegistry) -> Cohort:
    """Draw a synthetic cohort over ``registry``'s features.

    Each patient uses its own random stream, so results do not depend on
    generation order.
    """
    if len(registry) == 0:
        raise ValueError("registry is empty")
    generators = {s.name: SPECIAL.get(s.name) or _generic(s, cfg.seed) for s in registry}
    history = {s.name for s in registry if s.group in HISTORY_GROUPS}
    names = registry.names

    rows = []
    for i in range(cfg.n_patients):
        rng = np.random.default_rng([cfg.seed, i, 0])
        u = rng.random(len(names))
        extra = rng.random(6)  # parity, outcome, subtype, retention, weight noise x2
        nullip = bool(extra[0] < cfg.nulliparous_fraction)
        values: dict[str, str | None] = {}
        for name, ui in zip(names, u):
            if nullip and name in history:
                values[name] = MISSING
            else:
                values[name] = generators[name](float(ui), nullip)
        if "WGTPRE" in values and values["WGTPRE"] is not None:
            v1, v3 = _weights(extra[4], extra[5], float(values["WGTPRE"]))
            if "WEIGHTV1" in values:
                values["WEIGHTV1"] = v1
            if "WEIGHTV3" in values:
                values["WEIGHTV3"] = v3
        if "CIGSPRE" in values and values.get("BPSMOKE") == "0":
            values["CIGSPRE"] = "0"
        score = sum(
            math.log(cfg.effect_sizes.get(k, 1.0)) * RISK_INDICATORS[k](values) for k in RISK_INDICATORS
        )
        rows.append((values, nullip, score, extra))

    null_rate, multi_rate = cfg.sptb_rates
    scores = np.array([r[2] for r in rows])
    is_null = np.array([r[1] for r in rows], dtype=bool)
    a_null = _calibrate(scores[is_null], null_rate)
    a_multi = _calibrate(scores[~is_null], multi_rate)

    r1, r3 = cfg.retention
    patients = []
    for i, (values, nullip, score, extra) in enumerate(rows):
        rate = null_rate if nullip else multi_rate
        p_sptb = 1 / (1 + math.exp(-((a_null if nullip else a_multi) + score)))
        q_ind = cfg.indicated_ptb / (1 - rate) if rate < 1 else 0.0
        if extra[1] < p_sptb:
            outcome, subtype = "preterm", "spontaneous"
        elif extra[2] < q_ind:
            outcome, subtype = "preterm", "indicated"
        else:
            outcome, subtype = "fullterm", "n/a"
        last = Tick.T3 if extra[3] < r3 else Tick.T1 if extra[3] < r1 else Tick.T0
        patients.append(
            Patient(f"P{i + 1:05d}", values, outcome, subtype, "nulliparous" if nullip else "multiparous", last)
        )
    cohort = Cohort(tuple(patients))
    return inject_missingness(cohort, registry, cfg.missing_rate, cfg.seed, cfg.sparse_features)


def inject_missingness(
    cohort: Cohort,
    registry: FeatureRegistry,
    rate: float,
    seed: int = 0,
    per_feature: Mapping[str, float] | None = None,
) -> Cohort:
    """Blank observed cells at random.

    Features completed by a fixed default (structurally absent, e.g. "no
    infection") are blanked as a whole group per patient with probability
    ``rate``; every other cell is blanked independently with probability
    ``rate`` (or its ``per_feature`` override).
    """
    if not 0 <= rate < 1:
        raise ValueError("rate must be in [0, 1)")
    per_feature = dict(per_feature or {})
    if rate == 0 and not any(per_feature.values()):
        return cohort
    names = registry.names
    block_groups = sorted({s.group for s in registry if s.missing.kind == "default"})
    in_block = {s.name: s.group for s in registry if s.missing.kind == "default"}
    cell_rates = np.array([per_feature.get(n, rate) for n in names])

    patients = []
    for i, p in enumerate(cohort.patients):
        rng = np.random.default_rng([seed, i, 3])
        u = rng.random(len(names))
        blank_group = dict(zip(block_groups, rng.random(len(block_groups)) < rate))
        values = dict(p.values)
        for name, ui, r in zip(names, u, cell_rates):
            group = in_block.get(name)
            hit = blank_group[group] if group is not None and name not in per_feature else ui < r
            if hit:
                values[name] = MISSING
        patients.append(Patient(p.id, values, p.outcome, p.subtype, p.parity, p.last_tick))
    return Cohort(tuple(patients))
