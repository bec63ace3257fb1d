"""Creasy risk-of-preterm-delivery (RPD) point scorer.

Factors are boolean predicates over encoded feature values, e.g.
``BPINCOME == 1 and SCHOOLYR in (13, 14)``.  The grammar is a small subset
of Python expressions: ``and``/``or``, comparisons (chains allowed),
``in``/``not in`` against a literal tuple, ``+``/``-`` and numeric
literals.  A comparison touching a missing value is false.
"""

from __future__ import annotations

import ast
import operator
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .preprocess import column_names, encode_record
from .schema import FeatureRegistry, Tick

CATEGORIES = ("socioeconomic", "past_history", "daily_habits", "current_pregnancy")
POINT_VALUES = (1, 2, 3, 4, 5, 10)
STATUSES = ("active", "discounted")
CUTOFFS = (7, 13)

_CMP = {
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
}
_BIN = {ast.Add: operator.add, ast.Sub: operator.sub}


class FactorTableError(ValueError):
    pass


class Predicate:
    def __init__(self, text: str):
        self.text = text.strip()
        try:
            self._tree = ast.parse(self.text, mode="eval").body
        except SyntaxError as exc:
            raise FactorTableError(f"cannot parse predicate {self.text!r}: {exc.msg}") from None
        self.names: frozenset[str] = frozenset(self._check(self._tree))

    def _check(self, node) -> set[str]:
        if isinstance(node, ast.BoolOp):
            return set().union(*(self._check(v) for v in node.values))
        if isinstance(node, ast.Compare):
            for op, right in zip(node.ops, node.comparators):
                if isinstance(op, (ast.In, ast.NotIn)):
                    if not isinstance(right, (ast.Tuple, ast.Set, ast.List)):
                        raise FactorTableError(f"{self.text!r}: 'in' needs a literal tuple")
                    for elt in right.elts:
                        self._literal(elt)
                elif type(op) not in _CMP:
                    raise FactorTableError(f"{self.text!r}: unsupported comparison")
            names = self._check_value(node.left)
            for right in node.comparators:
                if not isinstance(right, (ast.Tuple, ast.Set, ast.List)):
                    names |= self._check_value(right)
            return names
        raise FactorTableError(f"{self.text!r}: expected a comparison or and/or expression")

    def _check_value(self, node) -> set[str]:
        if isinstance(node, ast.Name):
            return {node.id}
        if isinstance(node, ast.BinOp) and type(node.op) in _BIN:
            return self._check_value(node.left) | self._check_value(node.right)
        self._literal(node)
        return set()

    def _literal(self, node) -> float:
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -self._literal(node.operand)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        raise FactorTableError(f"{self.text!r}: unsupported expression")

    def __call__(self, record: Mapping[str, float | None]) -> bool:
        return bool(self._eval(self._tree, record))

    def _eval(self, node, record):
        if isinstance(node, ast.BoolOp):
            if isinstance(node.op, ast.And):
                return all(self._eval(v, record) for v in node.values)
            return any(self._eval(v, record) for v in node.values)
        left = self._value(node.left, record)
        for op, right_node in zip(node.ops, node.comparators):
            if isinstance(op, (ast.In, ast.NotIn)):
                if left is None:
                    return False
                members = {self._literal(e) for e in right_node.elts}
                ok = (left in members) == isinstance(op, ast.In)
                right = left
            else:
                right = self._value(right_node, record)
                if left is None or right is None:
                    return False
                ok = _CMP[type(op)](left, right)
            if not ok:
                return False
            left = right
        return True

    def _value(self, node, record):
        if isinstance(node, ast.Name):
            return record.get(node.id)
        if isinstance(node, ast.BinOp):
            a = self._value(node.left, record)
            b = self._value(node.right, record)
            if a is None or b is None:
                return None
            return _BIN[type(node.op)](a, b)
        return self._literal(node)

    def __repr__(self) -> str:
        return f"Predicate({self.text!r})"


@dataclass(frozen=True)
class RpdFactor:
    name: str
    category: str
    points: int
    available_from: Tick
    status: str = "active"
    predicate: Predicate | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise FactorTableError(f"{self.name}: unknown category {self.category!r}")
        if self.points not in POINT_VALUES:
            raise FactorTableError(f"{self.name}: points must be one of {POINT_VALUES}")
        if self.status not in STATUSES:
            raise FactorTableError(f"{self.name}: unknown status {self.status!r}")
        if self.status == "active" and self.predicate is None:
            raise FactorTableError(f"{self.name}: active factor needs a predicate")

    @property
    def discounted(self) -> bool:
        return self.status == "discounted"

    def triggered(self, record: Mapping[str, float | None], tick: Tick) -> bool:
        if self.discounted or self.available_from > tick:
            return False
        return self.predicate(record)


@dataclass(frozen=True)
class FactorTable:
    factors: tuple[RpdFactor, ...] = ()

    def __len__(self) -> int:
        return len(self.factors)

    def __iter__(self):
        return iter(self.factors)

    @property
    def discounted(self) -> tuple[RpdFactor, ...]:
        return tuple(f for f in self.factors if f.discounted)


def parse_factor_table(text: str, registry: FeatureRegistry | None = None) -> FactorTable:
    """Parse ``name | category | points | available_from | status | predicate`` lines.

    With a registry, every predicate name must be an encoded column of a
    schema feature, and ``available_from`` may not precede the tick of any
    referenced feature.
    """
    known: dict[str, Tick] = {}
    if registry is not None:
        for spec in registry:
            for col in column_names(spec):
                known[col] = spec.tick
    factors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 6:
            raise FactorTableError(f"line {lineno}: expected 6 '|' separated fields")
        name, category, points, tick, status, expr = parts
        try:
            predicate = None if expr.upper() == "N/A" else Predicate(expr)
            factor = RpdFactor(name, category, int(points), Tick.parse(tick), status, predicate)
        except ValueError as exc:
            raise FactorTableError(f"line {lineno}: {exc}") from None
        if registry is not None and predicate is not None:
            for ref in sorted(predicate.names):
                if ref not in known:
                    raise FactorTableError(f"line {lineno}: unknown feature {ref!r} in {name!r}")
                if known[ref] > factor.available_from:
                    raise FactorTableError(
                        f"line {lineno}: {name!r} uses {ref} ({known[ref].name}) before it exists"
                    )
        factors.append(factor)
    return FactorTable(tuple(factors))


def default_factor_table_path() -> Path:
    return Path(__file__).parent / "data" / "rpd_factors.txt"


def load_factor_table(path: str | Path | None = None, registry: FeatureRegistry | None = None) -> FactorTable:
    """Load a factor table; without a path, the built-in Creasy transcription."""
    path = default_factor_table_path() if path is None else Path(path)
    return parse_factor_table(path.read_text(encoding="utf-8"), registry)


@dataclass(frozen=True)
class RpdAssessment:
    score: int
    triggered: tuple[str, ...]
    band: str


def classify_original(score: int) -> str:
    """0-5 low, 6-9 medium, 10 and above high."""
    if score < 0:
        raise ValueError("score must be nonnegative")
    if score <= 5:
        return "low"
    if score <= 9:
        return "medium"
    return "high"


def classify_cutoff(score: int, cutoff: int) -> str:
    """Two-band classification: ``score >= cutoff`` is high risk."""
    if cutoff < 1:
        raise ValueError("cutoff must be positive")
    return "high" if score >= cutoff else "low"


def score_patient(
    record: Mapping[str, object],
    tick: Tick | str,
    table: FactorTable | Iterable[RpdFactor],
    registry: FeatureRegistry | None = None,
) -> RpdAssessment:
    """Sum the points of every factor triggered at ``tick``.

    ``record`` holds encoded values by column name (``None`` for missing);
    pass ``registry`` to score raw tokens instead.
    """
    tick = Tick.parse(tick)
    if registry is not None:
        record = encode_record(registry.up_to(tick), record)
    hits = [f for f in table if f.triggered(record, tick)]
    score = sum(f.points for f in hits)
    return RpdAssessment(score, tuple(f.name for f in hits), classify_original(score))
