"""Feature schema, cohort container, tick slicing and label derivation.

A schema descriptor is a flat text file with one feature per line::

    # name     group  tick  kind              missing        [options]
    AGEMOM     DMG    T0    numeric(17,40)    mean           replace=<=17:17,>=40:40
    BPMARITL   DMG    T0    categorical(1,2,3,4)  mode
    BPPHONE    DMG    T0    yesno             default(0)
    WEIGHTV1   CPM    T0    numeric(30,200)   derived(offset:WGTPRE)

Blank lines and ``#`` comments are ignored.  ``kind`` is one of ``yesno``,
``categorical(levels...)``, ``numeric(min,max)`` or ``ordinal(min,max)``;
``missing`` is one of ``default(value)``, ``mode``, ``mean``,
``derived(rule:feature)`` or ``drop``.  The only option is ``replace=``, a
comma separated ``token:value`` map for non-numeric tokens such as ``>3``.
"""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MISSING = None

RESERVED_COLUMNS = ("OUTCOME", "SUBTYPE", "PARITY", "LAST_TICK")
ID_COLUMN = "PATIENT_ID"

KINDS = ("yesno", "categorical", "numeric", "ordinal")
MISSING_KINDS = ("default", "mode", "mean", "derived", "drop")
DERIVED_RULES = ("offset",)

OUTCOMES = ("fullterm", "preterm")
SUBTYPES = ("spontaneous", "indicated", "n/a")
PARITIES = ("nulliparous", "multiparous")


class SchemaError(ValueError):
    """Malformed schema descriptor or cohort file."""


class DegenerateDatasetError(ValueError):
    """A problem variant left one of the two classes empty."""


class Tick(enum.IntEnum):
    T0 = 0
    T1 = 1
    T3 = 3

    @classmethod
    def parse(cls, text: str | Tick) -> Tick:
        if isinstance(text, Tick):
            return text
        try:
            return cls[str(text).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown tick {text!r}; expected one of T0, T1, T3") from None

    def __str__(self) -> str:
        return self.name


class ProblemVariant(str, enum.Enum):
    ALL = "all"
    SPONTANEOUS_ONLY = "spontaneous_only"
    NULLIPAROUS_ONLY = "nulliparous_only"

    @classmethod
    def parse(cls, text: str | ProblemVariant) -> ProblemVariant:
        if isinstance(text, ProblemVariant):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown problem variant {text!r}; expected one of {names}") from None

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class MissingPolicy:
    kind: str
    value: str | None = None  # default(value)
    rule: str | None = None  # derived(rule:base)
    base: str | None = None

    def __str__(self) -> str:
        if self.kind == "default":
            return f"default({self.value})"
        if self.kind == "derived":
            return f"derived({self.rule}:{self.base})"
        return self.kind


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    group: str
    tick: Tick
    kind: str
    missing: MissingPolicy
    levels: tuple[str, ...] = ()
    lower: float | None = None
    upper: float | None = None
    replacements: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind in ("numeric", "ordinal"):
            if self.lower is None or self.upper is None or not self.lower < self.upper:
                raise SchemaError(f"{self.name}: range requires min < max")
        if self.kind == "categorical":
            if not self.levels:
                raise SchemaError(f"{self.name}: categorical feature without levels")
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"{self.name}: duplicate categorical levels")
        if self.missing.kind not in MISSING_KINDS:
            raise SchemaError(f"{self.name}: unknown missing policy {self.missing.kind!r}")

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("numeric", "ordinal")

    def describe(self) -> str:
        """Descriptor line for this spec (inverse of the parser)."""
        if self.kind == "categorical":
            kind = f"categorical({','.join(self.levels)})"
        elif self.is_numeric:
            kind = f"{self.kind}({_fmt_num(self.lower)},{_fmt_num(self.upper)})"
        else:
            kind = self.kind
        parts = [self.name, self.group, self.tick.name, kind, str(self.missing)]
        if self.replacements:
            parts.append("replace=" + ",".join(f"{k}:{_fmt_num(v)}" for k, v in self.replacements.items()))
        return " ".join(parts)


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


class FeatureRegistry:
    """Ordered collection of :class:`FeatureSpec` with tick and group lookups."""

    def __init__(self, specs: Iterable[FeatureSpec] = ()):
        self._specs: tuple[FeatureSpec, ...] = tuple(specs)
        self._by_name: dict[str, FeatureSpec] = {}
        group_tick: dict[str, Tick] = {}
        for spec in self._specs:
            if spec.name in self._by_name:
                raise SchemaError(f"duplicate feature name {spec.name!r}")
            if spec.name in RESERVED_COLUMNS or spec.name == ID_COLUMN:
                raise SchemaError(f"feature name {spec.name!r} is reserved")
            known = group_tick.setdefault(spec.group, spec.tick)
            if known != spec.tick:
                raise SchemaError(
                    f"group {spec.group!r} spans ticks {known.name} and {spec.tick.name}"
                )
            self._by_name[spec.name] = spec
        for spec in self._specs:
            if spec.missing.kind == "derived":
                base = self._by_name.get(spec.missing.base)
                if base is None or not base.is_numeric or not spec.is_numeric:
                    raise SchemaError(
                        f"{spec.name}: derived rule needs numeric base feature, got {spec.missing.base!r}"
                    )
        self._group_tick = group_tick

    def __len__(self) -> int:
        return len(self._specs)

    def __iter__(self):
        return iter(self._specs)

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> FeatureSpec:
        return self._by_name[name]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self._specs)

    @property
    def groups(self) -> dict[str, Tick]:
        return dict(self._group_tick)

    def by_group(self, group: str) -> tuple[FeatureSpec, ...]:
        return tuple(s for s in self._specs if s.group == group)

    def by_tick(self, tick: Tick | str) -> tuple[FeatureSpec, ...]:
        """Specs first collected at exactly ``tick``."""
        tick = Tick.parse(tick)
        return tuple(s for s in self._specs if s.tick == tick)

    def up_to(self, tick: Tick | str) -> tuple[FeatureSpec, ...]:
        """Specs available at ``tick`` (cumulative)."""
        tick = Tick.parse(tick)
        return tuple(s for s in self._specs if s.tick <= tick)

    def feature_count(self, tick: Tick | str) -> int:
        return len(self.up_to(tick))

    def describe(self) -> str:
        return "".join(spec.describe() + "\n" for spec in self._specs)


_CALL = re.compile(r"^(\w+)(?:\((.*)\))?$")


def _parse_float(text: str, lineno: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"line {lineno}: malformed {what} {text!r}") from None
    if not math.isfinite(value):
        raise SchemaError(f"line {lineno}: non-finite {what} {text!r}")
    return value


def parse_spec_line(line: str, lineno: int = 0) -> FeatureSpec:
    fields = line.split()
    if len(fields) < 5:
        raise SchemaError(f"line {lineno}: expected 'name group tick kind missing [options]'")
    name, group, tick_text, kind_text, missing_text, *options = fields
    try:
        tick = Tick.parse(tick_text)
    except ValueError as exc:
        raise SchemaError(f"line {lineno}: {exc}") from None

    m = _CALL.match(kind_text)
    if not m or m.group(1) not in KINDS:
        raise SchemaError(f"line {lineno}: unknown kind {kind_text!r}")
    kind, args = m.group(1), m.group(2)
    levels: tuple[str, ...] = ()
    lower = upper = None
    if kind == "categorical":
        levels = tuple(a.strip() for a in (args or "").split(",") if a.strip())
    elif kind in ("numeric", "ordinal"):
        bounds = (args or "").split(",")
        if len(bounds) != 2:
            raise SchemaError(f"line {lineno}: malformed range {kind_text!r}")
        lower = _parse_float(bounds[0], lineno, "range")
        upper = _parse_float(bounds[1], lineno, "range")
    elif args is not None:
        raise SchemaError(f"line {lineno}: kind {kind!r} takes no arguments")

    m = _CALL.match(missing_text)
    if not m or m.group(1) not in MISSING_KINDS:
        raise SchemaError(f"line {lineno}: unknown missing policy {missing_text!r}")
    pkind, pargs = m.group(1), m.group(2)
    if pkind == "default":
        if not pargs:
            raise SchemaError(f"line {lineno}: default() needs a value")
        policy = MissingPolicy("default", value=pargs.strip())
    elif pkind == "derived":
        rule, _, base = (pargs or "").partition(":")
        if rule not in DERIVED_RULES or not base:
            raise SchemaError(f"line {lineno}: malformed derived rule {missing_text!r}")
        policy = MissingPolicy("derived", rule=rule, base=base)
    else:
        if pargs is not None:
            raise SchemaError(f"line {lineno}: policy {pkind!r} takes no arguments")
        policy = MissingPolicy(pkind)

    replacements: dict[str, float] = {}
    for opt in options:
        key, _, value = opt.partition("=")
        if key != "replace" or not value:
            raise SchemaError(f"line {lineno}: unknown option {opt!r}")
        for item in value.split(","):
            token, sep, number = item.rpartition(":")
            if not sep or not token:
                raise SchemaError(f"line {lineno}: malformed replacement {item!r}")
            replacements[token] = _parse_float(number, lineno, "replacement")

    try:
        return FeatureSpec(name, group, tick, kind, policy, levels, lower, upper, replacements)
    except SchemaError as exc:
        raise SchemaError(f"line {lineno}: {exc}") from None


def parse_schema(text: str) -> FeatureRegistry:
    specs: list[FeatureSpec] = []
    seen: dict[str, int] = {}
    group_tick: dict[str, Tick] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        spec = parse_spec_line(line, lineno)
        if spec.name in seen:
            raise SchemaError(
                f"line {lineno}: duplicate feature {spec.name!r} (first declared on line {seen[spec.name]})"
            )
        if group_tick.setdefault(spec.group, spec.tick) != spec.tick:
            raise SchemaError(f"line {lineno}: group {spec.group!r} already assigned to another tick")
        seen[spec.name] = lineno
        specs.append(spec)
    try:
        return FeatureRegistry(specs)
    except SchemaError as exc:
        raise SchemaError(f"schema: {exc}") from None


def load_schema(path: str | Path) -> FeatureRegistry:
    """Parse a schema descriptor file into a :class:`FeatureRegistry`."""
    return parse_schema(Path(path).read_text(encoding="utf-8"))


def default_schema_path() -> Path:
    return Path(__file__).parent / "data" / "mfmu_schema.txt"


def default_registry() -> FeatureRegistry:
    """The bundled 316-feature schema (50 at T0, 205 by T1, 316 by T3)."""
    return load_schema(default_schema_path())


# -- cohort -----------------------------------------------------------------


@dataclass(frozen=True)
class Patient:
    id: str
    values: Mapping[str, str | None]
    outcome: str
    subtype: str
    parity: str
    last_tick: Tick = Tick.T3

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise SchemaError(f"patient {self.id}: unknown outcome {self.outcome!r}")
        if self.subtype not in SUBTYPES:
            raise SchemaError(f"patient {self.id}: unknown subtype {self.subtype!r}")
        if self.parity not in PARITIES:
            raise SchemaError(f"patient {self.id}: unknown parity {self.parity!r}")
        if (self.subtype == "n/a") != (self.outcome == "fullterm"):
            raise SchemaError(f"patient {self.id}: subtype must be n/a exactly when fullterm")

    def get(self, name: str) -> str | None:
        return self.values.get(name, MISSING)


@dataclass(frozen=True)
class Cohort:
    patients: tuple[Patient, ...]

    def __len__(self) -> int:
        return len(self.patients)

    def validate(self, registry: FeatureRegistry) -> None:
        """Check every populated cell names a schema feature and parses for its kind."""
        from .preprocess import encode_value  # local: preprocess imports this module

        for p in self.patients:
            for name, token in p.values.items():
                if name not in registry:
                    raise SchemaError(f"patient {p.id}: unknown feature {name!r}")
                if token is MISSING:
                    continue
                spec = registry[name]
                encoded = encode_value(spec, token)
                if spec.is_numeric and not spec.lower <= encoded[0] <= spec.upper:
                    raise SchemaError(
                        f"patient {p.id}: {name}={token!r} outside [{spec.lower}, {spec.upper}]"
                    )


def read_cohort_csv(path: str | Path, registry: FeatureRegistry) -> Cohort:
    """Read a cohort CSV: feature columns plus OUTCOME, SUBTYPE, PARITY, LAST_TICK.

    Empty cells are MISSING.  LAST_TICK may be empty (patient reached T3).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ("OUTCOME", "SUBTYPE", "PARITY"):
            if col not in header:
                raise SchemaError(f"{path}: missing reserved column {col}")
        unknown = [h for h in header if h not in registry and h not in RESERVED_COLUMNS and h != ID_COLUMN]
        if unknown:
            raise SchemaError(f"{path}: columns not in schema: {', '.join(unknown)}")
        features = [h for h in header if h in registry]
        patients = []
        for rowno, row in enumerate(reader, start=2):
            values = {name: (row[name] if row[name] != "" else MISSING) for name in features}
            last = row.get("LAST_TICK") or "T3"
            try:
                patients.append(
                    Patient(
                        id=row.get(ID_COLUMN) or str(rowno - 1),
                        values=values,
                        outcome=row["OUTCOME"].strip().lower(),
                        subtype=row["SUBTYPE"].strip().lower(),
                        parity=row["PARITY"].strip().lower(),
                        last_tick=Tick.parse(last),
                    )
                )
            except ValueError as exc:
                raise SchemaError(f"{path}:{rowno}: {exc}") from None
    return Cohort(tuple(patients))


def write_cohort_csv(cohort: Cohort, path: str | Path, registry: FeatureRegistry) -> None:
    header = [ID_COLUMN, *registry.names, *RESERVED_COLUMNS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for p in cohort.patients:
            cells = [p.id]
            cells.extend("" if p.get(n) is MISSING else str(p.get(n)) for n in registry.names)
            cells.extend([p.outcome, p.subtype, p.parity, p.last_tick.name])
            writer.writerow(cells)


# -- views and labels -------------------------------------------------------


@dataclass(frozen=True)
class RawView:
    """Patients still enrolled at ``tick`` with the features available by then."""

    tick: Tick
    features: tuple[FeatureSpec, ...]
    patients: tuple[Patient, ...]

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def __len__(self) -> int:
        return len(self.patients)


def slice_by_tick(cohort: Cohort, registry: FeatureRegistry, tick: Tick | str) -> RawView:
    tick = Tick.parse(tick)
    patients = tuple(p for p in cohort.patients if p.last_tick >= tick)
    return RawView(tick, registry.up_to(tick), patients)


@dataclass(frozen=True)
class LabeledRawDataset:
    view: RawView
    variant: ProblemVariant
    labels: np.ndarray  # +1 preterm, -1 fullterm
    n_excluded: int

    def __post_init__(self):
        self.labels.setflags(write=False)

    @property
    def patients(self) -> tuple[Patient, ...]:
        return self.view.patients

    @property
    def n_pos(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_neg(self) -> int:
        return int(np.sum(self.labels == -1))

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: Sequence[int]) -> LabeledRawDataset:
        idx = np.asarray(indices, dtype=int)
        view = RawView(self.view.tick, self.view.features, tuple(self.view.patients[i] for i in idx))
        return LabeledRawDataset(view, self.variant, self.labels[idx].copy(), 0)


def derive_labels(view: RawView, variant: ProblemVariant | str) -> LabeledRawDataset:
    """Label a view for one problem variant.

    ``spontaneous_only`` drops indicated-preterm patients entirely; they are
    neither positives nor negatives.  ``nulliparous_only`` restricts the
    population to nulliparous patients.
    """
    variant = ProblemVariant.parse(variant)
    kept = []
    excluded = 0
    for p in view.patients:
        if variant is ProblemVariant.SPONTANEOUS_ONLY and p.subtype == "indicated":
            excluded += 1
            continue
        if variant is ProblemVariant.NULLIPAROUS_ONLY and p.parity != "nulliparous":
            excluded += 1
            continue
        kept.append(p)
    labels = np.array([1 if p.outcome == "preterm" else -1 for p in kept], dtype=np.int8)
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0 or n_pos == len(labels):
        raise DegenerateDatasetError(
            f"variant {variant} at {view.tick.name}: {n_pos} positives / {len(labels) - n_pos} negatives"
        )
    sub = RawView(view.tick, view.features, tuple(kept))
    return LabeledRawDataset(sub, variant, labels, excluded)
