"""Command-line batch runner.

Subcommands::

    pretermpred run CONFIG [-o DIR]
    pretermpred synth CONFIG -o DIR
    pretermpred score-rpd COHORT.csv --cutoff {7,13,original} --tick {T0,T1,T3}

Exit status is 0 on success, 1 for invalid configuration or input, 2 for a
failure while running.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .algorithms import ALGORITHMS, AlgorithmOptions, make_family
from .evaluation import ExperimentReport, InfeasibleSplitError, SplitPlan, run_experiment
from .preprocess import EncodingError, encode_record
from .report import render_table, to_csv, to_jsonl, write_atomic
from .rpd import FactorTableError, classify_cutoff, classify_original, load_factor_table, score_patient
from .schema import (
    DegenerateDatasetError,
    FeatureRegistry,
    ProblemVariant,
    SchemaError,
    Tick,
    default_registry,
    default_schema_path,
    derive_labels,
    load_schema,
    read_cohort_csv,
    slice_by_tick,
    write_cohort_csv,
)
from .synth import DEFAULT_EFFECTS, NON_CLINICAL_NOTE, SynthConfig, generate_cohort

log = logging.getLogger("pretermpred")

FORMATS = ("csv", "jsonl", "table")
FILE_NAMES = {"csv": "report.csv", "jsonl": "report.jsonl", "table": "report.txt"}
RESAMPLE_CHOICES = ("default", "on", "off")


class ConfigError(ValueError):
    """The configuration file is invalid."""


@dataclass(frozen=True)
class ExperimentConfig:
    source: str = "synth"  # "synth" or "csv"
    cohort_path: Path | None = None
    schema_path: Path | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    ticks: tuple[Tick, ...] = (Tick.T0, Tick.T1, Tick.T3)
    variants: tuple[ProblemVariant, ...] = tuple(ProblemVariant)
    algorithms: tuple[str, ...] = ALGORITHMS
    plan: SplitPlan = field(default_factory=SplitPlan)
    sparse_threshold: float = 0.5
    resample: dict = field(default_factory=dict)  # algorithm -> bool; absent means the algorithm default
    adasyn_k: int = 5
    options: AlgorithmOptions = field(default_factory=AlgorithmOptions)
    formats: tuple[str, ...] = FORMATS
    seed: int = 0


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in _list(text))


def _nonempty(name, items):
    if not items:
        raise ConfigError(f"{name} must not be empty")
    return tuple(items)


def parse_config(text: str, base_dir: Path = Path("."), seed: int | None = None) -> ExperimentConfig:
    """Parse an INI experiment description.  ``seed`` overrides the file's seed."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    known = {"experiment", "dataset", "synth", "split", "preprocess", "grid"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    get = lambda sec, key, default=None: cp.get(sec, key, fallback=default) if cp.has_section(sec) else default

    try:
        exp_seed = int(get("experiment", "seed", "0")) if seed is None else int(seed)
        ticks = _nonempty("ticks", [Tick.parse(t) for t in _list(get("experiment", "ticks", "T0,T1,T3"))])
        variants = _nonempty(
            "variants",
            [ProblemVariant.parse(v) for v in _list(get("experiment", "variants", ",".join(v.value for v in ProblemVariant)))],
        )
        algorithms = _nonempty("algorithms", _list(get("experiment", "algorithms", ",".join(ALGORITHMS))))
        for a in algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; expected one of {', '.join(ALGORITHMS)}")
        formats = _nonempty("formats", _list(get("experiment", "formats", ",".join(FORMATS))))
        for f in formats:
            if f not in FORMATS:
                raise ConfigError(f"unknown format {f!r}")

        source = get("dataset", "source", "synth")
        if source not in ("synth", "csv"):
            raise ConfigError(f"dataset source must be synth or csv, not {source!r}")
        cohort = get("dataset", "cohort")
        if source == "csv" and not cohort:
            raise ConfigError("dataset source csv needs a cohort path")
        schema = get("dataset", "schema")

        synth_kwargs = {}
        effects = dict(DEFAULT_EFFECTS)
        if cp.has_section("synth"):
            for key, value in cp.items("synth"):
                if key.startswith("effect."):
                    effects[key[len("effect."):]] = float(value)
                elif key == "n_patients":
                    synth_kwargs[key] = int(value)
                elif key in ("overall_sptb", "nulliparous_sptb", "multiparous_sptb", "indicated_ptb",
                             "nulliparous_fraction", "missing_rate"):
                    synth_kwargs[key] = float(value)
                elif key == "retention":
                    r = _floats(value)
                    if len(r) != 2:
                        raise ConfigError("retention needs two values (T1, T3)")
                    synth_kwargs[key] = r
                elif key == "seed":
                    synth_kwargs[key] = int(value)
                else:
                    raise ConfigError(f"unknown synth option {key!r}")
        synth_kwargs.setdefault("seed", exp_seed)
        synth = SynthConfig(effect_sizes=effects, **synth_kwargs)

        plan = SplitPlan(
            test_fraction=float(get("split", "test_fraction", "0.2")),
            seed=exp_seed,
            fold_count=int(get("split", "fold_count", "5")),
            repeat_count=int(get("split", "repeat_count", "5")),
        )

        resample = {}
        if cp.has_section("preprocess"):
            for key, value in cp.items("preprocess"):
                if key.startswith("resample."):
                    algo = key[len("resample."):]
                    if algo not in ALGORITHMS:
                        raise ConfigError(f"unknown algorithm in {key!r}")
                    if value not in RESAMPLE_CHOICES:
                        raise ConfigError(f"{key} must be one of {', '.join(RESAMPLE_CHOICES)}")
                    if value != "default":
                        resample[algo] = value == "on"
                elif key not in ("sparse_threshold", "adasyn_k"):
                    raise ConfigError(f"unknown preprocess option {key!r}")
        sparse = float(get("preprocess", "sparse_threshold", "0.5"))
        if not 0 <= sparse <= 1:
            raise ConfigError("sparse_threshold must lie in [0, 1]")

        defaults = AlgorithmOptions()
        options = AlgorithmOptions(
            C_grid=_floats(get("grid", "C", ",".join(map(str, defaults.C_grid)))),
            gamma_scales=_floats(get("grid", "gamma_scales", ",".join(map(str, defaults.gamma_scales)))),
            n_lambda=int(get("grid", "n_lambda", str(defaults.n_lambda))),
            lambda_min_ratio=float(get("grid", "lambda_min_ratio", str(defaults.lambda_min_ratio))),
            elastic_net_alpha=float(get("grid", "elastic_net_alpha", str(defaults.elastic_net_alpha))),
        )
        if not options.C_grid or not options.gamma_scales:
            raise ConfigError("grids must not be empty")
    except ConfigError:
        raise
    except (ValueError, SchemaError) as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        source=source,
        cohort_path=(base_dir / cohort) if cohort else None,
        schema_path=(base_dir / schema) if schema else None,
        synth=synth,
        ticks=tuple(sorted(set(ticks))),
        variants=tuple(dict.fromkeys(variants)),
        algorithms=tuple(dict.fromkeys(algorithms)),
        plan=plan,
        sparse_threshold=sparse,
        resample=resample,
        adasyn_k=int(get("preprocess", "adasyn_k", "5")),
        options=options,
        formats=tuple(dict.fromkeys(formats)),
        seed=exp_seed,
    )


def load_config(path: str | Path, seed: int | None = None) -> tuple[ExperimentConfig, str]:
    """Parse a config file; also return a SHA-256 of its bytes plus any seed override."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    digest = hashlib.sha256(raw + (b"" if seed is None else f"\nseed-override={seed}".encode())).hexdigest()
    return parse_config(raw.decode("utf-8"), path.parent, seed), digest


def _registry(cfg: ExperimentConfig) -> FeatureRegistry:
    return load_schema(cfg.schema_path) if cfg.schema_path else default_registry()


def _cohort(cfg: ExperimentConfig, registry: FeatureRegistry):
    if cfg.source == "csv":
        cohort = read_cohort_csv(cfg.cohort_path, registry)
    else:
        cohort = generate_cohort(cfg.synth, registry)
    cohort.validate(registry)
    return cohort


def _run_cell(task):
    dataset, algorithm, cfg = task
    try:
        return run_experiment(
            dataset,
            make_family(algorithm, cfg.options),
            cfg.plan,
            sparse_threshold=cfg.sparse_threshold,
            resample=cfg.resample.get(algorithm),
            adasyn_k=cfg.adasyn_k,
        )
    except RuntimeError as exc:
        if isinstance(exc.__cause__, (InfeasibleSplitError, DegenerateDatasetError)):
            return ExperimentReport(
                variant=dataset.variant.value if hasattr(dataset.variant, "value") else str(dataset.variant),
                tick=dataset.view.tick.name,
                algorithm=algorithm,
                n_pos=dataset.n_pos,
                n_neg=dataset.n_neg,
                skipped=str(exc.__cause__),
            )
        raise


def run_cells(cfg: ExperimentConfig, cohort, registry, jobs: int = 1) -> list[ExperimentReport]:
    """One report per (variant, tick, algorithm) in config order.

    Cells that cannot be formed or split are returned as skipped reports.
    """
    tasks, slots = [], []
    for variant in cfg.variants:
        for tick in cfg.ticks:
            view = slice_by_tick(cohort, registry, tick)
            try:
                dataset = derive_labels(view, variant)
            except DegenerateDatasetError as exc:
                log.warning("skipping %s/%s: %s", variant.value, tick.name, exc)
                for algo in cfg.algorithms:
                    slots.append(ExperimentReport(variant.value, tick.name, algo, skipped=str(exc)))
                continue
            for algo in cfg.algorithms:
                slots.append(len(tasks))
                tasks.append((dataset, algo, cfg))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    reports = [results[s] if isinstance(s, int) else s for s in slots]
    for r in reports:
        if r.skipped:
            log.warning("skipped %s/%s/%s: %s", r.variant, r.tick, r.algorithm, r.skipped)
    return reports


def versions() -> dict[str, str]:
    return {
        "pretermpred": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _manifest(cfg: ExperimentConfig, digest: str, reports, outputs) -> str:
    manifest = {
        "config_sha256": digest,
        "seed": cfg.seed,
        "versions": versions(),
        "data": NON_CLINICAL_NOTE if cfg.source == "synth" else f"csv: {cfg.cohort_path.name}",
        "cells": len(reports),
        "skipped": [f"{r.variant}/{r.tick}/{r.algorithm}" for r in reports if r.skipped],
        "outputs": list(outputs),
    }
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def render(reports, fmt: str, ticks=None, note=None) -> str:
    if fmt == "csv":
        return to_csv(reports)
    if fmt == "jsonl":
        return to_jsonl(reports)
    return render_table(reports, ticks, note)


# -- subcommands ------------------------------------------------------------


def cmd_run(args) -> int:
    cfg, digest = load_config(args.config, args.seed)
    formats = (args.format,) if args.format else cfg.formats
    registry = _registry(cfg)
    cohort = _cohort(cfg, registry)
    reports = run_cells(cfg, cohort, registry, args.jobs)
    note = NON_CLINICAL_NOTE if cfg.source == "synth" else None
    ticks = [t.name for t in cfg.ticks]
    out = Path(args.output)
    written = []
    for fmt in formats:
        write_atomic(out / FILE_NAMES[fmt], render(reports, fmt, ticks, note))
        written.append(FILE_NAMES[fmt])
    write_atomic(out / "manifest.json", _manifest(cfg, digest, reports, written))
    sys.stdout.write(render(reports, formats[0], ticks, note))
    return 0


def cmd_synth(args) -> int:
    cfg, digest = load_config(args.config, args.seed)
    registry = _registry(cfg)
    cohort = generate_cohort(cfg.synth, registry)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / ".cohort.csv.part"
    write_cohort_csv(cohort, tmp, registry)
    tmp.replace(out / "cohort.csv")
    schema_text = Path(cfg.schema_path or default_schema_path()).read_text(encoding="utf-8")
    write_atomic(out / "schema.txt", schema_text)
    manifest = {
        "config_sha256": digest,
        "seed": cfg.synth.seed,
        "versions": versions(),
        "data": NON_CLINICAL_NOTE,
        "n_patients": len(cohort.patients),
    }
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(f"wrote {len(cohort.patients)} synthetic patients ({NON_CLINICAL_NOTE}) to {out}\n")
    return 0


def cmd_score_rpd(args) -> int:
    registry = load_schema(args.schema) if args.schema else default_registry()
    table = load_factor_table(args.table, registry) if args.table else load_factor_table(registry=registry)
    cohort = read_cohort_csv(args.cohort, registry)
    tick = Tick.parse(args.tick)
    features = registry.up_to(tick)
    rows = []
    for p in cohort.patients:
        if p.last_tick < tick:
            continue
        a = score_patient(encode_record(features, p.values), tick, table)
        band = classify_original(a.score) if args.cutoff == "original" else classify_cutoff(a.score, int(args.cutoff))
        rows.append({"patient_id": p.id, "score": a.score, "band": band, "triggered": list(a.triggered)})
    fmt = args.format or "csv"
    if fmt == "jsonl":
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    elif fmt == "csv":
        text = "patient_id,score,band,triggered\n" + "".join(
            f"{r['patient_id']},{r['score']},{r['band']},{';'.join(r['triggered'])}\n" for r in rows
        )
    else:
        width = max([len("patient"), *(len(r["patient_id"]) for r in rows)])
        text = f"{'patient'.ljust(width)} | score | band\n" + "".join(
            f"{r['patient_id'].ljust(width)} | {r['score']:>5} | {r['band']}\n" for r in rows
        )
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def _cutoff(text: str) -> str:
    if text == "original":
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("cutoff must be 7, 13, another positive integer, or 'original'")
    if value < 1:
        raise argparse.ArgumentTypeError("cutoff must be positive")
    return str(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--format", choices=FORMATS, default=None, help="output format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pretermpred", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run the configured experiments")
    p.add_argument("config")
    p.add_argument("-o", "--output", default="results", help="report directory (default ./results)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic cohort")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score-rpd", parents=[common], help="score a cohort with the RPD table")
    p.add_argument("cohort")
    p.add_argument("--cutoff", type=_cutoff, default="original", help="7, 13 or original (default)")
    p.add_argument("--tick", choices=[t.name for t in Tick], default="T3")
    p.add_argument("--schema", default=None, help="schema descriptor (default bundled)")
    p.add_argument("--table", default=None, help="factor table descriptor (default bundled)")
    p.add_argument("-o", "--output", default=None, help="write to a file instead of stdout")
    p.set_defaults(func=cmd_score_rpd)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, SchemaError, EncodingError, FactorTableError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
