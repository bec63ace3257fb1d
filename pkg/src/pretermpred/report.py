"""Experiment report serialization: CSV, JSON lines and a plain-text table."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .algorithms import ALGORITHMS
from .evaluation import ExperimentReport
from .schema import ProblemVariant, Tick

METRICS = ("sensitivity", "specificity", "g_mean")
BLOCK_TITLES = {"sensitivity": "Sensitivity", "specificity": "Specificity", "g_mean": "g-mean"}
NA = "N/A"

CSV_FIELDS = (
    "variant", "tick", "algorithm", "status", "n_pos", "n_neg", "runs",
    "sensitivity_mean", "sensitivity_std", "specificity_mean", "specificity_std",
    "g_mean_mean", "g_mean_std",
)


def _order(reports: Iterable[ExperimentReport]) -> list[ExperimentReport]:
    """Canonical order: variant, tick, algorithm (known names first)."""
    variants = [v.value for v in ProblemVariant]
    algos = list(ALGORITHMS)

    def key(r):
        v = variants.index(r.variant) if r.variant in variants else len(variants)
        a = algos.index(r.algorithm) if r.algorithm in algos else len(algos)
        return (v, r.variant, int(Tick.parse(r.tick)), a, r.algorithm)

    return sorted(reports, key=key)


def _num(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def to_csv(reports: Sequence[ExperimentReport]) -> str:
    """One summary row per report; skipped cells have status ``skipped: reason``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in _order(reports):
        row = [r.variant, r.tick, r.algorithm, f"skipped: {r.skipped}" if r.skipped else "ok",
               r.n_pos, r.n_neg, len(r.runs)]
        for m in METRICS:
            row += [_num(r.mean(m)), _num(r.std(m))] if r.runs else ["", ""]
        w.writerow(row)
    return buf.getvalue()


def report_record(r: ExperimentReport) -> dict:
    """JSON-ready record with per-run detail."""
    rec = {
        "variant": r.variant,
        "tick": r.tick,
        "algorithm": r.algorithm,
        "n_pos": r.n_pos,
        "n_neg": r.n_neg,
        "skipped": r.skipped,
        "summary": {m: {"mean": r.mean(m), "std": r.std(m)} for m in METRICS} if r.runs else None,
        "runs": [
            {
                "run": run.run_index,
                "confusion": {"tp": run.confusion.tp, "fp": run.confusion.fp,
                              "tn": run.confusion.tn, "fn": run.confusion.fn},
                "metrics": {m: getattr(run.metrics, m) for m in METRICS},
                "flags": list(run.metrics.flags),
                "params": {k: run.params[k] for k in sorted(run.params)},
                "n_train": run.n_train,
                "n_test": run.n_test,
                "dropped_columns": list(run.dropped_columns),
                "notes": list(run.notes),
            }
            for run in r.runs
        ],
    }
    return rec


def to_jsonl(reports: Sequence[ExperimentReport]) -> str:
    return "".join(json.dumps(report_record(r), sort_keys=True) + "\n" for r in _order(reports))


def _cell(r: ExperimentReport | None, metric: str) -> str:
    if r is None or r.skipped or not r.runs:
        return NA
    if metric == "g_mean":
        return f"{r.mean(metric):.2f} ± {r.std(metric):.2f}"
    return f"{r.mean(metric):.2f}"


def render_table(reports: Sequence[ExperimentReport], ticks: Sequence[str] | None = None,
                 note: str | None = None) -> str:
    """Rows are (variant, algorithm); column blocks are metric x tick.

    Missing or skipped cells show ``N/A``.  With no reports only the header
    is produced.
    """
    ordered = _order(reports)
    if ticks is None:
        ticks = sorted({r.tick for r in ordered}, key=lambda t: int(Tick.parse(t))) or [t.name for t in Tick]
    ticks = [Tick.parse(t).name for t in ticks]
    cells = {(r.variant, r.algorithm, r.tick): r for r in ordered}
    rows_keys: list[tuple[str, str]] = []
    for r in ordered:
        if (r.variant, r.algorithm) not in rows_keys:
            rows_keys.append((r.variant, r.algorithm))

    head1 = ["Variant", "Algorithm"]
    head2 = ["", ""]
    for m in METRICS:
        for i, t in enumerate(ticks):
            head1.append(BLOCK_TITLES[m] if i == 0 else "")
            head2.append(t)
    body = []
    for variant, algo in rows_keys:
        row = [variant, algo]
        for m in METRICS:
            row += [_cell(cells.get((variant, algo, t)), m) for t in ticks]
        body.append(row)

    widths = [max(len(row[c]) for row in [head1, head2, *body]) for c in range(len(head1))]
    fmt = lambda row: " | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
    lines = []
    if note:
        lines.append(f"# {note}")
    lines += [fmt(head1), fmt(head2), "-+-".join("-" * w for w in widths)]
    lines += [fmt(row) for row in body]
    return "\n".join(lines) + "\n"


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` so readers never observe a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
