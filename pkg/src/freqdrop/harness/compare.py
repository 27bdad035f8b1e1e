"""Cross-seed comparison of evaluation records.

Each evaluation cell (clean test, or one corruption kind at one severity) is
summarized per method as the mean over seeds with the half-range as spread.
Aggregate rows average over corruption kinds (``corruption=all``) and/or
severities (``severity=all``) within a seed before averaging across seeds.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .metrics import CLEAN, MetricsRecord, read_records

SUMMARY_HEADER = ("method", "phase", "corruption", "severity", "mean_accuracy", "spread", "n_seeds", "rank")
EVAL_PHASES = ("test", "corrupt")
ALL = "all"
METHOD_ORDER = ("baseline", "cbs", "fd_gf", "fd_rf")


@dataclass(frozen=True)
class CellSummary:
    method: str
    phase: str
    corruption: str
    severity: str  # "0".."5" or "all"
    mean: float
    spread: float
    n_seeds: int
    rank: int = 0

    @property
    def cell(self):
        return self.phase, self.corruption, self.severity


def mean_spread(values):
    """Mean and half-range; a single value has spread 0."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float((v.max() - v.min()) / 2.0)


def method_sort_key(method: str):
    return (METHOD_ORDER.index(method), "") if method in METHOD_ORDER else (len(METHOD_ORDER), method)


def _per_seed_cells(records):
    """{method: {seed: {(phase, corruption, severity): accuracy}}} for eval phases."""
    table: dict = defaultdict(lambda: defaultdict(dict))
    for r in records:
        if r.phase not in EVAL_PHASES:
            continue
        key = (r.phase, r.corruption, str(r.severity))
        if key in table[r.method][r.seed]:
            raise DataError(f"duplicate record for {r.method} seed {r.seed} cell {key}")
        table[r.method][r.seed][key] = r.accuracy
    return table


def _aggregates(cells: dict) -> dict:
    """Add kind/severity averages of the corrupt cells of one seed."""
    out = dict(cells)
    corrupt = [(c, int(s), a) for (p, c, s), a in cells.items() if p == "corrupt"]
    if not corrupt:
        return out
    groups = defaultdict(list)
    for kind, sev, acc in corrupt:
        groups[(ALL, str(sev))].append(acc)
        groups[(kind, ALL)].append(acc)
        groups[(ALL, ALL)].append(acc)
    for (kind, sev), accs in groups.items():
        out[("corrupt", kind, sev)] = float(np.mean(accs))
    return out


def summarize(records) -> list[CellSummary]:
    """Per-method mean and spread for every cell, ranked within each cell.

    Raises DataError when fewer than two runs are given or when the runs were
    not evaluated on the same grid.
    """
    table = _per_seed_cells(records)
    runs = [(m, s) for m in table for s in table[m]]
    if len(runs) < 2:
        raise DataError(f"need at least two evaluated runs to compare, got {len(runs)}")
    ref_method, ref_seed = runs[0]
    ref_grid = set(table[ref_method][ref_seed])
    for m, s in runs[1:]:
        grid = set(table[m][s])
        if grid != ref_grid:
            diff = sorted(grid ^ ref_grid)[:3]
            raise DataError(
                f"mismatched grids: {m} seed {s} vs {ref_method} seed {ref_seed} differ in cells {diff}"
            )

    rows = []
    for method in sorted(table, key=method_sort_key):
        per_seed = [_aggregates(table[method][s]) for s in sorted(table[method])]
        for key in per_seed[0]:
            mean, spread = mean_spread([cells[key] for cells in per_seed])
            rows.append(CellSummary(method, *key, mean, spread, len(per_seed)))
    return _rank(rows)


def _rank(rows):
    by_cell = defaultdict(list)
    for r in rows:
        by_cell[r.cell].append(r)
    ranked = {}
    for cell_rows in by_cell.values():
        for i, r in enumerate(sorted(cell_rows, key=lambda r: (-r.mean, r.method)), start=1):
            ranked[id(r)] = i
    out = [CellSummary(r.method, r.phase, r.corruption, r.severity, r.mean, r.spread, r.n_seeds, ranked[id(r)]) for r in rows]
    return sorted(out, key=lambda r: (_cell_order(r.cell), r.rank))


def _cell_order(cell):
    phase, kind, sev = cell
    return (EVAL_PHASES.index(phase), kind == ALL, kind, sev == ALL, sev)


def summary_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow([r.method, r.phase, r.corruption, r.severity, repr(r.mean), repr(r.spread), r.n_seeds, r.rank])
    return buf.getvalue()


def summary_from_csv(text: str) -> list[CellSummary]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != SUMMARY_HEADER:
        raise DataError(f"comparison CSV must start with header {','.join(SUMMARY_HEADER)}")
    out = []
    for row in rows[1:]:
        if row:
            m, p, c, s, mean, spread, n, rank = row
            out.append(CellSummary(m, p, c, s, float(mean), float(spread), int(n), int(rank)))
    return out


def summary_to_text(rows, top: int = 2) -> str:
    """Method-by-column table; ``*`` marks the ``top`` best methods per column."""
    columns = [("test", CLEAN, "0", "clean")]
    kinds = sorted({r.corruption for r in rows if r.phase == "corrupt" and r.corruption != ALL})
    columns += [("corrupt", k, ALL, k) for k in kinds]
    if kinds:
        columns.append(("corrupt", ALL, ALL, "corrupt mean"))
    index = {(r.method, r.cell): r for r in rows}
    methods = sorted({r.method for r in rows}, key=method_sort_key)
    header = ["method"] + [c[3] for c in columns]
    body = []
    for m in methods:
        line = [m]
        for phase, kind, sev, _ in columns:
            r = index.get((m, (phase, kind, sev)))
            if r is None:
                line.append("-")
            else:
                mark = "*" if r.rank <= top else " "
                line.append(f"{r.mean:.4f} ± {r.spread:.4f}{mark}")
        body.append(line)
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    fmt = lambda row: "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(row) for row in body]
    n = max(r.n_seeds for r in rows)
    lines.append(f"accuracy mean ± half-range over {n} seed(s); * marks the top {top} per column")
    return "\n".join(lines) + "\n"


def load_run_records(runs_dir, name: str = "eval.csv") -> list[MetricsRecord]:
    """Concatenate ``<run>/<name>`` for every run directory under ``runs_dir``."""
    root = Path(runs_dir)
    if not root.is_dir():
        raise DataError(f"runs directory {root} does not exist")
    files = sorted(root.glob(f"*/{name}")) or sorted(root.glob(name))
    if not files:
        raise DataError(f"no {name} files found under {root}")
    records = []
    for f in files:
        records.extend(read_records(f))
    return records


def compare(records, csv_path=None, text_path=None):
    """Summarize ``records``; optionally write CSV and text. Returns ``(rows, text)``."""
    rows = summarize(records)
    text = summary_to_text(rows)
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        Path(csv_path).write_text(summary_to_csv(rows))
    if text_path is not None:
        Path(text_path).write_text(text)
    return rows, text
