"""Desk-scale shortcut and robustness experiment over methods and seeds."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..data import corruption_grid, gen_shortcut_dataset, save_dataset
from .compare import ALL, compare
from .config import Method, TrainConfig
from .evaluate import corrupted_sets, evaluate
from .metrics import write_records
from .plots import robustness_figure
from .train import train

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    out_dir: Path
    correlated: dict = field(default_factory=dict)  # (method, seed) -> accuracy on rho=1 test
    decorrelated: dict = field(default_factory=dict)  # (method, seed) -> accuracy on rho_test split
    corrupted: dict = field(default_factory=dict)  # (method, seed) -> mean accuracy over the grid
    train_seconds: float = 0.0
    robustness_seconds: float = 0.0
    summary: list = field(default_factory=list)
    text: str = ""

    def mean(self, table: str, method: str) -> float:
        vals = [v for (m, _), v in getattr(self, table).items() if m == method]
        return float(np.mean(vals))


def run_experiment(
    base: TrainConfig,
    out_dir,
    methods=tuple(Method),
    seeds=(0, 1),
    grid=True,
    plot=True,
) -> ExperimentResult:
    """Train every (method, seed), evaluate, and write the comparison.

    Layout: ``data/*.fdds``, one directory per run with checkpoint, training
    metrics, ``eval.csv`` (decorrelated test and corruption grid) and
    ``eval_correlated.csv`` (rho=1 test), then ``comparison.csv``,
    ``comparison.txt`` and ``robustness.png`` at the top level.
    """
    out = Path(out_dir)
    res = ExperimentResult(out)
    d = base.data
    train_ds = gen_shortcut_dataset(d.spec, d.n_train, "train", d.seed)
    val_ds = gen_shortcut_dataset(d.spec, d.n_val, "val", d.seed) if d.n_val else None
    test_ds = gen_shortcut_dataset(d.spec, d.n_test, "test", d.seed)
    corr_ds = gen_shortcut_dataset(d.spec, d.n_test, "test", d.seed, rho=1.0)
    (out / "data").mkdir(parents=True, exist_ok=True)
    for name, ds in (("train", train_ds), ("test", test_ds), ("test_correlated", corr_ds)):
        save_dataset(out / "data" / f"{name}.fdds", ds)

    trained = []
    start = time.perf_counter()
    for method in methods:
        for seed in seeds:
            cfg = replace(base, method=Method.parse(method), seed=int(seed), run_id="").validate()
            result = train(cfg, train_ds, val_ds, out_dir=out)
            trained.append((cfg, result))
            log.info("%s trained in %.1fs", cfg.name, result.seconds)
    res.train_seconds = time.perf_counter() - start

    start = time.perf_counter()
    cells = corrupted_sets(test_ds, corruption_grid() if grid else [], seed=d.seed)
    records = []
    for cfg, result in trained:
        recs = evaluate(result.checkpoint, test_ds, run_id=cfg.name, method=cfg.method.value, seed=cfg.seed,
                        epoch=cfg.epochs, cells=cells)
        write_records(out / cfg.name / "eval.csv", recs)
        records.extend(recs)
        key = (cfg.method.value, cfg.seed)
        res.decorrelated[key] = recs[0].accuracy
        if len(recs) > 1:
            res.corrupted[key] = float(np.mean([r.accuracy for r in recs[1:]]))
    res.robustness_seconds = time.perf_counter() - start

    for cfg, result in trained:
        recs = evaluate(result.checkpoint, corr_ds, run_id=cfg.name, method=cfg.method.value, seed=cfg.seed,
                        epoch=cfg.epochs)
        write_records(out / cfg.name / "eval_correlated.csv", recs)
        res.correlated[(cfg.method.value, cfg.seed)] = recs[0].accuracy

    if len(trained) >= 2:
        res.summary, res.text = compare(records, out / "comparison.csv", out / "comparison.txt")
        if plot and any(r.corruption == ALL for r in res.summary):
            robustness_figure(res.summary, out / "robustness.png")
    return res
