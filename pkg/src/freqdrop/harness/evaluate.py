"""Checkpoint evaluation on clean data and over a corruption grid."""

from __future__ import annotations

import numpy as np

from .._accel import tune_allocator
from ..data import CorruptionSpec, Dataset, corrupt
from ..errors import ShapeError
from ..fd_layer import FDConfig, FDMode
from ..network import NetworkSpec, net_from_checkpoint
from .metrics import CLEAN, MetricsRecord
from .train import eval_draws, score


def corrupted_sets(ds: Dataset, grid, seed: int = 0) -> list[tuple[CorruptionSpec, Dataset]]:
    """Corrupt ``ds`` once per grid cell; reuse the result across checkpoints."""
    return [(spec, corrupt(ds, spec, seed)) for spec in grid]


def restore(tensors: dict[str, np.ndarray], keep_cbs: bool = False):
    """Network, input statistics and inference-time FD draws for a checkpoint."""
    net: NetworkSpec = net_from_checkpoint(tensors, with_fd=True)
    stats = tuple(float(v) for v in tensors.get("meta.input_norm", (0.0, 1.0)))
    draws = None
    if keep_cbs and "meta.cbs_sigma" in tensors:
        sigma = float(tensors["meta.cbs_sigma"][0])
        draws = eval_draws(net, FDConfig(mode=FDMode.CBS, cbs_keep_at_eval=True), sigma)
    return net, stats, draws


def evaluate(
    tensors: dict[str, np.ndarray],
    ds: Dataset,
    grid=(),
    run_id: str = "run",
    method: str = "unknown",
    seed: int = 0,
    epoch: int = 0,
    corruption_seed: int = 0,
    keep_cbs: bool = False,
    cells=None,
) -> list[MetricsRecord]:
    """One clean ``test`` record, then one ``corrupt`` record per grid cell.

    FD layers run as identity unless ``keep_cbs`` asks for the checkpoint's
    final CBS smoothing. ``cells`` may carry precomputed
    :func:`corrupted_sets` output, in which case ``grid`` is ignored.
    """
    tune_allocator()
    net, stats, draws = restore(tensors, keep_cbs)
    if tuple(ds.images.shape[1:]) != tuple(net.input_shape):
        raise ShapeError(f"dataset images {ds.images.shape[1:]} do not match checkpoint input {net.input_shape}")
    if ds.num_classes > net.num_classes:
        raise ShapeError(f"dataset has {ds.num_classes} classes, checkpoint predicts {net.num_classes}")
    acc, loss = score(net, ds, draws, stats)
    out = [MetricsRecord(run_id, method, seed, "test", CLEAN, 0, epoch, acc, loss)]
    if cells is None:
        cells = corrupted_sets(ds, grid, corruption_seed)
    for spec, cds in cells:
        if spec.severity == 0:
            continue
        acc, loss = score(net, cds, draws, stats)
        out.append(MetricsRecord(run_id, method, seed, "corrupt", spec.kind.value, spec.severity, epoch, acc, loss))
    return out
