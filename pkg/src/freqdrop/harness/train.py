"""Training loop for TinyNet under the four regularization methods."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._accel import tune_allocator
from ..data import Dataset, gen_shortcut_dataset, load_dataset
from ..errors import ConfigError, NumericError
from ..fd_layer import FDMode, build_draw, cbs_draw, cbs_sigma
from ..layers import clip_grad_norm, sgd_step, softmax_xent
from ..network import NetworkSpec, forward_backward, predict_logits, save_checkpoint, tiny_net
from ..rng import Domain, RngStream
from .config import TrainConfig
from .metrics import CLEAN, MetricsRecord, write_records

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    net: NetworkSpec
    records: list[MetricsRecord]
    checkpoint: dict[str, np.ndarray]
    seconds: float = 0.0
    paths: dict[str, Path] = field(default_factory=dict)


def load_datasets(cfg: TrainConfig):
    """Train and validation sets named by ``cfg.data`` (files win over generation)."""
    d = cfg.data
    if d.train_path:
        train = load_dataset(d.train_path)
    else:
        train = gen_shortcut_dataset(d.spec, d.n_train, "train", d.seed)
    if d.val_path:
        val = load_dataset(d.val_path)
    elif d.n_val:
        val = gen_shortcut_dataset(d.spec, d.n_val, "val", d.seed)
    else:
        val = None
    return train, val


def fd_draws(net: NetworkSpec, cfg: TrainConfig, epoch: int, step: int):
    """Per-FD-layer draws for one training step, or None when FD is off."""
    mode = cfg.fd.mode
    if mode == FDMode.OFF:
        return None
    layers = net.fd_layers
    if mode == FDMode.CBS:
        sigma = cbs_sigma(epoch, cfg.fd)
        return [cbs_draw(lyr.channels, sigma, cfg.fd) for lyr in layers]
    return [
        build_draw(lyr.channels, cfg.fd, RngStream.for_(cfg.seed, Domain.FD, layer=i, epoch=epoch, step=step))
        for i, lyr in enumerate(layers)
    ]


def eval_draws(net: NetworkSpec, cfg_fd, cbs_final_sigma=None):
    """Inference-time FD behavior: identity, unless CBS smoothing is kept."""
    if cfg_fd.mode == FDMode.CBS and cfg_fd.cbs_keep_at_eval and cbs_final_sigma:
        return [cbs_draw(lyr.channels, cbs_final_sigma, cfg_fd) for lyr in net.fd_layers]
    return None


def input_stats(ds: Dataset, enabled=True) -> tuple[float, float]:
    """Scalar (mean, std) used to standardize pixels; identity when disabled."""
    if not enabled:
        return 0.0, 1.0
    std = float(ds.images.std())
    return float(ds.images.mean()), std if std > 0 else 1.0


def standardize(images: np.ndarray, stats) -> np.ndarray:
    mean, std = stats
    if mean == 0.0 and std == 1.0:
        return images
    return (images - mean) / std


def score(net: NetworkSpec, ds: Dataset, draws=None, stats=(0.0, 1.0)):
    """(accuracy, mean loss) of ``net`` on ``ds``."""
    logits = predict_logits(net, standardize(ds.images, stats), draws)
    loss, _ = softmax_xent(logits, ds.labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == ds.labels))
    return acc, loss


def checkpoint_tensors(net: NetworkSpec, cfg: TrainConfig, stats=(0.0, 1.0)) -> dict[str, np.ndarray]:
    tensors = {name: p.copy() for name, p in net.params().items()}
    tensors["meta.input_shape"] = np.asarray(net.input_shape, dtype=np.float64)
    tensors["meta.input_norm"] = np.asarray(stats, dtype=np.float64)
    if cfg.fd.mode == FDMode.CBS:
        last = max(cfg.epochs - 1, 0)
        tensors["meta.cbs_sigma"] = np.asarray([cbs_sigma(last, cfg.fd)])
    return tensors


def train(cfg: TrainConfig, train_ds: Dataset | None = None, val_ds: Dataset | None = None, out_dir=None) -> TrainResult:
    """Train one (method, seed) run; write its files when ``out_dir`` is given."""
    cfg.validate()
    tune_allocator()
    start = time.perf_counter()
    if train_ds is None:
        train_ds, val_ds = load_datasets(cfg)
    if train_ds.num_classes < 2:
        raise ConfigError("need at least two classes to train")
    net = tiny_net(
        train_ds.num_classes,
        train_ds.images.shape[1:],
        rng=RngStream.for_(cfg.seed, Domain.INIT).generator,
        with_fd=cfg.fd.mode != FDMode.OFF,
    )
    params = net.params()
    velocity = None
    records = []
    stats = input_stats(train_ds, cfg.normalize_input)
    images = standardize(train_ds.images, stats)
    n = len(train_ds)
    bs = cfg.batch_size
    for epoch in range(cfg.epochs):
        order = RngStream.for_(cfg.seed, Domain.SHUFFLE, epoch=epoch).permutation(n)
        loss_sum = 0.0
        correct = 0
        for step, lo in enumerate(range(0, n, bs)):
            idx = order[lo : lo + bs]
            x, y = images[idx], train_ds.labels[idx]
            draws = fd_draws(net, cfg, epoch, step)
            try:
                loss, grads, logits = forward_backward(net, x, y, draws)
                grads, _ = clip_grad_norm(grads, cfg.clip_norm)
                _, velocity = sgd_step(params, grads, cfg.lr, cfg.momentum, cfg.weight_decay, velocity)
            except NumericError as e:
                raise NumericError(f"{cfg.name}: epoch {epoch} step {step}: {e}") from None
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
        rec = MetricsRecord(cfg.name, cfg.method.value, cfg.seed, "train", CLEAN, 0, epoch, correct / n, loss_sum / n)
        records.append(rec)
        msg = f"{cfg.name} epoch {epoch + 1}/{cfg.epochs} train acc {rec.accuracy:.4f} loss {rec.loss:.4f}"
        if val_ds is not None and len(val_ds):
            acc, loss = score(net, val_ds, stats=stats)
            records.append(MetricsRecord(cfg.name, cfg.method.value, cfg.seed, "val", CLEAN, 0, epoch, acc, loss))
            msg += f" val acc {acc:.4f}"
        log.info(msg)

    result = TrainResult(net, records, checkpoint_tensors(net, cfg, stats), time.perf_counter() - start)
    if out_dir is not None:
        run_dir = Path(out_dir) / cfg.name
        run_dir.mkdir(parents=True, exist_ok=True)
        result.paths["checkpoint"] = run_dir / "checkpoint.fdnn"
        save_checkpoint(result.paths["checkpoint"], result.checkpoint)
        result.paths["metrics"] = write_records(run_dir / "metrics.csv", records)
        result.paths["config"] = run_dir / "run.cfg"
        result.paths["config"].write_text(cfg.to_text())
    return result
