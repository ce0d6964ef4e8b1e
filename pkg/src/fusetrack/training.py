"""Verification training: label maps, losses, and the SGD loop."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import crop_pair, sample_pair_indices


@dataclass
class LabelMap:
    y: np.ndarray            # entries in {+1, -1}
    stride: float
    radius: float
    center: tuple


def make_labels(response_dims, k, R):
    """+1 where the cell sits within R input pixels of the map center.

    Distance is Euclidean in cell units times the network stride k.
    Even dims are rejected: the label geometry presumes a center cell.
    """
    if np.isscalar(response_dims):
        response_dims = (response_dims, response_dims)
    h, w = int(response_dims[0]), int(response_dims[1])
    if h % 2 == 0 or w % 2 == 0:
        raise ValueError(f"response dims must be odd, got {(h, w)}")
    if k <= 0 or R <= 0:
        raise ValueError("stride and radius must be positive")
    cy, cx = (h - 1) // 2, (w - 1) // 2
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.hypot(yy - cy, xx - cx)
    y = np.where(k * dist <= R, 1.0, -1.0)
    return LabelMap(y=y, stride=float(k), radius=float(R), center=(cy, cx))


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(v, y):
    """log(1 + exp(-y*v)), overflow-safe, elementwise."""
    return np.logaddexp(0.0, -np.asarray(y, dtype=np.float64) * v)


def _label_array(labels):
    return labels.y if isinstance(labels, LabelMap) else np.asarray(labels)


def _cell_weights(y, balanced):
    if not balanced:
        return np.full(y.shape, 1.0 / y.size)
    pos = y > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    w = np.empty(y.shape)
    if n_pos:
        w[pos] = 0.5 / n_pos
    if n_neg:
        w[~pos] = 0.5 / n_neg
    if not n_pos or not n_neg:
        # single-class map: fall back to a plain mean
        w[:] = 1.0 / y.size
    return w


def map_loss(v, labels, balanced=True):
    """Weighted mean of per-cell logistic losses.

    balanced=True gives positives and negatives total weight 1/2 each;
    balanced=False is the plain mean over cells.
    """
    y = _label_array(labels)
    if v.shape != y.shape:
        raise ValueError(f"score map {v.shape} vs label map {y.shape}")
    return float(np.sum(_cell_weights(y, balanced) * logistic_loss(v, y)))


def map_loss_grad(v, labels, balanced=True):
    """(loss, dloss/dv) in one pass."""
    y = _label_array(labels)
    if v.shape != y.shape:
        raise ValueError(f"score map {v.shape} vs label map {y.shape}")
    w = _cell_weights(y, balanced)
    loss = float(np.sum(w * logistic_loss(v, y)))
    dv = w * (-y) * _sigmoid(-y * v)
    return loss, dv


@dataclass
class TrainSchedule:
    epochs: int = 10
    pairs_per_epoch: int = 40
    batch_size: int = 2
    lr_start: float = 1e-2
    lr_end: float = 1e-4
    momentum: float = 0.9
    seed: int = 7
    frame_gap: int = 100
    label_radius: float = 8.0
    balanced: bool = True

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError("need lr_start >= lr_end > 0")
        if self.batch_size < 1 or self.epochs < 1 or self.pairs_per_epoch < 1:
            raise ValueError("counts must be positive")


# published protocol: 40 epochs x 50k pairs, batch 8, 1e-2 -> 1e-5
PAPER_SCHEDULE = TrainSchedule(epochs=40, pairs_per_epoch=50000, batch_size=8,
                               lr_start=1e-2, lr_end=1e-5, momentum=0.9, seed=0)
# 10 epochs x 20 iterations of batch 2 = 200 SGD steps
DESK_SCHEDULE = TrainSchedule(epochs=10, pairs_per_epoch=40, batch_size=2,
                              lr_start=2e-2, lr_end=1e-4, momentum=0.9, seed=7)


def lr_at(schedule, epoch):
    """Geometric anneal from lr_start (epoch 0) to lr_end (last epoch)."""
    if schedule.epochs == 1:
        return schedule.lr_start
    t = epoch / (schedule.epochs - 1)
    return schedule.lr_start * (schedule.lr_end / schedule.lr_start) ** t


class SGDMomentum:
    def __init__(self, params, momentum=0.9):
        self.momentum = momentum
        self.vel = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params, grads, lr):
        for k, p in params.items():
            v = self.vel[k]
            v *= self.momentum
            v -= lr * grads[k]
            p += v      # in place, preserves shared-lane aliasing


@dataclass
class TrainResult:
    iter_losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def _write_loss_log(out_dir, result):
    path = os.path.join(out_dir, "loss_log.csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "loss"])
        for i, loss in enumerate(result.iter_losses):
            wr.writerow([i, f"{loss:.10g}"])
    return path


def train(model, dataset, schedule=None, out_dir=None, progress=None):
    """Seeded SGD over sampled pairs; one checkpoint per epoch.

    Returns a TrainResult with per-iteration batch losses, per-epoch
    means, and checkpoint paths (empty when out_dir is None).  The
    reference path is single threaded, so a fixed seed fixes the entire
    parameter trajectory.
    """
    schedule = schedule or DESK_SCHEDULE
    if not len(dataset.sequences):
        raise ValueError("empty dataset")
    rng = np.random.default_rng(schedule.seed)
    opt = SGDMomentum(model.params(), momentum=schedule.momentum)
    labels = make_labels(model.response_dims(), model.stride,
                         schedule.label_radius)
    iters = max(1, schedule.pairs_per_epoch // schedule.batch_size)
    result = TrainResult()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    step = 0
    for epoch in range(schedule.epochs):
        lr = lr_at(schedule, epoch)
        epoch_sum = 0.0
        for _ in range(iters):
            model.zero_grads()
            batch_loss = 0.0
            for _ in range(schedule.batch_size):
                seq, i, j = sample_pair_indices(dataset, rng,
                                                schedule.frame_gap)
                ex, se = crop_pair(seq.image(i), seq.boxes[i],
                                   seq.image(j), seq.boxes[j],
                                   model.exemplar_size, model.search_size)
                scores = model.forward_pair(ex, se, training=True)
                loss, dv = map_loss_grad(scores, labels,
                                         balanced=schedule.balanced)
                model.backward_pair(dv / schedule.batch_size)
                batch_loss += loss / schedule.batch_size
            if not np.isfinite(batch_loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} step {step} "
                    f"(lr={lr:g}); aborting before the update")
            opt.step(model.params(), model.grads(), lr)
            result.iter_losses.append(batch_loss)
            epoch_sum += batch_loss
            step += 1
            if progress:
                progress(step, batch_loss)
        result.epoch_losses.append(epoch_sum / iters)
        if out_dir:
            path = os.path.join(out_dir, f"epoch{epoch:03d}.ckpt")
            save_checkpoint(model, path, epoch=epoch,
                            train_loss=result.epoch_losses[-1],
                            seed=schedule.seed)
            result.checkpoints.append(path)
    if out_dir:
        _write_loss_log(out_dir, result)
    return result
