"""Supervised evaluation: overlap accuracy, failure counting, EAO.

A supervised run restarts the tracker from ground truth after every
failure (overlap at or below the threshold).  The failing frame and
the skipped frames before re-initialization are excluded from the
accuracy average, as is a configurable burn-in window after every
(re)initialization.  The EAO estimator is deliberately simple: each
run contributes its overlaps up to the first failure and zeros after,
Phi(Ns) averages the first Ns frames across runs, and the score
averages Phi over a sequence-length interval.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np


def iou(a, b):
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = float(a[0]), float(a[1]), float(a[2]), float(a[3])
    bx, by, bw, bh = float(b[0]), float(b[1]), float(b[2]), float(b[3])
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass
class OverlapSeries:
    name: str
    overlaps: np.ndarray         # per-frame IoU, 1.0 at (re)init frames
    counted: np.ndarray          # bool, frames entering the accuracy mean
    failures: list               # frame indices where overlap <= threshold
    reinits: list                # frame indices of re-initialization
    attributes: tuple = ()


def run_supervised(tracker, seq, threshold=0.0, reinit_skip=5, burn_in=10):
    """Track one sequence with ground-truth restarts after failures."""
    n = len(seq)
    overlaps = np.zeros(n)
    counted = np.zeros(n, dtype=bool)
    failures, reinits = [], []

    def _init_at(t):
        overlaps[t] = 1.0
        state = tracker.init(seq.image(t), seq.boxes[t])
        return state, t + burn_in     # frames < this are burn-in

    state, burn_end = _init_at(0)
    counted[0] = burn_in == 0
    t = 0
    while t + 1 < n:
        t += 1
        state, box = tracker.step(state, seq.image(t))
        o = iou(box, seq.boxes[t])
        if o <= threshold:
            failures.append(t)
            overlaps[t] = 0.0
            t += reinit_skip
            if t < n:
                reinits.append(t)
                state, burn_end = _init_at(t)
                counted[t] = burn_in == 0
        else:
            overlaps[t] = o
            counted[t] = t >= burn_end
    return OverlapSeries(name=seq.name, overlaps=overlaps, counted=counted,
                         failures=failures, reinits=reinits,
                         attributes=seq.attributes)


def series_from_log(name, boxes, gt, threshold=0.0, attributes=()):
    """Series from a prerecorded box log (no restarts possible).

    A failure is recorded at each downward crossing of the threshold;
    every frame counts toward accuracy.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if len(boxes) != len(gt):
        raise ValueError(
            f"{name}: box log has {len(boxes)} lines but ground truth "
            f"has {len(gt)}")
    overlaps = np.array([iou(b, g) for b, g in zip(boxes, gt)])
    failures = [t for t in range(len(overlaps))
                if overlaps[t] <= threshold
                and (t == 0 or overlaps[t - 1] > threshold)]
    return OverlapSeries(name=name, overlaps=overlaps,
                         counted=np.ones(len(overlaps), dtype=bool),
                         failures=failures, reinits=[],
                         attributes=tuple(attributes))


def accuracy(series):
    """Mean overlap over counted frames (1.0 if nothing counted)."""
    if not series.counted.any():
        return 1.0 if not series.failures else 0.0
    return float(series.overlaps[series.counted].mean())


def robustness(series):
    """Number of failure events."""
    return len(series.failures)


def _padded_run(series):
    o = series.overlaps.copy()
    if series.failures:
        o[series.failures[0]:] = 0.0
    return o


@dataclass
class EAOCurve:
    lengths: np.ndarray
    phi: np.ndarray
    interval: tuple
    score: float


def eao(series_list, interval=None):
    """Expected average overlap curve and scalar score."""
    if not series_list:
        raise ValueError("need at least one run")
    runs = [_padded_run(s) for s in series_list]
    max_len = max(len(r) for r in runs)
    lengths = np.arange(1, max_len + 1)
    phi = np.empty(max_len)
    for idx, ns in enumerate(lengths):
        phi[idx] = np.mean([r[:min(ns, len(r))].mean() for r in runs])
    if interval is None:
        med = float(np.median([len(r) for r in runs]))
        lo = max(1, int(round(med / 2)))
        hi = min(max_len, int(round(med * 2)))
    else:
        lo, hi = int(interval[0]), int(interval[1])
        if lo < 1 or hi > max_len:
            warnings.warn(f"EAO interval {interval} clipped to [1, {max_len}]")
            lo, hi = max(1, lo), min(max_len, hi)
    if lo > hi:
        lo = hi
    score = float(phi[lo - 1:hi].mean())
    return EAOCurve(lengths=lengths, phi=phi, interval=(lo, hi), score=score)


@dataclass
class EvalReport:
    series: list
    mean_accuracy: float
    total_failures: int
    eao_curve: EAOCurve
    per_attribute: dict = field(default_factory=dict)


def evaluate(tracker, dataset, threshold=0.0, reinit_skip=5, burn_in=10,
             interval=None):
    series = [run_supervised(tracker, seq, threshold=threshold,
                             reinit_skip=reinit_skip, burn_in=burn_in)
              for seq in dataset.sequences]
    return summarize(series, interval=interval)


def summarize(series, interval=None):
    per_attr = {}
    for s in series:
        for tag in s.attributes:
            per_attr.setdefault(tag, []).append(s)
    return EvalReport(
        series=series,
        mean_accuracy=float(np.mean([accuracy(s) for s in series])),
        total_failures=int(sum(robustness(s) for s in series)),
        eao_curve=eao(series, interval=interval),
        per_attribute={
            tag: (float(np.mean([accuracy(s) for s in group])),
                  int(sum(robustness(s) for s in group)))
            for tag, group in sorted(per_attr.items())},
    )


def write_reports(report, out_dir):
    """summary.txt, eao_curve.csv, and one frames CSV per sequence."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for s in report.series:
        path = os.path.join(out_dir, f"{s.name}_frames.csv")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["frame", "iou", "failed"])
            fails = set(s.failures)
            for t, o in enumerate(s.overlaps):
                wr.writerow([t, f"{o:.6f}", int(t in fails)])
        paths.append(path)
    curve_path = os.path.join(out_dir, "eao_curve.csv")
    with open(curve_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["ns", "phi"])
        for ns, p in zip(report.eao_curve.lengths, report.eao_curve.phi):
            wr.writerow([int(ns), f"{p:.6f}"])
    paths.append(curve_path)
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w") as fh:
        fh.write(f"accuracy = {report.mean_accuracy:.6f}\n")
        fh.write(f"robustness = {report.total_failures}\n")
        fh.write(f"eao = {report.eao_curve.score:.6f}\n")
        fh.write(f"eao_interval = {report.eao_curve.interval[0]}.."
                 f"{report.eao_curve.interval[1]}\n")
        for tag, (acc, rob) in report.per_attribute.items():
            fh.write(f"attr[{tag}] accuracy = {acc:.6f} failures = {rob}\n")
    paths.append(summary_path)
    return paths
