"""Synthetic single-channel sequences with exact ground truth.

Bright Gaussian blobs (hot targets) drift over a smooth textured
background, optionally joined by dimmer distractor blobs.  Everything
is drawn from one seeded generator, so a dataset regenerates
byte-identically.  Boxes are squares centered on the blob center, so
the peak pixel always lies inside the emitted box.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np

from .data import Sequence, SequenceDataset


@dataclass
class SynthConfig:
    n_sequences: int = 4
    n_frames: int = 60
    size: int = 240
    blob_sigma: float = 5.0
    blob_peak: float = 0.75
    box_side: int = 21
    n_distractors: int = 2
    distractor_peak: float = 0.35
    background_level: float = 0.25
    background_texture: float = 0.06
    max_speed: float = 2.5
    margin: int = 30


def _background(rng, size, level, texture):
    coarse = rng.standard_normal((size // 8 + 1, size // 8 + 1))
    noise = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC)
    noise = cv2.GaussianBlur(noise, (0, 0), 3.0)
    return level + texture * noise


def _smooth_track(rng, cfg):
    """Reflected random walk over velocity: smooth, stays in frame."""
    lo, hi = cfg.margin, cfg.size - 1 - cfg.margin
    pos = np.array([rng.uniform(lo, hi), rng.uniform(lo, hi)])
    vel = rng.uniform(-cfg.max_speed, cfg.max_speed, size=2)
    track = np.empty((cfg.n_frames, 2))
    for t in range(cfg.n_frames):
        track[t] = pos
        vel += rng.normal(0.0, 0.3, size=2)
        speed = np.hypot(*vel)
        if speed > cfg.max_speed:
            vel *= cfg.max_speed / speed
        pos = pos + vel
        for a in range(2):
            if pos[a] < lo:
                pos[a] = 2 * lo - pos[a]
                vel[a] = -vel[a]
            elif pos[a] > hi:
                pos[a] = 2 * hi - pos[a]
                vel[a] = -vel[a]
    return track


def _draw_blob(img, center, sigma, peak):
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (xx - center[0]) ** 2 + (yy - center[1]) ** 2
    img += peak * np.exp(-0.5 * d2 / (sigma * sigma))


def render_sequence(rng, cfg):
    """All frames plus per-frame boxes for one sequence."""
    bg = _background(rng, cfg.size, cfg.background_level, cfg.background_texture)
    track = _smooth_track(rng, cfg)
    distractors = [_smooth_track(rng, cfg) for _ in range(cfg.n_distractors)]
    frames = []
    boxes = np.empty((cfg.n_frames, 4))
    half = (cfg.box_side - 1) / 2.0
    for t in range(cfg.n_frames):
        img = bg.copy()
        for d in distractors:
            _draw_blob(img, d[t], cfg.blob_sigma, cfg.distractor_peak)
        _draw_blob(img, track[t], cfg.blob_sigma, cfg.blob_peak)
        frames.append(np.clip(img, 0.0, 1.0))
        boxes[t] = (track[t, 0] - half, track[t, 1] - half,
                    cfg.box_side, cfg.box_side)
    return frames, boxes


def write_sequence(out_dir, frames, boxes, name):
    seq_dir = os.path.join(out_dir, name)
    os.makedirs(seq_dir, exist_ok=True)
    paths = []
    for t, frame in enumerate(frames):
        path = os.path.join(seq_dir, f"{t:08d}.png")
        cv2.imwrite(path, np.round(frame * 255.0).astype(np.uint8))
        paths.append(path)
    with open(os.path.join(seq_dir, "groundtruth.txt"), "w") as fh:
        for b in boxes:
            fh.write(f"{b[0]:.4f},{b[1]:.4f},{b[2]:.4f},{b[3]:.4f}\n")
    return Sequence(name=name, frames=paths, boxes=boxes)


def gen_synthetic(out_dir, cfg=None, seed=0):
    """Write a dataset to disk and return it."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    sequences = []
    for s in range(cfg.n_sequences):
        frames, boxes = render_sequence(rng, cfg)
        sequences.append(write_sequence(out_dir, frames, boxes, f"seq{s:03d}"))
    return SequenceDataset(sequences)


def translating_blob_fixture(out_dir, n_frames=100, seed=0, size=240,
                             velocity=(1.6, 0.9)):
    """Held-out constant-velocity sequence for tracking checks."""
    cfg = SynthConfig(n_sequences=1, n_frames=n_frames, size=size,
                      n_distractors=0)
    rng = np.random.default_rng(seed)
    bg = _background(rng, cfg.size, cfg.background_level, cfg.background_texture)
    start = np.array([cfg.margin + 10.0, cfg.margin + 14.0])
    vel = np.asarray(velocity, dtype=np.float64)
    frames = []
    boxes = np.empty((n_frames, 4))
    half = (cfg.box_side - 1) / 2.0
    for t in range(n_frames):
        pos = start + t * vel
        img = bg.copy()
        _draw_blob(img, pos, cfg.blob_sigma, cfg.blob_peak)
        frames.append(np.clip(img, 0.0, 1.0))
        boxes[t] = (pos[0] - half, pos[1] - half, cfg.box_side, cfg.box_side)
    return write_sequence(out_dir, frames, boxes, "translate000")
