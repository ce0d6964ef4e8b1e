"""Sequence datasets on disk and the pair-cropping geometry.

Disk layout: one directory per sequence, numbered image frames, and a
groundtruth.txt with one `x,y,w,h` line per frame (floats, pixels,
top-left origin, 0-based).  An optional attributes.txt lists one tag
per line for report grouping.

Crop geometry: the exemplar is a square of side sqrt((w+2p)(h+2p))
around the box center, p = (w+h)/4, rescaled to the configured
exemplar resolution; the search crop shares the same scale factor and
covers proportionally more context.  Out-of-frame area is filled with
the frame's mean intensity.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import cv2
import numpy as np

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def imread_gray(path):
    """Load as float64 single channel in [0, 1]; 3-channel inputs are
    reduced by the plain channel average."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"cannot read image {path}")
    img = img.astype(np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    if img.max() > 1.0:
        img = img / 255.0
    return img


@dataclass
class Sequence:
    name: str
    frames: list
    boxes: np.ndarray
    attributes: tuple = ()

    def __len__(self):
        return len(self.frames)

    def image(self, i):
        return imread_gray(self.frames[i])


@dataclass
class SequenceDataset:
    sequences: list = field(default_factory=list)

    def __len__(self):
        return len(self.sequences)


def _numeric_key(name):
    m = re.search(r"(\d+)", os.path.basename(name))
    return (int(m.group(1)) if m else 0, name)


def load_sequence(path):
    frames = sorted(
        (os.path.join(path, f) for f in os.listdir(path)
         if f.lower().endswith(IMAGE_EXTS)),
        key=_numeric_key)
    gt_path = os.path.join(path, "groundtruth.txt")
    if not os.path.isfile(gt_path):
        raise FileNotFoundError(f"missing groundtruth.txt in {path}")
    boxes = np.loadtxt(gt_path, delimiter=",", ndmin=2, dtype=np.float64)
    if boxes.shape[0] != len(frames):
        raise ValueError(
            f"{path}: {len(frames)} frames but {boxes.shape[0]} groundtruth lines")
    if boxes.shape[1] != 4:
        raise ValueError(f"{path}: groundtruth lines must be x,y,w,h")
    attrs = ()
    attr_path = os.path.join(path, "attributes.txt")
    if os.path.isfile(attr_path):
        with open(attr_path) as fh:
            attrs = tuple(line.strip() for line in fh if line.strip())
    return Sequence(name=os.path.basename(os.path.normpath(path)),
                    frames=frames, boxes=boxes, attributes=attrs)


def load_dataset(root):
    seq_dirs = sorted(
        os.path.join(root, d) for d in os.listdir(root)
        if os.path.isdir(os.path.join(root, d)))
    if not seq_dirs:
        raise FileNotFoundError(f"no sequence directories under {root}")
    return SequenceDataset([load_sequence(d) for d in seq_dirs])


def box_center(box):
    x, y, w, h = box
    return (x + (w - 1) / 2.0, y + (h - 1) / 2.0)


def context_side(box):
    """Square context side: sqrt((w+2p)(h+2p)) with pad p=(w+h)/4."""
    w, h = box[2], box[3]
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate box {box}")
    p = (w + h) / 4.0
    return float(np.sqrt((w + 2 * p) * (h + 2 * p)))


def pair_scale(box, exemplar_px):
    """Scale factor s with s^2 * (w+2p)(h+2p) = exemplar_px^2."""
    return exemplar_px / context_side(box)


def crop_square(img, center, side, out_px):
    """Resample a square window to out_px^2, mean-filled outside."""
    scale = out_px / side
    tx = (out_px - 1) / 2.0 - scale * center[0]
    ty = (out_px - 1) / 2.0 - scale * center[1]
    mat = np.array([[scale, 0.0, tx], [0.0, scale, ty]])
    fill = float(img.mean())
    out = cv2.warpAffine(img, mat, (out_px, out_px), flags=cv2.INTER_LINEAR,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=fill)
    return out.astype(np.float64)


def crop_pair(img_x, box_x, img_z, box_z, exemplar_px, search_px):
    """Exemplar and search crops for one training pair.

    Each crop is centered on its own frame's box so the target sits at
    the center; the search crop keeps the exemplar's pixel scale while
    covering search_px/exemplar_px times more context.
    """
    side_x = context_side(box_x)
    side_z = context_side(box_z) * (search_px / exemplar_px)
    ex = crop_square(img_x, box_center(box_x), side_x, exemplar_px)
    se = crop_square(img_z, box_center(box_z), side_z, search_px)
    return ex[:, :, None], se[:, :, None]


def sample_pair_indices(dataset, rng, frame_gap=100):
    """Uniform sequence, then a uniform frame pair within the gap."""
    seq = dataset.sequences[int(rng.integers(len(dataset.sequences)))]
    n = len(seq)
    i = int(rng.integers(n))
    lo, hi = max(0, i - frame_gap), min(n - 1, i + frame_gap)
    j = int(rng.integers(lo, hi + 1))
    return seq, i, j
