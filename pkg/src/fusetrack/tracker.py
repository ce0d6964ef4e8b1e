"""Online tracking: scale-searched template matching frame to frame.

Each step crops the search region at three relative scales around the
previous center, scores all three response maps with the stored CF
kernel, and takes the global argmax.  The winning cell maps back to an
image displacement through the network stride and the crop's pixel
scale; the winning scale is damped before it touches the box size.
The template is frozen by default; cf_refresh blends a freshly solved
kernel in at a small rate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import cv2
import numpy as np

from .data import box_center, context_side, crop_square

# published scale triplet and interpolation factor
DEFAULT_SCALES = (0.9745, 1.0, 1.0375)
DEFAULT_DAMPING = 0.59


@dataclass
class TrackerConfig:
    scales: tuple = DEFAULT_SCALES
    scale_damping: float = DEFAULT_DAMPING
    template_update: str = "frozen"          # or "cf_refresh"
    update_rate: float = 0.01
    response_upsample: int = 1               # >1 interpolates the response
    scale_penalty: float = 1.0               # <1 discounts non-middle scales

    def __post_init__(self):
        if len(self.scales) != 3 or list(self.scales) != sorted(self.scales):
            raise ValueError("scales must be three ascending values")
        if self.scales[1] != 1.0:
            raise ValueError("middle scale must be 1")
        if not 0.0 <= self.scale_damping <= 1.0:
            raise ValueError("scale_damping must be in [0, 1]")
        if self.template_update not in ("frozen", "cf_refresh"):
            raise ValueError(f"unknown template_update {self.template_update!r}")
        if not 0.0 <= self.update_rate <= 1.0:
            raise ValueError("update_rate must be in [0, 1]")
        if self.response_upsample < 1:
            raise ValueError("response_upsample must be >= 1")
        if not 0.0 < self.scale_penalty <= 1.0:
            raise ValueError("scale_penalty must be in (0, 1]")


@dataclass
class TrackerState:
    center: tuple            # (cx, cy) frame pixels
    size: tuple              # (w, h) frame pixels
    scale: float             # damped relative scale multiplier
    template: np.ndarray     # CF kernel (m, m, d)
    frame_index: int = 0


def state_box(state):
    """(x, y, w, h) with the same center convention as ground truth."""
    w, h = state.size
    return (state.center[0] - (w - 1) / 2.0, state.center[1] - (h - 1) / 2.0,
            w, h)


def cell_displacement(u, dims, stride, crop_scale, upsample=1):
    """Image-pixel displacement of response cell u from the map center."""
    c = ((dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0)
    dy = stride * (u[0] - c[0]) / (crop_scale * upsample)
    dx = stride * (u[1] - c[1]) / (crop_scale * upsample)
    return dx, dy


def displacement_cell(dx, dy, dims, stride, crop_scale, upsample=1):
    """Inverse of cell_displacement (exact on the cell lattice)."""
    c = ((dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0)
    return (dy * crop_scale * upsample / stride + c[0],
            dx * crop_scale * upsample / stride + c[1])


def _exemplar_crop(frame, center, size, exemplar_px):
    side = context_side((0.0, 0.0, size[0], size[1]))
    return crop_square(frame, center, side, exemplar_px)[:, :, None]


def init(frame, box, model, cfg=None):
    """Tracker state from a first-frame box: solve the CF template once."""
    cfg = cfg or TrackerConfig()
    center = box_center(box)
    size = (float(box[2]), float(box[3]))
    ex = _exemplar_crop(frame, center, size, model.exemplar_size)
    template = model.template(ex)
    return TrackerState(center=center, size=size, scale=1.0,
                        template=template, frame_index=0)


def _search_crop(frame, center, base_side, scale_i, search_px):
    side = base_side * scale_i
    crop = crop_square(frame, center, side, search_px)
    return crop[:, :, None], search_px / side


def step(state, frame, model, cfg=None):
    """One tracking update; returns the new state."""
    cfg = cfg or TrackerConfig()
    fh, fw = frame.shape[:2]
    cx = min(max(state.center[0], 0.0), fw - 1.0)
    cy = min(max(state.center[1], 0.0), fh - 1.0)
    base_side = context_side((0.0, 0.0, state.size[0], state.size[1])) \
        * (model.search_size / model.exemplar_size)

    best = None
    for i, s_i in enumerate(cfg.scales):
        crop, crop_scale = _search_crop(frame, (cx, cy), base_side, s_i,
                                        model.search_size)
        r = model.score(state.template, model.search_features(crop))
        if cfg.response_upsample > 1:
            u = cfg.response_upsample
            r = cv2.resize(r, (r.shape[1] * u, r.shape[0] * u),
                           interpolation=cv2.INTER_CUBIC)
        if cfg.scale_penalty < 1.0 and s_i != 1.0:
            r = r * cfg.scale_penalty
        peak = np.unravel_index(np.argmax(r), r.shape)
        if best is None or r[peak] > best[0]:
            best = (r[peak], i, peak, r.shape, crop_scale)

    _, i_star, peak, dims, crop_scale = best
    dx, dy = cell_displacement(peak, dims, model.stride, crop_scale,
                               cfg.response_upsample)
    new_center = (min(max(cx + dx, 0.0), fw - 1.0),
                  min(max(cy + dy, 0.0), fh - 1.0))
    # damped blend between the old absolute scale and the chosen
    # candidate (old * s_i); picking the middle scale changes nothing
    g = cfg.scale_damping
    applied = (1.0 - g) + g * cfg.scales[i_star]
    new_scale = state.scale * applied
    new_size = (state.size[0] * applied, state.size[1] * applied)

    template = state.template
    if cfg.template_update == "cf_refresh":
        ex = _exemplar_crop(frame, new_center, new_size, model.exemplar_size)
        rho = cfg.update_rate
        template = (1.0 - rho) * template + rho * model.template(ex)

    return replace(state, center=new_center, size=new_size, scale=new_scale,
                   template=template, frame_index=state.frame_index + 1)


def track_sequence(seq, model, cfg=None, init_box=None):
    """Per-frame boxes; the first frame echoes the init box."""
    cfg = cfg or TrackerConfig()
    if len(seq) == 0:
        raise ValueError("empty sequence")
    box0 = np.asarray(seq.boxes[0] if init_box is None else init_box,
                      dtype=np.float64)
    out = np.empty((len(seq), 4))
    out[0] = box0
    state = init(_read(seq, 0), box0, model, cfg)
    for t in range(1, len(seq)):
        state = step(state, _read(seq, t), model, cfg)
        out[t] = state_box(state)
    return out


def _read(seq, t):
    try:
        return seq.image(t)
    except Exception as e:
        raise RuntimeError(f"cannot read frame {t} of {seq.name}: {e}") from e


class ModelTracker:
    """init/step adapter used by the evaluation loop."""

    def __init__(self, model, cfg=None):
        self.model = model
        self.cfg = cfg or TrackerConfig()

    def init(self, frame, box):
        return init(frame, box, self.model, self.cfg)

    def step(self, state, frame):
        state = step(state, frame, self.model, self.cfg)
        return state, state_box(state)
