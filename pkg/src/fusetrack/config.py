"""Plain-text run configuration.

Format: one `dotted.key = value` assignment per line; `#` starts a
comment; blank lines ignored.  The schema is the DEFAULTS table below,
which also fixes each key's type.  Serialization is canonical (sorted
keys, one space around `=`, floats via repr), so serialize -> parse ->
serialize is byte-identical.

CLI flags mirror config paths: `--train.lr_start 0.01` overrides the
`train.lr_start` key.
"""

from __future__ import annotations

from .errors import ConfigError

# key -> default value; the default's type is the key's schema type
DEFAULTS = {
    "preset": "desk",
    "seed": 7,
    "paths.dataset": "",
    "paths.out": "runs",
    "cf.lam": 1e-2,
    "cf.window": True,
    "cf.energy_lambda": True,
    "train.epochs": 10,
    "train.pairs_per_epoch": 40,
    "train.batch_size": 2,
    "train.lr_start": 2e-2,
    "train.lr_end": 1e-4,
    "train.momentum": 0.9,
    "train.frame_gap": 100,
    "train.label_radius": 8.0,
    "train.balanced": True,
    "tracker.scales": (0.9745, 1.0, 1.0375),
    "tracker.scale_damping": 0.59,
    "tracker.template_update": "frozen",
    "tracker.update_rate": 0.01,
    "tracker.response_upsample": 1,
    "tracker.scale_penalty": 1.0,
    "eval.threshold": 0.0,
    "eval.reinit_skip": 5,
    "eval.burn_in": 10,
    "synth.n_sequences": 4,
    "synth.n_frames": 60,
    "synth.size": 240,
    "synth.n_distractors": 2,
    "synth.seed": 0,
}


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key, text):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text not in ("true", "false"):
                raise ValueError("expected true/false")
            return text == "true"
        if isinstance(default, tuple):
            return tuple(float(x) for x in text.split(","))
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {text!r} ({e})")


def default_config():
    return dict(DEFAULTS)


def parse_config(text, base=None):
    """Parse config text over a base mapping (defaults if None)."""
    cfg = dict(DEFAULTS) if base is None else dict(base)
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {ln}: unknown config key {key!r}")
        cfg[key] = _parse_value(key, value)
    return cfg


def serialize_config(cfg):
    lines = []
    for key in sorted(cfg):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        lines.append(f"{key} = {_format_value(cfg[key])}")
    return "\n".join(lines) + "\n"


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base=base)


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))


def apply_overrides(cfg, overrides):
    """Merge {key: string} CLI overrides; values go through the schema."""
    out = dict(cfg)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse_value(key, value) if isinstance(value, str) else value
    return out


# -- object builders ----------------------------------------------------

def make_model(cfg, rng=None):
    import numpy as np
    from .model import SimilarityModel
    if rng is None:
        rng = np.random.default_rng(cfg["seed"])
    return SimilarityModel(cfg["preset"], rng=rng, cf_lambda=cfg["cf.lam"],
                           cf_window=cfg["cf.window"],
                           cf_energy_lambda=cfg["cf.energy_lambda"])


def make_schedule(cfg):
    from .training import TrainSchedule
    return TrainSchedule(epochs=cfg["train.epochs"],
                         pairs_per_epoch=cfg["train.pairs_per_epoch"],
                         batch_size=cfg["train.batch_size"],
                         lr_start=cfg["train.lr_start"],
                         lr_end=cfg["train.lr_end"],
                         momentum=cfg["train.momentum"],
                         seed=cfg["seed"],
                         frame_gap=cfg["train.frame_gap"],
                         label_radius=cfg["train.label_radius"],
                         balanced=cfg["train.balanced"])


def make_tracker_config(cfg):
    from .tracker import TrackerConfig
    return TrackerConfig(scales=tuple(cfg["tracker.scales"]),
                         scale_damping=cfg["tracker.scale_damping"],
                         template_update=cfg["tracker.template_update"],
                         update_rate=cfg["tracker.update_rate"],
                         response_upsample=cfg["tracker.response_upsample"],
                         scale_penalty=cfg["tracker.scale_penalty"])


def make_synth_config(cfg):
    from .synth import SynthConfig
    return SynthConfig(n_sequences=cfg["synth.n_sequences"],
                       n_frames=cfg["synth.n_frames"],
                       size=cfg["synth.size"],
                       n_distractors=cfg["synth.n_distractors"])
