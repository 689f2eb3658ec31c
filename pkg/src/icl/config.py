"""Run configuration: defaults, presets, file/flag overlays, validation.

A run is described by one JSON document. Flags may override any leaf
through dotted paths (``training.alpha=2``), and every command writes
the fully resolved document next to its outputs so a run can be
reproduced from that file alone.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path


class ConfigError(Exception):
    pass


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "dataset": {
        "manifest": None,      # path to a manifest JSON, or null
        "synthesis": None,     # synthetic-dataset parameters, or null
    },
    "segmentation": {"segment_len": 30.0, "overlap": 15.0},
    "split": {"ratios": [0.7, 0.15, 0.15]},
    "features": {
        "frame_len_ms": 50.0,
        "frame_shift_ms": 25.0,
        "fft_size": None,
        "kinds": ["mel", "cqt"],
        "mel": {"n_filters": 300},
        "cqt": {"bins_per_octave": 36, "f_min": 50.0, "f_max": None},
        # Optional framing override for CQT only, e.g. {"frame_shift_ms": 33.4}.
        "cqt_frame": None,
    },
    "encoder": {
        "stem_channels": 128,
        "blocks_per_stage": [2, 2, 2],
        "channel_widths": [128, 256, 512],
        "embedding_dim": 512,
    },
    "training": {
        "mode": "icl",
        "epochs": 200,
        "batch_size": 32,
        "lr": 5e-4,
        "weight_decay": 1e-5,
        "alpha": 0.5,
        "symmetric_icl": False,
    },
}

# Laptop-scale preset: a 4-class synthetic set whose tonal-line cue lives
# below the CQT range (Mel-only) and whose envelope-rate cue lives in the
# high band (CQT-friendly), two line layouts x two rates.
DESK_PRESET: dict = {
    "dataset": {
        "synthesis": {
            "n_classes": 4,
            "line_freqs": [[60.0, 95.0, 130.0], [60.0, 95.0, 130.0],
                           [75.0, 110.0, 145.0], [75.0, 110.0, 145.0]],
            "mod_rates": [4.5, 9.0, 4.5, 9.0],
            "mod_depth": 0.8,
            "carrier_band": [400.0, 900.0],
            "snr_db": 10.0,
            "tracks_per_class": 8,
            "track_duration": 12.0,
            "sample_rate": 2000,
        },
    },
    "segmentation": {"segment_len": 3.0, "overlap": 1.5},
    "features": {
        "fft_size": 256,
        "mel": {"n_filters": 48},
        "cqt": {"bins_per_octave": 18, "f_min": 200.0, "f_max": None},
    },
    "encoder": {
        "stem_channels": 16,
        "blocks_per_stage": [2, 2, 2],
        "channel_widths": [16, 32, 64],
        "embedding_dim": 64,
    },
    "training": {"epochs": 20, "batch_size": 16},
}

PRESETS = {"desk": DESK_PRESET}


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def set_dotted(cfg: dict, path: str, raw_value: str) -> None:
    """Set a leaf by dotted path; values parse as JSON, falling back to text."""
    keys = path.split(".")
    node = cfg
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            node[key] = {}
        node = node[key]
    try:
        node[keys[-1]] = json.loads(raw_value)
    except json.JSONDecodeError:
        node[keys[-1]] = raw_value


def resolve_config(config_path=None, preset: str | None = None,
                   overrides: list[str] | None = None, env=None) -> dict:
    """defaults -> preset -> config file -> --set overrides -> ICL_SEED."""
    env = os.environ if env is None else env
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        cfg = _deep_merge(cfg, PRESETS[preset])
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = _deep_merge(cfg, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        key, _, value = item.partition("=")
        set_dotted(cfg, key.strip(), value.strip())
    if "ICL_SEED" in env:
        try:
            cfg["seed"] = int(env["ICL_SEED"])
        except ValueError as exc:
            raise ConfigError(f"ICL_SEED must be an integer, got {env['ICL_SEED']!r}") from exc
    validate_config(cfg)
    return cfg


def _check(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{field}: {message}")


def validate_config(cfg: dict) -> None:
    tr = cfg["training"]
    _check(tr["mode"] in ("icl", "mel", "cqt", "stft"), "training.mode",
           f"must be icl|mel|cqt|stft, got {tr['mode']!r}")
    _check(tr["alpha"] >= 0, "training.alpha", f"must be >= 0, got {tr['alpha']}")
    _check(tr["epochs"] >= 1, "training.epochs", "must be >= 1")
    _check(tr["lr"] > 0, "training.lr", "must be positive")
    _check(tr["weight_decay"] >= 0, "training.weight_decay", "must be >= 0")
    if tr["mode"] == "icl":
        _check(tr["batch_size"] >= 2, "training.batch_size",
               "contrastive mode needs batch_size >= 2")
    else:
        _check(tr["batch_size"] >= 1, "training.batch_size", "must be >= 1")

    ratios = cfg["split"]["ratios"]
    _check(len(ratios) == 3 and all(r > 0 for r in ratios), "split.ratios",
           f"need three positive ratios, got {ratios}")
    _check(abs(sum(ratios) - 1.0) <= 1e-9, "split.ratios",
           f"must sum to 1, got {sum(ratios)!r}")

    seg = cfg["segmentation"]
    _check(0 <= seg["overlap"] < seg["segment_len"], "segmentation.overlap",
           f"must be in [0, segment_len={seg['segment_len']})")

    feats = cfg["features"]
    _check(feats["frame_len_ms"] > 0 and 0 < feats["frame_shift_ms"] <= feats["frame_len_ms"],
           "features.frame_shift_ms", "need 0 < shift <= frame length")
    _check(feats["mel"]["n_filters"] >= 1, "features.mel.n_filters", "must be >= 1")
    _check(feats["cqt"]["bins_per_octave"] >= 1, "features.cqt.bins_per_octave", "must be >= 1")
    _check(all(k in ("stft", "mel", "cqt") for k in feats["kinds"]), "features.kinds",
           f"entries must be stft|mel|cqt, got {feats['kinds']}")
    needed = ("mel", "cqt") if tr["mode"] == "icl" else (tr["mode"],)
    for kind in needed:
        _check(kind in feats["kinds"], "features.kinds",
               f"mode {tr['mode']!r} needs {kind!r} in extracted kinds {feats['kinds']}")

    enc = cfg["encoder"]
    _check(len(enc["blocks_per_stage"]) == len(enc["channel_widths"]), "encoder",
           "blocks_per_stage and channel_widths must have equal length")
    _check(enc["embedding_dim"] == enc["channel_widths"][-1], "encoder.embedding_dim",
           f"must equal last channel width {enc['channel_widths'][-1]}")

    ds = cfg["dataset"]
    _check(ds["manifest"] is not None or ds["synthesis"] is not None, "dataset",
           "need either a manifest path or synthesis parameters")
    if ds["manifest"] is not None:
        _check(Path(ds["manifest"]).exists(), "dataset.manifest",
               f"file not found: {ds['manifest']}")


def save_config(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def load_config(path) -> dict:
    return json.loads(Path(path).read_text())
