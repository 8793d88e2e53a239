"""Declarative run configuration.

One JSON document drives every subcommand; unknown keys are rejected at
any level, and the resolved document is written into the run directory so
a run can be reproduced from it alone.
"""

import json
import os
from dataclasses import dataclass

from .data import SynthSpec
from .frontend import PROSODY_CHANNELS, FrameSpec, PitchConfig
from .training import MtlScheme, TrainConfig


class ConfigError(ValueError):
    pass


_FRAME_DEFAULTS = {"window_samples": 400, "hop_samples": 160, "n_mels": 80}
_PITCH_DEFAULTS = {"f0_min": 60.0, "f0_max": 400.0, "dp_penalty": 0.5,
                   "nccf_floor_eps": 1e-8}
_SYNTH_DEFAULTS = {
    "n_content_classes": 4, "n_contour_classes": 2, "utterance_seconds": 2.0,
    "train_per_intent": 50, "val_per_intent": 10, "test_per_intent": 10,
    "noise_snr_db": 20.0, "seed": 0,
}
_MTL_DEFAULTS = {"kind": "random_per_step", "a": 1.0, "b": 1.0}
_TRAIN_DEFAULTS = {
    "arch": "student", "n_intents": 8, "epochs": 20, "early_stop_patience": 10,
    "batch_size": 16, "lr_head": 1e-3, "lr_encoder": None,
    "mtl": _MTL_DEFAULTS, "distill_parts": "both", "distill_level": "frame",
    "teacher_mode": "pretrained_frozen", "teacher_path": None,
    "feature_mask": list(PROSODY_CHANNELS), "hidden_channels": 64,
    "n_layers": 3, "kernel": 5, "downsample_factor": 2, "lstm_hidden": 32,
    "prosody_attention": False, "seed": 0,
}
_PATH_DEFAULTS = {"data_dir": None, "manifest": None, "run_dir": None,
                  "cache_dir": None}
_TOP_DEFAULTS = {"crop_seconds": 2.0, "workers": None}  # None: cores, capped at 8


def _merge(section: str, defaults: dict, given) -> dict:
    if given is None:
        return dict(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be an object")
    merged = dict(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {section}.{key}")
        merged[key] = value
    return merged


@dataclass
class RunConfig:
    frames: FrameSpec
    pitch: PitchConfig
    synth: SynthSpec
    train: TrainConfig
    paths: dict
    crop_seconds: float
    workers: int
    resolved: dict  # the fully-populated document

    def write(self, path):
        with open(path, "w", encoding="ascii") as f:
            json.dump(self.resolved, f, sort_keys=True, indent=1)
            f.write("\n")


def resolve_config(doc: dict | None) -> RunConfig:
    """Validate and fill a config document with defaults."""
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    known_sections = {"frames", "pitch", "synth", "train", "paths",
                      "crop_seconds", "workers"}
    for key in doc:
        if key not in known_sections:
            raise ConfigError(f"unknown config key {key}")

    frames = _merge("frames", _FRAME_DEFAULTS, doc.get("frames"))
    pitch = _merge("pitch", _PITCH_DEFAULTS, doc.get("pitch"))
    synth = _merge("synth", _SYNTH_DEFAULTS, doc.get("synth"))
    train = _merge("train", _TRAIN_DEFAULTS, doc.get("train"))
    train["mtl"] = _merge("train.mtl", _MTL_DEFAULTS, train.get("mtl"))
    paths = _merge("paths", _PATH_DEFAULTS, doc.get("paths"))
    crop_seconds = doc.get("crop_seconds", _TOP_DEFAULTS["crop_seconds"])
    workers = doc.get("workers", _TOP_DEFAULTS["workers"])
    if workers is None:
        workers = min(8, os.cpu_count() or 1)

    resolved = {
        "frames": frames, "pitch": pitch, "synth": synth, "train": train,
        "paths": paths, "crop_seconds": crop_seconds, "workers": workers,
    }

    try:
        frame_spec = FrameSpec(**frames)
        pitch_cfg = PitchConfig(**pitch)
        synth_spec = SynthSpec(**synth)
        mtl = MtlScheme(**train["mtl"])
        train_kwargs = {k: v for k, v in train.items() if k != "mtl"}
        train_kwargs["feature_mask"] = tuple(train_kwargs["feature_mask"])
        train_cfg = TrainConfig(mtl=mtl, **train_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    return RunConfig(frames=frame_spec, pitch=pitch_cfg, synth=synth_spec,
                     train=train_cfg, paths=paths, crop_seconds=float(crop_seconds),
                     workers=int(workers), resolved=resolved)


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
