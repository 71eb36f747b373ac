"""Experiment configuration: defaults, presets, YAML files, and dotted
command-line overrides, merged in that order.

The resolved configuration is a nested dict with fixed sections (data,
model, loss, augment, train, plus a few top-level scalars). Every key is
validated against the schema derived from the component dataclasses, so a
typo fails loudly instead of silently training the wrong thing. The
materialize step turns the dict into the component config objects; the
model section deliberately omits vocabulary and raster size, which come
from the dataset at run time.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import yaml

from .augment import AugmentConfig
from .data import ToySpec
from .losses import KNOWN_LOSSES, LossConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Bad configuration: unknown key, wrong type, or invalid value."""


DEFAULTS: dict = {
    "seed": 0,
    "preset": "",
    "freeze_modules": [],
    "data": {
        "n_identities": 200,
        "images_per_identity": 3,
        "captions_per_image": 2,
        "height": 48,
        "width": 24,
        "split_fractions": [0.7, 0.1, 0.2],
        "color_jitter": 10,
        "pixel_noise": 5,
        "max_shift": 2,
    },
    "model": {
        "embed_dim": 32,
        "hidden_dim": 64,
        "image_layers": 3,
        "text_layers": 3,
        "patch_size": 8,
        "dropout": 0.0,
        "tau_init": 0.07,
        "dropped_text_layers": [],
    },
    "loss": {
        "weights": {"n_itc": 1.0},
        "tau_s": 0.1,
        "eps": 1e-8,
        "soft_label": False,
        "diagonal_labels": False,
    },
    "augment": {
        "image_mode": "none",
        "pool_k": 2,
        "text_mode": "none",
        "text_ops": ["back_translate", "random_deletion"],
        "alpha": 0.05,
        "back_translate_p": 0.1,
        "max_tokens": 77,
    },
    # from-scratch toy training wants a much hotter schedule than the
    # recipe's fine-tuning defaults (those live on Schedule itself)
    "train": {
        "epochs": 30,
        "batch_size": 64,
        "lr_init": 1e-5,
        "lr_peak": 1e-3,
        "lr_final": 1e-4,
        "warmup_frac": 0.1,
        "weight_decay": 0.02,
    },
}

_FULL_AUG = {"image_mode": "pool", "text_mode": "stack"}

PRESETS: dict = {
    # the full recipe: every loss family, every trick, full augmentation
    "tbps-clip": {
        "loss": {
            "weights": {"n_itc": 1.0, "ss_i": 0.35, "mvs_i": 0.45, "r_itc": 0.7, "c_itc": 0.1},
            "soft_label": True,
        },
        "model": {"dropout": 0.05},
        "freeze_modules": ["img.patch"],
        "augment": dict(_FULL_AUG),
    },
    # the cheap-but-close variant: two loss terms, tricks and augmentation kept
    "simplified": {
        "loss": {"weights": {"n_itc": 1.0, "r_itc": 0.7}, "soft_label": True},
        "model": {"dropout": 0.05},
        "freeze_modules": ["img.patch"],
        "augment": dict(_FULL_AUG),
    },
    # plain contrastive matching with one-hot diagonal targets, nothing else
    "clip-baseline": {
        "loss": {"weights": {"n_itc": 1.0}, "diagonal_labels": True},
    },
    # identity-aware targets plus tricks and augmentation, single loss term
    "nitc": {
        "loss": {"weights": {"n_itc": 1.0}, "soft_label": True},
        "model": {"dropout": 0.05},
        "freeze_modules": ["img.patch"],
        "augment": dict(_FULL_AUG),
    },
}


def merge(base: dict, patch: dict, path="") -> dict:
    """Recursive dict merge; scalar sections replace, dicts merge. The
    loss.weights map replaces wholesale so presets fully define their
    term mix."""
    out = copy.deepcopy(base)
    for key, value in patch.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(out[key], dict) and where != "loss.weights":
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a mapping, got {type(value).__name__}")
            out[key] = merge(out[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_override(text: str) -> tuple:
    """'section.key=value' -> (path list, parsed value). Values parse as
    YAML scalars, so numbers, booleans, lists and strings all work."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key=value")
    path, raw = text.split("=", 1)
    parts = [p for p in path.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override '{text}' has an empty key path")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"override '{text}': cannot parse value ({e})") from None
    if isinstance(value, str):
        # YAML 1.1 reads dotless scientific notation ("1e-5") as a string;
        # accept it as a float anyway.
        try:
            value = float(value)
        except ValueError:
            pass
    return parts, value


def _apply_override(config: dict, parts, value, full_path) -> dict:
    out = copy.deepcopy(config)
    node = out
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key '{'.'.join(parts[: i + 1])}'")
        node = node[part]
    leaf = parts[-1]
    inside_weights = len(parts) >= 2 and parts[-2] == "weights"
    if inside_weights:
        if leaf not in KNOWN_LOSSES:
            raise ConfigError(f"unknown loss term '{leaf}' in '{full_path}'")
        node[leaf] = value
    else:
        if leaf not in node:
            raise ConfigError(f"unknown config key '{full_path}'")
        node[leaf] = value
    return out


def resolve(
    preset: str = "",
    file: str | None = None,
    overrides=(),
) -> dict:
    """Layer defaults, preset, YAML file, and dotted overrides."""
    config = copy.deepcopy(DEFAULTS)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}'; choose from {sorted(PRESETS)}")
        config = merge(config, PRESETS[preset])
        config["preset"] = preset
    if file is not None:
        try:
            with open(file, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {file}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"config file {file}: {e}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {file} must hold a mapping")
        config = merge(config, loaded)
    for text in overrides:
        parts, value = _parse_override(text)
        config = _apply_override(config, parts, value, text.split("=", 1)[0])
    validate(config)
    return config


@dataclass(frozen=True)
class Experiment:
    """Materialized component configs plus run-level scalars."""

    seed: int
    preset: str
    freeze_modules: tuple
    data: ToySpec
    model: ModelConfig  # vocab and raster filled in at run time
    loss: LossConfig
    augment: AugmentConfig
    train: TrainConfig
    raw: dict  # the resolved dict this was built from


def validate(config: dict) -> None:
    """Materialize every section once, so component validation runs and
    bad values surface before any side effects."""
    materialize(config)


def materialize(config: dict) -> Experiment:
    try:
        d = config["data"]
        data = ToySpec(
            n_identities=d["n_identities"],
            images_per_identity=d["images_per_identity"],
            captions_per_image=d["captions_per_image"],
            height=d["height"],
            width=d["width"],
            split_fractions=tuple(d["split_fractions"]),
            color_jitter=d["color_jitter"],
            pixel_noise=d["pixel_noise"],
            max_shift=d["max_shift"],
        )
        m = config["model"]
        model = ModelConfig(
            embed_dim=m["embed_dim"],
            hidden_dim=m["hidden_dim"],
            image_layers=m["image_layers"],
            text_layers=m["text_layers"],
            patch_size=m["patch_size"],
            image_height=d["height"],
            image_width=d["width"],
            vocab=(),
            dropout=m["dropout"],
            tau_init=m["tau_init"],
            dropped_text_layers=tuple(m["dropped_text_layers"]),
        )
        lo = config["loss"]
        loss = LossConfig(
            weights={k: float(v) for k, v in lo["weights"].items()},
            tau_s=lo["tau_s"],
            eps=lo["eps"],
            soft_label=lo["soft_label"],
            diagonal_labels=lo["diagonal_labels"],
        )
        a = config["augment"]
        augment = AugmentConfig(
            image_mode=a["image_mode"],
            pool_k=a["pool_k"],
            text_mode=a["text_mode"],
            text_ops=tuple(a["text_ops"]),
            alpha=a["alpha"],
            back_translate_p=a["back_translate_p"],
            max_tokens=a["max_tokens"],
        )
        t = config["train"]
        train = TrainConfig(
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            lr_init=t["lr_init"],
            lr_peak=t["lr_peak"],
            lr_final=t["lr_final"],
            warmup_frac=t["warmup_frac"],
            weight_decay=t["weight_decay"],
        )
        seed = config["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
        freeze_modules = tuple(config["freeze_modules"])
        for name in freeze_modules:
            if not isinstance(name, str):
                raise ConfigError(f"freeze_modules entries must be strings, got {name!r}")
    except ConfigError:
        raise
    except KeyError as e:
        raise ConfigError(f"missing config key {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return Experiment(
        seed=seed,
        preset=config["preset"],
        freeze_modules=freeze_modules,
        data=data,
        model=model,
        loss=loss,
        augment=augment,
        train=train,
        raw=copy.deepcopy(config),
    )


def fingerprint(config: dict) -> str:
    """Short stable hash of a resolved configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def dump_yaml(config: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config, fh, sort_keys=True, default_flow_style=False)
