"""Run configuration: file loading, flag generation, and override merging.

Precedence is defaults < config file < command-line flags. Flags are
generated from the dataclass fields themselves so the two never drift;
a flag left unset (None) keeps the underlying value.
"""

from __future__ import annotations

import argparse
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import get_type_hints

from .analysis import GlcmConfig
from .errors import ConfigError
from .losses import LossWeights
from .training import TrainConfig, config_from_dict, config_to_dict


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    glcm: GlcmConfig
    manifest: str | None = None
    out: str | None = None
    resume: str | None = None


def default_run_config() -> RunConfig:
    return RunConfig(train=TrainConfig(), glcm=GlcmConfig())


_RUN_KEYS = {"train", "glcm", "manifest", "out", "resume"}
_GLCM_KEYS = {"distances", "angles", "levels", "symmetric"}


def run_config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    glcm_data = data.get("glcm", {})
    bad = set(glcm_data) - _GLCM_KEYS
    if bad:
        raise ConfigError(f"unknown glcm keys: {', '.join(sorted(bad))}")
    if "distances" in glcm_data:
        glcm_data = {**glcm_data, "distances": tuple(glcm_data["distances"])}
    if "angles" in glcm_data:
        glcm_data = {**glcm_data, "angles": tuple(glcm_data["angles"])}
    return RunConfig(
        train=config_from_dict(data.get("train", {})),
        glcm=GlcmConfig(**glcm_data),
        manifest=data.get("manifest"),
        out=data.get("out"),
        resume=data.get("resume"),
    )


def run_config_to_dict(cfg: RunConfig) -> dict:
    return {
        "train": config_to_dict(cfg.train),
        "glcm": {
            "distances": list(cfg.glcm.distances),
            "angles": list(cfg.glcm.angles),
            "levels": cfg.glcm.levels,
            "symmetric": cfg.glcm.symmetric,
        },
        "manifest": cfg.manifest,
        "out": cfg.out,
        "resume": cfg.resume,
    }


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return default_run_config()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return run_config_from_dict(data)


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(run_config_to_dict(cfg), indent=2) + "\n")


# ---------------------------------------------------------------------------
# flag generation

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_train_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training overrides")
    hints = get_type_hints(TrainConfig)
    for f in fields(TrainConfig):
        if f.name in ("weights", "seed"):
            continue
        group.add_argument(_flag(f.name), type=hints[f.name], default=None)
    for f in fields(LossWeights):
        if f.name.startswith("use_"):
            group.add_argument(
                _flag(f.name), action=argparse.BooleanOptionalAction, default=None
            )
        else:
            group.add_argument(_flag(f"weight_{f.name}"), type=float, default=None)


def add_glcm_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("glcm overrides")
    group.add_argument(
        "--glcm-distances", default=None, help="comma-separated integer distances"
    )
    group.add_argument(
        "--glcm-angles", default=None, help="comma-separated angles in radians"
    )
    group.add_argument("--glcm-levels", type=int, default=None)
    group.add_argument(
        "--glcm-symmetric", action=argparse.BooleanOptionalAction, default=None
    )


def apply_train_overrides(cfg: TrainConfig, args: argparse.Namespace) -> TrainConfig:
    updates = {}
    for f in fields(TrainConfig):
        if f.name == "weights":
            continue
        value = getattr(args, f.name, None)
        if value is not None:
            updates[f.name] = value
    weight_updates = {}
    for f in fields(LossWeights):
        attr = f.name if f.name.startswith("use_") else f"weight_{f.name}"
        value = getattr(args, attr, None)
        if value is not None:
            weight_updates[f.name] = value
    if weight_updates:
        updates["weights"] = replace(cfg.weights, **weight_updates)
    return replace(cfg, **updates) if updates else cfg


def _parse_seq(text: str, cast, flag: str) -> tuple:
    try:
        return tuple(cast(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated values, got {text!r}")


def apply_glcm_overrides(cfg: GlcmConfig, args: argparse.Namespace) -> GlcmConfig:
    updates = {}
    if getattr(args, "glcm_distances", None) is not None:
        updates["distances"] = _parse_seq(args.glcm_distances, int, "--glcm-distances")
    if getattr(args, "glcm_angles", None) is not None:
        updates["angles"] = _parse_seq(args.glcm_angles, float, "--glcm-angles")
    if getattr(args, "glcm_levels", None) is not None:
        updates["levels"] = args.glcm_levels
    if getattr(args, "glcm_symmetric", None) is not None:
        updates["symmetric"] = args.glcm_symmetric
    return replace(cfg, **updates) if updates else cfg
