"""Run configuration: one JSON document covering data generation, training,
evaluation and output paths. Unknown keys are rejected; every field has a
default; flags of the form ``--section.key value`` override file values."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .losses import LossWeights
from .mining import BatchSpec
from .synthdata import GeneratorConfig
from .trainer import TrainConfig

SEED_ENV_VAR = "SETMETRIC_SEED"


class ConfigError(Exception):
    """Raised for malformed configs; maps to exit status 1 in the CLI."""


DEFAULTS: dict = {
    "seed": None,  # when set (or via SETMETRIC_SEED), overrides both seeds below
    "data": {
        "path": None,  # load this embedding file instead of generating
        "num_identities": 32,
        "clips_per_identity": 4,
        "frames_per_clip": 4,
        "input_dim": 32,
        "sigma_between": 3.0,
        "sigma_within": 1.0,
        "p_occ": 0.25,
        "occlusion_mode": "uniform_noise",
        "seed": 0,
    },
    "train": {
        "P": 4,
        "K": 4,
        "T": 4,
        "eta": 0.3,
        "lambdas": [1.0, 0.5, 0.5, 0.5],
        "metric": "euclidean",
        "set_kind": "hybrid",
        "epochs": 200,
        "learning_rate": 3e-4,
        "decay_factor": 0.1,
        "decay_epochs": [80, 160],
        "steps_per_epoch": None,
        "eval_interval": 0,
        "seed": 0,
        "use_stri": True,
        "use_hpsc": True,
        "encoder_layout": "linear",
        "embedding_dim": 8,
        "hidden_dim": 64,
    },
    "evaluation": {
        "k_max": 20,
        "seeds": [0, 1, 2, 3, 4],
    },
    "output": {
        "metrics_path": "metrics.json",
        "curves_csv": None,
        "embeddings_path": None,
    },
}


def _merge(base: dict, user: dict, path: str = "") -> dict:
    merged = copy.deepcopy(base)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} must be an object")
            merged[key] = _merge(base[key], value, here)
        else:
            merged[key] = value
    return merged


def _coerce_flag_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw  # bare strings like euclidean


def apply_flag_overrides(resolved: dict, overrides: list[tuple[str, str]]) -> dict:
    for key_path, raw in overrides:
        parts = key_path.split(".")
        target = resolved
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"unknown config key {key_path!r}")
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError(f"unknown config key {key_path!r}")
        target[parts[-1]] = _coerce_flag_value(raw)
    return resolved


def load_run_config(path: str | None, overrides: list[tuple[str, str]] | None = None) -> dict:
    """Resolve defaults, an optional JSON file, flag overrides, and the seed
    environment variable into one fully populated config document."""
    if path is None:
        user = {}
    else:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top-level config must be a JSON object")
    resolved = _merge(DEFAULTS, user)
    if overrides:
        resolved = apply_flag_overrides(resolved, overrides)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            resolved["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from None
    if resolved["seed"] is not None:
        resolved["data"]["seed"] = int(resolved["seed"])
        resolved["train"]["seed"] = int(resolved["seed"])
    return resolved


def generator_config(resolved: dict) -> GeneratorConfig:
    d = resolved["data"]
    try:
        return GeneratorConfig(
            num_identities=d["num_identities"],
            clips_per_identity=d["clips_per_identity"],
            frames_per_clip=d["frames_per_clip"],
            input_dim=d["input_dim"],
            sigma_between=d["sigma_between"],
            sigma_within=d["sigma_within"],
            p_occ=d["p_occ"],
            occlusion_mode=d["occlusion_mode"],
            seed=d["seed"],
        )
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from None


def train_config(resolved: dict) -> TrainConfig:
    t = resolved["train"]
    try:
        return TrainConfig(
            batch=BatchSpec(P=t["P"], K=t["K"], T=t["T"], seed=t["seed"]),
            loss=LossWeights(eta=t["eta"], lambdas=tuple(t["lambdas"])),
            metric=t["metric"],
            set_kind=t["set_kind"],
            epochs=t["epochs"],
            learning_rate=t["learning_rate"],
            decay_factor=t["decay_factor"],
            decay_epochs=tuple(t["decay_epochs"]),
            steps_per_epoch=t["steps_per_epoch"],
            eval_interval=t["eval_interval"],
            seed=t["seed"],
            use_stri=t["use_stri"],
            use_hpsc=t["use_hpsc"],
            encoder_layout=t["encoder_layout"],
            embedding_dim=t["embedding_dim"],
            hidden_dim=t["hidden_dim"],
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
