"""Run configuration: JSON with a strict schema and documented defaults.

Unknown keys are rejected with their full path so typos fail loudly.  The
defaults reproduce the acceptance-suite runs.  Leaf values (numbers, ranges,
weight tables) replace the default wholesale; sections merge key by key.
"""

from __future__ import annotations

import copy
import json

from .datagen import TASKS, DEFAULT_TASK_WEIGHTS, DatasetConfig
from .flowmatch import SamplerConfig, TrainConfig
from .model import ModelConfig
from .mspe import MspeConfig
from .render import SceneConfig
from .tokenizer import PruningPolicy, TokenizerStats


class ConfigError(ValueError):
    """Malformed run configuration; message carries the offending key path."""


DEFAULTS: dict = {
    "scene": {
        "width": 64,
        "height": 64,
        "n_spheres": [1, 3],
        "sphere_radius": [0.18, 0.45],
        "sphere_x": [-0.9, 0.9],
        "sphere_z": [-0.4, 1.2],
        "albedo": [0.2, 0.9],
        "ambient_level": [0.08, 0.25],
        "n_lights": 1,
        "light_x": [-1.1, 1.1],
        "light_y": [0.7, 1.7],
        "light_z": [-1.2, 1.0],
        "camera_position": [0.0, 0.9, -2.6],
        "camera_look_at": [0.0, 0.35, 0.4],
        "vfov_deg": 50.0,
        "proxy_radius": 0.12,
    },
    "dataset": {
        "n_samples": 500,
        "task_weights": dict(DEFAULT_TASK_WEIGHTS),
        "stops_range": [-3.0, 3.0],
        "tint_saturation": [0.5, 1.0],
        "min_light_move": 0.6,
        "min_object_move": 0.5,
        "joint_color_prob": 0.5,
    },
    "tokenizer": {
        "factor": 8,
        "mean": [0.5, 0.5, 0.5],
        "std": [0.25, 0.25, 0.25],
    },
    "pruning": {
        "tau": 0.2,
        "spatial_factors": [1, 2, 4, 8],
        "nonspatial_factors": [1, 2, 4, 8],
        "color_logits": [0.0, 1.0, 2.0, 4.0],
        "intensity_logits": [0.0, 1.0, 2.0, 4.0],
        "mode": "hard",
        "prune_object": False,
    },
    "model": {
        "model_dim": 128,
        "n_layers": 4,
        "n_heads": 4,
        "mlp_ratio": 4.0,
    },
    "optimizer": {
        "steps": 5000,
        "batch_size": 8,
        "lr": 1e-4,
        "weight_decay": 0.01,
        "ema_decay": 0.99,
        "ema_start": 0,
        "cond_dropout": 0.1,
        "augment": True,
        "box_scale_range": [0.8, 1.2],
        "seed": 0,
        "log_every": 1,
    },
    "sampler": {
        "num_steps": 32,
        "seed": 0,
    },
    "eval": {
        "seed": 0,
        "mode": "soft",
        "use_ema": True,
        "limit": None,
        "dump_png": False,
    },
}

# Leaves replaced wholesale rather than merged per key.
_LEAF_DICTS = {("dataset", "task_weights")}


def _merge(defaults, override, path: tuple):
    if isinstance(defaults, dict) and path not in _LEAF_DICTS:
        if not isinstance(override, dict):
            raise ConfigError(f"{'.'.join(path) or '<root>'}: expected an object")
        out = copy.deepcopy(defaults)
        for key, value in override.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key: {'.'.join(path + (key,))}")
            out[key] = _merge(defaults[key], value, path + (key,))
        return out
    if path in _LEAF_DICTS:
        if not isinstance(override, dict):
            raise ConfigError(f"{'.'.join(path)}: expected an object")
        unknown = set(override) - set(TASKS)
        if unknown:
            raise ConfigError(f"{'.'.join(path)}: unknown task(s) {sorted(unknown)}")
        return dict(override)
    return copy.deepcopy(override)


def resolve(overrides: dict | None = None) -> dict:
    """Defaults merged with overrides; rejects unknown keys with their path."""
    if overrides is None:
        return copy.deepcopy(DEFAULTS)
    return _merge(DEFAULTS, overrides, ())


def load(path) -> dict:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return resolve(data)


def dump(cfg: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# Section constructors
# ---------------------------------------------------------------------------


def scene_config(cfg: dict) -> SceneConfig:
    s = cfg["scene"]
    try:
        return SceneConfig(
            width=s["width"],
            height=s["height"],
            n_spheres=tuple(s["n_spheres"]),
            sphere_radius=tuple(s["sphere_radius"]),
            sphere_x=tuple(s["sphere_x"]),
            sphere_z=tuple(s["sphere_z"]),
            albedo=tuple(s["albedo"]),
            ambient_level=tuple(s["ambient_level"]),
            n_lights=s["n_lights"],
            light_x=tuple(s["light_x"]),
            light_y=tuple(s["light_y"]),
            light_z=tuple(s["light_z"]),
            camera_position=tuple(s["camera_position"]),
            camera_look_at=tuple(s["camera_look_at"]),
            vfov_deg=s["vfov_deg"],
            proxy_radius=s["proxy_radius"],
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"scene: {e}") from e


def dataset_config(cfg: dict) -> DatasetConfig:
    d = cfg["dataset"]
    try:
        dc = DatasetConfig(
            n_samples=d["n_samples"],
            scene=scene_config(cfg),
            task_weights=dict(d["task_weights"]),
            stops_range=tuple(d["stops_range"]),
            tint_saturation=tuple(d["tint_saturation"]),
            min_light_move=d["min_light_move"],
            min_object_move=d["min_object_move"],
            joint_color_prob=d["joint_color_prob"],
        )
        dc.validate()
        return dc
    except (TypeError, ValueError) as e:
        raise ConfigError(f"dataset: {e}") from e


def tokenizer_stats(cfg: dict) -> TokenizerStats:
    t = cfg["tokenizer"]
    try:
        return TokenizerStats(mean=tuple(t["mean"]), std=tuple(t["std"]))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"tokenizer: {e}") from e


def pruning_policy(cfg: dict) -> PruningPolicy:
    p = cfg["pruning"]
    try:
        return PruningPolicy(
            tau=p["tau"],
            spatial_factors=tuple(p["spatial_factors"]),
            nonspatial_factors=tuple(p["nonspatial_factors"]),
            color_logits=tuple(p["color_logits"]),
            intensity_logits=tuple(p["intensity_logits"]),
            mode=p["mode"],
            prune_object=p["prune_object"],
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"pruning: {e}") from e


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    o = cfg["optimizer"]
    try:
        return TrainConfig(
            steps=o["steps"],
            batch_size=o["batch_size"],
            lr=o["lr"],
            weight_decay=o["weight_decay"],
            ema_decay=o["ema_decay"],
            ema_start=o["ema_start"],
            cond_dropout=o["cond_dropout"],
            augment=o["augment"],
            box_scale_range=tuple(o["box_scale_range"]),
            factor=cfg["tokenizer"]["factor"],
            seed=o["seed"] if seed is None else seed,
            log_every=o["log_every"],
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"optimizer: {e}") from e


def model_config(cfg: dict, grid: tuple[int, int]) -> ModelConfig:
    m = cfg["model"]
    factor = cfg["tokenizer"]["factor"]
    gh, gw = grid
    try:
        head_dim = m["model_dim"] // m["n_heads"]
        return ModelConfig(
            latent_dim=3 * factor * factor,
            model_dim=m["model_dim"],
            n_layers=m["n_layers"],
            n_heads=m["n_heads"],
            mlp_ratio=m["mlp_ratio"],
            mspe=MspeConfig.default_for(head_dim, train_lens={"w": gw, "h": gh, "t": 6}),
        )
    except (TypeError, ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"model: {e}") from e


def sampler_config(cfg: dict, seed: int | None = None) -> SamplerConfig:
    s = cfg["sampler"]
    try:
        return SamplerConfig(
            num_steps=s["num_steps"],
            seed=s["seed"] if seed is None else seed,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"sampler: {e}") from e
