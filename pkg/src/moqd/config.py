"""TOML run configuration: schema, validation and resolution.

Every hyperparameter has a named key; errors carry the dotted field path so
misconfigurations are easy to locate. The shipped presets under configs/
hold the desk-scale defaults and the published full-scale values.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from moqd.algorithms import ALGORITHMS, AlgorithmConfig
from moqd.envs import BiSphere, PointWalker
from moqd.neuro import Td3Config
from moqd.variation import VariationConfig

__all__ = ["ConfigError", "ResolvedConfig", "load_config", "resolve_config"]

_SECTIONS = ("run", "env", "archive", "variation", "td3", "metrics")

_KEYS: dict[str, dict[str, type | tuple[type, ...]]] = {
    "run": {
        "algorithm": str,
        "iterations": int,
        "batch_size": int,
        "pg_objectives": list,
        "inject_actor": bool,
        "metrics_every": int,
    },
    "env": {
        "id": str,
        "episode_length": int,
        "energy_weight": (int, float),
        "policy_hidden": list,
        "genotype_length": int,
    },
    "archive": {
        "cells": int,
        "front_capacity": int,
        "cvt_samples": int,
        "cvt_seed": int,
    },
    "variation": {
        "sigma_iso": (int, float),
        "sigma_line": (int, float),
        "genotype_bounds": list,
    },
    "td3": {
        "critic_hidden": list,
        "critic_batch": int,
        "critic_lr": (int, float),
        "actor_lr": (int, float),
        "pg_lr": (int, float),
        "critic_steps": int,
        "pg_steps": int,
        "policy_noise": (int, float),
        "noise_clip": (int, float),
        "discount": (int, float),
        "soft_update_tau": (int, float),
        "policy_delay": int,
        "buffer_capacity": int,
    },
    "metrics": {
        "reference_point": list,
        "wall_clock_in_csv": bool,
    },
}

_REQUIRED = {
    "run": ("algorithm", "iterations", "batch_size"),
    "env": ("id",),
    "archive": ("cells", "front_capacity"),
    "metrics": ("reference_point",),
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ResolvedConfig:
    """A validated configuration bound to concrete objects."""

    algorithm_config: AlgorithmConfig
    env: PointWalker | BiSphere
    reference_point: tuple[float, ...]
    wall_clock_in_csv: bool
    raw: dict


def load_config(path: str, seed: int = 0) -> ResolvedConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError("<file>", f"not valid TOML: {err}") from err
    return resolve_config(raw, seed=seed)


def _check_schema(raw: dict) -> None:
    for section in raw:
        if section not in _SECTIONS:
            raise ConfigError(section, f"unknown section (expected one of {_SECTIONS})")
        if not isinstance(raw[section], dict):
            raise ConfigError(section, "must be a table")
        for key, value in raw[section].items():
            if key not in _KEYS[section]:
                raise ConfigError(
                    f"{section}.{key}",
                    f"unknown key (expected one of {tuple(_KEYS[section])})",
                )
            expected = _KEYS[section][key]
            if isinstance(value, bool) and expected is not bool:
                raise ConfigError(f"{section}.{key}", "unexpected boolean")
            if not isinstance(value, expected):
                raise ConfigError(
                    f"{section}.{key}",
                    f"expected {expected}, got {type(value).__name__}",
                )
    for section, keys in _REQUIRED.items():
        if section not in raw:
            raise ConfigError(section, "missing required section")
        for key in keys:
            if key not in raw[section]:
                raise ConfigError(f"{section}.{key}", "missing required key")


def _build_env(env_raw: dict):
    env_id = env_raw["id"]
    if env_id == "pointwalker":
        return PointWalker(
            episode_length=env_raw.get("episode_length", 20),
            energy_weight=float(env_raw.get("energy_weight", 1.0)),
            policy_hidden=tuple(env_raw.get("policy_hidden", [64, 64])),
        )
    if env_id == "bisphere":
        return BiSphere(genotype_length=env_raw.get("genotype_length", 8))
    raise ConfigError("env.id", f"unknown environment: {env_id!r}")


def resolve_config(raw: dict, seed: int = 0) -> ResolvedConfig:
    """Validate a parsed TOML tree and bind it to runnable objects."""
    _check_schema(raw)
    run_raw = raw["run"]
    env_raw = raw["env"]
    archive_raw = raw["archive"]
    var_raw = raw.get("variation", {})
    td3_raw = raw.get("td3", {})
    metrics_raw = raw["metrics"]

    algorithm = run_raw["algorithm"]
    if algorithm not in ALGORITHMS:
        raise ConfigError(
            "run.algorithm", f"unknown algorithm {algorithm!r} (expected one of {ALGORITHMS})"
        )
    env = _build_env(env_raw)

    pg_objectives = run_raw.get("pg_objectives")
    if pg_objectives is not None:
        if not all(isinstance(j, int) for j in pg_objectives):
            raise ConfigError("run.pg_objectives", "must be a list of objective indices")
        bad = [j for j in pg_objectives if not 0 <= j < env.num_objectives]
        if bad:
            raise ConfigError(
                "run.pg_objectives",
                f"indices {bad} outside 0..{env.num_objectives - 1}",
            )
        pg_objectives = tuple(pg_objectives)

    bounds_raw = var_raw.get("genotype_bounds")
    try:
        variation = VariationConfig(
            sigma_iso=float(var_raw.get("sigma_iso", 0.005)),
            sigma_line=float(var_raw.get("sigma_line", 0.05)),
            bounds=tuple(bounds_raw) if bounds_raw is not None else None,
        )
    except ValueError as err:
        raise ConfigError("variation", str(err)) from err

    defaults = Td3Config()
    td3 = Td3Config(
        critic_hidden=tuple(td3_raw.get("critic_hidden", defaults.critic_hidden)),
        critic_batch=td3_raw.get("critic_batch", defaults.critic_batch),
        critic_lr=float(td3_raw.get("critic_lr", defaults.critic_lr)),
        actor_lr=float(td3_raw.get("actor_lr", defaults.actor_lr)),
        pg_lr=float(td3_raw.get("pg_lr", defaults.pg_lr)),
        critic_steps=td3_raw.get("critic_steps", defaults.critic_steps),
        pg_steps=td3_raw.get("pg_steps", defaults.pg_steps),
        policy_noise=float(td3_raw.get("policy_noise", defaults.policy_noise)),
        noise_clip=float(td3_raw.get("noise_clip", defaults.noise_clip)),
        discount=float(td3_raw.get("discount", defaults.discount)),
        soft_update_tau=float(td3_raw.get("soft_update_tau", defaults.soft_update_tau)),
        policy_delay=td3_raw.get("policy_delay", defaults.policy_delay),
        buffer_capacity=td3_raw.get("buffer_capacity", defaults.buffer_capacity),
    )

    ref = metrics_raw["reference_point"]
    if len(ref) != env.num_objectives or not all(isinstance(v, (int, float)) for v in ref):
        raise ConfigError(
            "metrics.reference_point",
            f"must list {env.num_objectives} numbers, got {ref!r}",
        )

    try:
        algorithm_config = AlgorithmConfig(
            algorithm=algorithm,
            iterations=run_raw["iterations"],
            batch_size=run_raw["batch_size"],
            cells=archive_raw["cells"],
            front_capacity=archive_raw["front_capacity"],
            cvt_samples=archive_raw.get("cvt_samples", 5000),
            variation=variation,
            td3=td3,
            pg_objectives=pg_objectives,
            inject_actor=run_raw.get("inject_actor", True),
            seed=seed,
            cvt_seed=archive_raw.get("cvt_seed"),
            metrics_every=run_raw.get("metrics_every", 1),
        )
    except ValueError as err:
        raise ConfigError("run", str(err)) from err

    return ResolvedConfig(
        algorithm_config=algorithm_config,
        env=env,
        reference_point=tuple(float(v) for v in ref),
        wall_clock_in_csv=bool(metrics_raw.get("wall_clock_in_csv", False)),
        raw=raw,
    )
