"""
Repository settings - devdiet.yaml with built-in defaults and env overrides
"""
import copy
import logging
import os
from pathlib import Path
from typing import Mapping, Optional

import yaml

logger = logging.getLogger(__name__)

SETTINGS_FILE = Path(__file__).parent / "devdiet.yaml"
ENV_PREFIX = "DEVDIET_"
RUN_ENV_PREFIX = "DEVDIET_RUN__"

DEFAULT_SETTINGS = {
    "paths": {
        "runs_root": "./runs",
        "data_root": "./data",
        "logs_dir": "./logs",
        "fixtures_dir": "./evaluation/fixtures",
    },
    "desk": {
        "resolution": 64,
        "total_epochs": 30,
        "batch_size": 64,
        "frames_per_video": 10,
        "test_frames_per_video": 2,
        "window": 1,
    },
    "optimizer": {"lr": 5e-4, "weight_decay": 1e-4, "warmup_epochs": 10},
    "contrastive": {
        "phase2_temperature": 0.1,
        "fim_temperature": 0.1,
        "positive_aggregation": "mean_log_ratio",
    },
    "distillation": {
        "student_temperature": 0.1,
        "teacher_temperature": 0.04,
        "center_momentum": 0.9,
        "momentum_start": 0.996,
        "momentum_end": 1.0,
        "local_crops": 6,
        "out_dim": 1024,
    },
    "fisher": {"probe_batches": 8},
    "probe": {"epochs": 50, "lr": 1e-3, "batch_size": 256},
    "synthetic": {
        "rotation": {
            "n_classes": 5,
            "videos_per_class": 40,
            "frames_per_video": 36,
            "test_fraction": 0.2,
        },
        "depth": {"n_train": 2000, "n_test": 500, "min_gap_fraction": 0.05},
        "cliff": {
            "shallow_depth_m": 0.05,
            "deep_depth_m": 1.2,
            "checker_period_m": 0.1,
            "eye_heights_m": [0.25, 0.35, 0.45],
            "tilts_deg": [35.0, 30.0, 25.0],
            "fov_deg": 60.0,
        },
        "cue_conflict": {"n": 300},
        "silhouettes": {"n": 150},
    },
    "corruptions": {"severities": [1, 2, 3, 4, 5], "workers": 4},
    "logging": {"level": "INFO", "console_level": "WARNING"},
}


def deep_merge(base: Mapping, override: Mapping) -> dict:
    """Recursively merge override into a copy of base"""
    merged = copy.deepcopy(dict(base))
    for key, value in (override or {}).items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_env_overrides(
    mapping: Mapping,
    env: Optional[Mapping] = None,
    prefix: str = ENV_PREFIX,
    skip_prefixes: tuple = (),
) -> dict:
    """
    Override individual keys from environment variables.

    DEVDIET_DESK__BATCH_SIZE=32 sets mapping["desk"]["batch_size"].
    Keys are lower-cased, "__" separates nesting levels and values are
    parsed as YAML scalars ("32" -> 32, "true" -> True, "[1, 3]" -> [1, 3]).

    Args:
        mapping: settings or run-config dict
        env: environment (default: os.environ)
        prefix: variable prefix
        skip_prefixes: variables starting with any of these are ignored

    Returns:
        New dict with overrides applied
    """
    env = os.environ if env is None else env
    result = copy.deepcopy(dict(mapping))
    for name in sorted(env):
        if not name.startswith(prefix) or name.startswith(tuple(skip_prefixes)):
            continue
        path = [p.lower() for p in name[len(prefix) :].split("__") if p]
        if not path:
            continue
        try:
            value = yaml.safe_load(env[name])
        except yaml.YAMLError:
            value = env[name]
        node = result
        for key in path[:-1]:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[path[-1]] = value
        logger.debug(f"Env override {name} -> {'.'.join(path)}")
    return result


def load_settings(path: Optional[Path] = None, env: Optional[Mapping] = None) -> dict:
    """
    Load devdiet.yaml, use defaults if not found

    Precedence (lowest to highest): built-in defaults < devdiet.yaml <
    environment variables (DEVDIET_<SECTION>__<KEY>; DEVDIET_RUN__* is
    reserved for run-config overrides).
    """
    settings_path = Path(path) if path else SETTINGS_FILE
    settings = copy.deepcopy(DEFAULT_SETTINGS)

    if settings_path.exists():
        try:
            loaded = yaml.safe_load(settings_path.read_text()) or {}
            settings = deep_merge(settings, loaded)
            logger.info(f"[OK] Settings loaded from: {settings_path}")
        except (yaml.YAMLError, OSError) as e:
            logger.warning(f"[WARN] Failed to load settings: {e}, using defaults")
    else:
        logger.warning(f"[WARN] Settings not found at {settings_path}, using defaults")

    return apply_env_overrides(settings, env, skip_prefixes=(RUN_ENV_PREFIX,))
