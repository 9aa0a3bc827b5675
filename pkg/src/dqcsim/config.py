"""Experiment configuration: JSON schema, validation and the shipped default profile.

All times are in microseconds, frequencies in kHz. Gate errors are average
gate infidelities. A config is a plain JSON object:

    {
      "schema_version": 1,
      "link": {"attempt_duration": ..., "attempts_per_block": ...,
               "recool_duration": ..., "success_prob": ..., "max_attempts": null},
      "bell": {"werner_p": ..., "dephasing_q": ...},
      "runtime": {"interpulse_delay": ..., "classical_latency": ..., "recv_timeout": ...},
      "modules": {"Alice": {...module noise...}, "Bob": {...}},
      "experiments": {"tomography_shots": ..., "grover_shots": ..., ...},
      "composite_pulse": {...},
      "error_budget_reported": {...}
    }
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .link import AttemptSchedule
from .noise import BellNoise, ModuleNoise, NoiseModel, SpamPovm
from .runtime import RuntimeConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _spam(n0, n1, c0, c1, x0, x1) -> dict:
    return {
        "network": [n0 * 1e-3, n1 * 1e-3],
        "circuit": [c0 * 1e-3, c1 * 1e-3],
        "auxiliary": [x0 * 1e-3, x1 * 1e-3],
    }


_MODULE_COMMON = {
    "single_qubit_error": 1e-4,
    "local_cz_error": 0.04,
    "transfer_error": 5e-3,
    "network_rotation_error": 1e-3,
    "upper_state_lifetime": 390_000.0,
    "measurement_duration": 100.0,
    "memory_dephasing_rate": 2e-6,
    "memory_quasistatic_sigma": 0.0,
}

DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "link": {
        "attempt_duration": 1.0,
        "attempts_per_block": 200,
        "recool_duration": 300.0,
        # solved so that the exact mean herald rate is 182 per second
        "success_prob": 4.430236003356392e-4,
        "max_attempts": None,
    },
    "bell": {"werner_p": 0.0533, "dephasing_q": 0.0},
    "runtime": {"interpulse_delay": 1500.0, "classical_latency": 1.0, "recv_timeout": 1e6},
    "modules": {
        "Alice": {**_MODULE_COMMON, "detection_base_error": 6.6e-4, "spam": _spam(2.6, 7.8, 8.5, 6.4, 4.7, 3.6)},
        "Bob": {**_MODULE_COMMON, "detection_base_error": 5.51e-4, "spam": _spam(6.5, 4.5, 6.0, 7.5, 3.2, 5.3)},
    },
    "experiments": {
        "tomography_shots": 500,
        "grover_shots": 500,
        "bell_qst_shots": 500,
        "channel_campaigns": 16,
        "bootstrap_resamples": 50,
        "rbm_lengths": [2, 10, 25, 50, 100, 200, 400],
        "rbm_sequences": 1500,
        "rbm_shots": 100,
    },
    "composite_pulse": {
        "rabi_T0_khz": 50.0,
        "rabi_ratio": 1.3,
        "detuning_khz": 15.0,
        "ratio_scan": [1.0, 1.1, 1.2, 1.25, 1.3, 1.35, 1.4, 1.5],
        "threshold": 1e-3,
    },
    "error_budget_reported": {},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def noiseless_config(base: dict | None = None) -> dict:
    cfg = copy.deepcopy(base or DEFAULT_CONFIG)
    cfg["bell"] = {"werner_p": 0.0, "dephasing_q": 0.0}
    for mod in cfg["modules"].values():
        for key in ("single_qubit_error", "local_cz_error", "transfer_error", "network_rotation_error",
                    "detection_base_error", "memory_dephasing_rate", "memory_quasistatic_sigma"):
            mod[key] = 0.0
        mod["upper_state_lifetime"] = 1e300
        mod["spam"] = {role: [0.0, 0.0] for role in mod.get("spam", {})}
    return cfg


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return default_config()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return merge_with_defaults(raw)


def merge_with_defaults(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    cfg = default_config()
    for key, value in raw.items():
        if key not in cfg:
            raise ConfigError(f"unknown config section {key!r}")
        if isinstance(cfg[key], dict) and isinstance(value, dict) and key != "error_budget_reported":
            if key == "modules":
                for mod, fields in value.items():
                    cfg["modules"].setdefault(mod, {}).update(fields)
            else:
                unknown = set(value) - set(cfg[key])
                if unknown:
                    raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")
                cfg[key].update(value)
        else:
            cfg[key] = value
    build_noise(cfg)
    build_runtime_config(cfg)
    return cfg


_MODULE_KEYS = set(_MODULE_COMMON) | {"detection_base_error", "spam"}


def build_noise(cfg: dict) -> NoiseModel:
    try:
        modules = {}
        for name, fields in cfg["modules"].items():
            unknown = set(fields) - _MODULE_KEYS
            if unknown:
                raise ConfigError(f"unknown keys for module {name}: {sorted(unknown)}")
            kw = {k: v for k, v in fields.items() if k != "spam"}
            spam = {role: SpamPovm(*pair) for role, pair in fields.get("spam", {}).items()}
            modules[name] = ModuleNoise(spam=spam, **kw)
        return NoiseModel(modules, BellNoise(**cfg["bell"]))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid noise configuration: {exc}") from exc


def build_runtime_config(cfg: dict) -> RuntimeConfig:
    try:
        link = dict(cfg["link"])
        max_attempts = link.pop("max_attempts", None)
        return RuntimeConfig(schedule=AttemptSchedule(**link), max_attempts=max_attempts, **cfg["runtime"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid link/runtime configuration: {exc}") from exc
