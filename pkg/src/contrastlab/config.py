"""Flat ``key = value`` experiment configs with typed schemas and hashing.

A config is a text file of ``key = value`` lines plus command-line
overrides (later wins).  Unknown keys are rejected, the ``format_version``
tag must match the schema version built into the binary, and every run
report embeds the hash of the resolved config so any emitted number can be
re-derived.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import ConfigError

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | str | bool | int_list | float_list | str_list
    default: object
    help: str = ""


_COMMON = {
    "format_version": Field("str", SCHEMA_VERSION, "config schema version tag"),
    "seed": Field("int", 0, "master seed"),
}

_WORLD = {
    "world": Field("str", "sphere", "sphere | discrete"),
    "preset": Field("str", "sphere-k10", "named world preset"),
    "mixture_file": Field("str", "", "mixture definition file (world = discrete)"),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "train": _COMMON | _WORLD | {
        "seeds": Field("int_list", (), "run seeds; empty means [seed]"),
        "loss_kinds": Field("str_list", ("debiased",), "biased | debiased | unbiased"),
        "tau_plus": Field("float_list", (0.1,), "class-prior hyperparameter sweep"),
        "temperature": Field("float", 0.5, "similarity temperature"),
        "m_positives": Field("int", 1, "positive samples per anchor"),
        "floor_mode": Field("str", "exp_floor", "exp_floor | zero_floor"),
        "batch_size": Field("int", 64, ""),
        "epochs": Field("int", 200, ""),
        "learning_rate": Field("float", 0.001, ""),
        "optimizer": Field("str", "adam", "sgd | momentum | adam"),
        "dataset_size": Field("int", 512, "anchor identities per run"),
        "embed_dim": Field("int", 16, ""),
        "hidden_dim": Field("int", 0, "0 = linear encoder"),
        "anchor_mode": Field("str", "class", "class | instance anchor identities"),
        "view_noise": Field("float", 0.0, "instance-mode augmentation scale"),
        "class_resample_prob": Field("float", 0.0,
                                     "chance a view is a fresh class draw"),
        "tail_average": Field("int", 0, "average params over the last k epochs"),
        "eval_train_size": Field("int", 2048, "probe fitting samples"),
        "eval_test_size": Field("int", 2048, "probe accuracy samples"),
        "eval_replicas": Field("int", 1, "average accuracy over fresh eval sets"),
        "probe_on_dataset": Field("bool", False,
                                  "fit the probe on the run's own anchors"),
    },
    "probe": _COMMON | _WORLD | {
        "checkpoint": Field("str", "", "encoder checkpoint to evaluate"),
        "loss_kind": Field("str", "debiased", "label recorded in the CSV row"),
        "tau_plus": Field("float", 0.1, "label recorded in the CSV row"),
        "eval_train_size": Field("int", 2048, ""),
        "eval_test_size": Field("int", 2048, ""),
        "eval_replicas": Field("int", 1, ""),
    },
    "verify.lemma1": _COMMON | {
        "instances": Field("int", 20, "random (embedding, mixture) instances"),
        "trials": Field("int", 100000, ""),
        "n_list": Field("int_list", (1, 4, 16), "negative sample sizes"),
        "s_points": Field("int", 8, ""),
        "k_classes": Field("int", 4, ""),
        "embed_dim": Field("int", 8, ""),
        "corrupt_rhs_scale": Field("float", 1.0, "test hook: scales every rhs"),
    },
    "verify.thm3": _COMMON | {
        "instances": Field("int", 10, ""),
        "trials": Field("int", 100000, ""),
        "n_grid": Field("int_list", (4, 16, 64, 256), ""),
        "m_grid": Field("int_list", (4, 16, 64, 256), ""),
        "tau_list": Field("float_list", (0.05, 0.1, 0.2), "override tau+ values"),
        "s_points": Field("int", 8, ""),
        "k_classes": Field("int", 5, "true tau+ = 1/K should dominate tau_list"),
        "embed_dim": Field("int", 8, ""),
        "corrupt_rhs_scale": Field("float", 1.0, "test hook: scales every rhs"),
    },
    "verify.rate": _COMMON | {
        "trials": Field("int", 100000, ""),
        "sweep_variable": Field("str", "N", "N | M"),
        "sweep_grid": Field("int_list", (4, 16, 64, 256, 1024), ""),
        "other_size": Field("int", 10240, "non-swept sample size"),
        "tau_plus": Field("float", -1.0, "negative means the mixture's own"),
        "s_points": Field("int", 8, ""),
        "k_classes": Field("int", 5, ""),
        "embed_dim": Field("int", 8, ""),
        "slope_min": Field("float", -0.65, ""),
        "slope_max": Field("float", -0.35, ""),
        "r2_min": Field("float", 0.9, ""),
    },
    "verify.lemma4": _COMMON | {
        "embeddings": Field("int", 100, "random embeddings per mixture"),
        "mixtures": Field("int", 3, ""),
        "k_list": Field("int_list", (2, 3, 5), "class counts cycled over mixtures"),
        "s_points": Field("int", 10, ""),
        "embed_dim": Field("int", 8, ""),
        "n_max_factor": Field("int", 4, "sweep N = K-1 .. factor*K"),
        "corrupt_rhs_scale": Field("float", 1.0, "test hook: scales every rhs"),
    },
    "verify.oracle": _COMMON | {
        "instances": Field("int", 50, ""),
        "s_max": Field("int", 10, ""),
        "n_max": Field("int", 6, ""),
        "budget": Field("float", 1e9, "enumeration budget"),
        "tolerance": Field("float", 1e-9, "relative error threshold"),
        "embed_dim": Field("int", 8, ""),
        "corrupt_rhs_scale": Field("float", 1.0, "test hook: scales every rhs"),
    },
    "gradcheck": _COMMON | {
        "cases": Field("int", 200, "random configurations"),
        "step": Field("float", 1e-6, "central difference step"),
        "tolerance": Field("float", 1e-5, "exit-1 threshold on max_rel_err"),
    },
    "gen-data": _COMMON | {
        "preset": Field("str", "", "named mixture preset; empty = random"),
        "s_points": Field("int", 8, ""),
        "k_classes": Field("int", 4, ""),
        "feature_dim": Field("int", 4, ""),
        "filename": Field("str", "mixture.txt", ""),
    },
}


def _parse_value(key: str, field: Field, raw: str):
    try:
        if field.kind == "int":
            return int(raw)
        if field.kind == "float":
            return float(raw)
        if field.kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if field.kind == "str":
            return raw
        items = [part.strip() for part in raw.split(",") if part.strip()]
        if field.kind == "int_list":
            return tuple(int(x) for x in items)
        if field.kind == "float_list":
            return tuple(float(x) for x in items)
        if field.kind == "str_list":
            return tuple(items)
    except ValueError as exc:
        raise ConfigError(f"bad value for key {key!r}: {raw!r}") from exc
    raise ConfigError(f"unknown field kind {field.kind!r} for key {key!r}")


def load_config_file(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def resolve(command: str, config_path: str | None, overrides: list[str],
            seed: int | None = None) -> dict:
    """Typed config for a command: defaults < file < --set (later wins) < --seed."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    schema = SCHEMAS[command]
    raw: dict[str, str] = {}
    if config_path:
        raw.update(load_config_file(config_path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()

    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config keys for {command!r}: {sorted(unknown)}")
    resolved = {key: field.default for key, field in schema.items()}
    for key, value in raw.items():
        resolved[key] = _parse_value(key, schema[key], value)
    if seed is not None:
        resolved["seed"] = int(seed)
    if resolved["format_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"config format_version {resolved['format_version']!r} != {SCHEMA_VERSION!r}"
        )
    return resolved


def render_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(render_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_hash(resolved: dict) -> str:
    """sha256 over the canonical sorted ``key = value`` rendering."""
    lines = [f"{key} = {render_value(resolved[key])}" for key in sorted(resolved)]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
