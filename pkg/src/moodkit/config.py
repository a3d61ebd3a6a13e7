"""Run configuration: one JSON document, schema-validated before any work."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .a2d import METRICS, A2DConfig
from .data_io import SynthConfig
from .errors import ConfigError
from .npmix import NpMixConfig
from .scores import KINDS, ScorerConfig
from .trainer import TrainConfig

SCHEMA_VERSION = 1
MODES = ("baseline", "a2d", "a2d+npmix")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "id_classes": {"type": "integer", "minimum": 2},
                "near_ood_classes": _pos_int,
                "dims": {"type": "array", "items": _pos_int, "minItems": 1},
                "samples_per_class": _pos_int,
                "class_sep": {"type": "number", "minimum": 0},
                "modality_corr": {"type": "number", "minimum": 0, "maximum": 1},
                "far_ood_shift": _num,
                "noise_sigma": {"type": "number", "minimum": 0},
                "latent_dim": _pos_int,
                "ood_variant": {"enum": ["near", "far"]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "manifest": {"type": "string"},
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": list(MODES)},
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": _pos_int,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "hidden_dim": _pos_int,
                "embed_dim": _pos_int,
                "selection_metric": {"enum": ["val_id_acc"]},
                "a2d": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "gamma": {"type": "number", "minimum": 0},
                        "metric": {"enum": sorted(METRICS)},
                    },
                },
                "npmix": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "neighbors_n": _pos_int,
                        "alpha": {"type": "number", "exclusiveMinimum": 0},
                        "outliers_per_batch": _pos_int,
                    },
                },
                "logitnorm": {
                    "type": ["object", "null"],
                    "additionalProperties": False,
                    "properties": {"tau": {"type": "number", "exclusiveMinimum": 0}},
                },
            },
        },
        "scorers": {"type": "array", "items": {"enum": list(KINDS)}, "uniqueItems": True},
        "scorer_overrides": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "temperature": {"type": "number", "exclusiveMinimum": 0},
                    "gen_gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "gen_top_m": _pos_int,
                    "knn_k": _pos_int,
                    "react_percentile": {"type": "number", "minimum": 0, "maximum": 100},
                    "ash_percentile": {"type": "number", "minimum": 0, "maximum": 100},
                    "vim_dim": _pos_int,
                    "mahalanobis_ridge": {"type": "number", "exclusiveMinimum": 0},
                },
            } for k in KINDS},
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"logitnorm_tau": {"type": ["number", "null"], "exclusiveMinimum": 0}},
        },
        "out": {"type": "string"},
    },
}


def validate(doc: dict) -> dict:
    """Raise ``ConfigError`` naming the offending field path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {err.message}")
    return doc


def load(path=None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return validate(doc)


def synth_config(doc: dict, seed=None) -> SynthConfig:
    fields = dict(doc.get("synth", {}))
    if seed is not None:
        fields["seed"] = seed
    return SynthConfig(**fields)


def train_config(doc: dict, mode=None, seed=None) -> TrainConfig:
    t = dict(doc.get("train", {}))
    mode = mode or t.pop("mode", "a2d")
    t.pop("mode", None)
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {list(MODES)}")
    a2d = A2DConfig(**t.pop("a2d", {}))
    npmix = NpMixConfig(**t.pop("npmix", {}))
    ln = t.pop("logitnorm", None)
    if mode == "baseline":
        a2d.gamma = 0.0
    a2d.use_npmix = mode == "a2d+npmix"
    if seed is not None:
        t["seed"] = seed
    return TrainConfig(a2d=a2d, npmix=npmix if a2d.use_npmix else None,
                       logitnorm_tau=None if not ln else ln.get("tau", 0.04), **t)


def scorer_settings(doc: dict, cli_scorers=None):
    if cli_scorers:
        kinds = [k.strip() for k in cli_scorers.split(",") if k.strip()]
        unknown = [k for k in kinds if k not in KINDS]
        if unknown:
            raise ConfigError(f"--scorers: unknown scorer(s) {unknown}; expected {list(KINDS)}")
        if len(set(kinds)) != len(kinds):
            raise ConfigError("--scorers: duplicate scorer names")
    else:
        kinds = list(doc.get("scorers", KINDS))
    return kinds, ScorerConfig(), doc.get("scorer_overrides", {})
