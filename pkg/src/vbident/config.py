"""Run configuration: JSON document validated against a published schema."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

SCHEMA_VERSION = 1


def _obj(properties: dict, required=()) -> dict:
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}

SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": _int,
        "workers": _int,
        "ensemble": _obj({
            "kind": {"enum": ["ac", "wh"]},
            "count": _posint,
            "ambient": {"type": ["number", "null"]},
            "flow_rate": {"type": ["number", "null"], "minimum": 0},
            "spread": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "params": {"type": "object", "additionalProperties": _num},
        }, ["kind", "count"]),
        "signals": _obj({
            "files": {"type": "array", "items": {"type": "string"}},
            "synthetic_count": _int,
            "duration_s": _pos,
            "dt_s": _pos,
            "bandwidth_hz": _pos,
            "fraction": _pos,
        }),
        "simulation": _obj({"baseline_horizon_s": _pos}),
        "sae": _obj({
            "epochs": _int,
            "lr": _pos,
            "batch": _posint,
            "pretrain_epochs": {"type": ["integer", "null"], "minimum": 0},
            "hidden": {"type": ["array", "null"], "items": _posint},
            "target_factor": {"type": ["number", "null"], "exclusiveMinimum": 1},
        }),
        "transfer": _obj({
            "new_device_count": _posint,
            "epochs": _int,
            "lr": _pos,
            "compare_scratch": {"type": "boolean"},
            "checks_per_epoch": _posint,
        }),
        "forecaster": _obj({
            "window": _posint,
            "filters": _posint,
            "extent": {"type": "integer", "minimum": 1},
            "units": _posint,
            "stage1_epochs": _int,
            "stage2_epochs": _int,
            "lr": _pos,
            "stage2_lr": _pos,
            "batch": _posint,
        }),
        "identification": _obj({
            "power_horizon_s": _pos,
            "power_tol_kw": _pos,
            "precision": {"type": ["number", "null"], "exclusiveMinimum": 0},
        }),
        "report": _obj({"bins": _posint, "max_rows": {"type": ["integer", "null"], "minimum": 1}}),
    },
    ["schema_version"],
)

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "workers": 1,
    "ensemble": {"kind": "ac", "count": 20, "ambient": None, "flow_rate": None, "spread": 0.0, "params": {}},
    "signals": {"files": [], "synthetic_count": 4, "duration_s": 1800.0, "dt_s": 1.0,
                "bandwidth_hz": 1 / 120, "fraction": 0.2},
    "simulation": {"baseline_horizon_s": 3600.0},
    "sae": {"epochs": 100, "lr": 0.5, "batch": 64, "pretrain_epochs": 0, "hidden": None, "target_factor": 1.05},
    "transfer": {"new_device_count": 23, "epochs": 100, "lr": 0.5, "compare_scratch": True, "checks_per_epoch": 10},
    "forecaster": {"window": 4, "filters": 8, "extent": 3, "units": 32, "stage1_epochs": 10,
                   "stage2_epochs": 5, "lr": 0.02, "stage2_lr": 0.005, "batch": 32},
    "identification": {"power_horizon_s": 1800.0, "power_tol_kw": 2.0, "precision": None},
    "report": {"bins": 50, "max_rows": None},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "params":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(raw: dict) -> dict:
    """Check ``raw`` against the schema and fill defaults; unknown keys are errors."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if cfg["transfer"]["new_device_count"] <= cfg["ensemble"]["count"]:
        raise ConfigError("transfer.new_device_count must exceed ensemble.count")
    if cfg["forecaster"]["extent"] % 2 == 0:
        raise ConfigError("forecaster.extent must be odd to keep the window length")
    if not cfg["signals"]["files"] and cfg["signals"]["synthetic_count"] < 1:
        raise ConfigError("no signal files and synthetic_count is 0")
    return cfg


def load_config(path=None) -> dict:
    if path is None:
        return validate({"schema_version": SCHEMA_VERSION})
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return validate(raw)


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
