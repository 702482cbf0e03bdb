"""JSON experiment configurations: schema, line-aware validation and presets."""

from __future__ import annotations

import json
from importlib import resources
from json.decoder import scanstring

import jsonschema

COMMANDS = ("simulate", "covariance", "selfconsistent", "hydro", "flucthydro", "compare")

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int2 = {"type": "integer", "minimum": 2}

CHAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_sites": _int2,
        "pinning": _nonneg,
        "flip_rate": _nonneg,
        "bath_coupling": _nonneg,
        "temp_left": _pos,
        "temp_right": _pos,
        "model": {"enum": ["VelocityFlip", "SelfConsistent"]},
        "flip_at_baths": {"type": "boolean"},
    },
}

SIM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dt": {"anyOf": [_pos, {"type": "null"}]},
        "t_burn": {"anyOf": [_nonneg, {"type": "null"}]},
        "t_sample": _pos,
        "sample_stride": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "replicas": {"type": "integer", "minimum": 1},
        "snapshot_stride": {"type": "integer", "minimum": 0},
        "chunk_steps": {"type": "integer", "minimum": 1},
        "init": {"enum": ["zero", "gibbs", "stationary"]},
        "allow_large_dt": {"type": "boolean"},
        "n_batches": {"type": "integer", "minimum": 2},
        "backend": {"enum": ["cython", "python"]},
    },
}

HYDRO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "gamma": _pos,
        "temp_left": _pos,
        "temp_right": _pos,
        "mesh": _int2,
        "dt_macro": _pos,
        "t_final": _nonneg,
        "sample_every": _pos,
        "initial": {"enum": ["stationary", "cosine", "bump"]},
        "amplitude": {"type": "number"},
    },
}

FLUCT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "gamma": _pos,
        "temp_left": _pos,
        "temp_right": _pos,
        "mesh": _int2,
        "dt": {"anyOf": [_pos, {"type": "null"}]},
        "t_final": _pos,
        "t_burn": {"anyOf": [_nonneg, {"type": "null"}]},
        "replicas": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "simulate": {"type": "boolean"},
        "n_batches": {"type": "integer", "minimum": 2},
    },
}

COVARIANCE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "method": {"enum": ["auto", "operator", "lyapunov"]},
        "gap_sizes": {"type": "array", "items": _int2},
        "write_matrix": {"type": "boolean"},
    },
}

COMPARE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lte_resolution": _int2,
        "monte_carlo": {"type": "boolean"},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "description": {"type": "string"},
        "chain": CHAIN_SCHEMA,
        "sim": SIM_SCHEMA,
        "hydro": HYDRO_SCHEMA,
        "flucthydro": FLUCT_SCHEMA,
        "covariance": COVARIANCE_SCHEMA,
        "compare": COMPARE_SCHEMA,
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "prefix": {"type": "string"}},
        },
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, source=None):
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line else f"{source}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


# -- position-tracking JSON scan ----------------------------------------------
# json.loads does not report where values live; this walker records the line of
# every key path so schema errors can point at the offending line.

_WS = " \t\r\n"


def _skip(text, i):
    while i < len(text) and text[i] in _WS:
        i += 1
    return i


def _line_of(text, i):
    return text.count("\n", 0, i) + 1


def _walk(text, i, path, table):
    i = _skip(text, i)
    table[tuple(path)] = _line_of(text, i)
    ch = text[i] if i < len(text) else ""
    if ch == "{":
        i = _skip(text, i + 1)
        if text[i] == "}":
            return i + 1
        while True:
            i = _skip(text, i)
            key, i = scanstring(text, i + 1)
            i = _skip(text, i) + 1           # ':'
            i = _walk(text, i, path + [key], table)
            i = _skip(text, i)
            if text[i] == "}":
                return i + 1
            i += 1                           # ','
    if ch == "[":
        i = _skip(text, i + 1)
        if text[i] == "]":
            return i + 1
        k = 0
        while True:
            i = _walk(text, i, path + [k], table)
            i = _skip(text, i)
            if text[i] == "]":
                return i + 1
            i += 1
            k += 1
    _, end = json.JSONDecoder().raw_decode(text, i)
    return end


def line_table(text: str) -> dict:
    table = {}
    _walk(text, 0, [], table)
    return table


def parse(text: str, source: str | None = None) -> dict:
    """Parse and validate a configuration document."""
    if not text.strip():
        raise ConfigError("configuration is empty", None, source)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno, source) from None
    validate(data, text, source)
    return data


def validate(data, text: str | None = None, source: str | None = None):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if not errors:
        return
    err = errors[0]
    path = list(err.absolute_path)
    line = None
    if text is not None:
        table = line_table(text)
        # additionalProperties errors point at the parent; locate the extra key
        if err.validator == "additionalProperties":
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
            if extra:
                path = path + [extra[0]]
        while line is None and path is not None:
            line = table.get(tuple(path))
            path = path[:-1] if path else None
    loc = "/".join(map(str, err.absolute_path)) or "<root>"
    raise ConfigError(f"{loc}: {err.message}", line, source)


def load(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", None, path) from None
    return parse(text, path)


def preset_names() -> list:
    files = resources.files("bulknoise").joinpath("presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def load_preset(name: str) -> dict:
    res = resources.files("bulknoise").joinpath("presets", f"{name}.json")
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse(res.read_text(), f"preset:{name}")
