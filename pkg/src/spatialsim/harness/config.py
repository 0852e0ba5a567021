"""Configuration loading: a versioned JSON schema over the hardware,
network, memory, and energy parameters.

Schema (version 1) — every field optional, defaults in parentheses:

    {
      "version": 1,
      "array": {
        "rows" (13), "cols" (15), "clock_mhz" (200.0),
        "rf_ifmap" (75), "rf_filter" (224), "rf_psum" (24),
        "queue_depth" (8), "mult_stages" (2), "add_stages" (1),
        "clock_gating" (true), "quantize_16bit" (false)
      },
      "noc": {
        "gin_main_bits" (80), "gin_sub_bits" (32),
        "gon_bits" (64), "local_bits" (64), "hop_latency" (1),
        "row_id_slots" (32), "col_id_slots" (32), "id_bits" (8),
        "value_bits" (16)
      },
      "gbuffer": { "capacity_kb" (108), "banks" (27) },
      "dram": {
        "latency_cycles" (20), "bandwidth_bytes_per_cycle" (74.6)
      },
      "energy": {
        "mac_pj" (1.0), "rf_access_pj" (1.0), "gb_access_pj" (6.0),
        "dram_access_pj" (200.0), "noc_hop_pj" (2.0), "scale" (1.0)
      }
    }

An empty file (or "{}") yields the pure defaults. Unknown fields and
out-of-range values are rejected with field-level messages.
"""

from __future__ import annotations

import json

from ..memory import DramModel, EnergyModel
from ..noc import NocConfig
from ..sim.core import ArrayConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "array": {
        "rows": int, "cols": int, "clock_mhz": (int, float),
        "rf_ifmap": int, "rf_filter": int, "rf_psum": int,
        "queue_depth": int, "mult_stages": int, "add_stages": int,
        "clock_gating": bool, "quantize_16bit": bool,
    },
    "noc": {
        "gin_main_bits": int, "gin_sub_bits": int, "gon_bits": int,
        "local_bits": int, "hop_latency": int, "row_id_slots": int,
        "col_id_slots": int, "id_bits": int, "value_bits": int,
    },
    "gbuffer": {"capacity_kb": (int, float), "banks": int},
    "dram": {"latency_cycles": int, "bandwidth_bytes_per_cycle": (int, float)},
    "energy": {
        "mac_pj": (int, float), "rf_access_pj": (int, float),
        "gb_access_pj": (int, float), "dram_access_pj": (int, float),
        "noc_hop_pj": (int, float), "scale": (int, float),
    },
}


def _check_section(name, given):
    schema = _SCHEMA[name]
    if not isinstance(given, dict):
        raise ConfigError(f"section {name!r} must be an object")
    for key, val in given.items():
        if key not in schema:
            raise ConfigError(f"unknown field {name}.{key}")
        if not isinstance(val, schema[key]) or isinstance(val, bool) != (
            schema[key] is bool
        ):
            raise ConfigError(
                f"field {name}.{key} expects {schema[key]}, got {val!r}"
            )
        if schema[key] in (int, (int, float)) and not isinstance(val, bool):
            if val <= 0 and key not in ("scale",):
                raise ConfigError(f"field {name}.{key} must be > 0, got {val}")
    return given


def resolve_config(raw: dict):
    """(ArrayConfig, NocConfig, EnergyModel, DramModel) from a config dict
    with defaults filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    version = raw.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    for key in raw:
        if key not in ("version", *_SCHEMA):
            raise ConfigError(f"unknown section {key!r}")

    noc = NocConfig(**_check_section("noc", raw.get("noc", {})))
    arr_fields = _check_section("array", raw.get("array", {}))
    gb = _check_section("gbuffer", raw.get("gbuffer", {}))
    arr = ArrayConfig(
        **arr_fields,
        gb_banks=gb.get("banks", 27),
        gb_capacity_bytes=int(gb.get("capacity_kb", 108) * 1024),
        noc=noc,
    )
    energy = EnergyModel(**_check_section("energy", raw.get("energy", {})))
    dram = DramModel(**_check_section("dram", raw.get("dram", {})))
    return arr, noc, energy, dram


def load_config(path: str | None):
    """Load and resolve a config file; None or an empty file gives the
    built-in defaults."""
    if path is None:
        return resolve_config({})
    with open(path) as fh:
        text = fh.read().strip()
    if not text:
        return resolve_config({})
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return resolve_config(raw)
