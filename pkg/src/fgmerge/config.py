"""Flat ``key = value`` scenario files.

Every key is optional; missing keys take the documented defaults. Lines
starting with ``#`` or ``;`` are comments. Recognized keys:

physics / controller (SimParams)
    L, phi, delta, u_min, u_max, v_min, v_max, dt, beta, k1, k2, k_v,
    eps_clf, lambda_e
scenario
    arrival_rate_main, arrival_rate_merge   Poisson rates, vehicles/s
    v0_lo, v0_hi                            entry-speed range, m/s
    horizon                                 simulated time, s
    seed                                    RNG seed (int)
    mode                                    Ocbf | FgOcbf
    speed_limit_rows                        true | false
    integrator                              zoh | euler
    predecessor_info                        current | previous
    cbf_sampling                            zoh | continuous
    v_entry_min                             lowest admissible entry speed, m/s
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path
from typing import Any, Mapping

from fgmerge.sim import Mode, ScenarioConfig
from fgmerge.vehicle import ConfigError, SimParams

_SECTION = "scenario"

PARAM_KEYS = SimParams.field_names()
SCENARIO_KEYS = [f.name for f in dataclasses.fields(ScenarioConfig) if f.name != "params"]
KNOWN_KEYS = PARAM_KEYS + SCENARIO_KEYS

_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}


def _convert(key: str, raw: str) -> Any:
    raw = raw.strip()
    default = _defaults()[key]
    try:
        if isinstance(default, bool):
            return _BOOL[raw.lower()]
        if isinstance(default, Mode):
            return Mode(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except (KeyError, ValueError):
        raise ConfigError(f"{_SECTION}.{key}", f"cannot parse {raw!r}") from None


def _defaults() -> dict[str, Any]:
    cfg = ScenarioConfig()
    out = {k: getattr(cfg.params, k) for k in PARAM_KEYS}
    out.update({k: getattr(cfg, k) for k in SCENARIO_KEYS})
    return out


def config_from_mapping(values: Mapping[str, Any]) -> ScenarioConfig:
    """Build a config from already-typed or string values, rejecting unknown keys."""
    for key in values:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{_SECTION}.{key}", "unknown key")
    typed = {k: (_convert(k, v) if isinstance(v, str) else v) for k, v in values.items()}
    params = SimParams(**{k: typed[k] for k in PARAM_KEYS if k in typed})
    return ScenarioConfig(params=params, **{k: typed[k] for k in SCENARIO_KEYS if k in typed})


def parse_config_text(text: str) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (L)
    try:
        cp.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(_SECTION, f"malformed file: {exc}") from None
    return dict(cp[_SECTION])


def parse_config(path, overrides: Mapping[str, str] | None = None) -> ScenarioConfig:
    """Read ``path`` and apply ``overrides`` (same keys, string values)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "file does not exist")
    values = parse_config_text(path.read_text())
    values.update(overrides or {})
    return config_from_mapping(values)


def config_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    out = {k: getattr(cfg.params, k) for k in PARAM_KEYS}
    for k in SCENARIO_KEYS:
        val = getattr(cfg, k)
        out[k] = val.value if isinstance(val, Mode) else val
    return out


def serialize_config(cfg: ScenarioConfig) -> str:
    lines = []
    for key, val in config_to_dict(cfg).items():
        if isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"
