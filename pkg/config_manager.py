"""
Config Manager for scorelint
Merges built-in defaults, an optional YAML config file and CLI overrides.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from constraints_manager import ConstraintsManager, InstrumentTable
from error_handler import ConfigError

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "SCORELINT_CONFIG"

PIVOT_CHANNELS = (
    "tempo", "time_signature", "key_signature", "instrumentation",
    "density", "pitch_range", "dynamics",
)


def _default_weight_profiles() -> Dict[str, Dict[str, Fraction]]:
    """Rhythm, harmony and timbre priority tables; each sums to 1."""
    def profile(weights: Dict[str, str]) -> Dict[str, Fraction]:
        fixed = {k: Fraction(v) for k, v in weights.items()}
        rest = [c for c in PIVOT_CHANNELS if c not in fixed]
        share = (1 - sum(fixed.values())) / len(rest)
        return {c: fixed.get(c, share) for c in PIVOT_CHANNELS}

    return {
        "rhythm": profile({"tempo": "0.35", "time_signature": "0.25", "density": "0.25"}),
        "harmony": profile({"key_signature": "0.35", "pitch_range": "0.25", "density": "0.10"}),
        "timbre": profile({"instrumentation": "0.40", "dynamics": "0.25"}),
    }


@dataclass(frozen=True)
class ScoreLintSettings:
    """Every tunable the metric suite consults."""
    constraints_path: Optional[str] = None
    density_low_below: Fraction = Fraction(1)
    density_high_above: Fraction = Fraction(5, 2)
    weight_profiles: Dict[str, Dict[str, Fraction]] = field(default_factory=_default_weight_profiles)
    tempo_tolerance: Fraction = Fraction(2, 100)
    default_tempo_qpm: Fraction = Fraction(120)
    jitter_strict: bool = False
    per_part_structure: bool = False
    max_structure_points: int = 5000
    structure_window_points: int = 512
    jobs: int = 1
    seed: int = 0

    def to_canonical_dict(self) -> Dict[str, Any]:
        """JSON-ready view with exact rationals written as strings."""
        def encode(value: Any) -> Any:
            if isinstance(value, Fraction):
                return str(value)
            if isinstance(value, dict):
                return {k: encode(v) for k, v in value.items()}
            return value
        data = encode(asdict(self))
        # Execution knobs do not change metric values.
        for key in ("jobs", "constraints_path"):
            data.pop(key)
        return data


_FRACTION_FIELDS = {"density_low_below", "density_high_above", "tempo_tolerance", "default_tempo_qpm"}
_BOOL_FIELDS = {"jitter_strict", "per_part_structure"}
_INT_FIELDS = {"max_structure_points", "structure_window_points", "jobs", "seed"}


def _to_fraction(value: Any, key: str) -> Fraction:
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: expected a number, got {value!r}")


def _coerce(raw: Dict[str, Any], source: str) -> Dict[str, Any]:
    """Validate and convert raw YAML/CLI values into settings fields."""
    known = set(ScoreLintSettings.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"Unknown config keys in {source}: {', '.join(unknown)}")

    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if key in _FRACTION_FIELDS:
            values[key] = _to_fraction(value, key)
        elif key in _BOOL_FIELDS:
            if not isinstance(value, bool):
                raise ConfigError(f"{key}: expected true/false, got {value!r}")
            values[key] = value
        elif key in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
            values[key] = value
        elif key == "weight_profiles":
            values[key] = _coerce_profiles(value)
        else:
            values[key] = None if value is None else str(value)

    if values.get("jobs", 1) < 1:
        raise ConfigError("jobs must be at least 1")
    if values.get("structure_window_points", 1) < 1:
        raise ConfigError("structure_window_points must be at least 1")
    return values


def _coerce_profiles(raw: Any) -> Dict[str, Dict[str, Fraction]]:
    if not isinstance(raw, dict) or not raw:
        raise ConfigError("weight_profiles must be a non-empty mapping")
    profiles = {}
    for name, weights in raw.items():
        if not isinstance(weights, dict) or set(weights) != set(PIVOT_CHANNELS):
            raise ConfigError(f"weight profile {name!r} must weight exactly: {', '.join(PIVOT_CHANNELS)}")
        table = {c: _to_fraction(weights[c], f"{name}.{c}") for c in PIVOT_CHANNELS}
        if sum(table.values()) != 1:
            raise ConfigError(f"weight profile {name!r} does not sum to 1")
        profiles[str(name)] = table
    return profiles


def resolve_config_path(config_path: Optional[str] = None) -> Optional[Path]:
    """--config wins; otherwise SCORELINT_CONFIG from the environment or a .env file."""
    if config_path:
        return Path(config_path)
    load_dotenv()
    env_value = os.environ.get(CONFIG_ENV_VAR)
    return Path(env_value) if env_value else None


def load_settings(config_path: Optional[str] = None,
                  overrides: Optional[Dict[str, Any]] = None) -> ScoreLintSettings:
    """
    Build settings from defaults < config file < overrides.

    Args:
        config_path: Explicit config file; falls back to SCORELINT_CONFIG
        overrides: Values from CLI flags (None values are ignored)

    Raises:
        FileNotFoundError: If the config file doesn't exist
        ConfigError: If the configuration is invalid
    """
    settings = ScoreLintSettings()

    path = resolve_config_path(config_path)
    if path is not None:
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        logger.info(f"Loading config from {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding='utf-8')) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML configuration: {e}")
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must contain a mapping")
        settings = replace(settings, **_coerce(raw, str(path)))

    if overrides:
        given = {k: v for k, v in overrides.items() if v is not None}
        settings = replace(settings, **_coerce(given, "command line"))

    if settings.density_low_below > settings.density_high_above:
        raise ConfigError("density_low_below must not exceed density_high_above")
    return settings


def config_fingerprint(settings: ScoreLintSettings, constraints: ConstraintsManager) -> str:
    """SHA-256 over the merged settings and the constraints table content."""
    payload = json.dumps(settings.to_canonical_dict(), sort_keys=True, separators=(',', ':'))
    digest = hashlib.sha256()
    digest.update(payload.encode('utf-8'))
    digest.update(b'\0')
    digest.update(constraints.raw_text.encode('utf-8'))
    return digest.hexdigest()


def load_environment(config_path: Optional[str] = None,
                     overrides: Optional[Dict[str, Any]] = None):
    """Settings, constraints table and fingerprint in one call."""
    settings = load_settings(config_path, overrides)
    manager = ConstraintsManager(settings.constraints_path)
    table: InstrumentTable = manager.load_table()
    return settings, table, config_fingerprint(settings, manager)
