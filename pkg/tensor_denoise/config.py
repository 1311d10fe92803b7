"""
Run configuration for the denoising toolkit.

A run config is a flat, line-oriented text file:

    # comment
    atoms = 32
    patch_shape = 16, 8, 8
    reflectors = 300:2:1:1; 900:-1.5:2.5:0.8

Keys are the field names of the solver, grid and synthetic-benchmark
settings plus the top-level run options. Environment variables override the
file: ENVIRONMENT, LOG_LEVEL and LOG_FILE, and TDN_<KEY> for any key.
"""
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator

from tensor_denoise.exceptions import ConfigurationError
from tensor_denoise.logger import get_logger
from tensor_denoise.models import GridSettings, SolverConfig, SynthSettings

logger = get_logger(__name__)

ENV_PREFIX = "TDN_"
_NONE_WORDS = {"", "none", "null", "auto"}
_TUPLE_KEYS = {"patch_shape", "stride", "origin", "dims"}


class Environment(str, Enum):
    """Environment types"""
    DEVELOPMENT = "development"
    TESTING = "testing"
    PRODUCTION = "production"


class LogLevel(str, Enum):
    """Log levels"""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class RunConfig(BaseModel):
    """Everything one command needs besides its file arguments"""
    environment: Environment = Field(default=Environment.DEVELOPMENT)
    log_level: LogLevel = Field(default=LogLevel.INFO)
    log_file: Optional[str] = None
    threads: int = Field(default=1, ge=1, le=256)
    deterministic: bool = False
    dictionary_path: Optional[str] = None
    metrics_path: Optional[str] = None

    solver: SolverConfig = Field(default_factory=SolverConfig)
    grid: GridSettings = Field(default_factory=GridSettings)
    synth: SynthSettings = Field(default_factory=SynthSettings)

    @field_validator("environment", mode="before")
    @classmethod
    def parse_environment(cls, v):
        if isinstance(v, str):
            return Environment(v.lower())
        return v

    @field_validator("log_level", mode="before")
    @classmethod
    def parse_log_level(cls, v):
        if isinstance(v, str):
            return LogLevel(v.upper())
        return v

    @property
    def workers(self) -> int:
        """Worker count after the determinism switch"""
        return 1 if self.deterministic else self.threads


_TOP_LEVEL_KEYS = tuple(
    name for name in RunConfig.model_fields if name not in ("solver", "grid", "synth")
)
_GROUPS: Dict[str, str] = {
    **{name: "solver" for name in SolverConfig.model_fields},
    **{name: "grid" for name in GridSettings.model_fields},
    **{name: "synth" for name in SynthSettings.model_fields},
}
KNOWN_KEYS = frozenset(_TOP_LEVEL_KEYS) | frozenset(_GROUPS)


def _parse_reflectors(text: str) -> List[Dict[str, str]]:
    entries = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [p.strip() for p in chunk.split(":")]
        if len(parts) > 4:
            raise ValueError(f"reflector {chunk!r} has more than depth:dip_inline:dip_crossline:amplitude")
        entries.append(dict(zip(("depth", "dip_inline", "dip_crossline", "amplitude"), parts)))
    return entries


def _parse_value(key: str, text: str) -> Any:
    text = text.strip()
    if key in _TUPLE_KEYS:
        return [part.strip() for part in text.split(",")]
    if key == "reflectors":
        return _parse_reflectors(text)
    if text.lower() in _NONE_WORDS and key in ("beta", "log_file", "dictionary_path", "metrics_path"):
        return None
    return text


def parse_config_text(text: str, source: str = "<config>") -> Tuple[Dict[str, str], Dict[str, int]]:
    """
    Split a run-config text into raw key/value strings.

    Returns:
        (values, line number of each key)

    Raises:
        ConfigurationError: On malformed lines, unknown or duplicate keys
    """
    values: Dict[str, str] = {}
    lines: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"{source}:{number}: expected 'key = value', got {raw.strip()!r}",
                error_code="CONFIG_SYNTAX",
                details={"line": number},
            )
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigurationError(
                f"{source}:{number}: unknown key {key!r}",
                error_code="CONFIG_UNKNOWN_KEY",
                details={"line": number, "key": key},
            )
        if key in values:
            raise ConfigurationError(
                f"{source}:{number}: duplicate key {key!r} (first set on line {lines[key]})",
                error_code="CONFIG_DUPLICATE_KEY",
                details={"line": number, "key": key},
            )
        values[key] = value
        lines[key] = number
    return values, lines


def _nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {"solver": {}, "grid": {}, "synth": {}}
    for key, value in flat.items():
        group = _GROUPS.get(key)
        if group is None:
            nested[key] = value
        else:
            nested[group][key] = value
    return nested


def _flatten(config: RunConfig) -> Dict[str, Any]:
    flat: Dict[str, Any] = {name: getattr(config, name) for name in _TOP_LEVEL_KEYS}
    for group in ("solver", "grid", "synth"):
        flat.update(getattr(config, group).model_dump())
    return flat


def build_config(
    flat: Mapping[str, str],
    origins: Optional[Mapping[str, str]] = None,
    source: str = "<config>",
) -> RunConfig:
    """
    Validate flat raw values into a RunConfig.

    Args:
        flat: key -> raw text
        origins: key -> where the value came from, used in error messages
        source: Name of the config source

    Raises:
        ConfigurationError: Naming every offending key and its origin
    """
    origins = origins or {}
    parsed: Dict[str, Any] = {}
    problems: List[str] = []
    for key, text in flat.items():
        try:
            parsed[key] = _parse_value(key, text)
        except ValueError as e:
            problems.append(f"{origins.get(key, source)}: {key}: {e}")
    if not problems:
        try:
            return RunConfig.model_validate(_nest(parsed))
        except ValidationError as e:
            for err in e.errors():
                loc = [str(part) for part in err["loc"]]
                key = next((part for part in loc if part in KNOWN_KEYS), loc[0] if loc else "?")
                problems.append(f"{origins.get(key, source)}: {key}: {err['msg']}")
    raise ConfigurationError(
        "invalid configuration\n  " + "\n  ".join(problems),
        error_code="CONFIG_INVALID",
        details={"problems": problems},
    )


def _environment_overrides(environ: Mapping[str, str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for name in ("ENVIRONMENT", "LOG_LEVEL", "LOG_FILE"):
        if name in environ:
            overrides[name.lower()] = environ[name]
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key not in KNOWN_KEYS:
                raise ConfigurationError(
                    f"environment variable {name} names unknown key {key!r}",
                    error_code="CONFIG_UNKNOWN_KEY",
                    details={"variable": name},
                )
            overrides[key] = value
    return overrides


class ConfigManager:
    """Configuration manager: run-config file plus environment overrides"""

    def __init__(self):
        self._config: Optional[RunConfig] = None
        self._loaded = False

    def load_config(
        self,
        config_file: Optional[Union[str, Path]] = None,
        environ: Optional[Mapping[str, str]] = None,
        reload: bool = False,
    ) -> RunConfig:
        """
        Load configuration from an optional file and the environment.

        Args:
            config_file: Run-config path; defaults only when omitted
            environ: Environment mapping, os.environ by default
            reload: Discard a previously loaded configuration

        Returns:
            Loaded configuration

        Raises:
            ConfigurationError: On any parse or validation failure
        """
        if self._loaded and self._config and not reload:
            return self._config

        environ = os.environ if environ is None else environ
        flat: Dict[str, str] = {}
        origins: Dict[str, str] = {}
        source = "<defaults>"
        if config_file is not None:
            source = str(config_file)
            try:
                text = Path(config_file).read_text(encoding="utf-8")
            except OSError as e:
                raise ConfigurationError(
                    f"cannot read config file {source}: {e.strerror or e}",
                    error_code="CONFIG_UNREADABLE",
                    details={"path": source},
                ) from e
            flat, lines = parse_config_text(text, source)
            origins = {key: f"{source}:{number}" for key, number in lines.items()}

        for key, value in _environment_overrides(environ).items():
            flat[key] = value
            origins[key] = "environment"

        try:
            self._config = build_config(flat, origins, source)
        except ConfigurationError as e:
            logger.error("Failed to load configuration", extra={"error_code": e.error_code})
            raise
        self._loaded = True

        logger.debug(
            "Configuration loaded successfully",
            extra={"phase": "config"},
        )
        return self._config


def apply_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """
    Re-validate a config with command-line overrides (None values are skipped).

    Raises:
        ConfigurationError: If an override is invalid
    """
    flat = _flatten(config)
    changed = {key: value for key, value in overrides.items() if value is not None}
    unknown = set(changed) - KNOWN_KEYS
    if unknown:
        raise ConfigurationError(f"unknown override keys: {sorted(unknown)}", error_code="CONFIG_UNKNOWN_KEY")
    flat.update(changed)
    try:
        return RunConfig.model_validate(_nest(flat))
    except ValidationError as e:
        raise ConfigurationError(
            f"invalid command-line override: {e.errors()[0]['msg']}",
            error_code="CONFIG_INVALID",
            details={"overrides": {k: str(v) for k, v in changed.items()}},
        ) from e


# Global configuration manager instance
config_manager = ConfigManager()
