"""Run configuration: a sectioned key = value file parsed into a validated RunConfig."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, fields
from enum import StrEnum
from typing import Any

import numpy as np
from mashumaro import DataClassDictMixin

from .constants import (
    DEFAULT_GMAX,
    DEFAULT_POLARIZATION,
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    LATTICE_EXTENT,
    MAX_SITES,
)
from .dynamics import DecaySpec, Placement
from .exceptions import ConfigError, ConfigValueError, InvalidParameter, UnknownConfigKey
from .helpers import stable_hash
from .sequence import DecouplingMode, FieldKind, SequenceKind

LOGGER = logging.getLogger(f"{__package__}.config")

# keys left out of the config hash: they do not change any computed number
NON_SEMANTIC_KEYS = frozenset({"output"})


class Command(StrEnum):
    """Pipelines the runner can execute."""

    DECAY = "decay"
    SENSITIVITY = "sensitivity"
    PHASE = "phase"
    NOPOL = "nopol"
    VERIFY = "verify"


def _bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    msg = f"expected a boolean, got {value!r}"
    raise ValueError(msg)


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(item) for item in value.split(",") if item.strip())


# section -> key -> parser; key names equal the RunConfig field names
SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "run": {"command": Command, "seed": int, "trials": int, "gmax": int, "output": str},
    "ensemble": {
        "placement": Placement,
        "n_spins": int,
        "density": float,
        "extent": float,
        "polarization": float,
        "gamma_s": float,
        "gamma_i": float,
    },
    "sequence": {
        "kind": SequenceKind,
        "field": FieldKind,
        "b0": float,
        "wahuha_cycles": int,
        "wahuha_mode": DecouplingMode,
        "symmetrized": _bool,
    },
    "sweep": {
        "tau_start": float,
        "tau_stop": float,
        "tau_points": int,
        "normalize_time": _bool,
        "p_list": _floats,
    },
    "sensitivity": {
        "q_list": _floats,
        "r_start": float,
        "r_stop": float,
        "r_points": int,
        "t2b": float,
        "c": float,
        "gamma": float,
        "nopol_b": float,
    },
}
_SECTION_OF = {key: section for section, keys in SCHEMA.items() for key in keys}


@dataclass(frozen=True)
class RunConfig(DataClassDictMixin):
    """Validated settings of one run; every field maps to one config key."""

    command: Command = Command.VERIFY
    seed: int = DEFAULT_SEED
    trials: int = DEFAULT_TRIALS
    gmax: int = DEFAULT_GMAX
    output: str = "output"
    placement: Placement = Placement.LATTICE
    n_spins: int = 25
    density: float = 0.06
    extent: float = LATTICE_EXTENT
    polarization: float = DEFAULT_POLARIZATION
    gamma_s: float = 1.0
    gamma_i: float = 1.0
    kind: SequenceKind = SequenceKind.EAM
    field: FieldKind = FieldKind.AC_LOCKED
    b0: float = 0.0
    wahuha_cycles: int = 0
    wahuha_mode: DecouplingMode = DecouplingMode.EXPLICIT
    symmetrized: bool = False
    tau_start: float = 0.05
    tau_stop: float = 2.0
    tau_points: int = 40
    normalize_time: bool = True
    p_list: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    q_list: tuple[float, ...] = (10.0, 20.0, 30.0, 50.0)
    r_start: float = 0.1
    r_stop: float = 30.0
    r_points: int = 60
    t2b: float = 1.0
    c: float = 1.0
    gamma: float = 1.0
    nopol_b: float = 1e-3

    def __post_init__(self) -> None:
        """Check every value against the operation it feeds."""
        checks: tuple[tuple[str, bool, str], ...] = (
            ("seed", self.seed >= 0, "must not be negative"),
            ("trials", self.trials >= 1, "must be at least 1"),
            ("gmax", 1 <= self.gmax <= MAX_SITES, f"must lie in [1, {MAX_SITES}]"),
            ("n_spins", self.n_spins >= 1, "must be at least 1"),
            ("density", 0 < self.density <= 1, "must lie in (0, 1]"),
            ("extent", self.extent > 0, "must be positive"),
            ("polarization", abs(self.polarization) <= 1, "|P| must not exceed 1"),
            ("gamma_s", self.gamma_s != 0, "must be nonzero"),
            ("gamma_i", self.gamma_i != 0, "must be nonzero"),
            ("wahuha_cycles", self.wahuha_cycles >= 0, "must not be negative"),
            ("tau_start", self.tau_start > 0, "must be positive"),
            ("tau_stop", self.tau_stop >= self.tau_start, "must not be below tau_start"),
            ("tau_points", self.tau_points >= 1, "must be at least 1"),
            ("p_list", all(abs(p) <= 1 for p in self.p_list), "|P| must not exceed 1"),
            ("q_list", bool(self.q_list) and min(self.q_list) >= 0, "need Q values >= 0"),
            ("r_start", self.r_start > 0, "must be positive"),
            ("r_stop", self.r_stop >= self.r_start, "must not be below r_start"),
            ("r_points", self.r_points >= 1, "must be at least 1"),
            ("t2b", self.t2b > 0, "must be positive"),
            ("c", 0 < self.c <= 1, "must lie in (0, 1]"),
            ("gamma", self.gamma > 0, "must be positive"),
        )
        for key, passed, message in checks:
            if not passed:
                raise ConfigValueError(key, message)

    @property
    def tau_grid(self) -> tuple[float, ...]:
        """Return the evenly spaced tau grid."""
        return tuple(np.linspace(self.tau_start, self.tau_stop, self.tau_points).tolist())

    @property
    def r_grid(self) -> tuple[float, ...]:
        """Return the log-spaced r grid."""
        return tuple(np.geomspace(self.r_start, self.r_stop, self.r_points).tolist())

    def decay_spec(self, kind: SequenceKind | None = None, **overrides: Any) -> DecaySpec:
        """Return the Monte-Carlo settings for a decay run, optionally for another sequence."""
        values: dict[str, Any] = {
            "tau": self.tau_grid,
            "sequence": kind or self.kind,
            "placement": self.placement,
            "n_spins": self.n_spins,
            "density": self.density,
            "extent": self.extent,
            "polarization": self.polarization,
            "gamma_s": self.gamma_s,
            "gamma_i": self.gamma_i,
            "field": self.field,
            "b0": self.b0,
            "wahuha_cycles": self.wahuha_cycles,
            "wahuha_mode": self.wahuha_mode,
            "symmetrized": self.symmetrized,
            "trials": self.trials,
            "seed": self.seed,
            "gmax": self.gmax,
            "normalize_time": self.normalize_time,
        }
        values.update(overrides)
        return DecaySpec(**values)

    def semantic_dict(self) -> dict[str, Any]:
        """Return the fields that determine results."""
        return {k: v for k, v in self.to_dict().items() if k not in NON_SEMANTIC_KEYS}


def config_hash(config: RunConfig) -> str:
    """Return the SHA-256 of the semantic fields; output location does not count."""
    return stable_hash(config.semantic_dict())


def parse_config(text: str) -> RunConfig:
    """Parse a sectioned key = value config; errors name the key and the line."""
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    section: str | None = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise UnknownConfigKey(f"[{section}]", number)
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(raw.strip(), "expected key = value", number)
        if section is None:
            raise ConfigError(key, "key outside of any [section]", number)
        if key not in SCHEMA[section]:
            raise UnknownConfigKey(f"{section}.{key}", number)
        if key in values:
            raise ConfigError(key, f"duplicate key (first set on line {lines[key]})", number)
        try:
            values[key] = SCHEMA[section][key](value)
        except ValueError as err:
            raise ConfigValueError(key, f"cannot parse {value!r}: {err}", number) from err
        lines[key] = number
    try:
        config = RunConfig(**values)
    except ConfigValueError as err:
        raise ConfigValueError(err.key, str(err).split(": ", 1)[-1], lines.get(err.key)) from err
    except InvalidParameter as err:
        raise ConfigValueError(err.name, str(err), lines.get(err.name)) from err
    LOGGER.debug("Parsed config with %s explicit keys", len(values))
    return config


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, StrEnum):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(item)) for item in value)
    return str(value)


def serialize_config(config: RunConfig) -> str:
    """Return the canonical text of a config; parse_config reads it back to an equal config."""
    by_section: dict[str, list[str]] = {section: [] for section in SCHEMA}
    for item in fields(config):
        by_section[_SECTION_OF[item.name]].append(
            f"{item.name} = {_format_value(getattr(config, item.name))}"
        )
    blocks = [f"[{section}]\n" + "\n".join(keys) for section, keys in by_section.items()]
    return "\n\n".join(blocks) + "\n"
