"""Scenario files: one JSON document per run, with a versioned schema tag."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .engine import BinarySelection, CoincidenceWindow, Model, SelectionRule
from .errors import ParameterError
from .models import build_model
from .target_law import Direction, SettingsQuad

SCHEMA = "lhvsim/scenario-v1"

_KNOWN_KEYS = {
    "schema", "model", "settings", "trials", "seed", "selection",
    "output", "tolerance", "contract", "sweep", "audit",
}


class ConfigError(ParameterError):
    pass


def parse_direction(value: Any) -> Direction:
    """``[x, y, z]``, ``{"angle": deg}`` (x-z plane) or ``{"theta": deg, "phi": deg}``."""
    if isinstance(value, Direction):
        return value
    if isinstance(value, dict):
        if "angle" in value:
            return Direction.planar(float(value["angle"]))
        if "theta" in value:
            return Direction.from_angles(float(value["theta"]), float(value.get("phi", 0.0)))
        raise ConfigError(f"cannot read direction from {value!r}")
    if isinstance(value, (list, tuple)) and len(value) == 3:
        return Direction(*(float(v) for v in value))
    raise ConfigError(f"cannot read direction from {value!r}")


@dataclass
class ScenarioConfig:
    model: dict
    seed: int
    trials: int
    settings: dict = field(default_factory=dict)
    selection: dict | None = None
    output: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)
    contract: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)
    schema: str = SCHEMA

    @classmethod
    def from_dict(cls, raw: dict) -> ScenarioConfig:
        raw = copy.deepcopy(raw)
        unknown = set(raw) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if raw.get("schema", SCHEMA) != SCHEMA:
            raise ConfigError(f"unsupported schema {raw.get('schema')!r}, expected {SCHEMA!r}")
        if "seed" not in raw or raw["seed"] is None:
            raise ConfigError("a master seed is required")
        if "model" not in raw:
            raise ConfigError("a model is required")
        model = raw["model"]
        if isinstance(model, str):
            model = {"name": model, "params": {}}
        try:
            seed = int(raw["seed"])
            trials = int(raw.get("trials", 0))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if trials < 1:
            raise ConfigError("trials must be at least 1")
        return cls(
            model=model,
            seed=seed,
            trials=trials,
            settings=raw.get("settings", {}),
            selection=raw.get("selection"),
            output=raw.get("output", {}),
            tolerance=raw.get("tolerance", {}),
            contract=raw.get("contract", {}),
            sweep=raw.get("sweep", {}),
            audit=raw.get("audit", {}),
        )

    def echo(self) -> dict:
        """The config as it affects results (output paths are excluded)."""
        return {
            "schema": self.schema,
            "model": self.model,
            "seed": self.seed,
            "trials": self.trials,
            "settings": self.settings,
            "selection": self.selection,
            "tolerance": self.tolerance,
            "contract": self.contract,
            "sweep": self.sweep,
            "audit": self.audit,
        }

    def digest(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def build_model(self) -> Model:
        return build_model(self.model)

    def build_selection(self, model: Model) -> SelectionRule:
        sel = self.selection
        if sel is None:
            if model.flavor == "time":
                c = getattr(model.params, "c", None)
                if c is None:
                    raise ConfigError("time-flavor model needs a window selection")
                return CoincidenceWindow(float(c))
            return BinarySelection()
        rule = sel.get("rule")
        if rule == "binary":
            if model.flavor != "binary":
                raise ConfigError("binary selection needs a binary-flavor model")
            return BinarySelection()
        if rule == "window":
            if model.flavor != "time":
                raise ConfigError("window selection requires a time-flavor model")
            if "c" not in sel:
                raise ConfigError("window selection needs c")
            return CoincidenceWindow(float(sel["c"]))
        raise ConfigError(f"unknown selection rule {rule!r}")

    def pair(self) -> tuple[Direction, Direction]:
        s = self.settings
        if "a" not in s or "b" not in s:
            raise ConfigError("settings.a and settings.b are required")
        return parse_direction(s["a"]), parse_direction(s["b"])

    def quad(self) -> SettingsQuad:
        q = self.settings.get("quad", "planar")
        if q == "planar":
            return SettingsQuad.planar()
        if isinstance(q, dict):
            try:
                return SettingsQuad(*(parse_direction(q[k]) for k in ("a", "a_prime", "b", "b_prime")))
            except KeyError as exc:
                raise ConfigError(f"quad is missing {exc}") from None
        raise ConfigError(f"cannot read quad from {q!r}")

    def pairs(self) -> list[tuple[Direction, Direction]] | None:
        raw = self.settings.get("pairs")
        if raw is None:
            return None
        return [(parse_direction(a), parse_direction(b)) for a, b in raw]


def load_config(path: str | Path, overrides: dict | None = None) -> ScenarioConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return ScenarioConfig.from_dict(raw)
