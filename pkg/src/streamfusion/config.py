"""Engine configuration: documented defaults, ``key=value`` files and overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


@dataclass(frozen=True)
class EngineConfig:
    tick_seconds: float = 1.0
    iou_gate: float = 0.8
    score_gate: float = 0.8
    max_age: int = 3
    min_hits: int = 1
    # Kalman filter noise, SORT convention
    measurement_sigma: float = 1.0
    measurement_noise: tuple = (1.0, 1.0, 10.0, 10.0)
    process_noise: tuple = (1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4)
    initial_covariance: tuple = (10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4)
    same_tick_fixpoint: bool = False
    soft_rule_id_pattern: str = "_w_"
    vmatch_score: float = 0.9
    appearance_window: int = 5
    emit_predictions: bool = True

    def __post_init__(self):
        if self.tick_seconds <= 0:
            raise ValueError("tick_seconds must be positive")
        if self.max_age < 1 or self.min_hits < 1:
            raise ValueError("max_age and min_hits must be >= 1")
        for name in ("iou_gate", "score_gate", "vmatch_score"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name, n in (("measurement_noise", 4), ("process_noise", 7), ("initial_covariance", 7)):
            values = getattr(self, name)
            if len(values) != n or any(v <= 0 for v in values):
                raise ValueError(f"{name} needs {n} positive values")

    def with_overrides(self, pairs: Iterable[str]) -> "EngineConfig":
        """Apply ``key=value`` strings; unknown keys are errors."""
        changes = {}
        for pair in pairs:
            if "=" not in pair:
                raise ValueError(f"expected key=value, got {pair!r}")
            key, value = (s.strip() for s in pair.split("=", 1))
            changes[key] = _coerce(key, value)
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = " ".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(EngineConfig)}


def _coerce(key: str, value: str):
    f = _FIELDS.get(key)
    if f is None:
        raise ValueError(f"unknown config key {key!r}")
    default = f.default
    if isinstance(default, bool):
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
            raise ValueError(f"{key} expects a boolean, got {value!r}")
        return low in ("true", "1", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return _floats(value)
    return value


def parse_config(text: str, base: EngineConfig = EngineConfig()) -> EngineConfig:
    pairs = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key=value")
        pairs.append(line)
    return base.with_overrides(pairs)


def load_config(path=None, overrides: Iterable[str] = ()) -> EngineConfig:
    config = EngineConfig()
    if path is not None:
        config = parse_config(Path(path).read_text(), config)
    return config.with_overrides(overrides)
