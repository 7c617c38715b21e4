"""Experiment configuration: defaults, file parsing, validation, echo.

Config files are flat ``key = value`` text with ``#`` comments. Unknown
keys are rejected; command-line overrides win over file values. The
echo of a config is itself a parseable config that reproduces the run
bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

from .errors import ConfigError

BASE_WIDTHS = (64, 128, 256, 512)


def derived_filters(width_factor: float, depth: int):
    """Per-layer widths: the full-width ladder scaled and kept even."""
    if depth > len(BASE_WIDTHS):
        raise ConfigError(
            f"depth: no default widths beyond {len(BASE_WIDTHS)} layers; "
            "set filters_per_task explicitly"
        )
    out = []
    for base in BASE_WIDTHS[:depth]:
        w = max(2, 2 * round(base * width_factor / 2))
        out.append(int(w))
    return tuple(out)


@dataclass
class ExperimentConfig:
    width_factor: float = 0.5
    depth: int = 4
    filters_per_task: Optional[tuple] = None  # derived from width_factor when absent
    alpha: float = 0.99
    kappa: float = 5.0
    learning_rate: float = 0.005
    batch_size: int = 32
    epochs: int = 50
    num_tasks: int = 5
    seed: int = 0
    data: Optional[str] = None  # dataset directory with train.spds/test.spds
    synthetic: Optional[str] = None  # e.g. "classes=10,n=250,size=16"
    buffer_size: int = 200
    projection_skips: bool = False

    def filters(self) -> tuple:
        if self.filters_per_task is not None:
            return tuple(self.filters_per_task)
        return derived_filters(self.width_factor, self.depth)

    def validate(self) -> None:
        if self.width_factor <= 0:
            raise ConfigError(f"width_factor must be positive, got {self.width_factor}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kappa <= 0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.num_tasks < 1:
            raise ConfigError(f"num_tasks must be >= 1, got {self.num_tasks}")
        if self.buffer_size < 1:
            raise ConfigError(f"buffer_size must be >= 1, got {self.buffer_size}")
        if self.filters_per_task is not None and len(self.filters_per_task) != self.depth:
            raise ConfigError(
                f"filters_per_task has {len(self.filters_per_task)} entries "
                f"but depth is {self.depth}"
            )
        for w in self.filters():
            if w < 2 or w % 2 != 0:
                raise ConfigError(
                    f"filters_per_task entries must be even and >= 2 "
                    f"(the pointwise bank splits in half), got {w}"
                )

    def echo(self) -> str:
        """Parseable key = value text pinning every effective setting."""
        lines = []
        for name, value in (
            ("width_factor", self.width_factor),
            ("depth", self.depth),
            ("filters_per_task", ",".join(str(f) for f in self.filters())),
            ("alpha", self.alpha),
            ("kappa", self.kappa),
            ("learning_rate", self.learning_rate),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("num_tasks", self.num_tasks),
            ("seed", self.seed),
            ("buffer_size", self.buffer_size),
            ("projection_skips", "true" if self.projection_skips else "false"),
        ):
            lines.append(f"{name} = {value}")
        if self.data is not None:
            lines.append(f"data = {self.data}")
        if self.synthetic is not None:
            lines.append(f"synthetic = {self.synthetic}")
        return "\n".join(lines) + "\n"


_INT_KEYS = {"depth", "batch_size", "epochs", "num_tasks", "seed", "buffer_size"}
_FLOAT_KEYS = {"width_factor", "alpha", "kappa", "learning_rate"}
_STR_KEYS = {"data", "synthetic"}
_BOOL_KEYS = {"projection_skips"}
_LIST_KEYS = {"filters_per_task"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _BOOL_KEYS | _LIST_KEYS


def _convert(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if key in _LIST_KEYS:
            return tuple(int(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse value {raw!r}") from None


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Defaults, then file assignments, then overrides; validated."""
    values: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
                key, raw = (part.strip() for part in stripped.split("=", 1))
                if key not in _ALL_KEYS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _convert(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, raw) if isinstance(raw, str) else raw

    config = ExperimentConfig(**values)
    config.validate()
    return config


def config_field_names():
    return [f.name for f in fields(ExperimentConfig)]
