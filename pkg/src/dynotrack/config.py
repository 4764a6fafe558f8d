"""Pipeline configuration: one JSON block per stage, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .classification import VotingParams
from .clustering import ClusteringParams
from .evaluation import MotParams
from .filtering import FilterParams
from .fusion import FusionParams
from .grid import GridParams
from .motion import MotionParams


class ConfigError(ValueError):
    pass


_BLOCKS = {
    "filtering": FilterParams,
    "clustering": ClusteringParams,
    "voting": VotingParams,
    "fusion": FusionParams,
    "motion": MotionParams,
    "grid": GridParams,
    "mot": MotParams,
}


@dataclass(frozen=True)
class PipelineConfig:
    filtering: FilterParams = field(default_factory=FilterParams)
    clustering: ClusteringParams = field(default_factory=ClusteringParams)
    voting: VotingParams = field(default_factory=VotingParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    motion: MotionParams = field(default_factory=MotionParams)
    grid: GridParams = field(default_factory=GridParams)
    mot: MotParams = field(default_factory=MotParams)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - set(_BLOCKS)
        if unknown:
            raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
        blocks = {}
        for name, kind in _BLOCKS.items():
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"block {name!r} must be an object")
            allowed = {f.name for f in fields(kind)}
            bad = set(raw) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            values = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
            try:
                blocks[name] = kind(**values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name!r} block: {exc}") from exc
        return cls(**blocks)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not text.strip():
            return cls()
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _BLOCKS}
