from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Collection, Mapping

from .raster_io import PathType

LOG = logging.getLogger(__name__)


class ConfigError(ValueError):
    """A job configuration names unknown options or is not a JSON object."""


def _option_name(key: str) -> str:
    return key.replace("-", "_")


@dataclass(frozen=True)
class JobConfig:
    """Option values for one subcommand, keyed by option destination."""

    values: Mapping[str, Any] = field(default_factory=dict)
    source: str = "<defaults>"

    @classmethod
    def from_mapping(
        cls, mapping: Mapping[str, Any], source: str = "<mapping>"
    ) -> JobConfig:
        if not isinstance(mapping, Mapping):
            raise ConfigError(f"{source} must hold a JSON object")
        for key in mapping:
            if not isinstance(key, str):
                raise ConfigError(f"{source}: option names must be strings")
        return cls(
            values={
                _option_name(key): value for key, value in mapping.items()
            },
            source=source,
        )

    @classmethod
    def load(cls, path: PathType) -> JobConfig:
        path = Path(path)
        try:
            mapping = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as error:
            raise ConfigError(f"invalid JSON in {path}: {error}")
        LOG.debug(f"Loaded job config: {path}")
        return cls.from_mapping(mapping, source=str(path))

    def check_keys(self, allowed: Collection[str]) -> None:
        unknown = sorted(set(self.values) - set(allowed))
        if unknown:
            raise ConfigError(
                f"{self.source}: unknown options {', '.join(unknown)}"
            )

    def __len__(self) -> int:
        return len(self.values)
