"""Run configuration shared by the orchestrator and the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Optional

from .datacheck import CheckConfig
from .errors import ConfigError

DEFAULT_K = 50
DEFAULT_N_MAX = 3

TASKS = ("classification", "regression", "auto")


@dataclass
class RunConfig:
    data: Optional[str] = None
    test: Optional[str] = None
    target: Optional[str] = None
    task: str = "auto"
    k: int = DEFAULT_K
    n_max: int = DEFAULT_N_MAX
    seed: int = 0
    backend: str = "scripted"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: Optional[str] = None
    out_dir: str = "runs"
    jobs: int = 1
    retention_threshold: float = 0.85
    require_no_missing: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.n_max < 0:
            raise ConfigError("n-max must be >= 0")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not 0 < self.retention_threshold <= 1:
            raise ConfigError("retention-threshold must be in (0, 1]")

    def check_config(self) -> CheckConfig:
        return CheckConfig(
            retention_threshold=self.retention_threshold,
            require_no_missing=self.require_no_missing,
        )

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> "RunConfig":
        """Load JSON config mirroring the field names; overrides win."""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        merged = dict(doc)
        for key, value in (overrides or {}).items():
            if value is not None:
                merged[key] = value
        return cls(**merged)
