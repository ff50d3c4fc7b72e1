"""Deployment configuration: thresholds and locations.

Loaded from a `key = value` file with environment-variable overrides for the
data directory and listen address.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

ENV_DATA_DIR = "HARNESS_DATA_DIR"
ENV_LISTEN = "HARNESS_LISTEN"
ENV_TOKEN = "HARNESS_OPERATOR_TOKEN"


@dataclass(frozen=True)
class HarnessConfig:
    data_dir: Path = Path("harness-data")
    listen: str = "127.0.0.1:8600"
    operator_token: str = ""
    specialization_confidence: float = 0.7
    escalation_confidence: float = 0.6
    noise_threshold: float = 0.2
    noise_reruns: int = 5
    max_cycles: int = 5
    rolling_cap: int = 64
    agent_retries: int = 2

    _FLOATS = ("specialization_confidence", "escalation_confidence", "noise_threshold")
    _INTS = ("noise_reruns", "max_cycles", "rolling_cap", "agent_retries")


def load_config(path: Path | None = None) -> HarnessConfig:
    cfg = HarnessConfig()
    values: dict = {}
    if path is not None and Path(path).exists():
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in HarnessConfig._FLOATS:
                values[key] = float(value)
            elif key in HarnessConfig._INTS:
                values[key] = int(value)
            elif key == "data_dir":
                values[key] = Path(value)
            elif key in ("listen", "operator_token"):
                values[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
    if os.environ.get(ENV_DATA_DIR):
        values["data_dir"] = Path(os.environ[ENV_DATA_DIR])
    if os.environ.get(ENV_LISTEN):
        values["listen"] = os.environ[ENV_LISTEN]
    if os.environ.get(ENV_TOKEN):
        values["operator_token"] = os.environ[ENV_TOKEN]
    return replace(cfg, **values)
