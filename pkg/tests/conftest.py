from __future__ import annotations

import pytest

from harness.config import HarnessConfig
from harness.memory import save_specialization, specialization_from_dict
from harness.orchestrator import Orchestrator
from harness.scenario_builder import payments_specialization
from harness.store import EventStore


@pytest.fixture
def make_harness(tmp_path):
    """Factory for isolated (config, store, orchestrator) triples."""

    counter = {"n": 0}

    def make(**overrides):
        counter["n"] += 1
        base = tmp_path / f"h{counter['n']}"
        base.mkdir()
        save_specialization(
            specialization_from_dict(payments_specialization()),
            base / "specializations",
        )
        config = HarnessConfig(data_dir=base, **overrides)
        store = EventStore(base)
        return config, store, Orchestrator(config, store)

    return make
