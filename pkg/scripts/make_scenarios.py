#!/usr/bin/env python3
"""Regenerate the checked-in scenario files under scenarios/.

The builders in harness.scenario_builder are the source of truth; this script
just serializes them so the CLI and the tests can load fixed files.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from harness import scenario_builder as sb  # noqa: E402


def write(path: Path, scenario) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n")
    print(path)


def main() -> None:
    root = Path(__file__).resolve().parents[1] / "scenarios"

    write(root / "payments-replay.json", sb.build_payments_replay())
    for scenario in sb.build_corpus():
        write(root / "corpus" / f"{scenario.scenario_id}.json", scenario)
    for scenario in sb.build_labeled_set():
        write(root / "labeled" / f"{scenario.scenario_id}.json", scenario)


if __name__ == "__main__":
    main()
