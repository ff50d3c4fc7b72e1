"""Test execution, review gates, the promoted regression set, and rerun-based
flakiness measurement.

Suites are real programs executed in an isolated per-run workspace. A suite
must write `results.jsonl` (one object per test: id, status, assertion,
duration_ms); the runner parses that file instead of scraping output.
Infrastructure failures (missing command, no results file) are flagged as
environment, distinct from test failures.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field, asdict
from pathlib import Path

RESULTS_FILENAME = "results.jsonl"
DEFAULT_SUITE_TIMEOUT = 60.0

SUITE_ORIGINS = ("test_author", "regression_set", "calibration")


class VerificationError(Exception):
    pass


class SandboxViolation(VerificationError):
    """Suite command tried to escape the run workspace."""


class UnknownTest(VerificationError):
    pass


@dataclass(frozen=True)
class TestSuite:
    suite_id: str
    origin: str
    command: tuple[str, ...]
    clause_links: dict[str, tuple[str, ...]] = field(default_factory=dict)
    timeout: float = DEFAULT_SUITE_TIMEOUT

    def to_dict(self) -> dict:
        return {
            "suite_id": self.suite_id,
            "origin": self.origin,
            "command": list(self.command),
            "clause_links": {k: list(v) for k, v in self.clause_links.items()},
            "timeout": self.timeout,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TestSuite":
        return cls(
            suite_id=data["suite_id"],
            origin=data["origin"],
            command=tuple(data["command"]),
            clause_links={k: tuple(v) for k, v in data.get("clause_links", {}).items()},
            timeout=float(data.get("timeout", DEFAULT_SUITE_TIMEOUT)),
        )


@dataclass(frozen=True)
class TestCaseResult:
    id: str
    status: str  # pass | fail | error
    assertion: str = ""
    duration_ms: float = 0.0


@dataclass(frozen=True)
class TestResults:
    suite_id: str
    per_test: tuple[TestCaseResult, ...]
    exit_code: int
    output_digest: str
    environment_flags: tuple[str, ...] = ()

    @property
    def all_pass(self) -> bool:
        return not self.environment_flags and all(t.status == "pass" for t in self.per_test)

    def failures(self) -> tuple[TestCaseResult, ...]:
        return tuple(t for t in self.per_test if t.status in ("fail", "error"))

    def to_dict(self) -> dict:
        return {
            "suite_id": self.suite_id,
            "per_test": [asdict(t) for t in self.per_test],
            "exit_code": self.exit_code,
            "output_digest": self.output_digest,
            "environment_flags": list(self.environment_flags),
        }


@dataclass
class ReviewFinding:
    gate_role: str
    severity: str  # blocker | major | minor
    text: str
    clause_id: str | None = None
    adjudication: str | None = None  # true_issue | false_positive

    def to_dict(self) -> dict:
        return asdict(self)


def _check_sandbox(workspace: Path, command: tuple[str, ...]) -> None:
    workspace = workspace.resolve()
    for i, part in enumerate(command):
        if i == 0 and part in (sys.executable, "python", "python3"):
            continue
        p = Path(part)
        if ".." in p.parts:
            raise SandboxViolation(f"command part {part!r} uses parent traversal")
        if p.is_absolute() and not str(p.resolve()).startswith(str(workspace)):
            raise SandboxViolation(f"command part {part!r} points outside the workspace")


def run_suite(workspace: Path, suite: TestSuite, env: dict[str, str] | None = None) -> TestResults:
    """Execute one suite inside its workspace and parse results.jsonl."""
    workspace = Path(workspace)
    _check_sandbox(workspace, suite.command)
    results_path = workspace / RESULTS_FILENAME
    if results_path.exists():
        results_path.unlink()

    run_env = {"PATH": "/usr/bin:/bin", "HOME": str(workspace)}
    if env:
        run_env.update(env)
    try:
        proc = subprocess.run(
            list(suite.command),
            cwd=workspace,
            env=run_env,
            capture_output=True,
            timeout=suite.timeout,
        )
        exit_code = proc.returncode
        output = proc.stdout + proc.stderr
        env_flags: list[str] = []
    except FileNotFoundError:
        return TestResults(
            suite_id=suite.suite_id,
            per_test=(),
            exit_code=127,
            output_digest="",
            environment_flags=("command-missing",),
        )
    except subprocess.TimeoutExpired as exc:
        raise TimeoutError(f"suite {suite.suite_id} exceeded {suite.timeout}s") from exc

    per_test: list[TestCaseResult] = []
    if results_path.exists():
        seen: set[str] = set()
        for line in results_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["id"] in seen:
                raise VerificationError(f"duplicate test id {rec['id']!r} in results")
            seen.add(rec["id"])
            per_test.append(
                TestCaseResult(
                    id=rec["id"],
                    status=rec["status"],
                    assertion=rec.get("assertion", ""),
                    duration_ms=float(rec.get("duration_ms", 0.0)),
                )
            )
    elif exit_code != 0:
        env_flags.append(f"infra-exit-{exit_code}")

    return TestResults(
        suite_id=suite.suite_id,
        per_test=tuple(per_test),
        exit_code=exit_code,
        output_digest=hashlib.sha256(output).hexdigest(),
        environment_flags=tuple(env_flags),
    )


def run_review_gate(
    role: str,
    contract: dict,
    artifact_refs: dict,
    checklist: tuple[str, ...],
    agent,
) -> tuple[str, list[ReviewFinding]]:
    """Run one reviewer role; verdict is fail iff any blocker finding."""
    response = agent(0)
    findings = [
        ReviewFinding(
            gate_role=role,
            severity=item.get("severity", "minor"),
            text=item.get("text", ""),
            clause_id=item.get("clause_id"),
        )
        for item in (response.body or [])
    ]
    verdict = "fail" if any(f.severity == "blocker" for f in findings) else "pass"
    return verdict, findings


@dataclass
class RegressionRegistry:
    """Persistent per-module regression set. Grows on promotion; shrinks only
    through an explicit operator removal."""

    path: Path
    entries: dict[str, list[dict]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path) -> "RegressionRegistry":
        path = Path(path)
        entries = {}
        if path.exists():
            entries = json.loads(path.read_text(encoding="utf-8"))
        return cls(path=path, entries=entries)

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.entries, indent=2, sort_keys=True) + "\n")

    def for_module(self, module: str) -> list[dict]:
        return list(self.entries.get(module, []))

    def promote(self, module: str, test_id: str, suite: TestSuite) -> bool:
        """Copy a bug-catching test into the persistent set. Idempotent."""
        bucket = self.entries.setdefault(module, [])
        if any(e["test_id"] == test_id for e in bucket):
            return False
        bucket.append(
            {
                "test_id": test_id,
                "suite_id": suite.suite_id,
                "clause_links": list(suite.clause_links.get(test_id, ())),
            }
        )
        self.save()
        return True

    def remove(self, module: str, test_id: str, operator: str) -> None:
        bucket = self.entries.get(module, [])
        before = len(bucket)
        self.entries[module] = [e for e in bucket if e["test_id"] != test_id]
        if len(self.entries[module]) == before:
            raise UnknownTest(test_id)
        self.save()


def promote_regression(test_id: str, suite: TestSuite, registry: RegressionRegistry,
                       module: str) -> bool:
    reported = set(suite.clause_links)
    if reported and test_id not in reported:
        raise UnknownTest(test_id)
    return registry.promote(module, test_id, suite)


@dataclass(frozen=True)
class FlakinessReport:
    suite_id: str
    reruns: int
    failing_fraction: dict[str, float]
    environment_fraction: float = 0.0


def rerun_for_noise(
    workspace: Path, suite: TestSuite, n: int, env: dict[str, str] | None = None
) -> FlakinessReport:
    """Run the suite n times with a deterministic workspace reset between
    reruns; report the per-test failing fraction."""
    if n < 1:
        raise ValueError("n must be >= 1")
    workspace = Path(workspace)
    with tempfile.TemporaryDirectory() as snap_dir:
        snapshot = Path(snap_dir) / "snapshot"
        shutil.copytree(workspace, snapshot)
        fail_counts: dict[str, int] = {}
        seen_tests: set[str] = set()
        env_failures = 0
        for i in range(n):
            shutil.rmtree(workspace)
            shutil.copytree(snapshot, workspace)
            rerun_env = dict(env or {})
            rerun_env["HARNESS_RERUN_INDEX"] = str(i)
            results = run_suite(workspace, suite, env=rerun_env)
            if results.environment_flags:
                env_failures += 1
            for t in results.per_test:
                seen_tests.add(t.id)
                if t.status != "pass":
                    fail_counts[t.id] = fail_counts.get(t.id, 0) + 1
    return FlakinessReport(
        suite_id=suite.suite_id,
        reruns=n,
        failing_fraction={t: fail_counts.get(t, 0) / n for t in sorted(seen_tests)},
        environment_fraction=env_failures / n,
    )


def materialize_files(root: Path, files: dict[str, str]) -> None:
    """Write a {relative path: content} map under root; rejects escapes."""
    root = Path(root).resolve()
    for rel, content in files.items():
        target = (root / rel).resolve()
        if not str(target).startswith(str(root)):
            raise SandboxViolation(f"artifact path {rel!r} escapes the workspace")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content, encoding="utf-8")
