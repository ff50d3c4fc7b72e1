"""Agent roles, job payloads, and pluggable dispatch backends.

Independence is structural: every job gets its own payload, payloads never
carry another role's transcript, and the test author sees the contract and
repository interface only. The `forbidden` list on each payload records the
exclusions that were enforced so completed runs can be audited.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any

ROLES = (
    "contract_compiler",
    "implementer",
    "test_author",
    "product_reviewer",
    "architecture_reviewer",
    "security_reviewer",
    "backend_reviewer",
    "frontend_reviewer",
    "qa_tester",
    "shipping_reviewer",
    "arbiter",
    "retro",
)

REVIEWER_ROLES = (
    "product_reviewer",
    "architecture_reviewer",
    "security_reviewer",
    "backend_reviewer",
    "frontend_reviewer",
    "qa_tester",
    "shipping_reviewer",
)

ROLE_OUTPUT_KINDS: dict[str, tuple[str, ...]] = {
    "contract_compiler": ("contract_draft", "contract_refinement"),
    "implementer": ("code_artifact",),
    "test_author": ("test_suite",),
    "arbiter": ("classification",),
    "retro": ("retro_proposals",),
    **{role: ("review_findings",) for role in REVIEWER_ROLES},
}

# Input keys the test author may receive: the contract and the repository
# interface description, nothing produced by the implementer.
TEST_AUTHOR_ALLOWED_INPUTS = frozenset({"repo_interface"})

DEFAULT_AGENT_RETRIES = 2


class AgentError(Exception):
    pass


class RoleViolation(AgentError):
    """Response kind not allowed for the role, or payload breaks independence."""


class ScenarioIncomplete(AgentError):
    """Scripted scenario has no response for a step the run reached."""


class BackendUnreachable(AgentError):
    pass


class MalformedAfterRetries(AgentError):
    pass


@dataclass(frozen=True)
class JobPayload:
    job_id: str
    run_id: str
    role: str
    attempt: int
    contract: dict[str, Any]
    memory_excerpts: tuple[dict[str, Any], ...] = ()
    specialization_checklists: tuple[str, ...] = ()
    inputs: dict[str, Any] = field(default_factory=dict)
    forbidden: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["memory_excerpts"] = list(self.memory_excerpts)
        d["specialization_checklists"] = list(self.specialization_checklists)
        d["forbidden"] = list(self.forbidden)
        return d


@dataclass(frozen=True)
class AgentResponse:
    job_id: str
    role: str
    kind: str
    body: Any
    raw_transcript: str = ""

    def to_dict(self, include_transcript: bool = False) -> dict[str, Any]:
        d = {"job_id": self.job_id, "role": self.role, "kind": self.kind, "body": self.body}
        if include_transcript:
            d["raw_transcript"] = self.raw_transcript
        return d


ROLE_FORBIDDEN: dict[str, tuple[str, ...]] = {
    "test_author": (
        "implementation artifacts",
        "implementer transcript",
        "implementer reasoning",
        "cross-role transcripts",
    ),
    "implementer": ("test suite sources", "cross-role transcripts"),
}
_DEFAULT_FORBIDDEN = ("cross-role transcripts",)


def build_payload(
    *,
    job_id: str,
    run_id: str,
    role: str,
    attempt: int,
    contract: dict[str, Any],
    memory_doc=None,
    module_name: str = "",
    specialization_checklists: tuple[str, ...] = (),
    inputs: dict[str, Any] | None = None,
) -> JobPayload:
    """Assemble the exact context bundle for one agent attempt.

    Memory excerpts follow a fixed rule: permanent decisions/constraints plus
    rolling failure patterns mentioning the module. Exclusion invariants are
    enforced here, not trusted to callers.
    """
    if role not in ROLES:
        raise RoleViolation(f"unknown role {role!r}")
    inputs = dict(inputs or {})

    if role == "test_author":
        illegal = set(inputs) - TEST_AUTHOR_ALLOWED_INPUTS
        if illegal:
            raise RoleViolation(f"test_author payload may not include {sorted(illegal)}")
    for key in inputs:
        if "transcript" in key:
            raise RoleViolation("payloads never carry another role's transcript")

    excerpts: tuple[dict[str, Any], ...] = ()
    if memory_doc is not None:
        selected = [
            e for e in memory_doc.permanent if e.kind in ("decision", "constraint")
        ] + [
            e
            for e in memory_doc.rolling
            if e.kind == "failure_pattern" and module_name and module_name in e.text
        ]
        excerpts = tuple(asdict(e) for e in selected)

    if role not in REVIEWER_ROLES and specialization_checklists:
        specialization_checklists = ()

    return JobPayload(
        job_id=job_id,
        run_id=run_id,
        role=role,
        attempt=attempt,
        contract=contract,
        memory_excerpts=excerpts,
        specialization_checklists=tuple(specialization_checklists),
        inputs=inputs,
        forbidden=ROLE_FORBIDDEN.get(role, _DEFAULT_FORBIDDEN),
    )


def audit_payload(payload: dict[str, Any]) -> list[str]:
    """Independence audit over one persisted payload dict; returns violations."""
    problems: list[str] = []
    role = payload.get("role")
    inputs = payload.get("inputs", {})
    if role == "test_author":
        illegal = set(inputs) - TEST_AUTHOR_ALLOWED_INPUTS
        if illegal:
            problems.append(f"test_author payload carries {sorted(illegal)}")
    for key, value in inputs.items():
        if "transcript" in key:
            problems.append(f"{role} payload carries transcript input {key!r}")
        if role == "test_author" and isinstance(value, dict) and "files" in value:
            problems.append("test_author payload carries an artifact reference")
    return problems


# ---------------------------------------------------------------------------
# Scripted scenarios

@dataclass
class ScriptedScenario:
    scenario_id: str
    responses: dict[str, dict[str, Any]]  # "<role>:<attempt>:<step>" -> response dict
    issue: dict[str, Any] = field(default_factory=dict)
    ground_truth_labels: dict[str, Any] = field(default_factory=dict)
    calibration_suites: list[str] = field(default_factory=list)
    human_script: list[dict[str, Any]] = field(default_factory=list)
    post_merge_reports: list[str] = field(default_factory=list)

    @staticmethod
    def key(role: str, attempt: int, step: int) -> str:
        return f"{role}:{attempt}:{step}"

    def lookup(self, role: str, attempt: int, step: int) -> dict[str, Any]:
        key = self.key(role, attempt, step)
        if key not in self.responses:
            raise ScenarioIncomplete(
                f"scenario {self.scenario_id!r} has no response for {key}"
            )
        return self.responses[key]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScriptedScenario":
        return cls(
            scenario_id=data["scenario_id"],
            responses=dict(data["responses"]),
            issue=dict(data.get("issue", {})),
            ground_truth_labels=dict(data.get("ground_truth_labels", {})),
            calibration_suites=list(data.get("calibration_suites", [])),
            human_script=list(data.get("human_script", [])),
            post_merge_reports=list(data.get("post_merge_reports", [])),
        )

    @classmethod
    def load(cls, path: Path) -> "ScriptedScenario":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"scenario_id": self.scenario_id, "responses": self.responses}
        if self.issue:
            out["issue"] = self.issue
        if self.ground_truth_labels:
            out["ground_truth_labels"] = self.ground_truth_labels
        if self.calibration_suites:
            out["calibration_suites"] = self.calibration_suites
        if self.human_script:
            out["human_script"] = self.human_script
        if self.post_merge_reports:
            out["post_merge_reports"] = self.post_merge_reports
        return out


class ScriptedBackend:
    """Deterministic backend replaying canned responses from a scenario file."""

    def __init__(self, scenario: ScriptedScenario):
        self.scenario = scenario

    def complete(self, payload: JobPayload, step: int) -> AgentResponse:
        raw = self.scenario.lookup(payload.role, payload.attempt, step)
        return AgentResponse(
            job_id=payload.job_id,
            role=payload.role,
            kind=raw["kind"],
            body=raw["body"],
            raw_transcript=raw.get("raw_transcript", ""),
        )


class WireBackend:
    """Generic chat-completion-style HTTP backend with role prompt templates."""

    def __init__(self, base_url: str, templates_dir: Path, retries: int = DEFAULT_AGENT_RETRIES,
                 session=None, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.templates_dir = Path(templates_dir)
        self.retries = retries
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def render_prompt(self, payload: JobPayload) -> str:
        template_path = self.templates_dir / f"{payload.role}.txt"
        template = string.Template(template_path.read_text(encoding="utf-8"))
        return template.safe_substitute(
            contract=json.dumps(payload.contract, sort_keys=True, indent=2),
            memory=json.dumps(list(payload.memory_excerpts), indent=2),
            inputs=json.dumps(payload.inputs, sort_keys=True, indent=2),
            checklists="\n".join(payload.specialization_checklists),
            attempt=str(payload.attempt),
        )

    def complete(self, payload: JobPayload, step: int) -> AgentResponse:
        prompt = self.render_prompt(payload)
        last_error = None
        for _ in range(self.retries + 1):
            try:
                resp = self.session.post(
                    f"{self.base_url}/complete",
                    json={"role": payload.role, "prompt": prompt},
                    timeout=self.timeout,
                )
                resp.raise_for_status()
            except Exception as exc:  # connection-level failure, not malformed output
                raise BackendUnreachable(str(exc)) from exc
            try:
                data = resp.json()
                return AgentResponse(
                    job_id=payload.job_id,
                    role=payload.role,
                    kind=data["kind"],
                    body=data["body"],
                    raw_transcript=data.get("raw_transcript", ""),
                )
            except (ValueError, KeyError) as exc:
                last_error = exc
        raise MalformedAfterRetries(str(last_error))


def dispatch(payload: JobPayload, backend, step: int) -> AgentResponse:
    """Send one job to a backend and enforce the role -> output-kind closure."""
    response = backend.complete(payload, step)
    allowed = ROLE_OUTPUT_KINDS[payload.role]
    if response.kind not in allowed:
        raise RoleViolation(
            f"role {payload.role!r} may not return kind {response.kind!r}"
        )
    return response
