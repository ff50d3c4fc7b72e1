"""Event-sourced pipeline state machine.

A run's state is a pure fold over its event log; replaying the log always
reproduces the same state (timestamps are carried on events but excluded from
folded state). The legal transitions live in `transition_table.json` so the
documentation and the implementation cannot diverge; the table is loaded and
checked at import of the state machine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from importlib import resources
from typing import Any

EVENT_KINDS = (
    "issue_submitted",
    "contract_compiled_p1",
    "contract_refined_p2",
    "gate_recorded",
    "job_dispatched",
    "response_received",
    "ci_completed",
    "failure_classified",
    "corrective_action",
    "regression_promoted",
    "retro_completed",
    "human_decision",
    "run_done",
    "run_halted",
)

GATES = ("product_review", "engineering_review", "structural_review", "qa", "shipping")

PHASES = ("pre_pipeline", "pipeline", "post_pipeline", "done", "halted")

DEFAULT_MAX_CYCLES = 5

# Classification class -> Table-style corrective action name.
CORRECTIVE_ACTIONS = {
    "bug": "fix_implementation_promote_regression",
    "spec_gap": "update_contract_retry",
    "noise": "calibrate_verifier_or_ci",
    "contract_ambiguity": "refine_contract_restart_implementation",
}


class IllegalTransition(Exception):
    def __init__(self, step: int, phase: str, kind: str, qualifier: str):
        super().__init__(
            f"event {kind}({qualifier}) is illegal at step {step} (phase {phase})"
        )
        self.step = step
        self.kind = kind


@dataclass(frozen=True)
class RunEvent:
    seq: int
    run_id: str
    timestamp: str
    kind: str
    payload: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "run_id": self.run_id,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunEvent":
        return cls(
            seq=data["seq"],
            run_id=data["run_id"],
            timestamp=data["timestamp"],
            kind=data["kind"],
            payload=data.get("payload", {}),
        )


def load_transition_table() -> dict[tuple[int, str, str], int]:
    raw = json.loads(
        resources.files("harness").joinpath("transition_table.json").read_text("utf-8")
    )
    table: dict[tuple[int, str, str], int] = {}
    for rule in raw["rules"]:
        if rule["event"] not in EVENT_KINDS:
            raise ValueError(f"transition table references unknown event {rule['event']!r}")
        key = (rule["step"], rule["event"], rule["when"])
        if key in table:
            raise ValueError(f"duplicate transition rule {key}")
        table[key] = rule["next"]
    return table


TRANSITIONS = load_transition_table()


def phase_for_step(step: int) -> str:
    if step <= 6:
        return "pre_pipeline"
    if step <= 13:
        return "pipeline"
    return "post_pipeline"


def event_qualifier(event: RunEvent) -> str:
    p = event.payload
    if event.kind in ("job_dispatched", "response_received"):
        return p.get("role", "")
    if event.kind == "gate_recorded":
        verdict = p.get("verdict", "")
        if verdict == "waived":
            verdict = "pass"
        return f"{p.get('gate', '')}:{verdict}"
    if event.kind == "ci_completed":
        return "all_pass" if p.get("all_pass") else "failures"
    if event.kind == "corrective_action":
        return p.get("class", "")
    if event.kind == "human_decision":
        d = p.get("decision", {})
        if d.get("type") == "gate_override":
            return f"gate_override:{d.get('action', '')}"
        return d.get("type", "")
    return "*"


@dataclass
class RunState:
    run_id: str
    issue: dict[str, Any] = field(default_factory=dict)
    scenario_id: str | None = None
    phase: str = "pre_pipeline"
    step: int = 1
    contract_lineage: list[dict[str, Any]] = field(default_factory=list)
    implementation_cycles: int = 0
    gates: dict[str, dict[str, Any]] = field(default_factory=dict)
    pending_human: str | None = None
    attempts: dict[str, int] = field(default_factory=dict)
    artifact: dict[str, Any] | None = None
    suite: dict[str, Any] | None = None
    suites_generated: int = 0
    last_ci: dict[str, Any] | None = None
    last_classification: dict[str, Any] | None = None
    pending_decision: dict[str, Any] | None = None
    ambiguous_clause_ids: list[str] = field(default_factory=list)
    specializations: list[dict[str, Any]] = field(default_factory=list)
    pending_tickets: list[str] = field(default_factory=list)
    regressions_promoted: int = 0
    retro_proposals: list[dict[str, Any]] = field(default_factory=list)
    post_merge_reports: list[dict[str, Any]] = field(default_factory=list)
    seq: int = 0

    @property
    def contract(self) -> dict[str, Any] | None:
        return self.contract_lineage[-1] if self.contract_lineage else None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def advance(state: RunState, event: RunEvent) -> RunState:
    """Pure transition: apply one event to a run state.

    Illegal events raise IllegalTransition and leave the input unmodified
    (the input state is never mutated; a new state is returned).
    """
    qualifier = event_qualifier(event)

    if state.phase == "halted":
        # Terminal, except the operator acknowledging the halt ticket.
        if event.kind == "human_decision" and qualifier == "halt_ack":
            new = _copy(state)
            new.pending_human = None
            new.seq = event.seq
            return new
        raise IllegalTransition(state.step, state.phase, event.kind, qualifier)
    if state.phase == "done":
        # Terminal, except operator-reported post-merge observations and their
        # classification; these annotate the shipped run without reopening it.
        if event.kind == "human_decision" and qualifier == "post_merge_report":
            new = _copy(state)
            new.post_merge_reports.append(event.payload.get("decision", {}))
            new.seq = event.seq
            return new
        if event.kind == "failure_classified" and event.payload.get("post_merge"):
            new = _copy(state)
            new.last_classification = event.payload.get("classification")
            new.seq = event.seq
            return new
        raise IllegalTransition(state.step, state.phase, event.kind, qualifier)

    if event.kind == "run_halted":
        new = _copy(state)
        new.phase = "halted"
        new.pending_human = event.payload.get("ticket_id")
        new.seq = event.seq
        return new
    if event.kind == "run_done":
        if state.step != 18:
            raise IllegalTransition(state.step, state.phase, event.kind, qualifier)
        missing = [g for g in GATES if state.gates.get(g, {}).get("verdict") not in ("pass", "waived")]
        if missing:
            raise IllegalTransition(state.step, state.phase, event.kind, f"gates missing {missing}")
        new = _copy(state)
        new.phase = "done"
        new.seq = event.seq
        return new

    next_step = TRANSITIONS.get((state.step, event.kind, qualifier))
    if next_step is None:
        next_step = TRANSITIONS.get((state.step, event.kind, "*"))
    if next_step is None:
        raise IllegalTransition(state.step, state.phase, event.kind, qualifier)

    new = _copy(state)
    new.seq = event.seq
    _apply_payload(new, event, qualifier)
    new.step = next_step
    new.phase = phase_for_step(next_step)
    return new


def _copy(state: RunState) -> RunState:
    return RunState(**json.loads(json.dumps(state.to_dict())))


def _apply_payload(state: RunState, event: RunEvent, qualifier: str) -> None:
    p = event.payload
    kind = event.kind
    if kind == "issue_submitted":
        state.issue = p.get("issue", {})
        state.scenario_id = p.get("scenario_id")
    elif kind == "job_dispatched":
        role = p.get("role", "")
        state.attempts[role] = state.attempts.get(role, 0) + 1
        if role == "implementer":
            state.implementation_cycles += 1
    elif kind == "response_received":
        if p.get("kind") == "code_artifact":
            state.artifact = p.get("body")
        elif p.get("kind") == "test_suite":
            state.suite = p.get("body")
            state.suites_generated += 1
        if p.get("role") == "arbiter" and p.get("escalated"):
            state.pending_human = p.get("ticket_id")
    elif kind == "contract_compiled_p1":
        state.contract_lineage.append(p["contract"])
        state.specializations = p.get("specializations", [])
    elif kind == "contract_refined_p2":
        state.contract_lineage.append(p["contract"])
        state.ambiguous_clause_ids = [
            f.get("clause_id") for f in p.get("ambiguities", [])
        ]
    elif kind == "gate_recorded":
        state.gates[p["gate"]] = {
            "verdict": p["verdict"],
            "findings": p.get("findings", []),
            "decided_by": p.get("decided_by"),
        }
        if p["verdict"] == "fail":
            state.pending_human = p.get("ticket_id")
        if p["gate"] == "engineering_review" and p["verdict"] in ("pass", "waived"):
            if state.contract is not None:
                final = dict(state.contract)
                final["status"] = "final"
                state.contract_lineage.append(final)
    elif kind == "ci_completed":
        state.last_ci = {"all_pass": p.get("all_pass"), "results": p.get("results")}
    elif kind == "failure_classified":
        state.last_classification = p.get("classification")
        state.pending_human = None
        state.pending_decision = None
    elif kind == "corrective_action":
        if p.get("class") == "contract_ambiguity":
            state.artifact = None
            state.suite = None
    elif kind == "regression_promoted":
        state.regressions_promoted += 1
    elif kind == "retro_completed":
        state.retro_proposals = p.get("proposals", [])
        state.pending_tickets = list(p.get("ticket_ids", []))
        if state.pending_tickets:
            state.pending_human = state.pending_tickets[0]
    elif kind == "human_decision":
        decision = p.get("decision", {})
        state.pending_human = None
        if decision.get("type") in ("proposal_decision", "memory_promotion_decision"):
            resolved = decision.get("ticket_id") or p.get("ticket_id")
            state.pending_tickets = [t for t in state.pending_tickets if t != resolved]
            if state.pending_tickets:
                state.pending_human = state.pending_tickets[0]
        if decision.get("type") == "gate_override":
            gate = decision.get("gate")
            action = decision.get("action")
            if gate in state.gates and action in ("approve", "waive"):
                state.gates[gate]["verdict"] = "waived"
                state.gates[gate]["decided_by"] = decision.get("principal")
            if action == "halt":
                state.pending_decision = decision
        elif decision.get("type") == "classification":
            state.pending_decision = decision


def fold(run_id: str, events: list[RunEvent]) -> RunState:
    """Rebuild run state from its event log."""
    state = RunState(run_id=run_id)
    for event in events:
        state = advance(state, event)
    return state


def apply_arbiter_outcome(
    state: RunState, classification: dict[str, Any]
) -> list[dict[str, Any]]:
    """Produce the event payloads that realize the four-way routing.

    Returns payload dicts in emission order; the orchestrator wraps them in
    events. Exactly one corrective_action per classification, plus a
    regression promotion for bugs.
    """
    cls = classification["class"]
    if cls not in CORRECTIVE_ACTIONS:
        raise ValueError(f"unknown failure class {cls!r}")
    payloads: list[dict[str, Any]] = []
    if cls == "bug":
        failing = (classification.get("evidence") or {}).get("failing_tests", [])
        for test in failing:
            payloads.append(
                {
                    "kind": "regression_promoted",
                    "payload": {
                        "test_id": test["test_id"],
                        "suite_id": (state.suite or {}).get("suite_id"),
                    },
                }
            )
    corrective = {
        "kind": "corrective_action",
        "payload": {"class": cls, "action": CORRECTIVE_ACTIONS[cls]},
    }
    payloads.append(corrective)
    return payloads


def max_cycles_guard(state: RunState, limit: int = DEFAULT_MAX_CYCLES) -> dict[str, Any] | None:
    """Return a halt ticket payload when the cycle budget is exhausted."""
    if state.implementation_cycles > limit:
        return {
            "kind": "run_halt",
            "run_id": state.run_id,
            "reason": f"implementation cycles {state.implementation_cycles} exceed limit {limit}",
            "failure_history": {
                "last_ci": state.last_ci,
                "last_classification": state.last_classification,
                "cycles": state.implementation_cycles,
            },
        }
    return None
