"""Outer-loop calibration: retrospectives over failure history, human-gated
harness-update proposals, and harness-level metrics.

Every metric is a pure function of the event log (plus the append-only
proposal log); rates with a zero denominator are reported as absent, never
fabricated as 0 or 1.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field, asdict
from typing import Any

from .pipeline import RunEvent

PROPOSAL_KINDS = (
    "regression_promotion",
    "contract_template_update",
    "review_checklist_item",
    "compiler_rule",
    "memory_promotion",
)

# failure class -> proposal kind for recurring failures
_CLASS_TO_PROPOSAL = {
    "bug": "regression_promotion",
    "spec_gap": "contract_template_update",
    "contract_ambiguity": "compiler_rule",
}

RECURRENCE_THRESHOLD = 2


class NotApproved(Exception):
    pass


@dataclass
class RetroProposal:
    id: str
    kind: str
    target: str
    diff: str
    evidence_runs: list[str]
    status: str = "pending"

    def __post_init__(self):
        if self.kind not in PROPOSAL_KINDS:
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if not self.evidence_runs:
            raise ValueError("a proposal must cite at least one evidence run")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _new_id() -> str:
    return uuid.uuid4().hex[:10]


def run_retro(
    events_by_run: dict[str, list[RunEvent]],
    agent_proposals: list[dict[str, Any]] | None = None,
    window: tuple[str, str] | None = None,
) -> list[RetroProposal]:
    """Scan the failure history of a window and propose harness updates.

    A failure class recurring at least twice against the same contract section
    yields a proposal of the mapped kind; recurring blocker findings on one
    review gate yield a checklist item. Agent-suggested proposals are merged in
    as pending entries.
    """
    events = _window_events(events_by_run, window)

    # (class, section, domain) -> evidence run ids
    recurrences: dict[tuple[str, str, str], list[str]] = {}
    gate_blockers: dict[tuple[str, str], list[str]] = {}
    for run_id, evs in events.items():
        for ev in evs:
            if ev.kind == "failure_classified":
                cls = (ev.payload.get("classification") or {}).get("class")
                section = ev.payload.get("section", "unspecified")
                domain = ev.payload.get("domain", "general")
                if cls in _CLASS_TO_PROPOSAL:
                    recurrences.setdefault((cls, section, domain), []).append(run_id)
            elif ev.kind == "gate_recorded":
                for finding in ev.payload.get("findings", []):
                    if finding.get("severity") == "blocker":
                        key = (ev.payload.get("gate", ""), finding.get("text", ""))
                        gate_blockers.setdefault(key, []).append(run_id)

    proposals: list[RetroProposal] = []
    for (cls, section, domain), run_ids in sorted(recurrences.items()):
        if len(run_ids) < RECURRENCE_THRESHOLD:
            continue
        kind = _CLASS_TO_PROPOSAL[cls]
        if kind == "contract_template_update":
            diff = (
                f"extend the {domain} contract template: section {section!r} "
                f"recurringly omits required behavior"
            )
        elif kind == "regression_promotion":
            diff = f"promote the catching tests for recurring bugs in section {section!r}"
        else:
            diff = f"add an ambiguity lint pattern for clauses like those in {section!r}"
        proposals.append(
            RetroProposal(
                id=_new_id(), kind=kind, target=domain, diff=diff, evidence_runs=run_ids
            )
        )

    for (gate, text), run_ids in sorted(gate_blockers.items()):
        if len(run_ids) < RECURRENCE_THRESHOLD:
            continue
        proposals.append(
            RetroProposal(
                id=_new_id(),
                kind="review_checklist_item",
                target=gate,
                diff=f"add checklist item covering: {text}",
                evidence_runs=run_ids,
            )
        )

    for raw in agent_proposals or []:
        proposals.append(
            RetroProposal(
                id=raw.get("id", _new_id()),
                kind=raw["kind"],
                target=raw.get("target", ""),
                diff=raw.get("diff", ""),
                evidence_runs=list(raw.get("evidence_runs", [])),
            )
        )
    return proposals


def apply_proposal(proposal: RetroProposal, approval: dict[str, Any], stores) -> dict[str, Any]:
    """Apply one approved proposal. `stores` bundles the mutable harness
    configuration (specialization registry dir, lint rules, regression
    registry, memory); the change is returned for audit."""
    if proposal.status != "approved" or approval.get("status") != "approved":
        raise NotApproved(proposal.id)
    if not approval.get("principal"):
        raise NotApproved("approval requires an operator principal")

    if proposal.kind == "contract_template_update":
        record = stores.update_specialization_clause(proposal.target, proposal.diff)
        return {"kind": proposal.kind, "target": proposal.target, "record": record}
    if proposal.kind == "review_checklist_item":
        item = proposal.diff
        stores.extend_checklist(proposal.target, item)
        return {"kind": proposal.kind, "target": proposal.target, "item": item}
    if proposal.kind == "compiler_rule":
        stores.add_lint_pattern(proposal.diff)
        return {"kind": proposal.kind, "pattern": proposal.diff}
    if proposal.kind == "regression_promotion":
        stores.promote_regression(proposal.target, proposal.diff)
        return {"kind": proposal.kind, "target": proposal.target}
    if proposal.kind == "memory_promotion":
        stores.apply_memory_promotion(proposal.target, approval["principal"])
        return {"kind": proposal.kind, "entry": proposal.target}
    raise ValueError(proposal.kind)


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricsReport:
    window: dict[str, Any]
    productivity: dict[str, Any]
    verification: dict[str, Any]
    quality: dict[str, Any]
    calibration: dict[str, Any]
    diagnostics: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_table(self) -> str:
        lines = []
        for section in ("productivity", "verification", "quality", "calibration", "diagnostics"):
            lines.append(section.upper())
            for key, value in getattr(self, section).items():
                shown = "absent" if value is None else value
                lines.append(f"  {key:<40} {shown}")
        return "\n".join(lines)


def _window_events(
    events_by_run: dict[str, list[RunEvent]], window: tuple[str, str] | None
) -> dict[str, list[RunEvent]]:
    if window is None:
        return events_by_run
    start, end = window
    out = {}
    for run_id, evs in events_by_run.items():
        kept = [e for e in evs if start <= e.timestamp <= end]
        if kept:
            out[run_id] = kept
    return out


def _rate(numerator: float, denominator: float) -> float | None:
    if denominator == 0:
        return None
    return numerator / denominator


def compute_metrics(
    events_by_run: dict[str, list[RunEvent]],
    proposal_events: list[dict[str, Any]] | None = None,
    window: tuple[str, str] | None = None,
) -> MetricsReport:
    events = _window_events(events_by_run, window)
    flat = [(run_id, ev) for run_id, evs in events.items() for ev in evs]

    done_runs = {r for r, e in flat if e.kind == "run_done"}
    features_completed = sum(1 for _, e in flat if e.kind == "run_done")
    human_interventions = sum(1 for _, e in flat if e.kind == "human_decision")
    runs_with_human = {r for r, e in flat if e.kind == "human_decision"}
    autonomous_commits = len(done_runs - runs_with_human)

    cycle_times = []
    for run_id, evs in events.items():
        submitted = next((e.timestamp for e in evs if e.kind == "issue_submitted"), None)
        finished = next((e.timestamp for e in evs if e.kind == "run_done"), None)
        if submitted and finished:
            cycle_times.append((run_id, submitted, finished))

    impl_cycles = {
        run_id: sum(
            1
            for e in evs
            if e.kind == "job_dispatched" and e.payload.get("role") == "implementer"
        )
        for run_id, evs in events.items()
    }
    done_cycle_counts = [impl_cycles[r] for r in impl_cycles if r in done_runs]

    suites_generated = sum(
        1
        for _, e in flat
        if e.kind == "response_received" and e.payload.get("kind") == "test_suite"
    )
    calibration_suites = sum(
        len(e.payload.get("calibration_suites", []))
        for _, e in flat
        if e.kind == "corrective_action"
    )

    ci_events = [e for _, e in flat if e.kind == "ci_completed"]
    ci_passes = sum(1 for e in ci_events if e.payload.get("all_pass"))

    classifications = [
        e for _, e in flat if e.kind == "failure_classified"
    ]
    pre_merge = [e for e in classifications if not e.payload.get("post_merge")]

    def cls_count(name: str, events_list) -> int:
        return sum(
            1
            for e in events_list
            if (e.payload.get("classification") or {}).get("class") == name
        )

    pre_merge_bugs = cls_count("bug", pre_merge)
    blocker_findings = sum(
        sum(1 for f in e.payload.get("findings", []) if f.get("severity") == "blocker")
        for _, e in flat
        if e.kind == "gate_recorded"
    )
    bugs_caught_pre_merge = pre_merge_bugs + blocker_findings

    total_cls = len(classifications)
    spec_gaps = cls_count("spec_gap", classifications)
    noise = cls_count("noise", classifications)

    regressions_promoted = sum(1 for _, e in flat if e.kind == "regression_promoted")

    post_merge_reports = sum(
        1
        for _, e in flat
        if e.kind == "human_decision"
        and e.payload.get("decision", {}).get("type") == "post_merge_report"
    )
    rollbacks = sum(
        1
        for _, e in flat
        if e.kind == "human_decision"
        and e.payload.get("decision", {}).get("type") == "rollback_report"
    )
    qa_gates = [
        e for _, e in flat if e.kind == "gate_recorded" and e.payload.get("gate") == "qa"
    ]
    qa_fails = sum(1 for e in qa_gates if e.payload.get("verdict") == "fail")

    # ambiguity detection, defined only over runs labeled with ground truth
    labeled_ambiguous = set()
    routed_to_refinement = set()
    for run_id, evs in events.items():
        for e in evs:
            if e.kind == "issue_submitted" and (
                e.payload.get("ground_truth_labels", {}).get("contract_is_ambiguous")
            ):
                labeled_ambiguous.add(run_id)
            if (
                e.kind == "corrective_action"
                and e.payload.get("class") == "contract_ambiguity"
            ):
                routed_to_refinement.add(run_id)

    histogram: dict[str, int] = {}
    sections: set[str] = set()
    for e in classifications:
        cls = (e.payload.get("classification") or {}).get("class")
        if cls:
            histogram[cls] = histogram.get(cls, 0) + 1
        if cls == "spec_gap":
            sections.add(e.payload.get("section", "unspecified"))

    applied_proposals = sum(
        1
        for rec in (proposal_events or [])
        if rec.get("type") == "decided" and rec.get("status") == "approved"
    )

    adjudicated_true = 0
    adjudicated_total = 0
    for _, e in flat:
        if e.kind == "human_decision":
            d = e.payload.get("decision", {})
            if d.get("type") == "finding_adjudication":
                adjudicated_total += 1
                if d.get("verdict") == "true_issue":
                    adjudicated_true += 1

    return MetricsReport(
        window={"start": window[0], "end": window[1]} if window else {},
        productivity={
            "features_completed": features_completed,
            "cycle_time_count": len(cycle_times),
            "autonomous_commits": autonomous_commits,
            "human_interventions": human_interventions,
            "avg_implementation_cycles": (
                sum(done_cycle_counts) / len(done_cycle_counts) if done_cycle_counts else None
            ),
        },
        verification={
            "suites_generated": suites_generated,
            "calibration_suites": calibration_suites,
            "pass_fail_rate": _rate(ci_passes, len(ci_events)),
            "bugs_caught_pre_merge": bugs_caught_pre_merge,
            "spec_gap_rate": _rate(spec_gaps, total_cls),
            "verifier_noise_rate": _rate(noise, total_cls),
            "ambiguity_detection_rate": _rate(
                len(labeled_ambiguous & routed_to_refinement), len(labeled_ambiguous)
            ),
            "regressions_promoted": regressions_promoted,
        },
        quality={
            "post_merge_bug_rate": _rate(post_merge_reports, features_completed),
            "rollback_rate": _rate(rollbacks, features_completed),
            "qa_failure_rate": _rate(qa_fails, len(qa_gates)),
        },
        calibration={
            "recurring_failure_classes": dict(sorted(histogram.items())),
            "contract_sections_with_gaps": sorted(sections),
            "failures_converted_to_improvements": applied_proposals,
        },
        diagnostics={
            "contract_violation_detection_rate": _rate(
                pre_merge_bugs, pre_merge_bugs + post_merge_reports
            ),
            "review_gate_precision": _rate(adjudicated_true, adjudicated_total),
        },
    )
