from __future__ import annotations

import pytest

from harness.calibration import (
    NotApproved,
    RetroProposal,
    apply_proposal,
    compute_metrics,
    run_retro,
)
from harness.pipeline import RunEvent


def ev(run_id, seq, event_kind, **payload):
    return RunEvent(seq=seq, run_id=run_id, timestamp=f"2026-02-0{seq}T00:00:00Z",
                    kind=event_kind, payload=payload)


def classified(run_id, seq, cls, section="totals", domain="payments", **extra):
    return ev(run_id, seq, "failure_classified",
              classification={"class": cls}, section=section, domain=domain, **extra)


def test_proposal_validation():
    with pytest.raises(ValueError):
        RetroProposal(id="p", kind="mystery", target="x", diff="d",
                      evidence_runs=["r1"])
    with pytest.raises(ValueError):
        RetroProposal(id="p", kind="compiler_rule", target="x", diff="d",
                      evidence_runs=[])


def test_retro_ignores_one_off_failures():
    history = {"r1": [classified("r1", 1, "spec_gap")]}
    assert run_retro(history) == []


def test_retro_proposes_template_update_for_recurring_spec_gaps():
    history = {
        "r1": [classified("r1", 1, "spec_gap")],
        "r2": [classified("r2", 1, "spec_gap")],
    }
    proposals = run_retro(history)
    assert len(proposals) == 1
    p = proposals[0]
    assert p.kind == "contract_template_update"
    assert p.target == "payments"
    assert sorted(p.evidence_runs) == ["r1", "r2"]
    assert "payments" in p.diff


def test_recurrence_keyed_by_class_and_section():
    history = {
        "r1": [classified("r1", 1, "spec_gap", section="totals")],
        "r2": [classified("r2", 1, "spec_gap", section="refunds")],
        "r3": [classified("r3", 1, "bug", section="totals")],
    }
    assert run_retro(history) == []


def test_retro_maps_each_class_to_its_proposal_kind():
    kinds = {}
    for cls in ("bug", "spec_gap", "contract_ambiguity"):
        history = {
            "r1": [classified("r1", 1, cls)],
            "r2": [classified("r2", 1, cls)],
        }
        kinds[cls] = run_retro(history)[0].kind
    assert kinds == {
        "bug": "regression_promotion",
        "spec_gap": "contract_template_update",
        "contract_ambiguity": "compiler_rule",
    }


def test_retro_proposes_checklist_items_for_repeated_blockers():
    blocker = {"severity": "blocker", "text": "missing audit log"}
    history = {
        "r1": [ev("r1", 1, "gate_recorded", gate="qa", verdict="fail",
                  findings=[blocker])],
        "r2": [ev("r2", 1, "gate_recorded", gate="qa", verdict="fail",
                  findings=[blocker])],
    }
    proposals = run_retro(history)
    assert [p.kind for p in proposals] == ["review_checklist_item"]
    assert proposals[0].target == "qa"
    assert "missing audit log" in proposals[0].diff


def test_retro_merges_agent_suggestions_as_pending():
    agent = [{"kind": "compiler_rule", "target": "lint", "diff": r"\bmaybe\b",
              "evidence_runs": ["r9"]}]
    proposals = run_retro({}, agent_proposals=agent)
    assert len(proposals) == 1
    assert proposals[0].status == "pending"


def test_retro_window_filters_by_timestamp():
    history = {
        "r1": [classified("r1", 1, "spec_gap")],
        "r2": [classified("r2", 8, "spec_gap")],
    }
    assert run_retro(history, window=("2026-02-01", "2026-02-05")) == []


class Stores:
    def __init__(self):
        self.calls = []

    def update_specialization_clause(self, target, diff):
        self.calls.append(("spec", target, diff))
        return {"domain": target}

    def extend_checklist(self, target, item):
        self.calls.append(("checklist", target, item))

    def add_lint_pattern(self, pattern):
        self.calls.append(("lint", pattern))


def proposal(kind="contract_template_update", status="pending"):
    return RetroProposal(id="p1", kind=kind, target="payments", diff="d",
                         evidence_runs=["r1"], status=status)


def test_apply_requires_double_approval():
    stores = Stores()
    with pytest.raises(NotApproved):
        apply_proposal(proposal(), {"status": "approved", "principal": "op"}, stores)
    with pytest.raises(NotApproved):
        apply_proposal(proposal(status="approved"), {"status": "rejected",
                                                     "principal": "op"}, stores)
    with pytest.raises(NotApproved):
        apply_proposal(proposal(status="approved"), {"status": "approved"}, stores)
    assert stores.calls == []


def test_apply_routes_to_the_matching_store():
    stores = Stores()
    change = apply_proposal(proposal(status="approved"),
                            {"status": "approved", "principal": "op"}, stores)
    assert change["kind"] == "contract_template_update"
    assert stores.calls == [("spec", "payments", "d")]

    apply_proposal(proposal(kind="compiler_rule", status="approved"),
                   {"status": "approved", "principal": "op"}, stores)
    assert stores.calls[-1] == ("lint", "d")


def hand_history():
    """A two-run history small enough to count by hand."""
    r1 = [
        ev("r1", 1, "issue_submitted", issue={"id": "I1"}),
        ev("r1", 2, "job_dispatched", role="implementer", attempt=1),
        ev("r1", 3, "response_received", kind="test_suite", role="test_author"),
        ev("r1", 4, "ci_completed", all_pass=False),
        classified("r1", 5, "bug"),
        ev("r1", 6, "regression_promoted", test_id="t1"),
        ev("r1", 7, "corrective_action", **{"class": "bug"},
           calibration_suites=["cal-1", "cal-2"]),
        ev("r1", 8, "job_dispatched", role="implementer", attempt=2),
        ev("r1", 9, "ci_completed", all_pass=True),
        ev("r1", 9, "run_done"),
    ]
    r2 = [
        ev("r2", 1, "issue_submitted", issue={"id": "I2"},
           ground_truth_labels={"contract_is_ambiguous": True}),
        ev("r2", 2, "job_dispatched", role="implementer", attempt=1),
        ev("r2", 3, "gate_recorded", gate="qa", verdict="fail",
           findings=[{"severity": "blocker", "text": "b"}]),
        ev("r2", 4, "human_decision",
           decision={"type": "gate_override", "principal": "op"}),
    ]
    return {"r1": r1, "r2": r2}


def test_metrics_match_hand_counts():
    report = compute_metrics(
        hand_history(),
        proposal_events=[{"type": "decided", "status": "approved"},
                         {"type": "decided", "status": "rejected"}],
    )
    prod = report.productivity
    assert prod["features_completed"] == 1
    assert prod["autonomous_commits"] == 1
    assert prod["human_interventions"] == 1
    assert prod["avg_implementation_cycles"] == 2.0

    ver = report.verification
    assert ver["suites_generated"] == 1
    assert ver["calibration_suites"] == 2
    assert ver["pass_fail_rate"] == 0.5
    assert ver["bugs_caught_pre_merge"] == 2  # one classified bug, one blocker
    assert ver["spec_gap_rate"] == 0.0
    assert ver["regressions_promoted"] == 1
    # the labeled-ambiguous run never routed to refinement
    assert ver["ambiguity_detection_rate"] == 0.0

    qual = report.quality
    assert qual["post_merge_bug_rate"] == 0.0
    assert qual["qa_failure_rate"] == 1.0

    cal = report.calibration
    assert cal["recurring_failure_classes"] == {"bug": 1}
    assert cal["failures_converted_to_improvements"] == 1

    assert report.diagnostics["contract_violation_detection_rate"] == 1.0


def test_zero_denominator_rates_are_absent_not_zero():
    report = compute_metrics({})
    assert report.verification["pass_fail_rate"] is None
    assert report.verification["ambiguity_detection_rate"] is None
    assert report.quality["post_merge_bug_rate"] is None
    assert report.diagnostics["review_gate_precision"] is None
    table = report.to_table()
    assert "pass_fail_rate" in table
    assert "absent" in table
