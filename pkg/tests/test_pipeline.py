from __future__ import annotations

import json

import pytest

from harness.pipeline import (
    CORRECTIVE_ACTIONS,
    EVENT_KINDS,
    GATES,
    TRANSITIONS,
    IllegalTransition,
    RunEvent,
    RunState,
    advance,
    apply_arbiter_outcome,
    event_qualifier,
    fold,
    max_cycles_guard,
    phase_for_step,
)


def ev(seq, event_kind, **payload):
    return RunEvent(seq=seq, run_id="r1", timestamp=f"2026-01-01T00:00:{seq:02d}Z",
                    kind=event_kind, payload=payload)


CONTRACT = {"module_name": "pay", "version": "1.0.0", "status": "refined_pass2"}


def pipeline_prefix():
    """Events from submission through a finished contract and first dispatch."""
    return [
        ev(1, "issue_submitted", issue={"id": "ISS-1"}, scenario_id="s"),
        ev(2, "contract_compiled_p1", contract=dict(CONTRACT, status="draft_pass1"),
           specializations=[{"domain": "payments", "confidence": 0.9}]),
        ev(3, "contract_refined_p2", contract=CONTRACT, ambiguities=[]),
        ev(4, "gate_recorded", gate="product_review", verdict="pass", findings=[]),
        ev(5, "gate_recorded", gate="engineering_review", verdict="pass", findings=[]),
    ]


def test_transition_table_loads_and_is_wellformed():
    assert TRANSITIONS
    for (step, kind, _when), nxt in TRANSITIONS.items():
        assert kind in EVENT_KINDS
        assert 1 <= step <= 18
        assert 1 <= nxt <= 18


def test_phase_boundaries():
    assert phase_for_step(6) == "pre_pipeline"
    assert phase_for_step(7) == "pipeline"
    assert phase_for_step(13) == "pipeline"
    assert phase_for_step(14) == "post_pipeline"


def test_advance_is_pure():
    state = RunState(run_id="r1")
    before = json.dumps(state.to_dict(), sort_keys=True)
    out = advance(state, ev(1, "issue_submitted", issue={}))
    assert json.dumps(state.to_dict(), sort_keys=True) == before
    assert out is not state
    assert out.step == 2


def test_fold_replays_to_identical_state():
    events = pipeline_prefix()
    a = fold("r1", events)
    b = fold("r1", events)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert a.step == 6
    assert a.specializations == [{"domain": "payments", "confidence": 0.9}]


def test_engineering_pass_finalizes_the_contract():
    state = fold("r1", pipeline_prefix())
    assert state.contract["status"] == "final"
    assert [c["status"] for c in state.contract_lineage] == [
        "draft_pass1", "refined_pass2", "final",
    ]


def test_illegal_event_raises_and_names_the_step():
    state = fold("r1", pipeline_prefix())
    with pytest.raises(IllegalTransition) as err:
        advance(state, ev(6, "ci_completed", all_pass=True))
    assert err.value.step == 6


def test_timestamp_never_reaches_folded_state():
    events = pipeline_prefix()
    shifted = [
        RunEvent(e.seq, e.run_id, "1999-12-31T23:59:59Z", e.kind, e.payload)
        for e in events
    ]
    assert fold("r1", events).to_dict() == fold("r1", shifted).to_dict()


def test_gate_waive_qualifier_counts_as_pass():
    assert event_qualifier(
        ev(1, "gate_recorded", gate="qa", verdict="waived")
    ) == "qa:pass"


def test_gate_fail_parks_the_run_on_a_ticket():
    events = pipeline_prefix()[:4]
    events[3] = ev(4, "gate_recorded", gate="product_review", verdict="fail",
                   findings=[], ticket_id="t-1")
    state = fold("r1", events)
    assert state.pending_human == "t-1"
    assert state.step == 4


def test_gate_override_waives_and_clears():
    events = pipeline_prefix()[:4]
    events[3] = ev(4, "gate_recorded", gate="product_review", verdict="fail",
                   findings=[], ticket_id="t-1")
    events.append(ev(5, "human_decision", ticket_id="t-1",
                     decision={"type": "gate_override", "gate": "product_review",
                               "action": "approve", "principal": "op-1"}))
    state = fold("r1", events)
    assert state.pending_human is None
    assert state.gates["product_review"]["verdict"] == "waived"
    assert state.gates["product_review"]["decided_by"] == "op-1"
    assert state.step == 5


def test_ambiguity_corrective_discards_artifact_and_suite():
    events = pipeline_prefix() + [
        ev(6, "job_dispatched", role="implementer", attempt=1),
        ev(7, "job_dispatched", role="test_author", attempt=1),
        ev(8, "response_received", role="implementer", kind="code_artifact",
           body={"files": {}}),
        ev(9, "response_received", role="test_author", kind="test_suite",
           body={"suite_id": "s1"}),
        ev(10, "ci_completed", all_pass=False, results={}),
        ev(11, "failure_classified",
           classification={"class": "contract_ambiguity", "decided_by": "rules"}),
        ev(12, "corrective_action", **{"class": "contract_ambiguity",
           "action": CORRECTIVE_ACTIONS["contract_ambiguity"]}),
    ]
    state = fold("r1", events)
    assert state.artifact is None
    assert state.suite is None
    assert state.step == 3


def test_run_done_requires_step_18_and_all_gates():
    state = fold("r1", pipeline_prefix())
    with pytest.raises(IllegalTransition):
        advance(state, ev(9, "run_done"))


def test_done_accepts_only_post_merge_annotations():
    state = RunState(run_id="r1", phase="done", step=18,
                     gates={g: {"verdict": "pass"} for g in GATES})
    annotated = advance(state, ev(50, "human_decision",
                                  decision={"type": "post_merge_report",
                                            "description": "x", "principal": "op"}))
    assert len(annotated.post_merge_reports) == 1
    classified = advance(annotated, ev(51, "failure_classified", post_merge=True,
                                       classification={"class": "spec_gap"}))
    assert classified.last_classification == {"class": "spec_gap"}
    with pytest.raises(IllegalTransition):
        advance(classified, ev(52, "job_dispatched", role="implementer", attempt=9))


def test_halted_is_terminal():
    state = advance(RunState(run_id="r1"), ev(1, "run_halted", reason="budget"))
    assert state.phase == "halted"
    with pytest.raises(IllegalTransition):
        advance(state, ev(2, "issue_submitted", issue={}))


@pytest.mark.parametrize("cls,action", sorted(CORRECTIVE_ACTIONS.items()))
def test_routing_emits_the_mapped_corrective_action(cls, action):
    state = RunState(run_id="r1", suite={"suite_id": "s1"})
    payloads = apply_arbiter_outcome(
        state,
        {"class": cls, "evidence": {"failing_tests": [{"test_id": "t1"}]}},
    )
    corrective = payloads[-1]
    assert corrective["kind"] == "corrective_action"
    assert corrective["payload"] == {"class": cls, "action": action}
    promotions = [p for p in payloads if p["kind"] == "regression_promoted"]
    if cls == "bug":
        assert [p["payload"]["test_id"] for p in promotions] == ["t1"]
    else:
        assert promotions == []


def test_routing_rejects_unknown_class():
    with pytest.raises(ValueError):
        apply_arbiter_outcome(RunState(run_id="r1"), {"class": "mystery"})


def test_max_cycles_guard():
    assert max_cycles_guard(RunState(run_id="r1", implementation_cycles=5), 5) is None
    guard = max_cycles_guard(RunState(run_id="r1", implementation_cycles=6), 5)
    assert guard is not None
    assert "exceed" in guard["reason"]
