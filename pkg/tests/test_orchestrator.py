from __future__ import annotations

import json

from harness.scenario_builder import (
    build_adversarial_pass2,
    build_bug,
    build_clean,
    build_escalation,
    build_noise,
    build_product_gate_fail,
    build_proposal_pause,
    build_spec_gap,
)


def replay(orch, scenario, run_id=None):
    orch.register_scenario(scenario)
    return orch.replay_scenario(scenario.scenario_id, run_id=run_id)


def normalized(events):
    out = []
    for e in events:
        d = e.to_dict()
        d.pop("timestamp")
        out.append(d)
    return out


def test_clean_run_completes_without_humans(make_harness):
    _, store, orch = make_harness()
    state = replay(orch, build_clean("pay"))
    assert state.phase == "done"
    assert state.step == 18
    assert state.implementation_cycles == 1
    assert all(g["verdict"] == "pass" for g in state.gates.values())
    assert store.pending_tickets() == []


def test_bug_run_promotes_a_regression_and_retries(make_harness):
    _, store, orch = make_harness()
    state = replay(orch, build_bug("pay"))
    assert state.phase == "done"
    assert state.implementation_cycles == 2
    kinds = [e.kind for e in store.events(state.run_id)]
    assert "regression_promoted" in kinds
    classifications = [
        e.payload["classification"]["class"]
        for e in store.events(state.run_id)
        if e.kind == "failure_classified"
    ]
    assert classifications == ["bug"]


def test_noise_run_reruns_and_moves_on(make_harness):
    _, store, orch = make_harness()
    state = replay(orch, build_noise("pay"))
    assert state.phase == "done"
    classifications = [
        e.payload["classification"]["class"]
        for e in store.events(state.run_id)
        if e.kind == "failure_classified"
    ]
    assert classifications == ["noise"]


def test_escalation_resolves_through_a_ticket(make_harness):
    _, store, orch = make_harness()
    state = replay(orch, build_escalation("pay"))
    assert state.phase == "done"
    tickets = [t for t in store.tickets().values() if t["kind"] == "arbiter_escalation"]
    assert len(tickets) == 1
    assert tickets[0]["status"] == "resolved"
    human = [
        e.payload["classification"]
        for e in store.events(state.run_id)
        if e.kind == "failure_classified"
        and e.payload["classification"].get("decided_by") == "human"
    ]
    assert len(human) == 1


def test_proposal_approval_adds_a_lint_pattern(make_harness):
    _, store, orch = make_harness()
    before = orch.lint_patterns()
    state = replay(orch, build_proposal_pause("pay"))
    assert state.phase == "done"
    added = set(orch.lint_patterns()) - set(before)
    assert len(added) == 1


def test_product_gate_fail_parks_then_resumes(make_harness):
    _, store, orch = make_harness()
    state = replay(orch, build_product_gate_fail("pay"))
    assert state.phase == "pre_pipeline"
    assert state.pending_human is not None

    resumed = orch.resolve_ticket(state.pending_human, {"action": "approve"}, "op-1")
    assert resumed.phase == "done"
    assert resumed.gates["product_review"]["verdict"] == "waived"


def test_adversarial_refiner_halts_the_run(make_harness):
    _, store, orch = make_harness()
    state = replay(orch, build_adversarial_pass2("pay", persistent=True))
    assert state.phase == "halted"
    # nothing sneaked into a contract before the halt
    assert state.contract is None or state.contract["status"] == "draft_pass1"


def test_max_cycles_guard_halts_runaway_runs(make_harness):
    _, store, orch = make_harness(max_cycles=1)
    state = replay(orch, build_bug("pay"))
    assert state.phase == "halted"
    halt = next(e for e in store.events(state.run_id) if e.kind == "run_halted")
    assert "cycle" in halt.payload["reason"]


def test_replay_is_deterministic_across_fresh_harnesses(make_harness):
    logs = []
    for _ in range(2):
        _, store, orch = make_harness()
        state = replay(orch, build_spec_gap("pay"), run_id="fixed-run")
        logs.append(json.dumps(normalized(store.events(state.run_id)), sort_keys=True))
    assert logs[0] == logs[1]


def test_completed_replay_is_idempotent(make_harness):
    _, store, orch = make_harness()
    scenario = build_clean("pay")
    state = replay(orch, scenario, run_id="r-once")
    before = normalized(store.events("r-once"))
    again = orch.replay_scenario(scenario.scenario_id, run_id="r-once")
    assert again.phase == "done"
    assert normalized(store.events("r-once")) == before


def test_post_merge_spec_gap_feeds_the_retro(make_harness):
    _, store, orch = make_harness()
    state = replay(orch, build_clean("pay"))
    orch.report_post_merge(state.run_id, "final invoice omits offline deposits", "op-1")
    events = store.events(state.run_id)
    assert events[-1].kind == "failure_classified"
    assert events[-1].payload["post_merge"] is True


def test_test_author_payloads_stay_isolated(make_harness):
    _, store, orch = make_harness()
    state = replay(orch, build_bug("pay"))
    dispatched = [
        e.payload
        for e in store.events(state.run_id)
        if e.kind == "job_dispatched" and e.payload.get("role") == "test_author"
    ]
    assert dispatched
    for payload in dispatched:
        inner = payload["payload"]
        assert set(inner.get("inputs", {})) <= {"repo_interface"}
        assert "transcript" not in json.dumps(inner["inputs"])
        assert "artifact" not in inner
