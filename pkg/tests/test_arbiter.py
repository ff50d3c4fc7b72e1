from __future__ import annotations

import pytest

from harness.arbiter import (
    FailingTest,
    FailureClassification,
    FailureEvidence,
    classify,
    escalate,
    gather_evidence,
    human_classification,
    needs_escalation,
    rule_candidate,
)
from harness.verification import TestCaseResult, TestResults


def failing(test_id="t1", clause_ids=(), coverage=None):
    return FailingTest(test_id=test_id, assertion="a", clause_ids=clause_ids,
                       contract_coverage=coverage)


def evidence(**kwargs):
    defaults = dict(run_id="r1", failing_tests=(failing(),))
    defaults.update(kwargs)
    return FailureEvidence(**defaults)


class Agent:
    def __init__(self, body):
        self.body = body
        self.called = False

    def __call__(self, i):
        self.called = True
        return type("R", (), {"body": self.body})()


def test_stability_bounds_enforced():
    with pytest.raises(ValueError):
        evidence(rerun_stability=1.5)


def test_noise_requires_flags_and_instability():
    env = dict(environment_flags=("infra-exit-2",))
    assert rule_candidate(evidence(rerun_stability=0.0, **env))[0] == "noise"
    # stable failure with env flags is not noise
    assert rule_candidate(evidence(rerun_stability=0.9, **env))[0] != "noise"
    # unstable but no env flags is not noise either
    assert rule_candidate(evidence(rerun_stability=0.0))[0] != "noise"


def test_rule_precedence_noise_over_ambiguity_over_bug():
    tests = (failing(clause_ids=("INV-1",), coverage=True),)
    both = evidence(
        failing_tests=tests,
        environment_flags=("oom",),
        rerun_stability=0.0,
        flagged_ambiguous=("INV-1",),
    )
    assert rule_candidate(both)[0] == "noise"

    amb = evidence(failing_tests=tests, flagged_ambiguous=("INV-1",))
    assert rule_candidate(amb)[0] == "contract_ambiguity"

    bug = evidence(failing_tests=tests)
    assert rule_candidate(bug)[0] == "bug"


def test_uncovered_assertion_is_a_spec_gap_candidate():
    cand, rationale = rule_candidate(evidence(failing_tests=(failing(coverage=False),)))
    assert cand == "spec_gap"
    assert "no matching contract clause" in rationale


def test_forced_noise_never_reaches_the_agent():
    agent = Agent({"class": "bug", "confidence": 0.99})
    cls = classify(
        evidence(environment_flags=("disk-full",), rerun_stability=0.0), agent=agent
    )
    assert cls.failure_class == "noise"
    assert cls.decided_by == "rules"
    assert agent.called is False


def test_agent_agreement_takes_max_confidence():
    tests = (failing(clause_ids=("INV-1",), coverage=True),)
    cls = classify(evidence(failing_tests=tests),
                   agent=Agent({"class": "bug", "confidence": 0.5}))
    assert cls.failure_class == "bug"
    assert cls.confidence == 0.8
    assert cls.rules_class == "bug"


def test_agent_override_keeps_agent_confidence():
    tests = (failing(clause_ids=("INV-1",), coverage=True),)
    cls = classify(evidence(failing_tests=tests),
                   agent=Agent({"class": "spec_gap", "confidence": 0.7,
                                "rationale": "clause is too thin"}))
    assert cls.failure_class == "spec_gap"
    assert cls.confidence == 0.7
    assert cls.rules_class == "bug"


def test_agent_must_return_a_known_class():
    with pytest.raises(ValueError):
        classify(evidence(), agent=Agent({"class": "cosmic_ray"}))


def test_no_candidate_defaults_low_confidence_spec_gap():
    cls = classify(evidence(failing_tests=(failing(coverage=True, clause_ids=("X",)),),
                            touched_clauses=("Y",)), agent=None)
    assert cls.failure_class == "spec_gap"
    assert cls.confidence == 0.4


def test_escalation_on_low_confidence_or_disagreement():
    low = FailureClassification("bug", 0.5, "r", "agent", rules_class="bug")
    assert needs_escalation(low, 0.6)
    disagree = FailureClassification("spec_gap", 0.9, "r", "agent", rules_class="bug")
    assert needs_escalation(disagree, 0.6)
    confident = FailureClassification("bug", 0.9, "r", "agent", rules_class="bug")
    assert not needs_escalation(confident, 0.6)
    human = FailureClassification("bug", 0.2, "r", "human", rules_class="spec_gap")
    assert not needs_escalation(human, 0.6)


def test_escalation_ticket_payload_carries_both_sides():
    cls = FailureClassification("spec_gap", 0.5, "r", "agent", rules_class="bug")
    payload = escalate(evidence(), cls)
    assert payload["kind"] == "arbiter_escalation"
    assert payload["proposed"]["class"] == "spec_gap"
    assert payload["proposed"]["rules_class"] == "bug"
    assert payload["evidence"]["run_id"] == "r1"


def test_human_classification_is_final():
    cls = human_classification({"class": "noise", "rationale": "ci disk flake"})
    assert cls.decided_by == "human"
    assert cls.confidence == 1.0
    assert not needs_escalation(cls)


def test_gather_evidence_maps_coverage_from_links():
    results = TestResults(
        suite_id="s1",
        per_test=(
            TestCaseResult(id="t1", status="fail", assertion="covered"),
            TestCaseResult(id="t2", status="fail", assertion="dangling link"),
            TestCaseResult(id="t3", status="fail", assertion="no metadata"),
            TestCaseResult(id="t4", status="pass"),
        ),
        exit_code=1,
        output_digest="d",
    )
    out = gather_evidence(
        "r1",
        results,
        suite_clause_links={"t1": ("INV-1",), "t2": ("GHOST",)},
        contract_clause_ids={"INV-1"},
    )
    by_id = {t.test_id: t.contract_coverage for t in out.failing_tests}
    assert by_id == {"t1": True, "t2": False, "t3": None}


def test_gather_evidence_requires_failures():
    results = TestResults(suite_id="s", per_test=(TestCaseResult(id="t", status="pass"),),
                          exit_code=0, output_digest="d")
    with pytest.raises(ValueError):
        gather_evidence("r1", results, {}, set())
