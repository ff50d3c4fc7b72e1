"""Four-way failure classification: bug, spec gap, noise, contract ambiguity.

A deterministic rule pre-pass produces a candidate class; the arbiter agent
confirms or overrides it. Environmental failures with unstable reruns are
forced to noise before any agent sees them. Low confidence or rules/agent
disagreement escalates to a human, whose decision is final.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Any

FAILURE_CLASSES = ("bug", "spec_gap", "noise", "contract_ambiguity")

DEFAULT_NOISE_THRESHOLD = 0.2
DEFAULT_NOISE_RERUNS = 5
DEFAULT_ESCALATION_THRESHOLD = 0.6

# Deterministic confidences for rule-derived candidates.
_RULE_CONFIDENCE = {
    "noise": 0.95,
    "contract_ambiguity": 0.8,
    "bug": 0.8,
    "spec_gap": 0.8,
}
_NO_CANDIDATE_CONFIDENCE = 0.4


@dataclass(frozen=True)
class FailingTest:
    test_id: str
    assertion: str
    clause_ids: tuple[str, ...] = ()
    # True: asserted behavior maps to a contract clause; False: checked and
    # unmatched; None: no metadata to check against.
    contract_coverage: bool | None = None


@dataclass(frozen=True)
class FailureEvidence:
    run_id: str
    failing_tests: tuple[FailingTest, ...]
    rerun_stability: float = 1.0
    environment_flags: tuple[str, ...] = ()
    touched_clauses: tuple[str, ...] = ()
    flagged_ambiguous: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.rerun_stability <= 1.0:
            raise ValueError("rerun_stability must be in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "failing_tests": [
                {
                    "test_id": t.test_id,
                    "assertion": t.assertion,
                    "clause_ids": list(t.clause_ids),
                    "contract_coverage": t.contract_coverage,
                }
                for t in self.failing_tests
            ],
            "rerun_stability": self.rerun_stability,
            "environment_flags": list(self.environment_flags),
            "touched_clauses": list(self.touched_clauses),
            "flagged_ambiguous": list(self.flagged_ambiguous),
        }


@dataclass
class FailureClassification:
    failure_class: str
    confidence: float
    rationale: str
    decided_by: str  # agent | rules | human
    rules_class: str | None = None

    def __post_init__(self):
        if self.failure_class not in FAILURE_CLASSES:
            raise ValueError(f"unknown failure class {self.failure_class!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "class": self.failure_class,
            "confidence": self.confidence,
            "rationale": self.rationale,
            "decided_by": self.decided_by,
            "rules_class": self.rules_class,
        }


def gather_evidence(
    run_id: str,
    ci_results,
    suite_clause_links: dict[str, tuple[str, ...]],
    contract_clause_ids: set[str],
    rerun_stability: float | None = None,
    touched_clauses: tuple[str, ...] = (),
    flagged_ambiguous: tuple[str, ...] = (),
) -> FailureEvidence:
    """Assemble evidence for one CI failure group.

    Coverage is mapped from the suite's clause links: a test with links into
    the contract covers it, a test whose links match nothing does not, a test
    with no metadata is unknown.
    """
    failures = ci_results.failures()
    if not failures:
        raise ValueError("gather_evidence requires at least one failure")
    failing: list[FailingTest] = []
    for t in failures:
        links = tuple(suite_clause_links.get(t.id, ()))
        if links:
            coverage = bool(set(links) & contract_clause_ids)
        else:
            coverage = None
        failing.append(
            FailingTest(
                test_id=t.id,
                assertion=t.assertion,
                clause_ids=links,
                contract_coverage=coverage,
            )
        )
    return FailureEvidence(
        run_id=run_id,
        failing_tests=tuple(failing),
        rerun_stability=1.0 if rerun_stability is None else rerun_stability,
        environment_flags=tuple(ci_results.environment_flags),
        touched_clauses=touched_clauses,
        flagged_ambiguous=flagged_ambiguous,
    )


def rule_candidate(
    evidence: FailureEvidence, noise_threshold: float = DEFAULT_NOISE_THRESHOLD
) -> tuple[str | None, str]:
    """Rule pre-pass. Returns (candidate class or None, rationale)."""
    if evidence.environment_flags and evidence.rerun_stability < noise_threshold:
        return (
            "noise",
            f"environment flags {list(evidence.environment_flags)} with rerun "
            f"stability {evidence.rerun_stability} < {noise_threshold}",
        )
    ambiguous = set(evidence.flagged_ambiguous)
    for t in evidence.failing_tests:
        hit = set(t.clause_ids) & ambiguous
        if hit:
            return (
                "contract_ambiguity",
                f"test {t.test_id} references clause(s) {sorted(hit)} flagged by ambiguity lint",
            )
    touched = set(evidence.touched_clauses)
    for t in evidence.failing_tests:
        if t.contract_coverage:
            if not touched or set(t.clause_ids) & touched:
                return (
                    "bug",
                    f"test {t.test_id} asserts contract clause(s) {sorted(t.clause_ids)}",
                )
    for t in evidence.failing_tests:
        if t.contract_coverage is not True:
            return (
                "spec_gap",
                f"test {t.test_id} asserts behavior with no matching contract clause",
            )
    return None, "no rule matched"


def classify(
    evidence: FailureEvidence,
    agent=None,
    noise_threshold: float = DEFAULT_NOISE_THRESHOLD,
) -> FailureClassification:
    """Classify one failure group.

    The noise rule is forced: an environmental, rerun-unstable failure never
    reaches the agent and can never come back as a bug. Otherwise the agent
    confirms or overrides the rule candidate; on agreement confidence is the
    max of both, on override it is the agent's own.
    """
    candidate, rationale = rule_candidate(evidence, noise_threshold)
    if candidate == "noise":
        return FailureClassification(
            failure_class="noise",
            confidence=_RULE_CONFIDENCE["noise"],
            rationale=rationale,
            decided_by="rules",
            rules_class="noise",
        )

    if agent is None:
        if candidate is None:
            return FailureClassification(
                failure_class="spec_gap",
                confidence=_NO_CANDIDATE_CONFIDENCE,
                rationale="no rule matched; defaulting to spec_gap pending review",
                decided_by="rules",
                rules_class=None,
            )
        return FailureClassification(
            failure_class=candidate,
            confidence=_RULE_CONFIDENCE[candidate],
            rationale=rationale,
            decided_by="rules",
            rules_class=candidate,
        )

    response = agent(0)
    body = response.body or {}
    agent_class = body.get("class")
    if agent_class not in FAILURE_CLASSES:
        raise ValueError(f"arbiter agent returned unknown class {agent_class!r}")
    agent_confidence = float(body.get("confidence", 0.5))
    agent_rationale = body.get("rationale", "")
    if agent_class == candidate:
        confidence = max(agent_confidence, _RULE_CONFIDENCE[candidate])
    else:
        confidence = agent_confidence
    return FailureClassification(
        failure_class=agent_class,
        confidence=confidence,
        rationale=agent_rationale or rationale,
        decided_by="agent",
        rules_class=candidate,
    )


def needs_escalation(
    classification: FailureClassification,
    threshold: float = DEFAULT_ESCALATION_THRESHOLD,
) -> bool:
    if classification.decided_by == "human":
        return False
    if classification.confidence < threshold:
        return True
    return (
        classification.rules_class is not None
        and classification.rules_class != classification.failure_class
    )


def escalate(
    evidence: FailureEvidence, classification: FailureClassification
) -> dict[str, Any]:
    """Build the ticket payload handed to the operator approval queue."""
    return {
        "kind": "arbiter_escalation",
        "run_id": evidence.run_id,
        "evidence": evidence.to_dict(),
        "proposed": classification.to_dict(),
    }


def human_classification(decision: dict[str, Any]) -> FailureClassification:
    """Final classification from a resolved escalation ticket."""
    return FailureClassification(
        failure_class=decision["class"],
        confidence=1.0,
        rationale=decision.get("rationale", "operator decision"),
        decided_by="human",
        rules_class=decision.get("rules_class"),
    )
