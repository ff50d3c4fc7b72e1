"""Two-pass contract compilation.

Pass 1 expands a raw issue into a complete draft (agent-generated text,
structurally enforced here). Pass 2 reduces scope and removes ambiguity and
may never add clauses; responses that try are rejected and retried.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable

from .contracts import (
    Contract,
    InvariantClause,
    contract_from_dict,
    diff_contracts,
    validate_contract,
)
from .memory import SpecializationRecord, match_specializations

DEFAULT_SPECIALIZATION_THRESHOLD = 0.7
DEFAULT_COMPILE_RETRIES = 2

REMOVAL_REASON_DEFAULT = "unsupported requirement"


class CompileError(Exception):
    pass


class EmptyIssue(CompileError):
    pass


class AgentResponseInvalid(CompileError):
    """Agent returned an unparseable or schema-invalid draft after retries."""


class MonotonicityViolation(CompileError):
    """Pass-2 response tried to add clauses; the response is rejected."""


@dataclass(frozen=True)
class RawIssue:
    id: str
    title: str
    body: str
    labels: tuple[str, ...] = ()
    requester: str = ""

    def validate(self) -> None:
        if not self.body.strip():
            raise EmptyIssue(self.id)


@dataclass(frozen=True)
class AmbiguityFinding:
    clause_id: str
    interpretations: tuple[str, ...]
    suggested_rewrite: str = ""

    def __post_init__(self):
        if len(self.interpretations) < 2:
            raise ValueError("an ambiguity needs at least two readings")


@dataclass(frozen=True)
class RemovalLogEntry:
    clause_id: str
    reason: str


# A compile agent is a callable (retry_index) -> AgentResponse-shaped object
# with .kind and .body; the orchestrator wires this to agents.dispatch.
CompileAgent = Callable[[int], Any]


def select_specializations(
    issue: RawIssue,
    registry: list[SpecializationRecord],
    threshold: float = DEFAULT_SPECIALIZATION_THRESHOLD,
) -> list[tuple[SpecializationRecord, float]]:
    """Confidence-gate the registry against the issue. Below-threshold records
    are dropped and the pipeline proceeds without them."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    selected = []
    for record, confidence in match_specializations(issue, registry):
        if confidence >= max(threshold, record.min_confidence):
            selected.append((record, confidence))
    return selected


def _specialization_clauses(specs: list[SpecializationRecord]) -> list[InvariantClause]:
    clauses = []
    for record in specs:
        for i, template in enumerate(record.injected_clauses, start=1):
            clauses.append(
                InvariantClause(
                    id=template.get("id", f"SPEC-{record.domain}-{i}"),
                    text=template["text"],
                    severity=template.get("severity", "must"),
                    origin="specialization",
                )
            )
    return clauses


def compile_pass1(
    issue: RawIssue,
    specs: list[SpecializationRecord],
    agent: CompileAgent,
    retries: int = DEFAULT_COMPILE_RETRIES,
) -> Contract:
    """Completeness pass: agent drafts the contract, we enforce structure and
    provenance and inject the selected specializations' clauses."""
    issue.validate()
    last = ""
    for attempt in range(retries + 1):
        response = agent(attempt)
        if response.kind != "contract_draft":
            last = f"wrong kind {response.kind!r}"
            continue
        try:
            draft = contract_from_dict(response.body)
        except Exception as exc:
            last = str(exc)
            continue
        draft = Contract(
            **{
                **_as_kwargs(draft),
                "status": "draft_pass1",
                "invariants": tuple(
                    _with_default_origin(c, issue) for c in draft.invariants
                )
                + tuple(_specialization_clauses(specs)),
                "business_rules": tuple(
                    _with_default_origin(c, issue) for c in draft.business_rules
                ),
            }
        )
        violations = validate_contract(draft)
        if violations:
            last = "; ".join(f"{v.field}: {v.rule}" for v in violations)
            continue
        bad_origin = [
            c.id
            for c in list(draft.invariants) + list(draft.business_rules)
            if c.origin not in ("issue", "pass1_inferred", "specialization")
        ]
        if bad_origin:
            last = f"clauses with illegal origin: {bad_origin}"
            continue
        return draft
    raise AgentResponseInvalid(last)


_IMPERATIVE_RE = re.compile(r"\b(must|shall|never|always|required)\b", re.IGNORECASE)


def _with_default_origin(clause: InvariantClause, issue: RawIssue) -> InvariantClause:
    severity = clause.severity
    if not severity:
        severity = "must" if _IMPERATIVE_RE.search(clause.text) else "should"
    return InvariantClause(
        id=clause.id, text=clause.text, severity=severity, origin=clause.origin or "issue"
    )


def _as_kwargs(c: Contract) -> dict[str, Any]:
    return {
        "module_name": c.module_name,
        "version": c.version,
        "status": c.status,
        "surfaces": c.surfaces,
        "invariants": c.invariants,
        "error_taxonomy": c.error_taxonomy,
        "auth_rules": c.auth_rules,
        "business_rules": c.business_rules,
        "out_of_scope": c.out_of_scope,
        "qa_targets": c.qa_targets,
        "regression_risks": c.regression_risks,
        "acceptance_criteria": c.acceptance_criteria,
        "known_gaps": c.known_gaps,
    }


def compile_pass2(
    draft: Contract,
    agent: CompileAgent,
    retries: int = DEFAULT_COMPILE_RETRIES,
) -> tuple[Contract, list[AmbiguityFinding], list[RemovalLogEntry]]:
    """Scope and ambiguity pass. The refined clause-id set must be a subset of
    the draft's; additions are rejected and the response retried."""
    if draft.status != "draft_pass1":
        raise CompileError(f"pass 2 requires a draft_pass1 contract, got {draft.status}")
    if validate_contract(draft):
        raise CompileError("draft does not validate")

    draft_ids = draft.clause_ids()
    last: Exception | None = None
    for attempt in range(retries + 1):
        response = agent(attempt)
        if response.kind != "contract_refinement":
            last = AgentResponseInvalid(f"wrong kind {response.kind!r}")
            continue
        body = response.body or {}
        try:
            refined = contract_from_dict(body["contract"])
        except Exception as exc:
            last = AgentResponseInvalid(str(exc))
            continue
        refined = Contract(**{**_as_kwargs(refined), "status": "refined_pass2"})

        added = refined.clause_ids() - draft_ids
        if added:
            last = MonotonicityViolation(
                f"pass-2 response adds clauses {sorted(added)}; rejected"
            )
            continue
        if validate_contract(refined):
            last = AgentResponseInvalid("refined contract does not validate")
            continue

        reasons = dict(body.get("removed", {}))
        removal_log = [
            RemovalLogEntry(cid, reasons.get(cid, REMOVAL_REASON_DEFAULT))
            for cid in sorted(diff_contracts(draft, refined).removed)
        ]
        findings = _parse_findings(body.get("ambiguities", []))
        findings.extend(lint_ambiguity(refined))
        return refined, _dedup_findings(findings), removal_log

    assert last is not None
    raise last


def _parse_findings(raw: list[dict]) -> list[AmbiguityFinding]:
    findings = []
    for item in raw:
        findings.append(
            AmbiguityFinding(
                clause_id=item["clause_id"],
                interpretations=tuple(item["interpretations"]),
                suggested_rewrite=item.get("suggested_rewrite", ""),
            )
        )
    return findings


def _dedup_findings(findings: list[AmbiguityFinding]) -> list[AmbiguityFinding]:
    by_clause: dict[str, AmbiguityFinding] = {}
    for f in findings:
        if f.clause_id not in by_clause:
            by_clause[f.clause_id] = f
    return list(by_clause.values())


# ---------------------------------------------------------------------------
# Rule-based ambiguity lint. Runs without any agent in the loop so ambiguity
# routing stays measurable in fully deterministic tests. Calibration can add
# patterns at runtime via `extra_patterns`.

VAGUE_TERMS = (
    "appropriately",
    "appropriate",
    "properly",
    "gracefully",
    "as needed",
    "reasonable",
    "etc",
    "and so on",
    "relevant",
    "some way",
    "correctly handle",
    "handle errors",
)

_UNRESOLVED_OR_RE = re.compile(r"\beither\b.*\bor\b|\bor maybe\b|\bor possibly\b", re.IGNORECASE)
_OBLIGATION_RE = re.compile(r"\b(must|shall|should)\b", re.IGNORECASE)
_QUANTIFIER_RE = re.compile(r"\b(all|every|each|any|no|none|at least|at most|exactly)\b", re.IGNORECASE)


def lint_ambiguity(
    c: Contract, extra_patterns: tuple[str, ...] = ()
) -> list[AmbiguityFinding]:
    """Deterministic lint for clauses admitting multiple readings."""
    findings: list[AmbiguityFinding] = []
    for cid, clause in c.iter_clauses():
        text = getattr(clause, "text", None)
        if not text:
            continue
        lowered = text.lower()
        vague = [t for t in VAGUE_TERMS if t in lowered]
        if vague:
            findings.append(
                AmbiguityFinding(
                    clause_id=cid,
                    interpretations=(
                        f"strict reading: {vague[0]!r} means a fixed, enumerable behavior",
                        f"loose reading: {vague[0]!r} leaves the behavior to the implementer",
                    ),
                    suggested_rewrite=f"replace {vague[0]!r} with an enumerated behavior",
                )
            )
            continue
        if _UNRESOLVED_OR_RE.search(text):
            findings.append(
                AmbiguityFinding(
                    clause_id=cid,
                    interpretations=(
                        "first branch of the disjunction is required",
                        "second branch of the disjunction is required",
                    ),
                    suggested_rewrite="pick one branch or state the selection rule",
                )
            )
            continue
        for pattern in extra_patterns:
            if re.search(pattern, text, re.IGNORECASE):
                findings.append(
                    AmbiguityFinding(
                        clause_id=cid,
                        interpretations=(
                            f"clause matches calibrated ambiguity pattern {pattern!r}",
                            "clause intends a single fixed behavior",
                        ),
                        suggested_rewrite="rewrite to avoid the flagged pattern",
                    )
                )
                break
    return _dedup_findings(findings)
