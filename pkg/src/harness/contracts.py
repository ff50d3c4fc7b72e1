"""Contract data model: the executable specification shared by builder and verifier.

A contract is a plain value object. Everything here is pure: validation
returns violations as data, diffing partitions clause ids, and the canonical
JSON serialization round-trips bit-exactly (sorted keys, mandatory clause ids).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from typing import Any

SEMVER_RE = re.compile(r"^\d+\.\d+\.\d+(?:[-+][0-9A-Za-z.-]+)?$")

CONTRACT_STATUSES = (
    "draft_pass1",
    "refined_pass2",
    "product_approved",
    "eng_approved",
    "final",
    "superseded",
)

SURFACE_KINDS = ("api_endpoint", "ui_flow", "job", "integration")
SEVERITIES = ("must", "should")
CLAUSE_ORIGINS = ("issue", "pass1_inferred", "specialization", "calibration")

# Statuses at or past finalization; known_gaps are retrospective annotations
# and may only exist on these.
_FINALIZED = ("final", "superseded")


@dataclass(frozen=True)
class InvariantClause:
    id: str
    text: str
    severity: str = "must"
    origin: str = "issue"


@dataclass(frozen=True)
class TextClause:
    """A free-text clause with a stable id (auth rules, scope exclusions, ...)."""

    id: str
    text: str


@dataclass(frozen=True)
class ErrorEntry:
    id: str
    code: str
    meaning: str


@dataclass(frozen=True)
class AcceptanceCriterion:
    id: str
    text: str
    linked_invariants: tuple[str, ...] = ()


@dataclass(frozen=True)
class Surface:
    kind: str
    method_or_trigger: str
    path_or_name: str
    returns: tuple[str, ...] = ()
    side_effects: tuple[str, ...] = ()
    errors: tuple[str, ...] = ()


@dataclass(frozen=True)
class Contract:
    module_name: str
    version: str
    status: str = "draft_pass1"
    surfaces: tuple[Surface, ...] = ()
    invariants: tuple[InvariantClause, ...] = ()
    error_taxonomy: tuple[ErrorEntry, ...] = ()
    auth_rules: tuple[TextClause, ...] = ()
    business_rules: tuple[InvariantClause, ...] = ()
    out_of_scope: tuple[TextClause, ...] = ()
    qa_targets: tuple[TextClause, ...] = ()
    regression_risks: tuple[TextClause, ...] = ()
    acceptance_criteria: tuple[AcceptanceCriterion, ...] = ()
    known_gaps: tuple[TextClause, ...] = ()

    def clause_ids(self) -> set[str]:
        return {cid for cid, _ in self.iter_clauses()}

    def iter_clauses(self):
        """Yield (clause_id, clause) for every clause in every list."""
        for inv in self.invariants:
            yield inv.id, inv
        for err in self.error_taxonomy:
            yield err.id, err
        for rule in self.auth_rules:
            yield rule.id, rule
        for rule in self.business_rules:
            yield rule.id, rule
        for cl in self.out_of_scope:
            yield cl.id, cl
        for cl in self.qa_targets:
            yield cl.id, cl
        for cl in self.regression_risks:
            yield cl.id, cl
        for ac in self.acceptance_criteria:
            yield ac.id, ac
        for gap in self.known_gaps:
            yield gap.id, gap

    def clause_text(self, clause_id: str) -> str | None:
        for cid, clause in self.iter_clauses():
            if cid == clause_id:
                return getattr(clause, "text", getattr(clause, "meaning", ""))
        return None

    def clause_section(self, clause_id: str) -> str | None:
        """Name of the contract field a clause id lives in."""
        sections = (
            ("invariants", self.invariants),
            ("error_taxonomy", self.error_taxonomy),
            ("auth_rules", self.auth_rules),
            ("business_rules", self.business_rules),
            ("out_of_scope", self.out_of_scope),
            ("qa_targets", self.qa_targets),
            ("regression_risks", self.regression_risks),
            ("acceptance_criteria", self.acceptance_criteria),
            ("known_gaps", self.known_gaps),
        )
        for name, clauses in sections:
            if any(c.id == clause_id for c in clauses):
                return name
        return None


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str


@dataclass(frozen=True)
class ClauseDiff:
    unchanged: frozenset[str]
    added: frozenset[str]
    removed: frozenset[str]
    rewritten: frozenset[str]


class ContractParseError(ValueError):
    """Malformed contract document; carries the offending field or location."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{message}{' at ' + location if location else ''}")
        self.location = location


def validate_contract(c: Contract) -> list[Violation]:
    """Check every type invariant for the contract's declared status.

    Violations are data, not exceptions; an empty list means the contract is
    valid for its status.
    """
    out: list[Violation] = []
    if not c.module_name:
        out.append(Violation("module_name", "must be non-empty"))
    if not SEMVER_RE.match(c.version or ""):
        out.append(Violation("version", "must parse as semver"))
    if c.status not in CONTRACT_STATUSES:
        out.append(Violation("status", f"unknown status {c.status!r}"))

    seen: set[str] = set()
    for cid, _ in c.iter_clauses():
        if not cid:
            out.append(Violation("clause.id", "clause id must be non-empty"))
        elif cid in seen:
            out.append(Violation("clause.id", f"duplicate clause id {cid!r}"))
        seen.add(cid)

    for inv in list(c.invariants) + list(c.business_rules):
        if not inv.text:
            out.append(Violation("invariants", f"clause {inv.id!r} has empty text"))
        if inv.severity not in SEVERITIES:
            out.append(Violation("invariants", f"clause {inv.id!r} bad severity {inv.severity!r}"))
        if inv.origin not in CLAUSE_ORIGINS:
            out.append(Violation("invariants", f"clause {inv.id!r} bad origin {inv.origin!r}"))

    for s in c.surfaces:
        if s.kind not in SURFACE_KINDS:
            out.append(Violation("surfaces", f"unknown surface kind {s.kind!r}"))
        if s.kind == "api_endpoint" and (not s.method_or_trigger or not s.path_or_name):
            out.append(
                Violation("surfaces", "api_endpoint requires method_or_trigger and path_or_name")
            )

    invariant_ids = {i.id for i in c.invariants} | {b.id for b in c.business_rules}
    for ac in c.acceptance_criteria:
        for ref in ac.linked_invariants:
            if ref not in invariant_ids:
                out.append(
                    Violation(
                        "acceptance_criteria",
                        f"criterion {ac.id!r} links missing clause {ref!r}",
                    )
                )

    if c.status == "final":
        if not c.surfaces:
            out.append(Violation("surfaces", "final contract requires at least one surface"))
        if not c.invariants:
            out.append(Violation("invariants", "final contract requires at least one invariant"))
        if not c.acceptance_criteria:
            out.append(
                Violation("acceptance_criteria", "final contract requires at least one criterion")
            )
    if c.known_gaps and c.status not in _FINALIZED:
        out.append(Violation("known_gaps", "known_gaps allowed only after status final"))
    return out


def diff_contracts(old: Contract, new: Contract) -> ClauseDiff:
    """Partition old/new clause ids into unchanged, added, removed, rewritten.

    A clause is rewritten when the same id carries different content.
    """
    old_clauses = dict(old.iter_clauses())
    new_clauses = dict(new.iter_clauses())
    old_ids, new_ids = set(old_clauses), set(new_clauses)
    shared = old_ids & new_ids
    rewritten = {cid for cid in shared if old_clauses[cid] != new_clauses[cid]}
    return ClauseDiff(
        unchanged=frozenset(shared - rewritten),
        added=frozenset(new_ids - old_ids),
        removed=frozenset(old_ids - new_ids),
        rewritten=frozenset(rewritten),
    )


def contract_to_dict(c: Contract) -> dict[str, Any]:
    return asdict(c)


_TUPLE_FIELDS = {
    "surfaces": Surface,
    "invariants": InvariantClause,
    "error_taxonomy": ErrorEntry,
    "auth_rules": TextClause,
    "business_rules": InvariantClause,
    "out_of_scope": TextClause,
    "qa_targets": TextClause,
    "regression_risks": TextClause,
    "acceptance_criteria": AcceptanceCriterion,
    "known_gaps": TextClause,
}


def contract_from_dict(data: dict[str, Any]) -> Contract:
    if not isinstance(data, dict):
        raise ContractParseError("contract document must be an object")
    kwargs: dict[str, Any] = {}
    for key in ("module_name", "version", "status"):
        if key in data:
            if not isinstance(data[key], str):
                raise ContractParseError("expected string", key)
            kwargs[key] = data[key]
    if "module_name" not in kwargs or "version" not in kwargs:
        raise ContractParseError("missing module_name or version")
    for key, cls in _TUPLE_FIELDS.items():
        items = data.get(key, [])
        if not isinstance(items, list):
            raise ContractParseError("expected list", key)
        built = []
        for i, item in enumerate(items):
            try:
                item = dict(item)
                for fname in ("returns", "side_effects", "errors", "linked_invariants"):
                    if fname in item:
                        item[fname] = tuple(item[fname])
                built.append(cls(**item))
            except (TypeError, ValueError) as exc:
                raise ContractParseError(str(exc), f"{key}[{i}]") from exc
        kwargs[key] = tuple(built)
    unknown = set(data) - set(_TUPLE_FIELDS) - {"module_name", "version", "status"}
    if unknown:
        raise ContractParseError(f"unknown fields {sorted(unknown)}")
    return Contract(**kwargs)


def serialize_contract(c: Contract) -> str:
    """Canonical form: UTF-8 JSON, sorted keys, stable indentation."""
    return json.dumps(contract_to_dict(c), sort_keys=True, indent=2) + "\n"


def parse_contract(text: str) -> Contract:
    if not text.strip():
        raise ContractParseError("empty document")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ContractParseError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from exc
    return contract_from_dict(data)


def contract_filename(c: Contract) -> str:
    return f"{c.module_name}-v{c.version}.contract.json"
