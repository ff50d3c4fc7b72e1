"""Persistent two-section project memory plus the specialization registry.

The permanent section is human-gated: no automated operation may touch it.
Every mutator returns a new document; the permanent tuple is carried over
by reference so byte-identity of the serialized section is structural, not
accidental.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

ENTRY_KINDS = ("decision", "constraint", "failure_pattern", "observation")
PRESERVED_KINDS = ("decision", "constraint")

DEFAULT_ROLLING_CAP = 64


class MemoryError_(Exception):
    pass


class DuplicateEntryId(MemoryError_):
    pass


class EntryMissing(MemoryError_):
    pass


class NotApproved(MemoryError_):
    pass


@dataclass(frozen=True)
class MemoryEntry:
    id: str
    created_at: str
    kind: str
    text: str
    source_run: str | None = None


@dataclass(frozen=True)
class MemoryDocument:
    permanent: tuple[MemoryEntry, ...] = ()
    rolling: tuple[MemoryEntry, ...] = ()
    revision: int = 0


@dataclass(frozen=True)
class CompressionPolicy:
    cap: int = DEFAULT_ROLLING_CAP


@dataclass(frozen=True)
class CompressionReport:
    merged: tuple[str, ...] = ()
    deleted: tuple[str, ...] = ()


@dataclass
class PromotionRequest:
    entry_id: str
    proposed_text: str
    proposer: str  # retro_agent | operator
    status: str = "pending"  # pending | approved | rejected
    decided_by: str | None = None

    def decide(self, approved: bool, decided_by: str) -> None:
        if self.status != "pending":
            raise NotApproved(f"request already {self.status}")
        self.status = "approved" if approved else "rejected"
        self.decided_by = decided_by


@dataclass(frozen=True)
class SpecializationRecord:
    domain: str
    trigger_terms: tuple[tuple[str, float], ...]
    injected_clauses: tuple[dict, ...]  # InvariantClause templates as dicts
    review_checklist_items: tuple[str, ...] = ()
    min_confidence: float = 0.7

    def __post_init__(self):
        if not self.injected_clauses:
            raise ValueError("injected_clauses must be non-empty")
        if any(w < 0 for _, w in self.trigger_terms):
            raise ValueError("trigger term weights must be >= 0")


def append_rolling(doc: MemoryDocument, entry: MemoryEntry) -> MemoryDocument:
    existing = {e.id for e in doc.permanent} | {e.id for e in doc.rolling}
    if entry.id in existing:
        raise DuplicateEntryId(entry.id)
    return MemoryDocument(
        permanent=doc.permanent,
        rolling=doc.rolling + (entry,),
        revision=doc.revision + 1,
    )


def _normalized(text: str) -> str:
    return " ".join(text.lower().split())


def compress_rolling(
    doc: MemoryDocument, policy: CompressionPolicy
) -> tuple[MemoryDocument, CompressionReport]:
    """Bound the rolling section: merge duplicates, then evict observations
    oldest-first. decision/constraint entries are never deleted."""
    merged_ids: list[str] = []
    deleted_ids: list[str] = []
    kept: list[MemoryEntry] = []
    seen_text: dict[tuple[str, str], MemoryEntry] = {}
    for entry in doc.rolling:
        key = (entry.kind, _normalized(entry.text))
        if key in seen_text:
            merged_ids.append(entry.id)
        else:
            seen_text[key] = entry
            kept.append(entry)

    if len(kept) > policy.cap:
        # Evict by the stated loss order: observations first, then
        # failure_patterns; never decision/constraint. Oldest first within a kind.
        for kind in ("observation", "failure_pattern"):
            if len(kept) <= policy.cap:
                break
            candidates = sorted(
                (e for e in kept if e.kind == kind), key=lambda e: (e.created_at, e.id)
            )
            for entry in candidates:
                if len(kept) <= policy.cap:
                    break
                if kind == "failure_pattern":
                    merged_ids.append(entry.id)
                else:
                    deleted_ids.append(entry.id)
                kept.remove(entry)

    if not merged_ids and not deleted_ids:
        return doc, CompressionReport()
    return (
        MemoryDocument(permanent=doc.permanent, rolling=tuple(kept), revision=doc.revision + 1),
        CompressionReport(merged=tuple(merged_ids), deleted=tuple(deleted_ids)),
    )


def propose_promotion(
    doc: MemoryDocument, entry_id: str, proposer: str
) -> PromotionRequest:
    entry = next((e for e in doc.rolling if e.id == entry_id), None)
    if entry is None:
        raise EntryMissing(entry_id)
    return PromotionRequest(entry_id=entry_id, proposed_text=entry.text, proposer=proposer)


def apply_promotion(doc: MemoryDocument, request: PromotionRequest) -> MemoryDocument:
    """Move an approved entry rolling -> permanent verbatim. The only path by
    which the permanent section grows."""
    if request.status != "approved":
        raise NotApproved(f"promotion request is {request.status}")
    if request.decided_by is None:
        raise NotApproved("approved request lacks decided_by")
    entry = next((e for e in doc.rolling if e.id == request.entry_id), None)
    if entry is None:
        raise EntryMissing(request.entry_id)
    return MemoryDocument(
        permanent=doc.permanent + (entry,),
        rolling=tuple(e for e in doc.rolling if e.id != entry.id),
        revision=doc.revision + 1,
    )


def match_specializations(issue, registry) -> list[tuple[SpecializationRecord, float]]:
    """Score each record by normalized weighted term match over the issue's
    title, body, and labels. Deterministic; sorted by confidence descending."""
    haystack = " ".join([issue.title, issue.body, " ".join(issue.labels)]).lower()
    scored: list[tuple[SpecializationRecord, float]] = []
    for record in registry:
        total = sum(w for _, w in record.trigger_terms)
        if total <= 0:
            scored.append((record, 0.0))
            continue
        hit = sum(w for term, w in record.trigger_terms if term.lower() in haystack)
        scored.append((record, min(1.0, hit / total)))
    scored.sort(key=lambda pair: (-pair[1], pair[0].domain))
    return scored


# ---------------------------------------------------------------------------
# Serialization. Markdown with two fixed top-level headings; each entry is a
# `## <id>` heading, a fenced metadata block, then the body.

def _serialize_entry(entry: MemoryEntry) -> str:
    lines = [f"## {entry.id}", "```", f"created_at: {entry.created_at}", f"kind: {entry.kind}"]
    if entry.source_run:
        lines.append(f"source_run: {entry.source_run}")
    lines.append("```")
    lines.append(entry.text)
    return "\n".join(lines) + "\n"


def serialize_permanent(doc: MemoryDocument) -> str:
    return "# PERMANENT\n\n" + "\n".join(_serialize_entry(e) for e in doc.permanent)


def serialize_memory(doc: MemoryDocument) -> str:
    rolling = "# ROLLING\n\n" + "\n".join(_serialize_entry(e) for e in doc.rolling)
    return serialize_permanent(doc) + "\n" + rolling


_ENTRY_RE = re.compile(
    r"^## (?P<id>.+?)\n```\n(?P<meta>.*?)```\n(?P<body>.*?)(?=^## |\Z)",
    re.MULTILINE | re.DOTALL,
)


def _parse_section(text: str) -> tuple[MemoryEntry, ...]:
    entries = []
    for m in _ENTRY_RE.finditer(text):
        meta: dict[str, str] = {}
        for line in m.group("meta").strip().splitlines():
            key, _, value = line.partition(":")
            meta[key.strip()] = value.strip()
        entries.append(
            MemoryEntry(
                id=m.group("id").strip(),
                created_at=meta.get("created_at", ""),
                kind=meta.get("kind", "observation"),
                text=m.group("body").strip("\n"),
                source_run=meta.get("source_run"),
            )
        )
    return tuple(entries)


def parse_memory(text: str, revision: int = 0) -> MemoryDocument:
    if "# PERMANENT" not in text or "# ROLLING" not in text:
        raise MemoryError_("memory file must contain PERMANENT and ROLLING sections")
    permanent_part, rolling_part = text.split("# ROLLING", 1)
    return MemoryDocument(
        permanent=_parse_section(permanent_part),
        rolling=_parse_section(rolling_part),
        revision=revision,
    )


def load_memory(path: Path) -> MemoryDocument:
    if not path.exists():
        return MemoryDocument()
    return parse_memory(path.read_text(encoding="utf-8"))


def save_memory(doc: MemoryDocument, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_memory(doc), encoding="utf-8")


def load_specialization(path: Path) -> SpecializationRecord:
    data = json.loads(path.read_text(encoding="utf-8"))
    return specialization_from_dict(data)


def specialization_from_dict(data: dict) -> SpecializationRecord:
    return SpecializationRecord(
        domain=data["domain"],
        trigger_terms=tuple((t, float(w)) for t, w in data["trigger_terms"]),
        injected_clauses=tuple(data["injected_clauses"]),
        review_checklist_items=tuple(data.get("review_checklist_items", ())),
        min_confidence=float(data.get("min_confidence", 0.7)),
    )


def specialization_to_dict(record: SpecializationRecord) -> dict:
    return {
        "domain": record.domain,
        "trigger_terms": [[t, w] for t, w in record.trigger_terms],
        "injected_clauses": list(record.injected_clauses),
        "review_checklist_items": list(record.review_checklist_items),
        "min_confidence": record.min_confidence,
    }


def save_specialization(record: SpecializationRecord, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{record.domain}.spec.json"
    path.write_text(
        json.dumps(specialization_to_dict(record), indent=2) + "\n", encoding="utf-8"
    )
    return path
