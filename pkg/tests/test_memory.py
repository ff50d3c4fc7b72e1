from __future__ import annotations

import pytest

from harness.compiler import RawIssue
from harness.memory import (
    CompressionPolicy,
    DuplicateEntryId,
    EntryMissing,
    MemoryDocument,
    MemoryEntry,
    NotApproved,
    SpecializationRecord,
    append_rolling,
    apply_promotion,
    compress_rolling,
    load_memory,
    match_specializations,
    parse_memory,
    propose_promotion,
    save_memory,
    serialize_memory,
    serialize_permanent,
)


def entry(i: int, kind: str = "observation", text: str | None = None) -> MemoryEntry:
    return MemoryEntry(
        id=f"e{i}", created_at=f"t{i:04d}", kind=kind, text=text or f"note {i}"
    )


def test_append_rolling_returns_new_document():
    doc = MemoryDocument()
    out = append_rolling(doc, entry(1))
    assert doc.rolling == ()
    assert [e.id for e in out.rolling] == ["e1"]
    assert out.revision == doc.revision + 1


def test_append_rejects_duplicate_ids_across_sections():
    doc = MemoryDocument(permanent=(entry(1, "decision"),))
    with pytest.raises(DuplicateEntryId):
        append_rolling(doc, entry(1))


def test_compress_merges_duplicate_text_keeping_first():
    doc = MemoryDocument(
        rolling=(
            entry(1, text="Retry the  upload"),
            entry(2, text="retry the upload"),
            entry(3, text="unrelated"),
        )
    )
    out, report = compress_rolling(doc, CompressionPolicy(cap=10))
    assert [e.id for e in out.rolling] == ["e1", "e3"]
    assert report.merged == ("e2",)


def test_compress_evicts_observations_before_failure_patterns():
    doc = MemoryDocument(
        rolling=(
            entry(1, "failure_pattern"),
            entry(2, "observation"),
            entry(3, "observation"),
            entry(4, "decision"),
        )
    )
    out, _ = compress_rolling(doc, CompressionPolicy(cap=2))
    kinds = [e.kind for e in out.rolling]
    assert "decision" in kinds
    assert kinds.count("observation") == 0


def test_compress_never_deletes_decisions_or_constraints():
    doc = MemoryDocument(
        rolling=tuple(entry(i, "decision") for i in range(1, 6))
        + tuple(entry(i, "constraint") for i in range(6, 11))
    )
    out, report = compress_rolling(doc, CompressionPolicy(cap=3))
    assert len(out.rolling) == 10
    assert report.deleted == ()


def test_compress_leaves_permanent_by_reference():
    perm = (entry(99, "decision"),)
    doc = MemoryDocument(permanent=perm, rolling=(entry(1), entry(2, text="note 1")))
    out, _ = compress_rolling(doc, CompressionPolicy(cap=64))
    assert out.permanent is perm


def test_promotion_requires_approval_and_decider():
    doc = MemoryDocument(rolling=(entry(1, "failure_pattern"),))
    request = propose_promotion(doc, "e1", proposer="retro_agent")
    with pytest.raises(NotApproved):
        apply_promotion(doc, request)
    request.decide(True, "operator-1")
    out = apply_promotion(doc, request)
    assert [e.id for e in out.permanent] == ["e1"]
    assert out.rolling == ()


def test_promotion_of_missing_entry():
    with pytest.raises(EntryMissing):
        propose_promotion(MemoryDocument(), "ghost", proposer="operator")


def test_decide_is_single_shot():
    doc = MemoryDocument(rolling=(entry(1),))
    request = propose_promotion(doc, "e1", proposer="operator")
    request.decide(False, "operator-1")
    with pytest.raises(NotApproved):
        request.decide(True, "operator-2")


def test_serialize_parse_round_trip(tmp_path):
    doc = MemoryDocument(
        permanent=(entry(1, "decision", "ship weekly"),),
        rolling=(
            MemoryEntry(
                id="e2",
                created_at="t0002",
                kind="failure_pattern",
                text="payments: bug\nsecond line",
                source_run="r-7",
            ),
        ),
    )
    path = tmp_path / "memory" / "project.md"
    save_memory(doc, path)
    loaded = load_memory(path)
    assert loaded.permanent == doc.permanent
    assert loaded.rolling == doc.rolling


def test_parse_requires_both_sections():
    with pytest.raises(Exception):
        parse_memory("# PERMANENT\n")


def test_permanent_serialization_is_prefix_of_full():
    doc = MemoryDocument(permanent=(entry(1, "constraint"),), rolling=(entry(2),))
    assert serialize_memory(doc).startswith(serialize_permanent(doc))


def test_match_specializations_scores_and_sorts():
    payments = SpecializationRecord(
        domain="payments",
        trigger_terms=(("invoice", 2.0), ("refund", 1.0)),
        injected_clauses=({"text": "x"},),
    )
    search = SpecializationRecord(
        domain="search",
        trigger_terms=(("query", 1.0),),
        injected_clauses=({"text": "y"},),
    )
    issue = RawIssue(id="I1", title="invoice totals", body="support refund flows", labels=())
    scored = match_specializations(issue, [payments, search])
    assert scored[0][0].domain == "payments"
    assert scored[0][1] == 1.0
    assert scored[1][1] == 0.0


def test_specialization_record_validation():
    with pytest.raises(ValueError):
        SpecializationRecord(domain="d", trigger_terms=(), injected_clauses=())
    with pytest.raises(ValueError):
        SpecializationRecord(
            domain="d", trigger_terms=(("a", -1.0),), injected_clauses=({"text": "x"},)
        )
