from __future__ import annotations

import pytest

from harness.contracts import (
    AcceptanceCriterion,
    Contract,
    ContractParseError,
    InvariantClause,
    Surface,
    TextClause,
    contract_filename,
    contract_from_dict,
    contract_to_dict,
    diff_contracts,
    parse_contract,
    serialize_contract,
    validate_contract,
)


def _minimal(**overrides) -> Contract:
    kwargs = dict(
        module_name="payments",
        version="1.0.0",
        invariants=(InvariantClause(id="INV-1", text="totals must balance"),),
    )
    kwargs.update(overrides)
    return Contract(**kwargs)


def test_minimal_contract_is_valid():
    assert validate_contract(_minimal()) == []


@pytest.mark.parametrize("version", ["1.0", "v1.0.0", "", "1.0.0.0"])
def test_version_must_be_semver(version):
    violations = validate_contract(_minimal(version=version))
    assert any(v.field == "version" for v in violations)


def test_semver_prerelease_accepted():
    assert validate_contract(_minimal(version="2.1.0-rc.1")) == []


def test_duplicate_clause_ids_rejected():
    c = _minimal(
        invariants=(
            InvariantClause(id="INV-1", text="a"),
            InvariantClause(id="INV-1", text="b"),
        )
    )
    assert any("duplicate" in v.rule for v in validate_contract(c))


def test_empty_clause_text_rejected():
    c = _minimal(business_rules=(InvariantClause(id="BR-1", text=""),))
    assert any("empty text" in v.rule for v in validate_contract(c))


@pytest.mark.parametrize("severity", ["critical", "", "MUST"])
def test_unknown_severity_rejected(severity):
    c = _minimal(invariants=(InvariantClause(id="I", text="t", severity=severity),))
    assert any("severity" in v.rule for v in validate_contract(c))


def test_unknown_origin_rejected():
    c = _minimal(invariants=(InvariantClause(id="I", text="t", origin="dream"),))
    assert any("origin" in v.rule for v in validate_contract(c))


def test_api_endpoint_surface_needs_method_and_path():
    c = _minimal(surfaces=(Surface(kind="api_endpoint", method_or_trigger="", path_or_name="/x"),))
    assert any("api_endpoint" in v.rule for v in validate_contract(c))


def test_criterion_may_only_link_existing_clauses():
    c = _minimal(
        acceptance_criteria=(
            AcceptanceCriterion(id="AC-1", text="x", linked_invariants=("NOPE",)),
        )
    )
    assert any("links missing clause" in v.rule for v in validate_contract(c))


def test_final_status_requires_surfaces_invariants_criteria():
    c = _minimal(status="final")
    fields = {v.field for v in validate_contract(c)}
    assert "surfaces" in fields
    assert "acceptance_criteria" in fields


def test_known_gaps_only_after_finalization():
    gap = (TextClause(id="GAP-1", text="offline deposits omitted"),)
    draft = _minimal(known_gaps=gap)
    assert any(v.field == "known_gaps" for v in validate_contract(draft))

    final = _minimal(
        status="final",
        surfaces=(Surface(kind="job", method_or_trigger="cron", path_or_name="invoice"),),
        acceptance_criteria=(AcceptanceCriterion(id="AC-1", text="x"),),
        known_gaps=gap,
    )
    assert validate_contract(final) == []


def test_diff_partitions_clause_ids():
    old = _minimal(
        invariants=(
            InvariantClause(id="KEEP", text="same"),
            InvariantClause(id="EDIT", text="before"),
            InvariantClause(id="DROP", text="gone"),
        )
    )
    new = _minimal(
        invariants=(
            InvariantClause(id="KEEP", text="same"),
            InvariantClause(id="EDIT", text="after"),
            InvariantClause(id="NEW", text="fresh"),
        )
    )
    diff = diff_contracts(old, new)
    assert diff.unchanged == {"KEEP"}
    assert diff.rewritten == {"EDIT"}
    assert diff.removed == {"DROP"}
    assert diff.added == {"NEW"}


def test_serialize_parse_round_trip():
    c = _minimal(
        surfaces=(Surface(kind="api_endpoint", method_or_trigger="POST", path_or_name="/pay"),),
        business_rules=(InvariantClause(id="BR-1", text="discounts apply once"),),
    )
    assert parse_contract(serialize_contract(c)) == c


def test_serialization_is_canonical():
    c = _minimal()
    assert serialize_contract(c) == serialize_contract(parse_contract(serialize_contract(c)))


def test_from_dict_rejects_unknown_fields():
    data = contract_to_dict(_minimal())
    data["extra_section"] = []
    with pytest.raises(ContractParseError):
        contract_from_dict(data)


def test_parse_rejects_empty_and_malformed():
    with pytest.raises(ContractParseError):
        parse_contract("")
    with pytest.raises(ContractParseError):
        parse_contract("{not json")


def test_clause_section_and_text_lookup():
    c = _minimal(business_rules=(InvariantClause(id="BR-1", text="rounding is bankers"),))
    assert c.clause_section("BR-1") == "business_rules"
    assert c.clause_section("INV-1") == "invariants"
    assert c.clause_section("missing") is None
    assert c.clause_text("BR-1") == "rounding is bankers"


def test_contract_filename():
    assert contract_filename(_minimal()) == "payments-v1.0.0.contract.json"
