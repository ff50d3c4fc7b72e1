"""Builders for scripted scenarios.

Every scenario is a complete, deterministic script of agent responses keyed by
"<role>:<attempt>:<step>". The implementation artifacts and test suites inside
are real programs; CI genuinely executes them. Builders cover the bundled
replay corpus, the labeled ambiguity set, and randomized variants used by the
property tests.
"""

from __future__ import annotations

import json
import random
from typing import Any

from .agents import ScriptedScenario

VERSION = "1.0.0"

# Runner shared by all generated suites. Reads cases.json next to itself,
# imports the artifact module, writes results.jsonl in the workspace root.
# Durations are fixed at zero so replayed event logs are byte-identical.
_RUNNER = '''\
import json
import os
import sys

{noise_gate}sys.path.insert(0, "artifact")
import impl

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "cases.json")) as fh:
    cases = json.load(fh)

out = []
for case in cases:
    try:
        fn = getattr(impl, case["fn"])
        got = fn(*case["args"])
        if case.get("expect_error"):
            status = "fail"
        else:
            status = "pass" if got == case["expected"] else "fail"
    except Exception:
        status = "pass" if case.get("expect_error") else "error"
    out.append(
        {{
            "id": case["id"],
            "status": status,
            "assertion": case["assertion"],
            "duration_ms": 0.0,
        }}
    )

with open("results.jsonl", "w") as fh:
    for rec in out:
        fh.write(json.dumps(rec) + "\\n")
'''

_NOISE_GATE = '''\
if os.environ.get("HARNESS_RERUN_INDEX") is None and os.environ.get("HARNESS_CI_ROUND") == "1":
    raise SystemExit(2)

'''


def runner_source(noise: bool = False) -> str:
    return _RUNNER.format(noise_gate=_NOISE_GATE if noise else "")


def _issue(module: str, extra_body: str = "", labels: tuple[str, ...] = ()) -> dict[str, Any]:
    return {
        "id": f"ISS-{module}",
        "title": f"Add the {module} module",
        "body": f"Build the {module} module with a compute endpoint. {extra_body}".strip(),
        "labels": list(labels) or [module],
        "requester": "product",
    }


def _contract(
    module: str,
    invariants: list[dict[str, Any]],
    business_rules: list[dict[str, Any]] | None = None,
    extra_criteria: list[dict[str, Any]] | None = None,
    status: str = "draft_pass1",
) -> dict[str, Any]:
    return {
        "module_name": module,
        "version": VERSION,
        "status": status,
        "surfaces": [
            {
                "kind": "api_endpoint",
                "method_or_trigger": "POST",
                "path_or_name": f"/api/{module}/compute",
                "returns": ["200 result", "400 invalid input"],
                "side_effects": [],
                "errors": ["ERR-1"],
            }
        ],
        "invariants": invariants,
        "error_taxonomy": [
            {"id": "ERR-1", "code": "invalid_input", "meaning": "input failed validation"}
        ],
        "auth_rules": [],
        "business_rules": business_rules or [],
        "out_of_scope": [{"id": "OOS-1", "text": "batch imports are excluded"}],
        "qa_targets": [{"id": "QA-1", "text": "endpoint responds for integer inputs 0..100"}],
        "regression_risks": [],
        "acceptance_criteria": [
            {
                "id": "AC-1",
                "text": "compute returns the documented value for sample inputs",
                "linked_invariants": [invariants[0]["id"]],
            }
        ]
        + (extra_criteria or []),
        "known_gaps": [],
    }


def _inv(cid: str, text: str, origin: str = "issue") -> dict[str, Any]:
    return {"id": cid, "text": text, "severity": "must", "origin": origin}


_GOOD_IMPL = """\
def compute(x):
    return 2 * x + 1


def flourish(x):
    return x + 10
"""

_BUGGY_IMPL = """\
def compute(x):
    return 2 * x
"""

_GAPPED_IMPL = """\
def compute(x):
    return 2 * x + 1
"""


def _suite_body(
    suite_id: str,
    cases: list[dict[str, Any]],
    clause_links: dict[str, list[str]],
    noise: bool = False,
) -> dict[str, Any]:
    return {
        "suite_id": suite_id,
        "files": {
            "run_tests.py": runner_source(noise=noise),
            "cases.json": json.dumps(cases, indent=2) + "\n",
        },
        "command": ["python3", "suite/run_tests.py"],
        "clause_links": clause_links,
        "timeout": 30,
    }


_BASE_CASES = [
    {"id": "t1", "fn": "compute", "args": [3], "expected": 7,
     "assertion": "compute(3) == 7"},
    {"id": "t2", "fn": "compute", "args": [0], "expected": 1,
     "assertion": "compute(0) == 1"},
]
_BASE_LINKS = {"t1": ["INV-1"], "t2": ["INV-2"]}

_BASE_INVARIANTS = [
    _inv("INV-1", "compute(x) must return two times x plus one"),
    _inv("INV-2", "compute(0) must return one"),
]


def _review(findings: list[dict[str, Any]] | None = None) -> dict[str, Any]:
    return {"kind": "review_findings", "body": findings or []}


def _base_responses(
    module: str,
    contract: dict[str, Any] | None = None,
    suite: dict[str, Any] | None = None,
    impl: str = _GOOD_IMPL,
) -> dict[str, dict[str, Any]]:
    contract = contract or _contract(module, [dict(c) for c in _BASE_INVARIANTS])
    refined = json.loads(json.dumps(contract))
    refined["status"] = "refined_pass2"
    return {
        "contract_compiler:1:2": {"kind": "contract_draft", "body": contract},
        "contract_compiler:2:3": {
            "kind": "contract_refinement",
            "body": {"contract": refined, "removed": {}, "ambiguities": []},
        },
        "product_reviewer:1:4": _review(),
        "architecture_reviewer:1:5": _review(),
        "implementer:1:6": {"kind": "code_artifact", "body": {"files": {"impl.py": impl}}},
        "test_author:1:7": {
            "kind": "test_suite",
            "body": suite or _suite_body(f"{module}-s1", _BASE_CASES, dict(_BASE_LINKS)),
        },
        "security_reviewer:1:14": _review(),
        "backend_reviewer:1:14": _review(),
        "frontend_reviewer:1:14": _review(),
        "qa_tester:1:15": _review(),
        "shipping_reviewer:1:16": _review(),
        "retro:1:17": {"kind": "retro_proposals", "body": []},
    }


def build_clean(module: str, labeled: bool | None = None) -> ScriptedScenario:
    labels: dict[str, Any] = {}
    if labeled is not None:
        labels = {"contract_is_ambiguous": labeled}
    return ScriptedScenario(
        scenario_id=module,
        responses=_base_responses(module),
        issue=_issue(module),
        ground_truth_labels=labels,
    )


def build_bug(module: str, labeled: bool | None = None) -> ScriptedScenario:
    responses = _base_responses(module, impl=_BUGGY_IMPL)
    responses["arbiter:1:12"] = {
        "kind": "classification",
        "body": {
            "class": "bug",
            "confidence": 0.85,
            "rationale": "failing assertions map onto contract clauses the code violates",
        },
    }
    responses["implementer:2:6"] = {
        "kind": "code_artifact",
        "body": {"files": {"impl.py": _GOOD_IMPL}},
    }
    labels: dict[str, Any] = {}
    if labeled is not None:
        labels = {"contract_is_ambiguous": labeled}
    return ScriptedScenario(
        scenario_id=module,
        responses=responses,
        issue=_issue(module),
        ground_truth_labels=labels,
    )


def build_spec_gap(module: str) -> ScriptedScenario:
    contract = _contract(
        module,
        [dict(c) for c in _BASE_INVARIANTS],
        business_rules=[_inv("BR-1", "the compute endpoint covers the listed operations only")],
    )
    cases = _BASE_CASES + [
        {"id": "t3", "fn": "flourish", "args": [5], "expected": 15,
         "assertion": "flourish(5) == 15"}
    ]
    links = dict(_BASE_LINKS)
    links["t3"] = ["MISSING-REQ-1"]
    suite = _suite_body(f"{module}-s1", cases, links)
    responses = _base_responses(module, contract=contract, suite=suite, impl=_GAPPED_IMPL)
    responses["arbiter:1:12"] = {
        "kind": "classification",
        "body": {
            "class": "spec_gap",
            "confidence": 0.8,
            "section": "business_rules",
            "rationale": "the failing test asserts behavior no contract clause requires",
        },
    }
    regap = json.loads(json.dumps(contract))
    regap["status"] = "refined_pass2"
    for rule in regap["business_rules"]:
        if rule["id"] == "BR-1":
            rule["text"] = (
                "the compute endpoint covers the listed operations, and "
                "flourish(x) must return x plus ten"
            )
    responses["contract_compiler:3:3"] = {
        "kind": "contract_refinement",
        "body": {"contract": regap, "removed": {}, "ambiguities": []},
    }
    responses["product_reviewer:2:4"] = _review()
    responses["architecture_reviewer:2:5"] = _review()
    responses["implementer:2:6"] = {
        "kind": "code_artifact",
        "body": {"files": {"impl.py": _GOOD_IMPL}},
    }
    return ScriptedScenario(scenario_id=module, responses=responses, issue=_issue(module))


def build_ambiguous(module: str, labeled: bool = True) -> ScriptedScenario:
    invariants = [dict(c) for c in _BASE_INVARIANTS] + [
        _inv("INV-3", "results must be rounded appropriately before returning")
    ]
    contract = _contract(module, invariants)
    cases = _BASE_CASES + [
        {"id": "t3", "fn": "compute", "args": [2], "expected": 4,
         "assertion": "compute(2) rounds to the nearest even value"}
    ]
    links = dict(_BASE_LINKS)
    links["t3"] = ["INV-3"]
    suite1 = _suite_body(f"{module}-s1", cases, links)
    responses = _base_responses(module, contract=contract, suite=suite1)
    responses["arbiter:1:12"] = {
        "kind": "classification",
        "body": {
            "class": "contract_ambiguity",
            "confidence": 0.82,
            "rationale": "the clause under test admits two readings and the suite picked one",
        },
    }
    rewritten = json.loads(json.dumps(contract))
    rewritten["status"] = "refined_pass2"
    for inv in rewritten["invariants"]:
        if inv["id"] == "INV-3":
            inv["text"] = "results must be returned unrounded, exactly as computed"
    responses["contract_compiler:3:3"] = {
        "kind": "contract_refinement",
        "body": {"contract": rewritten, "removed": {}, "ambiguities": []},
    }
    responses["product_reviewer:2:4"] = _review()
    responses["architecture_reviewer:2:5"] = _review()
    responses["implementer:2:6"] = {
        "kind": "code_artifact",
        "body": {"files": {"impl.py": _GOOD_IMPL}},
    }
    cases2 = _BASE_CASES + [
        {"id": "t3", "fn": "compute", "args": [2], "expected": 5,
         "assertion": "compute(2) == 5, unrounded"}
    ]
    links2 = dict(_BASE_LINKS)
    links2["t3"] = ["INV-3"]
    responses["test_author:2:7"] = {
        "kind": "test_suite",
        "body": _suite_body(f"{module}-s2", cases2, links2),
    }
    labels = {"contract_is_ambiguous": labeled} if labeled is not None else {}
    return ScriptedScenario(
        scenario_id=module,
        responses=responses,
        issue=_issue(module),
        ground_truth_labels=labels,
    )


def build_noise(module: str, calibration_suites: list[str] | None = None) -> ScriptedScenario:
    suite = _suite_body(f"{module}-s1", list(_BASE_CASES), dict(_BASE_LINKS), noise=True)
    responses = _base_responses(module, suite=suite)
    return ScriptedScenario(
        scenario_id=module,
        responses=responses,
        issue=_issue(module),
        calibration_suites=list(calibration_suites or []),
    )


def build_review_blocker(
    module: str, blocker_text: str, scripted: bool = True
) -> ScriptedScenario:
    responses = _base_responses(module)
    responses["backend_reviewer:1:14"] = _review(
        [{"severity": "blocker", "text": blocker_text}]
    )
    responses["implementer:2:6"] = {
        "kind": "code_artifact",
        "body": {"files": {"impl.py": _GOOD_IMPL}},
    }
    responses["security_reviewer:2:14"] = _review()
    responses["backend_reviewer:2:14"] = _review()
    responses["frontend_reviewer:2:14"] = _review()
    script = (
        [{"decision": {"action": "retry_implementation"}, "principal": "operator-1"}]
        if scripted
        else []
    )
    return ScriptedScenario(
        scenario_id=module,
        responses=responses,
        issue=_issue(module),
        human_script=script,
    )


def build_product_gate_fail(module: str) -> ScriptedScenario:
    """Product review blocks the contract; an operator must approve or halt."""
    responses = _base_responses(module)
    responses["product_reviewer:1:4"] = _review(
        [{"severity": "blocker", "text": "the user story lacks a rollout plan"}]
    )
    return ScriptedScenario(scenario_id=module, responses=responses, issue=_issue(module))


def build_escalation(module: str) -> ScriptedScenario:
    """Rules say bug, agent says spec_gap: forced disagreement, forced ticket."""
    responses = _base_responses(module, impl=_BUGGY_IMPL)
    responses["arbiter:1:12"] = {
        "kind": "classification",
        "body": {
            "class": "spec_gap",
            "confidence": 0.7,
            "rationale": "the assertions look under-specified to me",
        },
    }
    responses["implementer:2:6"] = {
        "kind": "code_artifact",
        "body": {"files": {"impl.py": _GOOD_IMPL}},
    }
    return ScriptedScenario(
        scenario_id=module,
        responses=responses,
        issue=_issue(module),
        human_script=[
            {
                "decision": {"class": "bug", "rationale": "the clause is clear, the code is wrong"},
                "principal": "operator-1",
            }
        ],
    )


def build_proposal_pause(module: str) -> ScriptedScenario:
    """Retro agent suggests harness updates; the run waits for their approval."""
    responses = _base_responses(module)
    responses["retro:1:17"] = {
        "kind": "retro_proposals",
        "body": [
            {
                "kind": "compiler_rule",
                "target": "lint",
                "diff": r"\bmaybe\b",
                "evidence_runs": ["self"],
            },
            {
                "kind": "memory_promotion",
                "target": "nonexistent-entry",
                "diff": "promote the recurring constraint",
                "evidence_runs": ["self"],
            },
        ],
    }
    return ScriptedScenario(
        scenario_id=module,
        responses=responses,
        issue=_issue(module),
        human_script=[
            {"decision": {"approve": True}, "principal": "operator-1"},
            {"decision": {"approve": False}, "principal": "operator-1"},
        ],
    )


def build_adversarial_pass2(module: str, persistent: bool) -> ScriptedScenario:
    """Pass-2 responses that try to add clauses. With persistent=True every
    retry cheats and the run must halt; otherwise the retry behaves."""
    responses = _base_responses(module)
    contract = responses["contract_compiler:1:2"]["body"]
    cheat = json.loads(json.dumps(contract))
    cheat["status"] = "refined_pass2"
    cheat["invariants"].append(
        _inv("INV-999", "smuggled requirement added after scoping", origin="pass1_inferred")
    )
    cheat_response = {
        "kind": "contract_refinement",
        "body": {"contract": cheat, "removed": {}, "ambiguities": []},
    }
    honest = responses["contract_compiler:2:3"]
    responses["contract_compiler:2:3"] = cheat_response
    if persistent:
        responses["contract_compiler:3:3"] = cheat_response
        responses["contract_compiler:4:3"] = cheat_response
    else:
        responses["contract_compiler:3:3"] = honest
    return ScriptedScenario(scenario_id=module, responses=responses, issue=_issue(module))


# ---------------------------------------------------------------------------
# Payments replay

_PAYMENTS_IMPL_GOOD = """\
def total(line_items):
    return sum(line_items)


def pay(status):
    if status == "paid":
        raise ValueError("AlreadyPaid")
    return "paid"
"""

_PAYMENTS_IMPL_BUGGY = """\
def total(line_items):
    return sum(line_items)


def pay(status):
    return "paid"
"""


def build_payments_replay() -> ScriptedScenario:
    invariants = [
        _inv("INV-1", "invoice total must equal the sum of line item amounts"),
        _inv("INV-2", "paying an invoice that is already paid must raise AlreadyPaid"),
    ]
    contract = _contract("payments", invariants)
    contract["surfaces"][0]["path_or_name"] = "/api/payments/invoice"
    refined = json.loads(json.dumps(contract))
    refined["status"] = "refined_pass2"
    # the harness injects the specialization clauses after pass 1; pass 2 keeps them
    spec_clauses = [
        _inv("SPEC-payments-1", "payment state transitions must be idempotent",
             origin="specialization"),
        _inv("SPEC-payments-2", "paid is a terminal state; no transition may leave it",
             origin="specialization"),
    ]
    refined["invariants"] = refined["invariants"] + spec_clauses

    cases = [
        {"id": "t1", "fn": "total", "args": [[10, 5, 2]], "expected": 17,
         "assertion": "total sums line items"},
        {"id": "t2", "fn": "pay", "args": ["open"], "expected": "paid",
         "assertion": "paying an open invoice yields paid"},
        {"id": "t3", "fn": "pay", "args": ["paid"], "expect_error": True,
         "assertion": "paying a paid invoice raises AlreadyPaid"},
    ]
    links = {"t1": ["INV-1"], "t2": ["INV-2"], "t3": ["INV-2", "SPEC-payments-2"]}
    suite = _suite_body("payments-s1", cases, links)

    responses = {
        "contract_compiler:1:2": {"kind": "contract_draft", "body": contract},
        "contract_compiler:2:3": {
            "kind": "contract_refinement",
            "body": {"contract": refined, "removed": {}, "ambiguities": []},
        },
        "product_reviewer:1:4": _review(),
        "architecture_reviewer:1:5": _review(),
        "implementer:1:6": {
            "kind": "code_artifact",
            "body": {"files": {"impl.py": _PAYMENTS_IMPL_BUGGY}},
        },
        "test_author:1:7": {"kind": "test_suite", "body": suite},
        "arbiter:1:12": {
            "kind": "classification",
            "body": {
                "class": "bug",
                "confidence": 0.9,
                "rationale": "terminal-state clause is asserted and violated",
            },
        },
        "implementer:2:6": {
            "kind": "code_artifact",
            "body": {"files": {"impl.py": _PAYMENTS_IMPL_GOOD}},
        },
        "security_reviewer:1:14": _review(),
        "backend_reviewer:1:14": _review(),
        "frontend_reviewer:1:14": _review(),
        "qa_tester:1:15": _review(),
        "shipping_reviewer:1:16": _review(),
        "retro:1:17": {"kind": "retro_proposals", "body": []},
    }
    return ScriptedScenario(
        scenario_id="payments-replay",
        responses=responses,
        issue=_issue(
            "payments",
            extra_body="Invoices collect line items, support deposit and discount "
            "flows, and are paid once.",
            labels=("payments", "invoice", "deposit"),
        ),
        ground_truth_labels={"contract_is_ambiguous": False},
        post_merge_reports=[
            "final invoice calculation omitted offline deposits",
            "discount calculation not encoded",
        ],
    )


def payments_specialization() -> dict[str, Any]:
    return {
        "domain": "payments",
        "trigger_terms": [["payments", 0.6], ["invoice", 0.2], ["deposit", 0.2]],
        "injected_clauses": [
            {"id": "SPEC-payments-1", "text": "payment state transitions must be idempotent",
             "severity": "must"},
            {"id": "SPEC-payments-2",
             "text": "paid is a terminal state; no transition may leave it",
             "severity": "must"},
        ],
        "review_checklist_items": [
            "verify rounding and currency handling on every monetary path",
            "verify refunds cannot exceed the captured amount",
        ],
        "min_confidence": 0.7,
    }


# ---------------------------------------------------------------------------
# Bundled sets

CORPUS_CALIBRATION_SUITES = [f"cal-scheduling-{i:02d}" for i in range(1, 16)]


def build_corpus() -> list[ScriptedScenario]:
    """17 feature scenarios: 3 bug cycles, 2 review blockers, 1 ambiguity
    restart, 1 noisy CI with calibration suites, 2 spec gaps, 8 clean."""
    scenarios: list[ScriptedScenario] = [
        build_bug("billing"),
        build_bug("webhooks"),
        build_bug("exports"),
        build_review_blocker("ingest", "ingest path accepts records without field validation"),
        build_review_blocker("notifications", "notification fan-out misses the retry queue"),
        build_ambiguous("search", labeled=True),
        build_noise("scheduling", calibration_suites=list(CORPUS_CALIBRATION_SUITES)),
        build_spec_gap("catalog"),
        build_spec_gap("profiles"),
    ]
    for module in (
        "sessions",
        "audit-log",
        "rate-limits",
        "tagging",
        "avatars",
        "quotas",
        "digests",
        "archival",
    ):
        scenarios.append(build_clean(module))
    return scenarios


def build_labeled_set() -> list[ScriptedScenario]:
    """10 ambiguous issues (8 routed to refinement, 2 misrouted as plain bugs)
    and 10 clean ones, for scoring detection against hand labels."""
    scenarios = [build_ambiguous(f"amb-{i:02d}", labeled=True) for i in range(1, 9)]
    scenarios += [build_bug(f"amb-{i:02d}", labeled=True) for i in range(9, 11)]
    scenarios += [build_clean(f"plain-{i:02d}", labeled=False) for i in range(1, 11)]
    return scenarios


_RANDOM_VARIANTS = ("clean", "bug", "spec_gap", "ambiguous", "noise", "escalation")


def build_random_scenario(seed: int) -> ScriptedScenario:
    rng = random.Random(seed)
    variant = rng.choice(_RANDOM_VARIANTS)
    module = f"mod-{variant}-{seed}"
    if variant == "clean":
        return build_clean(module)
    if variant == "bug":
        return build_bug(module)
    if variant == "spec_gap":
        return build_spec_gap(module)
    if variant == "ambiguous":
        return build_ambiguous(module, labeled=True)
    if variant == "noise":
        return build_noise(module, calibration_suites=[f"cal-{seed}-1"])
    return build_escalation(module)
