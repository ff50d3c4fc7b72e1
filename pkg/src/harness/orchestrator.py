"""Drives pipeline runs: decides the next action purely from folded run state,
dispatches agent jobs, executes CI, applies arbiter routing, and pauses
whenever a human ticket is pending.

Because every decision is a function of persisted state, a run can be resumed
after a crash at any event boundary and will complete identically.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import arbiter as arb
from . import calibration
from .agents import (
    AgentResponse,
    ScriptedBackend,
    ScriptedScenario,
    build_payload,
    dispatch,
)
from .compiler import (
    AgentResponseInvalid,
    CompileError,
    MonotonicityViolation,
    RawIssue,
    compile_pass1,
    compile_pass2,
    select_specializations,
)
from .config import HarnessConfig
from .contracts import contract_from_dict, contract_to_dict
from .memory import (
    CompressionPolicy,
    MemoryDocument,
    MemoryEntry,
    append_rolling,
    compress_rolling,
    load_memory,
    load_specialization,
    save_memory,
)
from .pipeline import RunState, apply_arbiter_outcome, max_cycles_guard
from .store import EventStore
from .verification import (
    RegressionRegistry,
    TestSuite,
    materialize_files,
    rerun_for_noise,
    run_review_gate,
    run_suite,
)

STRUCTURAL_REVIEWERS = ("security_reviewer", "backend_reviewer", "frontend_reviewer")

GATE_ROLE = {
    "product_review": "product_reviewer",
    "engineering_review": "architecture_reviewer",
    "qa": "qa_tester",
    "shipping": "shipping_reviewer",
}


class OrchestrationHalted(Exception):
    pass


def replace_proposal_id(
    proposal: calibration.RetroProposal, new_id: str
) -> calibration.RetroProposal:
    data = proposal.to_dict()
    data["id"] = new_id
    return calibration.RetroProposal(**data)


class Orchestrator:
    def __init__(self, config: HarnessConfig, store: EventStore):
        self.config = config
        self.store = store
        self.scenarios: dict[str, ScriptedScenario] = {}
        self.data_dir = Path(config.data_dir)
        self.regressions = RegressionRegistry.load(self.data_dir / "regressions.json")

    # -- setup --------------------------------------------------------------

    def register_scenario(self, scenario: ScriptedScenario) -> None:
        self.scenarios[scenario.scenario_id] = scenario

    def specialization_registry(self) -> list:
        directory = self.data_dir / "specializations"
        if not directory.exists():
            return []
        return [load_specialization(p) for p in sorted(directory.glob("*.spec.json"))]

    def lint_patterns(self) -> tuple[str, ...]:
        path = self.data_dir / "lint_patterns.txt"
        if not path.exists():
            return ()
        return tuple(
            line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()
        )

    def _memory_path(self) -> Path:
        return self.data_dir / "memory" / "project.md"

    # -- run lifecycle ------------------------------------------------------

    def submit_issue(
        self,
        issue: RawIssue,
        scenario_id: str | None = None,
        run_id: str | None = None,
    ) -> str:
        issue.validate()
        if run_id is not None and self.store.has_run(run_id):
            # a crash can register the run without its opening event
            if self.store.events(run_id):
                return run_id
        else:
            run_id = self.store.create_run(run_id)
        payload: dict[str, Any] = {"issue": asdict(issue)}
        if scenario_id is not None:
            scenario = self.scenarios[scenario_id]
            payload["scenario_id"] = scenario_id
            if scenario.ground_truth_labels:
                payload["ground_truth_labels"] = scenario.ground_truth_labels
        self.store.append(run_id, "issue_submitted", payload)
        return run_id

    def run_to_completion(self, run_id: str, max_steps: int = 500) -> RunState:
        """Advance until the run is done, halted, or waiting on a human."""
        for _ in range(max_steps):
            state = self.store.load_state(run_id)
            if state.phase in ("done", "halted") or state.pending_human:
                return state
            self.step(run_id)
        raise OrchestrationHalted(f"run {run_id} did not settle in {max_steps} steps")

    # -- single step --------------------------------------------------------

    def step(self, run_id: str) -> RunState:
        state = self.store.load_state(run_id)
        if state.phase in ("done", "halted") or state.pending_human:
            return state
        if state.pending_decision and state.pending_decision.get("action") == "halt":
            self._halt(state, "operator halted the run", open_ticket=False)
            return self.store.load_state(run_id)
        try:
            handler = {
                2: self._step_pass1,
                3: self._step_pass2,
                4: lambda s: self._step_gate(s, "product_review"),
                5: lambda s: self._step_gate(s, "engineering_review"),
                6: self._step_dispatch_implementer,
                7: self._step_after_impl_dispatch,
                8: self._step_implementer_response,
                9: self._step_tester_or_ci,
                11: self._step_ci,
                12: self._step_arbiter,
                13: self._step_routing,
                14: self._step_structural_review,
                15: lambda s: self._step_gate(s, "qa"),
                16: lambda s: self._step_gate(s, "shipping"),
                17: self._step_retro,
                18: self._step_finish,
            }[state.step]
        except KeyError:
            raise OrchestrationHalted(f"no action defined for step {state.step}")
        handler(state)
        return self.store.load_state(run_id)

    # -- helpers ------------------------------------------------------------

    def _scenario(self, state: RunState) -> ScriptedScenario:
        if state.scenario_id is None:
            raise OrchestrationHalted(
                "no backend configured for this run (only scripted scenarios are bundled)"
            )
        return self.scenarios[state.scenario_id]

    def _backend(self, state: RunState) -> ScriptedBackend:
        return ScriptedBackend(self._scenario(state))

    def _append(self, state: RunState, kind: str, payload: dict[str, Any]):
        return self.store.append(state.run_id, kind, payload)

    def _halt(self, state: RunState, reason: str, open_ticket: bool = True) -> None:
        payload: dict[str, Any] = {"reason": reason}
        if open_ticket:
            payload["ticket_id"] = self._create_ticket(
                state,
                "run_halt",
                {"reason": reason, "cycles": state.implementation_cycles},
            )
        self._append(state, "run_halted", payload)

    def _create_ticket(self, state: RunState, kind: str, payload: dict[str, Any]) -> str:
        """Ticket ids are derived from the run, so recovery after a crash that
        landed between ticket creation and the event append reuses the ticket
        instead of opening a duplicate."""
        tickets = self.store.tickets()
        referenced = {
            e.payload.get("ticket_id")
            for e in self.store.events(state.run_id)
            if e.payload.get("ticket_id")
        }
        orphans = [
            t
            for t in tickets.values()
            if t["run_id"] == state.run_id
            and t["kind"] == kind
            and t["status"] == "pending"
            and t["payload"] == payload
            and t["ticket_id"] not in referenced
        ]
        if orphans:
            return orphans[0]["ticket_id"]
        existing = sum(1 for t in tickets.values() if t["run_id"] == state.run_id)
        ticket_id = f"t-{state.run_id}-{existing + 1}"
        self.store.create_ticket(kind, state.run_id, payload, ticket_id=ticket_id)
        return ticket_id

    # events that end a role's current round of exchanges; anything after the
    # last of these belongs to the round in progress
    _EXCHANGE_CONSUMERS: dict[str, tuple[str, ...]] = {
        "contract_compiler": ("contract_compiled_p1", "contract_refined_p2"),
        "arbiter": ("failure_classified",),
        "retro": ("retro_completed",),
    }

    def _tail_exchanges(
        self, run_id: str, role: str
    ) -> tuple[list[dict[str, Any]], list[dict[str, Any]], int]:
        """Unconsumed (dispatched, responded) payloads for a role, plus the
        total dispatch count so far. Lets a restarted process pick up exactly
        where a crashed one stopped instead of re-dispatching."""
        consuming = self._EXCHANGE_CONSUMERS.get(role, ("gate_recorded",))
        events = self.store.events(run_id)
        boundary = -1
        for i, event in enumerate(events):
            if event.kind in consuming:
                boundary = i
        tail = events[boundary + 1 :]
        dispatched = [
            e.payload for e in tail
            if e.kind == "job_dispatched" and e.payload.get("role") == role
        ]
        responded = [
            e.payload for e in tail
            if e.kind == "response_received" and e.payload.get("role") == role
        ]
        total = sum(
            1 for e in events
            if e.kind == "job_dispatched" and e.payload.get("role") == role
        )
        return dispatched, responded, total

    def _build_job(
        self,
        state: RunState,
        role: str,
        attempt: int,
        inputs: dict[str, Any] | None = None,
        checklists: tuple[str, ...] = (),
    ):
        contract = state.contract or {}
        return build_payload(
            job_id=f"{state.run_id}-{role}-{attempt}",
            run_id=state.run_id,
            role=role,
            attempt=attempt,
            contract=contract,
            memory_doc=load_memory(self._memory_path()),
            module_name=contract.get("module_name", ""),
            specialization_checklists=checklists,
            inputs=inputs,
        )

    def _append_job(self, state: RunState, payload) -> None:
        self._append(
            state,
            "job_dispatched",
            {
                "job_id": payload.job_id,
                "role": payload.role,
                "attempt": payload.attempt,
                "payload": payload.to_dict(),
            },
        )

    def _exchange(
        self,
        state: RunState,
        role: str,
        step_key: int,
        invocation: int = 0,
        inputs: dict[str, Any] | None = None,
        checklists: tuple[str, ...] = (),
    ) -> AgentResponse:
        """One dispatch/response exchange, replay-aware: recorded exchanges of
        the current round are returned as-is, a dangling dispatch is completed,
        and only then is a fresh job emitted."""
        dispatched, responded, total = self._tail_exchanges(state.run_id, role)
        if invocation < len(responded):
            p = responded[invocation]
            return AgentResponse(
                job_id=p["job_id"], role=role, kind=p["kind"], body=p["body"]
            )
        if invocation < len(dispatched):
            attempt = dispatched[invocation]["attempt"]
            payload = self._build_job(state, role, attempt, inputs, checklists)
        else:
            payload = self._build_job(state, role, total + 1, inputs, checklists)
            self._append_job(state, payload)
        response = dispatch(payload, self._backend(state), step_key)
        self._append(
            state,
            "response_received",
            {
                "job_id": payload.job_id,
                "role": role,
                "kind": response.kind,
                "body": response.body,
            },
        )
        return response

    def _compile_agent(self, state: RunState, step_key: int):
        """A compile-retry callable; retry index maps onto the exchange round."""

        def invoke(retry_index: int) -> AgentResponse:
            return self._exchange(state, "contract_compiler", step_key, invocation=retry_index)

        return invoke

    # -- step handlers ------------------------------------------------------

    def _step_pass1(self, state: RunState) -> None:
        issue = RawIssue(**state.issue)
        registry = self.specialization_registry()
        selected = select_specializations(
            issue, registry, self.config.specialization_confidence
        )
        try:
            draft = compile_pass1(
                issue,
                [record for record, _ in selected],
                self._compile_agent(state, step_key=2),
                retries=self.config.agent_retries,
            )
        except CompileError as exc:
            self._halt(state, f"pass-1 compilation failed: {exc}")
            return
        self._append(
            state,
            "contract_compiled_p1",
            {
                "contract": contract_to_dict(draft),
                "specializations": [
                    {"domain": record.domain, "confidence": confidence}
                    for record, confidence in selected
                ],
            },
        )

    def _step_pass2(self, state: RunState) -> None:
        draft_dict = dict(state.contract or {})
        draft_dict["status"] = "draft_pass1"
        draft = contract_from_dict(draft_dict)
        try:
            refined, findings, removal_log = compile_pass2(
                draft,
                self._compile_agent(state, step_key=3),
                retries=self.config.agent_retries,
            )
        except (MonotonicityViolation, AgentResponseInvalid) as exc:
            self._halt(state, f"pass-2 refinement failed: {exc}")
            return
        self._append(
            state,
            "contract_refined_p2",
            {
                "contract": contract_to_dict(refined),
                "ambiguities": [
                    {
                        "clause_id": f.clause_id,
                        "interpretations": list(f.interpretations),
                        "suggested_rewrite": f.suggested_rewrite,
                    }
                    for f in findings
                ],
                "removal_log": [
                    {"clause_id": r.clause_id, "reason": r.reason} for r in removal_log
                ],
            },
        )

    def _checklists_for(self, state: RunState) -> tuple[str, ...]:
        registry = {r.domain: r for r in self.specialization_registry()}
        items: list[str] = []
        for sel in state.specializations:
            record = registry.get(sel["domain"])
            if record:
                items.extend(record.review_checklist_items)
        return tuple(items)

    def _step_gate(self, state: RunState, gate: str) -> None:
        role = GATE_ROLE[gate]
        response = self._exchange(
            state, role, step_key=state.step, checklists=self._checklists_for(state)
        )
        verdict, findings = run_review_gate(
            role, state.contract or {}, {}, self._checklists_for(state), lambda _i: response
        )
        payload: dict[str, Any] = {
            "gate": gate,
            "verdict": verdict,
            "findings": [f.to_dict() for f in findings],
        }
        if gate == "shipping" and verdict == "pass":
            payload["ship_command"] = {"command": "open_merge_request", "result": "recorded"}
        if verdict == "fail":
            kind = "contract_approval" if gate in ("product_review", "engineering_review") else "run_halt"
            payload["ticket_id"] = self._create_ticket(
                state,
                kind,
                {"gate": gate, "findings": payload["findings"]},
            )
        self._append(state, "gate_recorded", payload)

    def _step_structural_review(self, state: RunState) -> None:
        all_findings = []
        for role in STRUCTURAL_REVIEWERS:
            response = self._exchange(
                state, role, step_key=14, checklists=self._checklists_for(state)
            )
            _, findings = run_review_gate(
                role, state.contract or {}, {}, self._checklists_for(state), lambda _i: response
            )
            all_findings.extend(findings)
            state = self.store.load_state(state.run_id)
        verdict = "fail" if any(f.severity == "blocker" for f in all_findings) else "pass"
        payload: dict[str, Any] = {
            "gate": "structural_review",
            "verdict": verdict,
            "findings": [f.to_dict() for f in all_findings],
        }
        if verdict == "fail":
            payload["ticket_id"] = self._create_ticket(
                state, "run_halt", {"gate": "structural_review", "findings": payload["findings"]}
            )
        self._append(state, "gate_recorded", payload)

    def _step_dispatch_implementer(self, state: RunState) -> None:
        guard = max_cycles_guard(
            RunState(**{**state.to_dict(), "implementation_cycles": state.implementation_cycles + 1}),
            self.config.max_cycles,
        )
        if guard is not None:
            ticket_id = self._create_ticket(state, "run_halt", guard)
            self._append(
                state, "run_halted", {"reason": guard["reason"], "ticket_id": ticket_id}
            )
            return
        attempt = state.implementation_cycles + 1
        inputs: dict[str, Any] = {}
        if attempt > 1 and state.last_ci is not None:
            inputs["failing_tests"] = [
                t
                for t in (state.last_ci.get("results") or {}).get("per_test", [])
                if t.get("status") != "pass"
            ]
            if state.artifact is not None:
                inputs["prior_artifact"] = state.artifact
        self._append_job(state, self._build_job(state, "implementer", attempt, inputs))

    def _repo_interface(self, state: RunState) -> str:
        surfaces = [
            s.get("path_or_name", "") for s in (state.contract or {}).get("surfaces", [])
        ]
        return (
            "workspace layout: artifact/ holds the implementation (entry module "
            "artifact/impl.py); suites run from the workspace root and must write "
            "results.jsonl. Declared surfaces: " + ", ".join(surfaces)
        )

    def _step_after_impl_dispatch(self, state: RunState) -> None:
        if state.suite is None:
            attempt = state.attempts.get("test_author", 0) + 1
            self._append_job(
                state,
                self._build_job(
                    state,
                    "test_author",
                    attempt,
                    inputs={"repo_interface": self._repo_interface(state)},
                ),
            )
        else:
            self._emit_implementer_response(state)

    def _emit_implementer_response(self, state: RunState) -> None:
        attempt = state.implementation_cycles
        payload = build_payload(
            job_id=f"{state.run_id}-implementer-{attempt}",
            run_id=state.run_id,
            role="implementer",
            attempt=attempt,
            contract=state.contract or {},
        )
        response = dispatch(payload, self._backend(state), 6)
        self._append(
            state,
            "response_received",
            {"job_id": payload.job_id, "role": "implementer", "kind": response.kind,
             "body": response.body},
        )

    def _step_implementer_response(self, state: RunState) -> None:
        self._emit_implementer_response(state)

    def _step_tester_or_ci(self, state: RunState) -> None:
        if state.suite is None:
            attempt = state.attempts.get("test_author", 0)
            payload = build_payload(
                job_id=f"{state.run_id}-test_author-{attempt}",
                run_id=state.run_id,
                role="test_author",
                attempt=attempt,
                contract=state.contract or {},
                inputs={"repo_interface": self._repo_interface(state)},
            )
            response = dispatch(payload, self._backend(state), 7)
            self._append(
                state,
                "response_received",
                {"job_id": payload.job_id, "role": "test_author", "kind": response.kind,
                 "body": response.body},
            )
        else:
            self._step_ci(state)

    # -- CI ------------------------------------------------------------------

    def _workspace(self, state: RunState) -> Path:
        return self.data_dir / "workspace" / state.run_id

    def _prepare_workspace(self, state: RunState) -> Path:
        ws = self._workspace(state)
        if ws.exists():
            shutil.rmtree(ws)
        ws.mkdir(parents=True)
        materialize_files(ws / "artifact", (state.artifact or {}).get("files", {}))
        materialize_files(ws / "suite", (state.suite or {}).get("files", {}))
        return ws

    def _suite_obj(self, body: dict[str, Any], origin: str = "test_author") -> TestSuite:
        return TestSuite(
            suite_id=body["suite_id"],
            origin=origin,
            command=tuple(body.get("command", ("python3", "suite/run_tests.py"))),
            clause_links={k: tuple(v) for k, v in body.get("clause_links", {}).items()},
            timeout=float(body.get("timeout", 60.0)),
        )

    def _regression_suites(self, state: RunState) -> list[dict[str, Any]]:
        module = (state.contract or {}).get("module_name", "")
        directory = self.data_dir / "regression_suites" / module
        if not directory.exists():
            return []
        current = (state.suite or {}).get("suite_id")
        bodies = []
        for path in sorted(directory.glob("*.json")):
            body = json.loads(path.read_text(encoding="utf-8"))
            if body.get("suite_id") != current:
                bodies.append(body)
        return bodies

    def _step_ci(self, state: RunState) -> None:
        ws = self._prepare_workspace(state)
        events = self.store.events(state.run_id)
        ci_round = sum(1 for e in events if e.kind == "ci_completed") + 1
        env = {"HARNESS_CI_ROUND": str(ci_round)}

        suites = [self._suite_obj(state.suite or {})]
        for body in self._regression_suites(state):
            # each promoted suite runs from its own directory in the workspace
            reg_root = f"regression/{body['suite_id']}"
            materialize_files(ws / reg_root, body.get("files", {}))
            command = tuple(
                part.replace("suite/", f"{reg_root}/", 1) if part.startswith("suite/") else part
                for part in body.get("command", ("python3", "suite/run_tests.py"))
            )
            suites.append(
                TestSuite(
                    suite_id=body["suite_id"],
                    origin="regression_set",
                    command=command,
                    clause_links={k: tuple(v) for k, v in body.get("clause_links", {}).items()},
                    timeout=float(body.get("timeout", 60.0)),
                )
            )

        merged_tests: list[dict[str, Any]] = []
        env_flags: list[str] = []
        suite_ids = []
        for suite in suites:
            results = run_suite(ws, suite, env=env)
            suite_ids.append(suite.suite_id)
            env_flags.extend(results.environment_flags)
            merged_tests.extend(
                {
                    "id": t.id,
                    "status": t.status,
                    "assertion": t.assertion,
                    "duration_ms": t.duration_ms,
                }
                for t in results.per_test
            )
        all_pass = bool(merged_tests) and not env_flags and all(
            t["status"] == "pass" for t in merged_tests
        )
        # an empty result set with exit 0 counts as environment trouble too
        if not merged_tests and not env_flags:
            env_flags.append("no-results")
        self._append(
            state,
            "ci_completed",
            {
                "all_pass": all_pass,
                "suites": suite_ids,
                "results": {"per_test": merged_tests, "environment_flags": env_flags},
            },
        )

    # -- arbitration ---------------------------------------------------------

    def _build_evidence(self, state: RunState) -> arb.FailureEvidence:
        results = (state.last_ci or {}).get("results") or {}
        per_test = results.get("per_test", [])
        env_flags = tuple(results.get("environment_flags", []))
        clause_links = {
            k: tuple(v) for k, v in (state.suite or {}).get("clause_links", {}).items()
        }
        contract_ids = {
            cid for cid, _ in contract_from_dict(state.contract or {}).iter_clauses()
        } if state.contract else set()

        failing = []
        for t in per_test:
            if t.get("status") != "pass":
                links = clause_links.get(t["id"], ())
                coverage = bool(set(links) & contract_ids) if links else None
                failing.append(
                    arb.FailingTest(
                        test_id=t["id"],
                        assertion=t.get("assertion", ""),
                        clause_ids=links,
                        contract_coverage=coverage,
                    )
                )

        stability = 1.0
        if env_flags:
            ws = self._prepare_workspace(state)
            report = rerun_for_noise(
                ws, self._suite_obj(state.suite or {}), self.config.noise_reruns
            )
            fracs = [report.failing_fraction.get(t.test_id, 0.0) for t in failing]
            stability = max(fracs, default=0.0)

        if not failing and env_flags:
            failing.append(
                arb.FailingTest(
                    test_id="ci-environment",
                    assertion="suite produced no results",
                    clause_ids=(),
                    contract_coverage=None,
                )
            )
        return arb.FailureEvidence(
            run_id=state.run_id,
            failing_tests=tuple(failing),
            rerun_stability=stability,
            environment_flags=env_flags,
            flagged_ambiguous=tuple(i for i in state.ambiguous_clause_ids if i),
        )

    def _section_and_domain(self, state: RunState, evidence: arb.FailureEvidence,
                            agent_section: str | None = None) -> tuple[str, str]:
        section = agent_section or "unspecified"
        if section == "unspecified" and state.contract:
            contract = contract_from_dict(state.contract)
            for t in evidence.failing_tests:
                for cid in t.clause_ids:
                    found = contract.clause_section(cid)
                    if found:
                        section = found
                        break
                if section != "unspecified":
                    break
        domain = state.specializations[0]["domain"] if state.specializations else "general"
        return section, domain

    def _step_arbiter(self, state: RunState) -> None:
        evidence = self._build_evidence(state)

        if state.pending_decision and state.pending_decision.get("type") == "classification":
            cls = arb.human_classification(state.pending_decision)
            section, domain = self._section_and_domain(state, evidence)
            self._append(
                state,
                "failure_classified",
                {
                    "classification": cls.to_dict(),
                    "evidence": evidence.to_dict(),
                    "section": section,
                    "domain": domain,
                },
            )
            return

        candidate, _ = arb.rule_candidate(evidence, self.config.noise_threshold)
        agent_section = None
        if candidate == "noise":
            # forced: an environmental, rerun-unstable failure never reaches the agent
            cls = arb.classify(evidence, agent=None, noise_threshold=self.config.noise_threshold)
        else:
            dispatched, responded, total = self._tail_exchanges(state.run_id, "arbiter")
            if responded:
                # a prior process already completed this exchange; a recorded
                # non-escalated response only needs re-classifying
                p = responded[0]
                response = AgentResponse(
                    job_id=p["job_id"], role="arbiter", kind=p["kind"], body=p["body"]
                )
                agent_section = (response.body or {}).get("section")
                cls = arb.classify(
                    evidence, agent=lambda _i: response,
                    noise_threshold=self.config.noise_threshold,
                )
            else:
                attempt = dispatched[0]["attempt"] if dispatched else total + 1
                payload = build_payload(
                    job_id=f"{state.run_id}-arbiter-{attempt}",
                    run_id=state.run_id,
                    role="arbiter",
                    attempt=attempt,
                    contract=state.contract or {},
                    memory_doc=load_memory(self._memory_path()),
                    module_name=(state.contract or {}).get("module_name", ""),
                    inputs={"evidence": evidence.to_dict()},
                )
                if not dispatched:
                    self._append(
                        state,
                        "job_dispatched",
                        {"job_id": payload.job_id, "role": "arbiter", "attempt": attempt,
                         "payload": payload.to_dict()},
                    )
                response = dispatch(payload, self._backend(state), 12)
                agent_section = (response.body or {}).get("section")
                cls = arb.classify(
                    evidence, agent=lambda _i: response,
                    noise_threshold=self.config.noise_threshold,
                )
                resp_payload: dict[str, Any] = {
                    "job_id": payload.job_id,
                    "role": "arbiter",
                    "kind": response.kind,
                    "body": response.body,
                }
                if arb.needs_escalation(cls, self.config.escalation_confidence):
                    resp_payload["escalated"] = True
                    resp_payload["ticket_id"] = self._create_ticket(
                        state, "arbiter_escalation", arb.escalate(evidence, cls)
                    )
                    self._append(state, "response_received", resp_payload)
                    return
                self._append(state, "response_received", resp_payload)

        section, domain = self._section_and_domain(state, evidence, agent_section)
        self._append(
            state,
            "failure_classified",
            {
                "classification": cls.to_dict(),
                "evidence": evidence.to_dict(),
                "section": section,
                "domain": domain,
            },
        )

    def _step_routing(self, state: RunState) -> None:
        classification = dict(state.last_classification or {})
        events = self.store.events(state.run_id)
        last_cls_event = next(
            e for e in reversed(events) if e.kind == "failure_classified"
        )
        classification["evidence"] = last_cls_event.payload.get("evidence", {})
        payloads = apply_arbiter_outcome(state, classification)

        # memory first, then events: both sides are idempotent, so a crash at
        # any point between them re-runs cleanly
        self._record_failure_pattern(state, classification)

        last_cls_index = max(
            i for i, e in enumerate(events) if e.kind == "failure_classified"
        )
        already = sum(
            1 for e in events[last_cls_index + 1 :]
            if e.kind in ("regression_promoted", "corrective_action")
        )
        payloads = payloads[already:]

        module = (state.contract or {}).get("module_name", "")
        for item in payloads:
            payload = item["payload"]
            if item["kind"] == "regression_promoted":
                suite = self._suite_obj(state.suite or {})
                self.regressions.promote(module, payload["test_id"], suite)
                suite_dir = self.data_dir / "regression_suites" / module
                suite_dir.mkdir(parents=True, exist_ok=True)
                reg_body = dict(state.suite or {})
                reg_body["suite_id"] = f"reg-{reg_body.get('suite_id', 'suite')}"
                (suite_dir / f"{reg_body['suite_id']}.json").write_text(
                    json.dumps(reg_body, sort_keys=True) + "\n"
                )
            elif item["kind"] == "corrective_action":
                if payload["class"] == "noise":
                    scenario = self._scenario(state)
                    if scenario.calibration_suites:
                        payload["calibration_suites"] = list(scenario.calibration_suites)
                if payload["class"] == "spec_gap":
                    proposal = calibration.RetroProposal(
                        id=f"p-{state.run_id}-{state.seq}",
                        kind="contract_template_update",
                        target=(state.specializations[0]["domain"] if state.specializations else "general"),
                        diff=last_cls_event.payload.get("section", "unspecified"),
                        evidence_runs=[state.run_id],
                    )
                    self.store.record_proposal(proposal.to_dict())
                    payload["proposal_id"] = proposal.id
            self._append(state, item["kind"], payload)

    def _record_failure_pattern(self, state: RunState, classification: dict[str, Any]) -> None:
        doc = load_memory(self._memory_path())
        module = (state.contract or {}).get("module_name", "run")
        entry = MemoryEntry(
            id=f"{state.run_id}-{state.seq}",
            # logical clock, not wall time: entries land in job payloads and
            # replayed logs must match byte for byte
            created_at=f"{state.run_id}:{state.seq:06d}",
            kind="failure_pattern",
            text=f"{module}: {classification.get('class')} — {classification.get('rationale', '')}",
            source_run=state.run_id,
        )
        try:
            doc = append_rolling(doc, entry)
        except Exception:
            return
        doc, _report = compress_rolling(doc, CompressionPolicy(cap=self.config.rolling_cap))
        save_memory(doc, self._memory_path())

    # -- retro / finish ------------------------------------------------------

    def _step_retro(self, state: RunState) -> None:
        response = self._exchange(
            state, "retro", step_key=17,
            inputs={"failure_history": [g for g in state.gates]},
        )
        agent_proposals = list(response.body or [])
        proposals = calibration.run_retro(
            {state.run_id: self.store.events(state.run_id)},
            agent_proposals=agent_proposals,
        )
        # retro proposal ids must be reproducible so replays match byte for byte
        proposals = [
            replace_proposal_id(p, f"p-{state.run_id}-retro-{i}")
            for i, p in enumerate(proposals, start=1)
        ]
        ticket_ids = []
        for proposal in proposals:
            self.store.record_proposal(proposal.to_dict())
            kind = "memory_promotion" if proposal.kind == "memory_promotion" else "proposal_approval"
            ticket_ids.append(
                self._create_ticket(
                    state, kind, {"proposal": proposal.to_dict()}
                )
            )
        self._append(
            state,
            "retro_completed",
            {"proposals": [p.to_dict() for p in proposals], "ticket_ids": ticket_ids},
        )

    def _step_finish(self, state: RunState) -> None:
        if state.pending_tickets:
            return
        self._append(state, "run_done", {})

    # -- operator surface ----------------------------------------------------

    def resolve_ticket(self, ticket_id: str, decision: dict[str, Any], principal: str) -> RunState | None:
        """Apply one human decision and resume the paused run (if any)."""
        ticket = self.store.resolve_ticket(
            ticket_id, {"principal": principal, "decision": decision}
        )
        return self._apply_ticket_decision(ticket, decision, principal)

    def _apply_ticket_decision(
        self, ticket: dict[str, Any], decision: dict[str, Any], principal: str
    ) -> RunState | None:
        ticket_id = ticket["ticket_id"]
        run_id = ticket.get("run_id")
        kind = ticket["kind"]
        if run_id is None:
            return None

        state = self.store.load_state(run_id)
        if state.phase == "halted":
            # a halted run is terminal; record the acknowledgment without
            # reviving it
            self.store.append(
                run_id,
                "human_decision",
                {
                    "ticket_id": ticket_id,
                    "decision": {
                        "type": "halt_ack",
                        "action": decision.get("action", "acknowledge"),
                        "principal": principal,
                    },
                },
            )
            return self.store.load_state(run_id)

        if kind == "arbiter_escalation":
            event_decision = {
                "type": "classification",
                "class": decision["class"],
                "rationale": decision.get("rationale", ""),
                "principal": principal,
            }
        elif kind in ("contract_approval", "run_halt") and "gate" in ticket["payload"]:
            event_decision = {
                "type": "gate_override",
                "gate": ticket["payload"]["gate"],
                "action": decision["action"],
                "principal": principal,
            }
        elif kind == "run_halt":
            event_decision = {
                "type": "gate_override",
                "gate": None,
                "action": decision.get("action", "halt"),
                "principal": principal,
            }
        elif kind in ("proposal_approval", "memory_promotion"):
            proposal = ticket["payload"].get("proposal", {})
            approved = decision.get("approve", False)
            self.store.record_proposal_decision(
                proposal.get("id", ""), "approved" if approved else "rejected", principal
            )
            if approved:
                self._apply_proposal(proposal, principal)
            event_decision = {
                "type": (
                    "memory_promotion_decision" if kind == "memory_promotion" else "proposal_decision"
                ),
                "ticket_id": ticket_id,
                "approved": approved,
                "principal": principal,
            }
        else:
            event_decision = {"type": "unknown", "principal": principal}

        self.store.append(
            run_id,
            "human_decision",
            {"ticket_id": ticket_id, "decision": event_decision},
        )
        return self.run_to_completion(run_id)

    def _apply_proposal(self, proposal_dict: dict[str, Any], principal: str) -> None:
        proposal = calibration.RetroProposal(**{**proposal_dict, "status": "approved"})
        calibration.apply_proposal(
            proposal, {"status": "approved", "principal": principal}, _Stores(self)
        )

    def report_post_merge(self, run_id: str, description: str, principal: str) -> None:
        """Operator-reported post-merge violation on a shipped run; classified
        immediately by the rule pre-pass (no contract clause covers it)."""
        state = self.store.load_state(run_id)
        if state.phase != "done":
            raise OrchestrationHalted("post-merge reports apply to shipped runs only")
        events = self.store.events(run_id)
        report_idx = [
            i for i, e in enumerate(events)
            if e.kind == "human_decision"
            and e.payload.get("decision", {}).get("type") == "post_merge_report"
        ]
        classified = sum(
            1 for e in events
            if e.kind == "failure_classified" and e.payload.get("post_merge")
        )
        # a crash can leave the report recorded but unclassified; finish it
        # instead of filing a duplicate
        dangling = (
            len(report_idx) > classified
            and events[report_idx[-1]].payload["decision"]["description"] == description
        )
        if dangling:
            position = report_idx[-1] + 1
        else:
            position = len(events) + 1
            self.store.append(
                run_id,
                "human_decision",
                {
                    "ticket_id": None,
                    "decision": {
                        "type": "post_merge_report",
                        "description": description,
                        "principal": principal,
                    },
                },
            )
        evidence = arb.FailureEvidence(
            run_id=run_id,
            failing_tests=(
                arb.FailingTest(
                    test_id=f"post-merge-{position}",
                    assertion=description,
                    clause_ids=(),
                    contract_coverage=None,
                ),
            ),
        )
        cls = arb.classify(evidence, agent=None, noise_threshold=self.config.noise_threshold)
        contract = dict(state.contract or {})
        gaps = list(contract.get("known_gaps", []))
        gaps.append({"id": f"GAP-{len(gaps) + 1}", "text": description})
        contract["known_gaps"] = gaps
        domain = state.specializations[0]["domain"] if state.specializations else "general"
        self.store.append(
            run_id,
            "failure_classified",
            {
                "post_merge": True,
                "classification": cls.to_dict(),
                "evidence": evidence.to_dict(),
                "section": "business_rules",
                "domain": domain,
                "contract": contract,
            },
        )

    def drive(self, run_id: str) -> RunState:
        """Run to completion, consuming the scenario's scripted human decisions
        whenever the run pauses on a ticket. Stops when no scripted decision is
        left (a real operator is then required)."""
        state = self.run_to_completion(run_id)
        while state.pending_human and state.phase not in ("done", "halted"):
            scenario = self.scenarios.get(state.scenario_id or "")
            script = scenario.human_script if scenario else []
            pending = self.store.tickets().get(state.pending_human)
            if pending is not None and pending["status"] == "resolved":
                # a crash landed between the ticket resolution and its run
                # event; replay the recorded decision
                resolution = pending.get("resolution", {})
                resolved = self._apply_ticket_decision(
                    pending,
                    resolution.get("decision", {}),
                    resolution.get("principal", "scripted-operator"),
                )
                state = resolved if resolved is not None else self.store.load_state(run_id)
                continue
            consumed = sum(
                1
                for t in self.store.tickets().values()
                if t["run_id"] == run_id and t["status"] == "resolved"
            )
            if consumed >= len(script):
                break
            entry = script[consumed]
            resolved = self.resolve_ticket(
                state.pending_human,
                entry["decision"],
                entry.get("principal", "scripted-operator"),
            )
            state = resolved if resolved is not None else self.store.load_state(run_id)
        return state

    def replay_scenario(self, scenario_id: str, run_id: str | None = None) -> RunState:
        """Full scripted replay: submit the bundled issue, drive the pipeline,
        file any post-merge reports, then run the cross-run retrospective."""
        scenario = self.scenarios[scenario_id]
        issue = RawIssue(
            id=scenario.issue.get("id", f"ISS-{scenario_id}"),
            title=scenario.issue.get("title", scenario_id),
            body=scenario.issue.get("body", ""),
            labels=tuple(scenario.issue.get("labels", ())),
            requester=scenario.issue.get("requester", ""),
        )
        rid = self.submit_issue(issue, scenario_id=scenario_id, run_id=run_id)
        state = self.drive(rid)
        if state.phase == "done":
            classified = sum(
                1 for e in self.store.events(rid)
                if e.kind == "failure_classified" and e.payload.get("post_merge")
            )
            for report in scenario.post_merge_reports[classified:]:
                self.report_post_merge(rid, report, "operator")
            if scenario.post_merge_reports:
                self.run_global_retro()
        return self.store.load_state(rid)

    def run_global_retro(self) -> list[calibration.RetroProposal]:
        proposals = [
            replace_proposal_id(p, f"p-global-{p.kind}-{p.target}")
            for p in calibration.run_retro(self.store.all_events())
        ]
        for proposal in proposals:
            self.store.record_proposal(proposal.to_dict())
        return proposals


class _Stores:
    """Mutation surface handed to calibration.apply_proposal."""

    def __init__(self, orch: Orchestrator):
        self.orch = orch

    def update_specialization_clause(self, domain: str, diff: str):
        from .memory import save_specialization, specialization_to_dict

        directory = self.orch.data_dir / "specializations"
        path = directory / f"{domain}.spec.json"
        if not path.exists():
            return None
        record = load_specialization(path)
        from dataclasses import replace

        if any(c.get("text") == diff for c in record.injected_clauses):
            return specialization_to_dict(record)
        clauses = list(record.injected_clauses) + [
            {"id": f"SPEC-{domain}-cal-{len(record.injected_clauses) + 1}", "text": diff}
        ]
        updated = replace(record, injected_clauses=tuple(clauses))
        save_specialization(updated, directory)
        return specialization_to_dict(updated)

    def extend_checklist(self, domain_or_gate: str, item: str) -> None:
        from dataclasses import replace

        from .memory import save_specialization

        directory = self.orch.data_dir / "specializations"
        path = directory / f"{domain_or_gate}.spec.json"
        if not path.exists():
            return
        record = load_specialization(path)
        if item in record.review_checklist_items:
            return
        updated = replace(
            record, review_checklist_items=tuple(record.review_checklist_items) + (item,)
        )
        save_specialization(updated, directory)

    def add_lint_pattern(self, pattern: str) -> None:
        path = self.orch.data_dir / "lint_patterns.txt"
        existing = path.read_text(encoding="utf-8") if path.exists() else ""
        if pattern in existing.splitlines():
            return
        path.write_text(existing + pattern + "\n", encoding="utf-8")

    def promote_regression(self, module: str, test_id: str) -> None:
        self.orch.regressions.promote(
            module,
            test_id,
            TestSuite(suite_id="retro", origin="regression_set", command=("python3",)),
        )

    def apply_memory_promotion(self, entry_id: str, principal: str) -> None:
        from .memory import PromotionRequest, apply_promotion

        path = self.orch._memory_path()
        doc = load_memory(path)
        request = PromotionRequest(
            entry_id=entry_id, proposed_text="", proposer="retro_agent"
        )
        request.decide(True, principal)
        try:
            doc = apply_promotion(doc, request)
        except Exception:
            return
        save_memory(doc, path)
