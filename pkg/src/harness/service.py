"""Operator HTTP API.

Read-only projections of runs, tickets, proposals, and metrics, plus the two
mutating surfaces an operator has: resolving tickets and filing post-merge
reports. Everything the console shows comes from these endpoints; the console
holds no state of its own.
"""

from __future__ import annotations

from typing import Any

from fastapi import Depends, FastAPI, Header, HTTPException
from pydantic import BaseModel

from .agents import ScriptedScenario
from .calibration import compute_metrics
from .compiler import RawIssue
from .config import HarnessConfig
from .orchestrator import OrchestrationHalted, Orchestrator
from .store import AlreadyResolved, EventStore, NotFound

API_PREFIX = "/api/v1"


class StartRunRequest(BaseModel):
    scenario_id: str
    run_id: str | None = None


class ResolveRequest(BaseModel):
    decision: dict[str, Any]
    principal: str = "console-operator"


class ReportRequest(BaseModel):
    description: str
    principal: str = "console-operator"


def _run_summary(store: EventStore, run_id: str) -> dict[str, Any]:
    state = store.load_state(run_id)
    return {
        "run_id": run_id,
        "scenario_id": state.scenario_id,
        "phase": state.phase,
        "step": state.step,
        "implementation_cycles": state.implementation_cycles,
        "pending_human": state.pending_human,
        "gates": state.gates,
    }


def create_app(
    config: HarnessConfig,
    scenarios: list[ScriptedScenario] | None = None,
) -> FastAPI:
    store = EventStore(config.data_dir)
    orch = Orchestrator(config, store)
    for scenario in scenarios or []:
        orch.register_scenario(scenario)

    app = FastAPI(title="harness", docs_url=None, redoc_url=None)
    app.state.orchestrator = orch

    def check_token(x_operator_token: str | None = Header(default=None)) -> None:
        if config.operator_token and x_operator_token != config.operator_token:
            raise HTTPException(status_code=401, detail="missing or wrong operator token")

    @app.post(API_PREFIX + "/runs", dependencies=[Depends(check_token)])
    def start_run(req: StartRunRequest) -> dict[str, Any]:
        if req.scenario_id not in orch.scenarios:
            raise HTTPException(status_code=404, detail=f"unknown scenario {req.scenario_id!r}")
        scenario = orch.scenarios[req.scenario_id]
        issue = RawIssue(
            id=scenario.issue.get("id", f"ISS-{req.scenario_id}"),
            title=scenario.issue.get("title", req.scenario_id),
            body=scenario.issue.get("body", "scripted issue"),
            labels=tuple(scenario.issue.get("labels", ())),
        )
        try:
            run_id = orch.submit_issue(issue, scenario_id=req.scenario_id, run_id=req.run_id)
            orch.run_to_completion(run_id)
        except OrchestrationHalted as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return _run_summary(store, run_id)

    @app.get(API_PREFIX + "/runs", dependencies=[Depends(check_token)])
    def list_runs() -> list[dict[str, Any]]:
        return [_run_summary(store, run_id) for run_id in store.run_ids()]

    @app.get(API_PREFIX + "/runs/{run_id}", dependencies=[Depends(check_token)])
    def get_run(run_id: str) -> dict[str, Any]:
        try:
            state = store.load_state(run_id)
        except NotFound:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        return {
            "run_id": run_id,
            "state": state.to_dict(),
            "events": [e.to_dict() for e in store.events(run_id)],
        }

    @app.get(API_PREFIX + "/tickets", dependencies=[Depends(check_token)])
    def list_tickets(status: str | None = None) -> list[dict[str, Any]]:
        tickets = list(store.tickets().values())
        if status:
            tickets = [t for t in tickets if t["status"] == status]
        return sorted(tickets, key=lambda t: t["ticket_id"])

    @app.get(API_PREFIX + "/tickets/{ticket_id}", dependencies=[Depends(check_token)])
    def get_ticket(ticket_id: str) -> dict[str, Any]:
        ticket = store.tickets().get(ticket_id)
        if ticket is None:
            raise HTTPException(status_code=404, detail=f"unknown ticket {ticket_id!r}")
        return ticket

    @app.post(API_PREFIX + "/tickets/{ticket_id}/resolve", dependencies=[Depends(check_token)])
    def resolve_ticket(ticket_id: str, req: ResolveRequest) -> dict[str, Any]:
        try:
            state = orch.resolve_ticket(ticket_id, req.decision, req.principal)
        except NotFound:
            raise HTTPException(status_code=404, detail=f"unknown ticket {ticket_id!r}")
        except AlreadyResolved:
            raise HTTPException(status_code=409, detail="ticket already resolved")
        except KeyError as exc:
            raise HTTPException(status_code=422, detail=f"decision missing field {exc}")
        out: dict[str, Any] = {"ticket": store.tickets()[ticket_id]}
        if state is not None:
            out["run"] = _run_summary(store, state.run_id)
        return out

    @app.post(API_PREFIX + "/runs/{run_id}/report", dependencies=[Depends(check_token)])
    def report(run_id: str, req: ReportRequest) -> dict[str, Any]:
        try:
            orch.report_post_merge(run_id, req.description, req.principal)
        except NotFound:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        except OrchestrationHalted as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return _run_summary(store, run_id)

    @app.get(API_PREFIX + "/proposals", dependencies=[Depends(check_token)])
    def list_proposals() -> list[dict[str, Any]]:
        return sorted(store.proposals().values(), key=lambda p: p["id"])

    @app.get(API_PREFIX + "/metrics", dependencies=[Depends(check_token)])
    def metrics() -> dict[str, Any]:
        report = compute_metrics(store.all_events(), store.proposal_events())
        return report.to_dict()

    return app
