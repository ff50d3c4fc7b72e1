"""Append-only persistence: per-run JSONL event logs, the operator ticket
queue, and the calibration proposal log.

Events are never updated or deleted. Crash recovery tolerates a trailing
partial line (the write that died mid-flight) and replays to identical state.
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator

from .pipeline import RunEvent, RunState, fold


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _append_jsonl(path: Path, record: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    line = json.dumps(record, sort_keys=True) + "\n"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line)
        fh.flush()
        os.fsync(fh.fileno())


def _read_jsonl(path: Path) -> Iterator[dict[str, Any]]:
    if not path.exists():
        return
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                # trailing partial write from a crash; everything before it is good
                return


class TicketError(Exception):
    pass


class AlreadyResolved(TicketError):
    pass


class NotFound(Exception):
    pass


TICKET_KINDS = (
    "arbiter_escalation",
    "contract_approval",
    "memory_promotion",
    "proposal_approval",
    "run_halt",
)


class EventStore:
    """One JSONL file per run under <data_dir>/runs, plus an index file."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.runs_dir = self.data_dir / "runs"
        self.index_path = self.data_dir / "index.json"
        self.tickets_path = self.data_dir / "tickets.jsonl"
        self.proposals_path = self.data_dir / "proposals.jsonl"

    # -- runs ---------------------------------------------------------------

    def _run_path(self, run_id: str) -> Path:
        return self.runs_dir / f"{run_id}.jsonl"

    def run_ids(self) -> list[str]:
        if not self.runs_dir.exists():
            return []
        return sorted(p.stem for p in self.runs_dir.glob("*.jsonl"))

    def has_run(self, run_id: str) -> bool:
        return run_id in self._index() or self._run_path(run_id).exists()

    def create_run(self, run_id: str | None = None) -> str:
        if run_id is None:
            run_id = uuid.uuid4().hex[:12]
        if run_id in self._index():
            raise TicketError(f"run {run_id!r} already exists")
        self._run_path(run_id).parent.mkdir(parents=True, exist_ok=True)
        self._update_index(run_id, created_at=_now())
        return run_id

    def events(self, run_id: str) -> list[RunEvent]:
        path = self._run_path(run_id)
        if not path.exists() and run_id not in self._index():
            raise NotFound(run_id)
        return [RunEvent.from_dict(rec) for rec in _read_jsonl(path)]

    def append(self, run_id: str, kind: str, payload: dict[str, Any]) -> RunEvent:
        events = self.events(run_id) if self._run_path(run_id).exists() else []
        event = RunEvent(
            seq=(events[-1].seq + 1) if events else 1,
            run_id=run_id,
            timestamp=_now(),
            kind=kind,
            payload=payload,
        )
        _append_jsonl(self._run_path(run_id), event.to_dict())
        return event

    def load_state(self, run_id: str) -> RunState:
        return fold(run_id, self.events(run_id))

    def all_events(self) -> dict[str, list[RunEvent]]:
        return {run_id: self.events(run_id) for run_id in self.run_ids()}

    def _index(self) -> dict[str, Any]:
        if self.index_path.exists():
            return json.loads(self.index_path.read_text(encoding="utf-8"))
        return {}

    def _update_index(self, run_id: str, **fields: Any) -> None:
        index = self._index()
        index.setdefault(run_id, {}).update(fields)
        self.index_path.parent.mkdir(parents=True, exist_ok=True)
        self.index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")

    # -- tickets ------------------------------------------------------------

    def create_ticket(
        self,
        kind: str,
        run_id: str | None,
        payload: dict[str, Any],
        ticket_id: str | None = None,
    ) -> str:
        if kind not in TICKET_KINDS:
            raise TicketError(f"unknown ticket kind {kind!r}")
        if ticket_id is None:
            ticket_id = uuid.uuid4().hex[:12]
        if ticket_id in self.tickets():
            raise TicketError(f"ticket {ticket_id!r} already exists")
        _append_jsonl(
            self.tickets_path,
            {
                "type": "created",
                "ticket_id": ticket_id,
                "kind": kind,
                "run_id": run_id,
                "payload": payload,
                "created_at": _now(),
            },
        )
        return ticket_id

    def resolve_ticket(self, ticket_id: str, resolution: dict[str, Any]) -> dict[str, Any]:
        if "principal" not in resolution:
            raise TicketError("resolution requires a principal id")
        tickets = self.tickets()
        ticket = tickets.get(ticket_id)
        if ticket is None:
            raise NotFound(ticket_id)
        if ticket["status"] != "pending":
            raise AlreadyResolved(ticket_id)
        record = {
            "type": "resolved",
            "ticket_id": ticket_id,
            "resolution": resolution,
            "resolved_at": _now(),
        }
        _append_jsonl(self.tickets_path, record)
        ticket = dict(ticket)
        ticket["status"] = "resolved"
        ticket["resolution"] = resolution
        return ticket

    def tickets(self) -> dict[str, dict[str, Any]]:
        out: dict[str, dict[str, Any]] = {}
        for rec in _read_jsonl(self.tickets_path):
            if rec["type"] == "created":
                out[rec["ticket_id"]] = {
                    "ticket_id": rec["ticket_id"],
                    "kind": rec["kind"],
                    "run_id": rec.get("run_id"),
                    "payload": rec.get("payload", {}),
                    "created_at": rec.get("created_at"),
                    "status": "pending",
                    "resolution": None,
                }
            elif rec["type"] == "resolved" and rec["ticket_id"] in out:
                out[rec["ticket_id"]]["status"] = "resolved"
                out[rec["ticket_id"]]["resolution"] = rec["resolution"]
        return out

    def pending_tickets(self) -> list[dict[str, Any]]:
        return [t for t in self.tickets().values() if t["status"] == "pending"]

    # -- calibration proposals ---------------------------------------------

    def record_proposal(self, proposal: dict[str, Any]) -> None:
        _append_jsonl(
            self.proposals_path,
            {"type": "proposed", "proposal": proposal, "at": _now()},
        )

    def record_proposal_decision(
        self, proposal_id: str, status: str, principal: str
    ) -> None:
        _append_jsonl(
            self.proposals_path,
            {
                "type": "decided",
                "proposal_id": proposal_id,
                "status": status,
                "principal": principal,
                "at": _now(),
            },
        )

    def proposals(self) -> dict[str, dict[str, Any]]:
        out: dict[str, dict[str, Any]] = {}
        for rec in _read_jsonl(self.proposals_path):
            if rec["type"] == "proposed":
                proposal = dict(rec["proposal"])
                proposal.setdefault("status", "pending")
                out[proposal["id"]] = proposal
            elif rec["type"] == "decided" and rec["proposal_id"] in out:
                out[rec["proposal_id"]]["status"] = rec["status"]
                out[rec["proposal_id"]]["decided_by"] = rec["principal"]
        return out

    def proposal_events(self) -> list[dict[str, Any]]:
        return list(_read_jsonl(self.proposals_path))
