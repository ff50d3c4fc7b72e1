"""Command-line entry points for operating the harness."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .agents import ScriptedScenario
from .calibration import compute_metrics
from .config import HarnessConfig, load_config
from .memory import specialization_from_dict, save_specialization
from .orchestrator import Orchestrator
from .scenario_builder import payments_specialization
from .store import EventStore


def _setup(config_path: str | None, data_dir: str | None) -> tuple[HarnessConfig, EventStore, Orchestrator]:
    config = load_config(Path(config_path) if config_path else None)
    if data_dir:
        from dataclasses import replace

        config = replace(config, data_dir=Path(data_dir))
    store = EventStore(config.data_dir)
    return config, store, Orchestrator(config, store)


def _load_scenarios(orch: Orchestrator, paths: tuple[str, ...]) -> list[ScriptedScenario]:
    loaded = []
    for raw in paths:
        p = Path(raw)
        files = sorted(p.glob("*.json")) if p.is_dir() else [p]
        for f in files:
            scenario = ScriptedScenario.load(f)
            orch.register_scenario(scenario)
            loaded.append(scenario)
    return loaded


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="config file")
@click.option("--data-dir", type=click.Path(), default=None, help="state directory")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, data_dir: str | None) -> None:
    """Multi-agent software production harness."""
    ctx.obj = _setup(config_path, data_dir)


@main.command()
@click.pass_obj
def init(obj) -> None:
    """Create the data directory and seed the bundled specializations."""
    config, _store, _orch = obj
    data_dir = Path(config.data_dir)
    for sub in ("runs", "workspace", "memory", "specializations"):
        (data_dir / sub).mkdir(parents=True, exist_ok=True)
    record = specialization_from_dict(payments_specialization())
    save_specialization(record, data_dir / "specializations")
    click.echo(f"initialized {data_dir}")


@main.command()
@click.argument("scenario_path", type=click.Path(exists=True))
@click.option("--run-id", default=None, help="explicit run id (for reproducible replays)")
@click.pass_obj
def run(obj, scenario_path: str, run_id: str | None) -> None:
    """Replay one scripted scenario end to end."""
    _config, store, orch = obj
    scenarios = _load_scenarios(orch, (scenario_path,))
    for scenario in scenarios:
        state = orch.replay_scenario(scenario.scenario_id, run_id=run_id)
        click.echo(
            f"{scenario.scenario_id}: run {state.run_id} -> {state.phase} "
            f"(step {state.step}, cycles {state.implementation_cycles})"
        )
        if state.pending_human:
            click.echo(f"  waiting on ticket {state.pending_human}")


@main.command()
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False))
@click.pass_obj
def corpus(obj, corpus_dir: str) -> None:
    """Replay every scenario in a directory, then print the metrics table."""
    _config, store, orch = obj
    scenarios = _load_scenarios(orch, (corpus_dir,))
    for scenario in scenarios:
        state = orch.replay_scenario(scenario.scenario_id)
        click.echo(f"{scenario.scenario_id}: {state.phase}")
    report = compute_metrics(store.all_events(), store.proposal_events())
    click.echo(report.to_table())


@main.command()
@click.argument("run_id", required=False)
@click.pass_obj
def status(obj, run_id: str | None) -> None:
    """Show one run's folded state, or summaries for all runs."""
    _config, store, _orch = obj
    run_ids = [run_id] if run_id else store.run_ids()
    for rid in run_ids:
        state = store.load_state(rid)
        click.echo(
            f"{rid}  phase={state.phase} step={state.step} "
            f"cycles={state.implementation_cycles} pending={state.pending_human or '-'}"
        )


@main.command()
@click.option("--pending/--all", "pending_only", default=True)
@click.pass_obj
def tickets(obj, pending_only: bool) -> None:
    """List operator tickets."""
    _config, store, _orch = obj
    items = store.pending_tickets() if pending_only else list(store.tickets().values())
    for t in items:
        click.echo(f"{t['ticket_id']}  {t['kind']}  run={t['run_id']}  {t['status']}")


@main.command()
@click.argument("ticket_id")
@click.option("--decision", required=True, help="decision JSON, e.g. '{\"class\": \"bug\"}'")
@click.option("--principal", required=True)
@click.pass_obj
def resolve(obj, ticket_id: str, decision: str, principal: str) -> None:
    """Resolve a ticket and resume its run."""
    _config, _store, orch = obj
    state = orch.resolve_ticket(ticket_id, json.loads(decision), principal)
    if state is not None:
        click.echo(f"run {state.run_id} -> {state.phase} (step {state.step})")


@main.command()
@click.pass_obj
def metrics(obj) -> None:
    """Print the metrics table over all recorded runs."""
    _config, store, _orch = obj
    report = compute_metrics(store.all_events(), store.proposal_events())
    click.echo(report.to_table())


@main.command()
@click.argument("run_id")
@click.pass_obj
def verify(obj, run_id: str) -> None:
    """Refold a run's event log and report the recovered state."""
    _config, store, _orch = obj
    state = store.load_state(run_id)
    click.echo(json.dumps(state.to_dict(), indent=2, sort_keys=True))


@main.command()
@click.argument("run_id")
@click.option("--description", required=True)
@click.option("--principal", required=True)
@click.option("--scenarios", "scenario_paths", multiple=True, type=click.Path(exists=True))
@click.pass_obj
def report(obj, run_id: str, description: str, principal: str, scenario_paths) -> None:
    """File a post-merge violation report against a shipped run."""
    _config, _store, orch = obj
    _load_scenarios(orch, scenario_paths)
    orch.report_post_merge(run_id, description, principal)
    click.echo("recorded")


@main.command()
@click.option("--scenarios", "scenario_paths", multiple=True, type=click.Path(exists=True))
@click.pass_obj
def serve(obj, scenario_paths) -> None:
    """Start the operator HTTP API."""
    import uvicorn

    from .service import create_app

    config, _store, orch = obj
    scenarios = _load_scenarios(orch, scenario_paths)
    app = create_app(config, scenarios)
    host, _, port = config.listen.partition(":")
    uvicorn.run(app, host=host, port=int(port or 8600), log_level="warning")


if __name__ == "__main__":
    main()
