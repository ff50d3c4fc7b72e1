/**
 * Live round-trip against the Python service: one approval or rejection per
 * ticket kind, verified purely through API read-back.
 */

import { execFileSync, spawn, type ChildProcess } from 'node:child_process';
import { mkdtempSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join, resolve } from 'node:path';
import { fileURLToPath } from 'node:url';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { decisionForTicket } from '../src/viewmodel.js';

const REPO_ROOT = resolve(fileURLToPath(new URL('.', import.meta.url)), '..', '..');
const PORT = 8700 + (process.pid % 200);
const PRINCIPAL = 'console-op';

const SCENARIO_GEN = `
import json, sys
from pathlib import Path
from harness.scenario_builder import (
    build_adversarial_pass2,
    build_escalation,
    build_product_gate_fail,
    build_proposal_pause,
)

out = Path(sys.argv[1])
out.mkdir(parents=True, exist_ok=True)

def dump(scenario, unscripted=False):
    data = scenario.to_dict()
    if unscripted:
        data["human_script"] = []
    (out / f"{data['scenario_id']}.json").write_text(json.dumps(data, indent=2))

dump(build_product_gate_fail("gate"))
dump(build_escalation("esc"), unscripted=True)
dump(build_proposal_pause("prop"), unscripted=True)
dump(build_adversarial_pass2("adv", persistent=True))
`;

let tmp: string;
let server: ChildProcess;
const client = new ApiClient({ baseUrl: `http://127.0.0.1:${PORT}` });

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      await client.listRuns();
      return;
    } catch {
      await new Promise(r => setTimeout(r, 200));
    }
  }
  throw new Error('service did not come up');
}

async function pendingTicketFor(runId: string): Promise<string> {
  const tickets = await client.listTickets('pending');
  const mine = tickets.filter(t => t.run_id === runId);
  expect(mine.length).toBeGreaterThan(0);
  return mine[0].ticket_id;
}

beforeAll(async () => {
  tmp = mkdtempSync(join(tmpdir(), 'console-rt-'));
  const scenariosDir = join(tmp, 'scenarios');
  const env = { ...process.env, PYTHONPATH: join(REPO_ROOT, 'src') };
  execFileSync('python3', ['-c', SCENARIO_GEN, scenariosDir], { env });
  server = spawn('python3', ['-m', 'harness.cli', 'serve', '--scenarios', scenariosDir], {
    env: {
      ...env,
      HARNESS_DATA_DIR: join(tmp, 'data'),
      HARNESS_LISTEN: `127.0.0.1:${PORT}`,
    },
    stdio: 'ignore',
  });
  await waitForServer();
}, 60000);

afterAll(() => {
  server?.kill();
  rmSync(tmp, { recursive: true, force: true });
});

describe('ticket round trips', () => {
  it('contract approval: approve waives the gate and the run ships', async () => {
    const run = await client.startRun('gate', 'gate-approve');
    expect(run.phase).toBe('pre_pipeline');
    const ticketId = run.pending_human!;
    expect((await client.getTicket(ticketId)).kind).toBe('contract_approval');

    const out = await client.resolveTicket(
      ticketId,
      decisionForTicket('contract_approval', { kind: 'approve' }),
      PRINCIPAL,
    );
    expect(out.ticket.status).toBe('resolved');
    expect(out.run!.phase).toBe('done');

    const detail = await client.getRun('gate-approve');
    const decision = detail.events.find(
      e => e.kind === 'human_decision' && e.payload.decision?.type === 'gate_override',
    );
    expect(decision?.payload.decision.action).toBe('approve');
    expect(decision?.payload.decision.principal).toBe(PRINCIPAL);
    expect(detail.state.gates.product_review.verdict).toBe('waived');
  });

  it('contract approval: reject halts the run for editing', async () => {
    const run = await client.startRun('gate', 'gate-reject');
    const out = await client.resolveTicket(
      run.pending_human!,
      decisionForTicket('contract_approval', { kind: 'reject' }),
      PRINCIPAL,
    );
    expect(out.run!.phase).toBe('halted');
    const detail = await client.getRun('gate-reject');
    const kinds = detail.events.map(e => e.kind);
    expect(kinds[kinds.length - 1]).toBe('run_halted');
    expect(kinds[kinds.length - 2]).toBe('human_decision');
  });

  it('arbiter escalation: the four-way form drives the classification', async () => {
    const run = await client.startRun('esc', 'esc-run');
    const ticketId = await pendingTicketFor('esc-run');
    expect((await client.getTicket(ticketId)).kind).toBe('arbiter_escalation');

    const out = await client.resolveTicket(
      ticketId,
      decisionForTicket('arbiter_escalation', {
        kind: 'classify',
        form: { selected: 'bug', rationale: 'the clause is clear, the code is wrong' },
      }),
      PRINCIPAL,
    );
    expect(out.run!.phase).toBe('done');
    expect(out.run!.implementation_cycles).toBe(2);

    const detail = await client.getRun('esc-run');
    const classified = detail.events.filter(e => e.kind === 'failure_classified');
    expect(classified).toHaveLength(1);
    expect(classified[0].payload.classification.class).toBe('bug');
    expect(classified[0].payload.classification.decided_by).toBe('human');
    expect(detail.events.some(e => e.kind === 'regression_promoted')).toBe(true);
  });

  it('proposal approval then memory promotion rejection', async () => {
    const run = await client.startRun('prop', 'prop-run');
    expect(run.phase).toBe('post_pipeline');
    const proposalTicket = await pendingTicketFor('prop-run');
    expect((await client.getTicket(proposalTicket)).kind).toBe('proposal_approval');

    const first = await client.resolveTicket(
      proposalTicket,
      decisionForTicket('proposal_approval', { kind: 'approve' }),
      PRINCIPAL,
    );
    const memoryTicket = first.run!.pending_human!;
    expect((await client.getTicket(memoryTicket)).kind).toBe('memory_promotion');

    const second = await client.resolveTicket(
      memoryTicket,
      decisionForTicket('memory_promotion', { kind: 'reject' }),
      PRINCIPAL,
    );
    expect(second.run!.phase).toBe('done');
    expect(second.run!.pending_human).toBeNull();

    const proposals = await client.listProposals();
    const statuses = proposals.map(p => [p.kind, p.status]);
    expect(statuses).toContainEqual(['compiler_rule', 'approved']);
    expect(statuses).toContainEqual(['memory_promotion', 'rejected']);

    const detail = await client.getRun('prop-run');
    const decisions = detail.events
      .filter(e => e.kind === 'human_decision')
      .map(e => e.payload.decision);
    expect(decisions.map(d => d.type)).toEqual([
      'proposal_decision',
      'memory_promotion_decision',
    ]);
    expect(decisions[1].approved).toBe(false);
  });

  it('run halt: acknowledgment is recorded; the run stays halted', async () => {
    const run = await client.startRun('adv', 'adv-run');
    expect(run.phase).toBe('halted');
    const ticketId = await pendingTicketFor('adv-run');
    expect((await client.getTicket(ticketId)).kind).toBe('run_halt');

    const out = await client.resolveTicket(
      ticketId,
      decisionForTicket('run_halt', { kind: 'approve' }),
      PRINCIPAL,
    );
    expect(out.ticket.status).toBe('resolved');
    expect(out.run!.phase).toBe('halted');

    const detail = await client.getRun('adv-run');
    const last = detail.events[detail.events.length - 1];
    expect(last.kind).toBe('human_decision');
    expect(last.payload.decision.type).toBe('halt_ack');
    expect(detail.state.phase).toBe('halted');
  });

  it('already-resolved tickets are refused with a conflict', async () => {
    const tickets = await client.listTickets('resolved');
    expect(tickets.length).toBeGreaterThan(0);
    await expect(
      client.resolveTicket(tickets[0].ticket_id, { action: 'approve' }, PRINCIPAL),
    ).rejects.toThrow(/409/);
  });
});
