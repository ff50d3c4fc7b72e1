/**
 * Pure view-model layer: groups API data for rendering and turns operator
 * choices into API decision payloads. No decision logic lives here beyond
 * payload shaping; the service owns every verdict.
 */

import type { Metrics, RunDetail, RunSummary, Ticket } from './api.js';

export const ARBITER_CLASSES = ['bug', 'spec_gap', 'noise', 'contract_ambiguity'] as const;
export type ArbiterClass = (typeof ARBITER_CLASSES)[number];

export const TICKET_KINDS = [
  'arbiter_escalation',
  'contract_approval',
  'memory_promotion',
  'proposal_approval',
  'run_halt',
] as const;
export type TicketKind = (typeof TICKET_KINDS)[number];

export const BOARD_COLUMNS = [
  'pre_pipeline',
  'pipeline',
  'post_pipeline',
  'done',
  'halted',
] as const;

export interface ConsoleViewModel {
  board: Record<string, RunSummary[]>;
  queue: Record<string, Ticket[]>;
  pendingCount: number;
  metricsPanels: { section: string; rows: { key: string; value: string }[] }[];
}

export function buildViewModel(
  runs: RunSummary[],
  tickets: Ticket[],
  metrics: Metrics,
): ConsoleViewModel {
  const board: Record<string, RunSummary[]> = {};
  for (const column of BOARD_COLUMNS) board[column] = [];
  for (const run of runs) {
    (board[run.phase] ?? (board[run.phase] = [])).push(run);
  }
  for (const column of Object.keys(board)) {
    board[column].sort((a, b) => a.run_id.localeCompare(b.run_id));
  }

  const queue: Record<string, Ticket[]> = {};
  const pending = tickets.filter(t => t.status === 'pending');
  for (const ticket of pending) {
    (queue[ticket.kind] ?? (queue[ticket.kind] = [])).push(ticket);
  }

  const metricsPanels = (
    ['productivity', 'verification', 'quality', 'calibration', 'diagnostics'] as const
  ).map(section => ({
    section,
    rows: Object.entries(metrics[section]).map(([key, value]) => ({
      key,
      value: formatMetric(value),
    })),
  }));

  return { board, queue, pendingCount: pending.length, metricsPanels };
}

export function formatMetric(value: unknown): string {
  if (value === null || value === undefined) return 'absent';
  if (typeof value === 'number') {
    return Number.isInteger(value) ? String(value) : value.toFixed(3);
  }
  if (Array.isArray(value)) return value.join(', ') || 'none';
  if (typeof value === 'object') return JSON.stringify(value);
  return String(value);
}

export interface TimelineRow {
  seq: number;
  kind: string;
  summary: string;
}

export function timeline(detail: RunDetail): TimelineRow[] {
  return detail.events.map(event => ({
    seq: event.seq,
    kind: event.kind,
    summary: summarizeEvent(event.kind, event.payload),
  }));
}

function summarizeEvent(kind: string, payload: Record<string, unknown>): string {
  switch (kind) {
    case 'gate_recorded':
      return `${payload.gate}: ${payload.verdict}`;
    case 'job_dispatched':
      return `${payload.role} attempt ${payload.attempt}`;
    case 'failure_classified': {
      const cls = (payload.classification as Record<string, unknown> | null)?.class;
      return `classified ${cls ?? 'unknown'}`;
    }
    case 'corrective_action':
      return `${payload.class} -> ${payload.action}`;
    case 'human_decision': {
      const decision = payload.decision as Record<string, unknown> | undefined;
      return `operator: ${decision?.type ?? 'decision'}`;
    }
    case 'run_halted':
      return String(payload.reason ?? 'halted');
    default:
      return '';
  }
}

/** The four-way escalation form. Submit stays disabled until a class is chosen. */
export interface ClassificationForm {
  selected: ArbiterClass | null;
  rationale: string;
}

export function emptyClassificationForm(): ClassificationForm {
  return { selected: null, rationale: '' };
}

export function canSubmit(form: ClassificationForm): boolean {
  return form.selected !== null;
}

export function classificationDecision(form: ClassificationForm): Record<string, unknown> {
  if (form.selected === null) {
    throw new Error('no class chosen');
  }
  return { class: form.selected, rationale: form.rationale };
}

export type TicketChoice =
  | { kind: 'approve' }
  | { kind: 'reject' }
  | { kind: 'classify'; form: ClassificationForm };

/** Map one operator choice onto the decision payload the API expects. */
export function decisionForTicket(
  ticketKind: TicketKind,
  choice: TicketChoice,
): Record<string, unknown> {
  switch (ticketKind) {
    case 'arbiter_escalation':
      if (choice.kind !== 'classify') {
        throw new Error('escalations resolve through the classification form');
      }
      return classificationDecision(choice.form);
    case 'contract_approval':
      return { action: choice.kind === 'approve' ? 'approve' : 'halt' };
    case 'run_halt':
      return { action: 'halt' };
    case 'proposal_approval':
    case 'memory_promotion':
      return { approve: choice.kind === 'approve' };
  }
}
