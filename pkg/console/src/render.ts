/**
 * String-template rendering. Kept free of direct DOM calls so it runs in
 * tests; main.ts assigns the output to innerHTML.
 */

import type { Ticket } from './api.js';
import {
  ARBITER_CLASSES,
  BOARD_COLUMNS,
  type ClassificationForm,
  type ConsoleViewModel,
  type TimelineRow,
  canSubmit,
} from './viewmodel.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function renderBoard(vm: ConsoleViewModel): string {
  const columns = BOARD_COLUMNS.map(column => {
    const cards = (vm.board[column] ?? [])
      .map(
        run =>
          `<li class="run-card" data-run="${escapeHtml(run.run_id)}">` +
          `${escapeHtml(run.run_id)} (step ${run.step}` +
          `${run.pending_human ? ', waiting on operator' : ''})</li>`,
      )
      .join('');
    return `<section class="column" data-phase="${column}"><h3>${column}</h3><ul>${cards}</ul></section>`;
  });
  return `<div class="board">${columns.join('')}</div>`;
}

export function renderQueue(vm: ConsoleViewModel): string {
  const groups = Object.entries(vm.queue).map(([kind, tickets]) => {
    const items = tickets
      .map(t => `<li data-ticket="${escapeHtml(t.ticket_id)}">${escapeHtml(t.ticket_id)}</li>`)
      .join('');
    return `<section data-kind="${escapeHtml(kind)}"><h3>${escapeHtml(kind)}</h3><ul>${items}</ul></section>`;
  });
  return `<div class="queue" data-pending="${vm.pendingCount}">${groups.join('')}</div>`;
}

export function renderMetrics(vm: ConsoleViewModel): string {
  const panels = vm.metricsPanels.map(panel => {
    const rows = panel.rows
      .map(r => `<tr><td>${escapeHtml(r.key)}</td><td>${escapeHtml(r.value)}</td></tr>`)
      .join('');
    return `<table class="metrics" data-section="${panel.section}">${rows}</table>`;
  });
  return panels.join('');
}

export function renderTimeline(rows: TimelineRow[]): string {
  const items = rows
    .map(r => `<li>${r.seq}. ${escapeHtml(r.kind)} ${escapeHtml(r.summary)}</li>`)
    .join('');
  return `<ol class="timeline">${items}</ol>`;
}

export function renderClassificationForm(ticket: Ticket, form: ClassificationForm): string {
  const options = ARBITER_CLASSES.map(
    cls =>
      `<label><input type="radio" name="failure-class" value="${cls}"` +
      `${form.selected === cls ? ' checked' : ''}/> ${cls}</label>`,
  ).join('');
  const disabled = canSubmit(form) ? '' : ' disabled';
  return (
    `<form data-ticket="${escapeHtml(ticket.ticket_id)}">` +
    options +
    `<textarea name="rationale">${escapeHtml(form.rationale)}</textarea>` +
    `<button type="submit"${disabled}>Resolve</button></form>`
  );
}
