/**
 * Browser entry point: poll the API and redraw. All state is API state; a
 * reload starts clean and shows the same picture.
 */

import { ApiClient } from './api.js';
import { renderBoard, renderMetrics, renderQueue } from './render.js';
import { buildViewModel } from './viewmodel.js';

const POLL_INTERVAL_MS = 2000;

export async function refresh(client: ApiClient, root: HTMLElement): Promise<void> {
  const [runs, tickets, metrics] = await Promise.all([
    client.listRuns(),
    client.listTickets(),
    client.metrics(),
  ]);
  const vm = buildViewModel(runs, tickets, metrics);
  root.innerHTML = renderBoard(vm) + renderQueue(vm) + renderMetrics(vm);
}

export function start(baseUrl: string, operatorToken?: string): void {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app container');
  const client = new ApiClient({ baseUrl, operatorToken });
  const tick = () =>
    refresh(client, root).catch(err => {
      root.innerHTML = `<p class="error">${String(err)}</p>`;
    });
  void tick();
  setInterval(tick, POLL_INTERVAL_MS);
}

declare global {
  interface Window {
    harnessConsole?: { start: typeof start };
  }
}

if (typeof window !== 'undefined') {
  window.harnessConsole = { start };
}
