/**
 * Thin typed client for the harness operator API. Every console feature is a
 * call through here; the console keeps no state the API cannot rebuild.
 */

import { z } from 'zod';

export const RunSummarySchema = z.object({
  run_id: z.string(),
  scenario_id: z.string().nullable(),
  phase: z.string(),
  step: z.number(),
  implementation_cycles: z.number(),
  pending_human: z.string().nullable(),
  gates: z.record(z.string(), z.any()),
});
export type RunSummary = z.infer<typeof RunSummarySchema>;

export const RunEventSchema = z.object({
  seq: z.number(),
  run_id: z.string(),
  timestamp: z.string(),
  kind: z.string(),
  payload: z.record(z.string(), z.any()),
});
export type RunEvent = z.infer<typeof RunEventSchema>;

export const RunDetailSchema = z.object({
  run_id: z.string(),
  state: z.record(z.string(), z.any()),
  events: z.array(RunEventSchema),
});
export type RunDetail = z.infer<typeof RunDetailSchema>;

export const TicketSchema = z.object({
  ticket_id: z.string(),
  kind: z.string(),
  run_id: z.string().nullable(),
  payload: z.record(z.string(), z.any()),
  created_at: z.string().nullable(),
  status: z.enum(['pending', 'resolved']),
  resolution: z.record(z.string(), z.any()).nullable(),
});
export type Ticket = z.infer<typeof TicketSchema>;

export const MetricsSchema = z.object({
  window: z.record(z.string(), z.any()),
  productivity: z.record(z.string(), z.any()),
  verification: z.record(z.string(), z.any()),
  quality: z.record(z.string(), z.any()),
  calibration: z.record(z.string(), z.any()),
  diagnostics: z.record(z.string(), z.any()),
});
export type Metrics = z.infer<typeof MetricsSchema>;

export const ResolveResponseSchema = z.object({
  ticket: TicketSchema,
  run: RunSummarySchema.optional(),
});
export type ResolveResponse = z.infer<typeof ResolveResponseSchema>;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`API ${status}: ${detail}`);
  }
}

export interface ClientOptions {
  baseUrl: string;
  operatorToken?: string;
}

export class ApiClient {
  constructor(private readonly options: ClientOptions) {}

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const headers: Record<string, string> = { 'Content-Type': 'application/json' };
    if (this.options.operatorToken) {
      headers['X-Operator-Token'] = this.options.operatorToken;
    }
    const response = await fetch(`${this.options.baseUrl}/api/v1${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        detail = JSON.parse(text).detail ?? text;
      } catch {
        // non-JSON error body; keep raw text
      }
      throw new ApiError(response.status, detail);
    }
    return JSON.parse(text);
  }

  async startRun(scenarioId: string, runId?: string): Promise<RunSummary> {
    const body = { scenario_id: scenarioId, run_id: runId ?? null };
    return RunSummarySchema.parse(await this.request('POST', '/runs', body));
  }

  async listRuns(): Promise<RunSummary[]> {
    return z.array(RunSummarySchema).parse(await this.request('GET', '/runs'));
  }

  async getRun(runId: string): Promise<RunDetail> {
    return RunDetailSchema.parse(await this.request('GET', `/runs/${runId}`));
  }

  async listTickets(status?: 'pending' | 'resolved'): Promise<Ticket[]> {
    const query = status ? `?status=${status}` : '';
    return z.array(TicketSchema).parse(await this.request('GET', `/tickets${query}`));
  }

  async getTicket(ticketId: string): Promise<Ticket> {
    return TicketSchema.parse(await this.request('GET', `/tickets/${ticketId}`));
  }

  async resolveTicket(
    ticketId: string,
    decision: Record<string, unknown>,
    principal: string,
  ): Promise<ResolveResponse> {
    const body = { decision, principal };
    return ResolveResponseSchema.parse(
      await this.request('POST', `/tickets/${ticketId}/resolve`, body),
    );
  }

  async reportPostMerge(
    runId: string,
    description: string,
    principal: string,
  ): Promise<RunSummary> {
    const body = { description, principal };
    return RunSummarySchema.parse(await this.request('POST', `/runs/${runId}/report`, body));
  }

  async listProposals(): Promise<Record<string, unknown>[]> {
    return z.array(z.record(z.string(), z.any())).parse(await this.request('GET', '/proposals'));
  }

  async metrics(): Promise<Metrics> {
    return MetricsSchema.parse(await this.request('GET', '/metrics'));
  }
}
