/** Thin typed client for the /v1 inference API. */

import type { InpaintRequestBody, InpaintResponseBody } from "./session.js";

export interface HealthBody {
  status: string;
  checkpoint?: string | null;
  resolution?: number | null;
  num_labels?: number | null;
  queue_depth: number;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class InpaintClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args)
  ) {}

  async health(): Promise<HealthBody> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/health`);
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return (await resp.json()) as HealthBody;
  }

  async inpaint(body: InpaintRequestBody): Promise<InpaintResponseBody> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/inpaint`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) {
      let detail = await resp.text();
      try {
        detail = JSON.parse(detail).detail ?? detail;
      } catch {
        // plain-text error body
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as InpaintResponseBody;
  }
}
