import { DoorCommand, EventRecord, isEventRecord } from "./types.js";

export interface ApiOptions {
  baseUrl: string;
  token: string;
  /** Injection point for tests; defaults to the global fetch. */
  fetchFn?: typeof fetch;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: string,
  ) {
    super(`server returned ${status}: ${body}`);
    this.name = "ApiError";
  }
}

/**
 * Thin client for the control server's admin HTTP surface.
 *
 * Every request carries the admin token; the server rejects anything
 * without it, so there is no unauthenticated mode to support.
 */
export class ConsoleApi {
  private readonly baseUrl: string;
  private readonly token: string;
  private readonly fetchFn: typeof fetch;

  constructor(opts: ApiOptions) {
    this.baseUrl = opts.baseUrl.replace(/\/$/, "");
    this.token = opts.token;
    this.fetchFn = opts.fetchFn ?? fetch;
  }

  private headers(extra?: Record<string, string>): Record<string, string> {
    return { "X-Admin-Token": this.token, ...extra };
  }

  private async request(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<unknown> {
    const init: RequestInit = { method, headers: this.headers() };
    if (body !== undefined) {
      init.headers = this.headers({ "Content-Type": "application/json" });
      init.body = JSON.stringify(body);
    }
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const text = await res.text();
    if (!res.ok) throw new ApiError(res.status, text);
    return text ? JSON.parse(text) : null;
  }

  /** Journal entries with seq > since, oldest first. */
  async events(since = 0, limit?: number): Promise<EventRecord[]> {
    let path = `/events?since=${since}`;
    if (limit !== undefined) path += `&limit=${limit}`;
    return (await this.request("GET", path)) as EventRecord[];
  }

  /**
   * Follow the NDJSON event stream. Yields backfill after `since`,
   * then live records as the server journals them. Runs until the
   * server closes the connection or `signal` aborts.
   */
  async *stream(
    since: number,
    signal?: AbortSignal,
  ): AsyncGenerator<EventRecord, void, undefined> {
    const res = await this.fetchFn(`${this.baseUrl}/events/stream?since=${since}`, {
      headers: this.headers(),
      signal,
    });
    if (!res.ok) throw new ApiError(res.status, await res.text());
    if (!res.body) throw new Error("stream response has no body");

    const reader = res.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        let nl: number;
        while ((nl = buffer.indexOf("\n")) >= 0) {
          const line = buffer.slice(0, nl).trim();
          buffer = buffer.slice(nl + 1);
          if (!line) continue;
          const parsed: unknown = JSON.parse(line);
          if (!isEventRecord(parsed)) {
            throw new Error(`malformed stream record: ${line}`);
          }
          yield parsed;
        }
      }
    } finally {
      reader.releaseLock();
    }
  }

  /** Ask the server to push a shutdown or clear command to a door. */
  async doorCommand(doorId: string, command: DoorCommand): Promise<void> {
    await this.request("POST", `/doors/${encodeURIComponent(doorId)}/${command}`);
  }
}
