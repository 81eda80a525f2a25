/**
 * NDJSON event-stream reader with resume. The server holds the connection
 * open and pushes audit/state events as JSON lines with monotone ids; on any
 * disconnect the reader reconnects with ?since=<last id>, which guarantees no
 * duplicates and no reordering across reconnects.
 */

import type { AuditEvent } from "./api.js";

export interface StreamOptions {
  /** server-side hold time per connection (seconds) */
  maxWaitS?: number;
  /** delay before reconnecting after a drop (ms) */
  reconnectDelayMs?: number;
  fetchFn?: typeof fetch;
  onStale?: (stale: boolean) => void;
}

export class EventStream {
  lastId = 0;
  private stopped = false;
  private options: Required<Pick<StreamOptions, "maxWaitS" | "reconnectDelayMs">> &
    StreamOptions;

  constructor(private baseUrl: string,
              private onEvent: (event: AuditEvent) => void,
              options: StreamOptions = {}) {
    this.options = { maxWaitS: 10, reconnectDelayMs: 200, ...options };
  }

  /** Run until stop(); resolves when stopped. */
  async run(): Promise<void> {
    while (!this.stopped) {
      try {
        await this.readOnce();
        this.options.onStale?.(false);
      } catch {
        this.options.onStale?.(true);
        await sleep(this.options.reconnectDelayMs);
      }
    }
  }

  /** One connection lifetime: read lines until the server closes. */
  async readOnce(): Promise<number> {
    const fetchFn = this.options.fetchFn ?? fetch;
    const url = `${this.baseUrl}/events/stream?since=${this.lastId}` +
      `&max_wait_s=${this.options.maxWaitS}`;
    const resp = await fetchFn(url);
    if (!resp.ok || resp.body == null) {
      throw new Error(`stream failed: ${resp.status}`);
    }
    let count = 0;
    for await (const line of ndjsonLines(resp.body)) {
      const event = line as AuditEvent;
      if (event.id <= this.lastId) continue; // belt and braces: server already filters
      this.lastId = event.id;
      count += 1;
      this.onEvent(event);
    }
    return count;
  }

  stop(): void {
    this.stopped = true;
  }
}

export async function* ndjsonLines(body: ReadableStream<Uint8Array>):
    AsyncGenerator<unknown> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  try {
    while (true) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let idx;
      while ((idx = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, idx).trim();
        buffer = buffer.slice(idx + 1);
        if (line) yield JSON.parse(line);
      }
    }
    const tail = buffer.trim();
    if (tail) yield JSON.parse(tail);
  } finally {
    reader.releaseLock();
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise(resolve => setTimeout(resolve, ms));
}
