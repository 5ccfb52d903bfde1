import { ConsoleApi } from "./api.js";
import { EventRecord } from "./types.js";

export type FeedHandler = (rec: EventRecord) => void;

/**
 * Exactly-once delivery of the journal to a handler.
 *
 * Strategy: page through GET /events until it runs dry, then follow
 * /events/stream from the last seq seen. The two sources can overlap
 * at the seam (and a reconnect replays from the resume point), so
 * delivery is gated on seq strictly increasing. The journal is
 * append-only with gapless seqs, which makes that gate sufficient.
 */
export class EventFeed {
  private lastSeq: number;

  constructor(
    private readonly api: ConsoleApi,
    private readonly onRecord: FeedHandler,
    startAfter = 0,
  ) {
    this.lastSeq = startAfter;
  }

  get position(): number {
    return this.lastSeq;
  }

  /** Backfill, then follow until the stream ends or `signal` aborts. */
  async run(signal?: AbortSignal): Promise<void> {
    for (;;) {
      const page = await this.api.events(this.lastSeq);
      if (page.length === 0) break;
      for (const rec of page) this.deliver(rec);
    }
    for await (const rec of this.api.stream(this.lastSeq, signal)) {
      this.deliver(rec);
    }
  }

  private deliver(rec: EventRecord): void {
    if (rec.seq <= this.lastSeq) return;
    this.lastSeq = rec.seq;
    this.onRecord(rec);
  }
}
