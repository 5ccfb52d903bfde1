/** One journal entry as served by GET /events and /events/stream. */
export interface EventRecord {
  seq: number;
  ts: string;
  source: string;
  kind: string;
  data: Record<string, unknown>;
}

export type DoorMode =
  | "locked"
  | "awaiting_pin"
  | "unlocked"
  | "lockdown"
  | "shutdown";

export type DoorCommand = "shutdown" | "clear";

export function isEventRecord(value: unknown): value is EventRecord {
  if (typeof value !== "object" || value === null) return false;
  const rec = value as Record<string, unknown>;
  return (
    typeof rec.seq === "number" &&
    typeof rec.ts === "string" &&
    typeof rec.source === "string" &&
    typeof rec.kind === "string" &&
    typeof rec.data === "object" &&
    rec.data !== null
  );
}
