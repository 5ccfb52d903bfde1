import { DoorMode, EventRecord } from "./types.js";

/** Door mode implied by each door-sourced journal kind. */
export const DOOR_MODE_BY_KIND: Record<string, DoorMode> = {
  pin_prompt: "awaiting_pin",
  pin_timeout: "locked",
  door_unlocked: "unlocked",
  inside_unlock: "unlocked",
  door_relocked: "locked",
  breach_attempt: "locked",
  lockdown: "lockdown",
  remote_shutdown: "shutdown",
  lockdown_cleared: "locked",
};

export interface CardRow {
  uid: string;
  holderName: string;
  role: string;
  status: "active" | "revoked";
}

export interface SessionRow {
  sessionId: string;
  course: string;
  open: boolean;
  accepted: Set<string>;
}

export interface DoorPanel {
  doorId: string;
  mode: DoorMode;
  connected: boolean;
  lastKind: string;
  lastTs: string;
}

const TAIL_LIMIT = 50;

/**
 * Console state folded from the journal, one record at a time.
 *
 * This mirrors the server's own event reduction: the journal is the
 * single source of truth and the console derives everything it shows
 * from it. Balances come from the balance_minor the server stamps on
 * each settled payment, so no ledger arithmetic is repeated here.
 */
export class ConsoleStore {
  lastSeq = 0;
  applied = 0;
  readonly cards = new Map<string, CardRow>();
  readonly balances = new Map<string, number>();
  readonly sessions = new Map<string, SessionRow>();
  readonly doors = new Map<string, DoorPanel>();
  readonly devices = new Map<string, string>();
  readonly tail: EventRecord[] = [];

  /** Fold one record in. Seqs must strictly increase; the feed owns dedupe. */
  apply(rec: EventRecord): void {
    if (rec.seq <= this.lastSeq) {
      throw new Error(
        `event ${rec.seq} applied after ${this.lastSeq}: duplicate or out of order`,
      );
    }
    this.lastSeq = rec.seq;
    this.applied += 1;
    this.reduce(rec);
    this.tail.push(rec);
    if (this.tail.length > TAIL_LIMIT) this.tail.shift();
  }

  private reduce(rec: EventRecord): void {
    const { kind, data } = rec;
    if (kind === "card_registered") {
      const uid = data.uid as string;
      this.cards.set(uid, {
        uid,
        holderName: data.holder_name as string,
        role: data.role as string,
        status: "active",
      });
      if (!this.balances.has(uid)) this.balances.set(uid, 0);
    } else if (kind === "card_revoked") {
      const row = this.cards.get(data.uid as string);
      if (row) row.status = "revoked";
    } else if (kind === "session_opened") {
      const sessionId = data.session_id as string;
      this.sessions.set(sessionId, {
        sessionId,
        course: data.course as string,
        open: true,
        accepted: new Set(),
      });
    } else if (kind === "session_closed") {
      const row = this.sessions.get(data.session_id as string);
      if (row) row.open = false;
    } else if (kind === "attendance_accepted") {
      const row = this.sessions.get(data.session_id as string);
      if (row) row.accepted.add(data.uid as string);
    } else if (kind === "topup" || kind === "charge") {
      this.balances.set(data.uid as string, data.balance_minor as number);
    } else if (kind === "device_connected") {
      const deviceId = data.device_id as string;
      const deviceKind = data.kind as string;
      this.devices.set(deviceId, deviceKind);
      if (deviceKind === "door") {
        const panel = this.doors.get(deviceId);
        if (panel) {
          panel.connected = true;
        } else {
          this.doors.set(deviceId, {
            doorId: deviceId,
            mode: "locked",
            connected: true,
            lastKind: "device_connected",
            lastTs: rec.ts,
          });
        }
      }
    } else if (kind === "device_disconnected") {
      const deviceId = data.device_id as string;
      this.devices.delete(deviceId);
      const panel = this.doors.get(deviceId);
      if (panel) panel.connected = false;
    } else if (kind in DOOR_MODE_BY_KIND) {
      const panel = this.doors.get(rec.source) ?? {
        doorId: rec.source,
        mode: "locked" as DoorMode,
        connected: false,
        lastKind: kind,
        lastTs: rec.ts,
      };
      panel.mode = DOOR_MODE_BY_KIND[kind];
      panel.lastKind = kind;
      panel.lastTs = rec.ts;
      this.doors.set(rec.source, panel);
    }
    // Everything else (card_tap, sms_*, charge_denied, balance_mismatch,
    // door_command, protocol_error, attendance_duplicate/rejected) is an
    // audit record and only shows up in the tail.
  }
}
