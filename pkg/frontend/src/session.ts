import type { Transport } from "./api";
import type { QueryResponse } from "./types";

export type EntryStatus = "pending" | "ok" | "failed" | "stale";

export interface HistoryEntry {
  seq: number;
  text: string;
  k: number;
  status: EntryStatus;
  response?: QueryResponse;
  error?: string;
}

/**
 * Query session state. History is append-only: entries are never removed,
 * only their status advances (pending -> ok | failed | stale). A response
 * is applied only when its request is still the latest submission; anything
 * superseded by a newer sequence number is dropped as stale, so at most one
 * query is ever live on screen.
 */
export class QuerySession {
  readonly history: HistoryEntry[] = [];
  activeK = 10;
  diffHighlight: [number, number] | null = null;
  private nextSeq = 0;

  constructor(private transport: Transport) {}

  get latestSeq(): number {
    return this.nextSeq - 1;
  }

  get inFlight(): boolean {
    return this.history.some((e) => e.status === "pending" && e.seq === this.latestSeq);
  }

  async submit(text: string, k: number = this.activeK): Promise<HistoryEntry> {
    const entry: HistoryEntry = { seq: this.nextSeq++, text, k, status: "pending" };
    this.history.push(entry);
    try {
      const response = await this.transport.postQuery(text, k);
      if (entry.seq !== this.latestSeq) {
        entry.status = "stale"; // superseded while in flight; drop the payload
        return entry;
      }
      entry.status = "ok";
      entry.response = response;
    } catch (err) {
      if (entry.seq !== this.latestSeq) {
        entry.status = "stale";
        return entry;
      }
      entry.status = "failed";
      entry.error = err instanceof Error ? err.message : String(err);
    }
    return entry;
  }

  /** Re-run a failed entry's query as a fresh submission. */
  retry(index: number): Promise<HistoryEntry> {
    const entry = this.history[index];
    return this.submit(entry.text, entry.k);
  }

  setCompare(i: number, j: number): boolean {
    const valid = (n: number) => n >= 0 && n < this.history.length && this.history[n].status === "ok";
    if (!valid(i) || !valid(j)) {
      this.diffHighlight = null;
      return false;
    }
    this.diffHighlight = [i, j];
    return true;
  }
}
