import { describe, expect, it } from "vitest";

import { QuerySession } from "../src/session";
import { BOX_QUERY, CYL_QUERY, MockTransport, RESPONSES } from "./fixtures";

describe("QuerySession", () => {
  it("appends successful queries to history with the verbatim response", async () => {
    const transport = new MockTransport();
    const session = new QuerySession(transport);
    const entry = await session.submit(CYL_QUERY, 3);
    expect(entry.status).toBe("ok");
    expect(session.history).toHaveLength(1);
    expect(entry.response).toEqual(RESPONSES[CYL_QUERY]);
    expect(transport.calls).toEqual([{ text: CYL_QUERY, k: 3 }]);
  });

  it("history is append-only across submissions", async () => {
    const transport = new MockTransport();
    const session = new QuerySession(transport);
    await session.submit(CYL_QUERY, 3);
    const first = session.history[0];
    await session.submit(BOX_QUERY, 3);
    expect(session.history).toHaveLength(2);
    expect(session.history[0]).toBe(first); // same object, untouched
    expect(session.history[0].response).toEqual(RESPONSES[CYL_QUERY]);
  });

  it("keeps failed requests in history with the error", async () => {
    const transport = new MockTransport();
    transport.failNext = true;
    const session = new QuerySession(transport);
    const entry = await session.submit(CYL_QUERY, 3);
    expect(entry.status).toBe("failed");
    expect(entry.error).toContain("service unavailable");
    expect(session.history).toHaveLength(1);
  });

  it("retry resubmits the same query as a new entry", async () => {
    const transport = new MockTransport();
    transport.failNext = true;
    const session = new QuerySession(transport);
    await session.submit(CYL_QUERY, 5);
    const entry = await session.retry(0);
    expect(entry.status).toBe("ok");
    expect(session.history).toHaveLength(2);
    expect(transport.calls[1]).toEqual({ text: CYL_QUERY, k: 5 });
  });

  it("drops stale responses superseded by a newer sequence number", async () => {
    const transport = new MockTransport();
    transport.manual = true;
    const session = new QuerySession(transport);
    const first = session.submit(CYL_QUERY, 3);
    const second = session.submit(BOX_QUERY, 3);
    // resolve in reverse order: the newer query lands first
    transport.release(1);
    const newer = await second;
    expect(newer.status).toBe("ok");
    transport.release(0);
    const older = await first;
    expect(older.status).toBe("stale");
    expect(older.response).toBeUndefined(); // payload dropped
    expect(session.history.map((e) => e.status)).toEqual(["stale", "ok"]);
  });

  it("reports at most one in-flight query", async () => {
    const transport = new MockTransport();
    transport.manual = true;
    const session = new QuerySession(transport);
    const pending = session.submit(CYL_QUERY, 3);
    expect(session.inFlight).toBe(true);
    transport.release();
    await pending;
    expect(session.inFlight).toBe(false);
  });

  it("compare selection requires two successful entries", async () => {
    const transport = new MockTransport();
    const session = new QuerySession(transport);
    await session.submit(CYL_QUERY, 3);
    expect(session.setCompare(0, 1)).toBe(false);
    expect(session.diffHighlight).toBeNull();
    await session.submit(BOX_QUERY, 3);
    expect(session.setCompare(0, 1)).toBe(true);
    expect(session.diffHighlight).toEqual([0, 1]);
  });
});
