import type { Transport } from "../src/api";
import type { QueryResponse } from "../src/types";

/** Canned service fixture: the two-wording demo gallery. */
export const CYL_QUERY = "a small cylindrical base with holes";
export const BOX_QUERY = "a small rectangular base with holes";

export const RESPONSES: Record<string, QueryResponse> = {
  [CYL_QUERY]: {
    results: [
      { id: "cyl-07", score: 0.9137, text_snippet: "a turned cylindrical base", preview_url: "/model/cyl-07/points" },
      { id: "cyl-12", score: 0.8712, text_snippet: "a tall cylindrical barrel", preview_url: "/model/cyl-12/points" },
      { id: "box-03", score: 0.4421, text_snippet: "a flat rectangular plate", preview_url: "/model/box-03/points" },
    ],
    model_version: "fixture0000000001",
    latency_ms: 3.2,
  },
  [BOX_QUERY]: {
    results: [
      { id: "box-03", score: 0.8925, text_snippet: "a flat rectangular plate", preview_url: "/model/box-03/points" },
      { id: "box-19", score: 0.8344, text_snippet: "a broad rectangular block", preview_url: "/model/box-19/points" },
      { id: "cyl-07", score: 0.4102, text_snippet: "a turned cylindrical base", preview_url: "/model/cyl-07/points" },
    ],
    model_version: "fixture0000000001",
    latency_ms: 2.9,
  },
};

interface Deferred {
  text: string;
  resolve: (r: QueryResponse) => void;
  reject: (e: Error) => void;
}

export class MockTransport implements Transport {
  calls: Array<{ text: string; k: number }> = [];
  failNext = false;
  manual = false;
  pending: Deferred[] = [];

  postQuery(text: string, k: number): Promise<QueryResponse> {
    this.calls.push({ text, k });
    if (this.failNext) {
      this.failNext = false;
      return Promise.reject(new Error("service unavailable"));
    }
    if (this.manual) {
      return new Promise((resolve, reject) => {
        this.pending.push({ text, resolve, reject });
      });
    }
    return Promise.resolve(this.respond(text, k));
  }

  respond(text: string, k: number): QueryResponse {
    const canned = RESPONSES[text];
    if (!canned) {
      return {
        results: Array.from({ length: k }, (_, i) => ({
          id: `misc-${i}`,
          score: 0.5 - i * 0.01,
          text_snippet: `filler item ${i}`,
          preview_url: `/model/misc-${i}/points`,
        })),
        model_version: "fixture0000000001",
        latency_ms: 1.0,
      };
    }
    return { ...canned, results: canned.results.slice(0, k) };
  }

  /** Resolve the oldest manually-held request with its canned response. */
  release(index = 0): void {
    const deferred = this.pending.splice(index, 1)[0];
    deferred.resolve(this.respond(deferred.text, 10));
  }

  fetchPoints(id: string): Promise<Float32Array> {
    void id;
    return Promise.resolve(new Float32Array([0, 0, 0, 1, 1, 1]));
  }
}
