import type { QueryResponse } from "./types";

/**
 * Transport to the retrieval service. The workbench never computes scores;
 * it renders exactly what this interface returns. Tests substitute a mock.
 */
export interface Transport {
  postQuery(text: string, k: number): Promise<QueryResponse>;
  fetchPoints(id: string): Promise<Float32Array>;
}

export class HttpTransport implements Transport {
  constructor(private baseUrl: string = "") {}

  async postQuery(text: string, k: number): Promise<QueryResponse> {
    const resp = await fetch(`${this.baseUrl}/query`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text, k }),
    });
    if (!resp.ok) {
      const detail = await resp.text().catch(() => "");
      throw new Error(`query failed (${resp.status}): ${detail}`);
    }
    return (await resp.json()) as QueryResponse;
  }

  async fetchPoints(id: string): Promise<Float32Array> {
    const resp = await fetch(`${this.baseUrl}/model/${encodeURIComponent(id)}/points`);
    if (!resp.ok) {
      throw new Error(`points fetch failed (${resp.status})`);
    }
    return new Float32Array(await resp.arrayBuffer());
  }
}
