/** Wire types of the retrieval service (verbatim JSON field names). */

export interface QueryResult {
  id: string;
  score: number;
  text_snippet: string;
  preview_url: string;
}

export interface QueryResponse {
  results: QueryResult[];
  model_version: string;
  latency_ms: number;
}
