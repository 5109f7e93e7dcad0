/** Thin typed client over the engine's /v1 endpoints.
 *
 * Responses are returned exactly as the server sent them; no value is
 * recomputed client-side. `fetchFn` is injectable so contract tests can
 * replay recorded conversations without a network.
 */

import type {
  AnnotateResponse,
  DatasetsResponse,
  ImagesResponse,
  LayerGroup,
  MetricsResponse,
  OverlayResponse,
  ParseResponse,
  RectJson,
  SessionResponse,
} from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    // surface the server's message verbatim, including any field path
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: "GET" | "POST", path: string, body?: unknown, params?: Record<string, string>): Promise<T> {
    let url = this.baseUrl + path;
    if (params && Object.keys(params).length > 0) {
      url += "?" + new URLSearchParams(params).toString();
    }
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(url, init);
    const payload = await response.json().catch(() => null);
    if (!response.ok) {
      throw new ApiError(response.status, payload?.detail ?? payload);
    }
    return payload as T;
  }

  listDatasets(): Promise<DatasetsResponse> {
    return this.request("GET", "/v1/datasets");
  }

  listImages(datasetId: string): Promise<ImagesResponse> {
    return this.request("GET", `/v1/datasets/${datasetId}/images`);
  }

  createSession(manifest: string, aog: string): Promise<SessionResponse> {
    return this.request("POST", "/v1/sessions", { manifest, aog });
  }

  getSession(sessionId: string): Promise<SessionResponse> {
    return this.request("GET", `/v1/sessions/${sessionId}`);
  }

  parseImage(sessionId: string, imageId: string): Promise<ParseResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/parse`, { image_id: imageId });
  }

  overlay(sessionId: string, imageId: string, group: LayerGroup): Promise<OverlayResponse> {
    return this.request("GET", `/v1/sessions/${sessionId}/overlay/${imageId}`, undefined, { group });
  }

  annotate(
    sessionId: string,
    imageId: string,
    rectangles: RectJson[],
    scope: LayerGroup,
  ): Promise<AnnotateResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/annotate`, {
      image_id: imageId,
      rectangles,
      scope,
    });
  }

  prune(sessionId: string, patternIds: string[]): Promise<SessionResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/prune`, { pattern_ids: patternIds });
  }

  undo(sessionId: string, k: number): Promise<SessionResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/undo`, { k });
  }

  metrics(sessionId: string): Promise<MetricsResponse> {
    return this.request("GET", `/v1/sessions/${sessionId}/metrics`);
  }
}
