/** In-memory fetch implementation of the synthesis service contract, with a
 * canned PNG payload, so the editor is fully testable without a model. */

import { FetchLike, ModelInfo } from "./api.js";

// 1x1 black pixel; any valid PNG works for contract purposes
export const CANNED_PNG =
  "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mP8z8BQDwAEhQGAhKmMIQAAAABJRU5ErkJggg==";

export interface MockServerOptions {
  modelInfo?: Partial<ModelInfo>;
  /** called before every /synthesize response; throwing fails that request */
  onSynthesize?: (label: number[], count: number) => void;
  /** fail the nth synthesize call (0-based) with a 500 */
  failCalls?: Set<number>;
}

export interface MockServer {
  fetch: FetchLike;
  requests: { url: string; label?: number[] }[];
  synthesizeCount: number;
}

const DEFAULT_INFO: ModelInfo = {
  label_mode: "au",
  label_dim: 12,
  skip_position: "p2",
  z_dim: 100,
  checkpoint_hash: "0".repeat(64),
};

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function errorBody(code: string, message: string) {
  return { error: { code, message } };
}

export function createMockServer(options: MockServerOptions = {}): MockServer {
  const info: ModelInfo = { ...DEFAULT_INFO, ...options.modelInfo };
  const server: MockServer = { requests: [], synthesizeCount: 0, fetch: undefined as unknown as FetchLike };

  server.fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    if (url.endsWith("/health")) {
      return json(200, { status: "ok" });
    }
    if (url.endsWith("/model/info")) {
      server.requests.push({ url });
      return json(200, info);
    }
    if (url.endsWith("/synthesize")) {
      const index = server.synthesizeCount++;
      const body = JSON.parse(String(init?.body ?? "{}")) as { image?: string; label?: number[] };
      server.requests.push({ url, label: body.label });
      if (typeof body.image !== "string" || body.image.length === 0) {
        return json(400, errorBody("bad_image", "image is not decodable base64 PNG data"));
      }
      if (!Array.isArray(body.label) || body.label.length !== info.label_dim) {
        return json(
          400,
          errorBody("label_length", `expected ${info.label_dim} label entries, got ${body.label?.length ?? 0}`),
        );
      }
      if (body.label.some((v) => v < 0 || v > 1)) {
        return json(400, errorBody("label_range", "label entries must lie in [0, 1]"));
      }
      if (options.failCalls?.has(index)) {
        return json(500, errorBody("numeric_error", "synthetic failure"));
      }
      options.onSynthesize?.(body.label, index);
      return json(200, { image: CANNED_PNG, latency_ms: 1.5, model_info: info });
    }
    return json(404, errorBody("not_found", url));
  };
  return server;
}
