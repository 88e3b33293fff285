/** Typed client for the synthesis service HTTP contract. */

export interface ModelInfo {
  label_mode: "au" | "emotion";
  label_dim: number;
  skip_position: string;
  z_dim: number;
  checkpoint_hash: string;
}

export interface SynthesisRequest {
  image: string; // base64 PNG
  label: number[];
}

export interface SynthesisResponse {
  image: string; // base64 PNG, 32x32
  latency_ms: number;
  model_info: ModelInfo;
}

export interface ErrorBody {
  error: { code: string; message: string };
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseError(response: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${response.status}`;
  try {
    const body = (await response.json()) as ErrorBody;
    if (body.error) {
      code = body.error.code;
      message = body.error.message;
    }
  } catch {
    // non-JSON error body: keep the status text
  }
  return new ApiError(response.status, code, message);
}

export class InferenceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async modelInfo(): Promise<ModelInfo> {
    const response = await this.fetchFn(`${this.baseUrl}/model/info`);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as ModelInfo;
  }

  async synthesize(request: SynthesisRequest): Promise<SynthesisResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/synthesize`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as SynthesisResponse;
  }
}
