import type {
  AnswerResponse,
  DifferenceResponse,
  HealthResponse,
  SessionResponse,
} from "./types.js";

/** Error raised for any non-2xx service response or network failure. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
    readonly retriable: boolean,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

/** Flatten a FastAPI error body into one display string. */
function normalizeDetail(body: unknown): string {
  if (body && typeof body === "object" && "detail" in body) {
    const detail = (body as { detail: unknown }).detail;
    if (typeof detail === "string") {
      return detail;
    }
    if (Array.isArray(detail)) {
      return detail
        .map((item) =>
          item && typeof item === "object" && "msg" in item
            ? String((item as { msg: unknown }).msg)
            : JSON.stringify(item),
        )
        .join("; ");
    }
  }
  return JSON.stringify(body);
}

export class ApiClient {
  /** Raw text of the most recent successful response body. */
  lastRawBody = "";

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (exc) {
      throw new ApiError(0, `service unreachable: ${String(exc)}`, true);
    }
    const text = await response.text();
    let body: unknown;
    try {
      body = JSON.parse(text);
    } catch {
      throw new ApiError(response.status, `response is not JSON: ${text}`, false);
    }
    if (!response.ok) {
      const retriable =
        body && typeof body === "object" && "retriable" in body
          ? Boolean((body as { retriable: unknown }).retriable)
          : false;
      throw new ApiError(response.status, normalizeDetail(body), retriable);
    }
    this.lastRawBody = text;
    return body as T;
  }

  async startConsultation(text: string): Promise<SessionResponse> {
    return await this.request<SessionResponse>("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ manifestation_text: text }),
    });
  }

  async answerQuestion(
    sessionId: string,
    questionId: string,
    affirmation: boolean,
  ): Promise<AnswerResponse> {
    return await this.request<AnswerResponse>(
      `/sessions/${encodeURIComponent(sessionId)}/answers`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ question_id: questionId, affirmation }),
      },
    );
  }

  async fetchDifferences(subcategory: string): Promise<DifferenceResponse> {
    return await this.request<DifferenceResponse>(
      `/kg/differences?subcategory=${encodeURIComponent(subcategory)}`,
    );
  }

  async health(): Promise<HealthResponse> {
    return await this.request<HealthResponse>("/health");
  }
}
