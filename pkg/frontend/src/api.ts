/** Typed client for the planning service. All modeling stays server-side. */

export interface Roi {
  region_id: string;
  rect: [number, number, number, number];
}

export interface SessionSnapshot {
  session_id: string;
  patient_id: string;
  alpha: number[];
  dose: number[];
  residual?: number;
  m_src: number[];
  metrics: number[];
  source_landmarks: number[][];
  landmarks: number[][];
  rois: Roi[];
  history: unknown[];
}

export interface AdjustResponse {
  session_id: string;
  dose_estimate: number[];
  residual: number;
  metrics: number[];
  landmarks: number[][];
}

export interface FeedbackResponse {
  feedback_id: string;
  late?: boolean;
  duplicate?: boolean;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  field: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: ApiErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
  }
}

/** Minimal fetch signature so tests can inject fakes and fault injectors. */
export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{ status: number; json(): Promise<unknown> }>;

export class PlannerApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await res.json();
    if (res.status >= 400) {
      throw new ApiError(res.status, payload as ApiErrorBody);
    }
    return payload as T;
  }

  createSession(patientId: string, dose?: number[]): Promise<SessionSnapshot> {
    return this.request("POST", `/patients/${patientId}/sessions`, dose ? { dose } : {});
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  adjust(sessionId: string, alpha: number[]): Promise<AdjustResponse> {
    return this.request("POST", `/sessions/${sessionId}/adjust`, { alpha });
  }

  submitFeedback(
    sessionId: string,
    payload: {
      u_new: number[];
      outcome_metrics: number[];
      accepted: boolean;
      note?: string;
      client_ref?: string;
    },
  ): Promise<FeedbackResponse> {
    return this.request("POST", `/sessions/${sessionId}/feedback`, payload);
  }
}
