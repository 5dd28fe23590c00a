// Typed client for the coordinator admin API. The console holds no state of
// its own: every fact on screen came out of one of these calls.

export interface SessionView {
  session_id: string;
  kind: string;
  state: string;
  reason: string | null;
  port: number | null;
  current_round: number;
  rounds: number;
  last_global_loss: number | null;
  n_clients_joined: number;
  task_label: string | null;
  model_id: string | null;
  model_version: number | null;
  query_id: string | null;
}

export interface RoundRecord {
  session_id: string;
  round: number;
  n_selected: number;
  n_completed: number;
  global_loss: number | null;
  started_at: number;
  ended_at: number;
}

export interface ModelView {
  model_id: string;
  version: number;
  status: string;
  uploaded_at: number;
  arch: Record<string, unknown>;
  n_params: number;
}

export interface HeavyHitterResult {
  query_id: string;
  kind: string;
  per_cluster: { cluster: string; top: { bucket: number; estimate: number }[] }[];
  n_reports: number;
}

export interface DpMeanResult {
  query_id: string;
  kind: string;
  value: number;
  n_reports: number;
}

export interface SessionCreateRequest {
  kind: "FL" | "FA";
  session_id?: string;
  model_id?: string;
  model_version?: number;
  query?: Record<string, unknown>;
  task_label?: string;
  rounds?: number;
  min_clients?: number;
  client_fraction?: number;
  round_timeout?: number;
  hyperparams?: { learning_rate: number; epochs: number; batch_size?: number | null; seed: number };
  dp?: {
    enabled: boolean;
    clip_norm?: number;
    epsilon?: number;
    delta?: number;
    sigma_override?: number | null;
  };
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`API ${status}: ${detail}`);
  }
}

function detailText(body: unknown): string {
  if (body && typeof body === "object" && "detail" in body) {
    const detail = (body as { detail: unknown }).detail;
    return typeof detail === "string" ? detail : JSON.stringify(detail);
  }
  return JSON.stringify(body);
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    const body = response.status === 204 ? null : await response.json().catch(() => null);
    if (!response.ok) {
      throw new ApiError(response.status, detailText(body));
    }
    return body as T;
  }

  health(): Promise<{ status: string; live_sessions: number }> {
    return this.request("/api/health");
  }

  listSessions(): Promise<SessionView[]> {
    return this.request("/api/sessions");
  }

  getSession(id: string): Promise<SessionView> {
    return this.request(`/api/sessions/${encodeURIComponent(id)}`);
  }

  stopSession(id: string): Promise<SessionView> {
    return this.request(`/api/sessions/${encodeURIComponent(id)}/stop`, { method: "POST" });
  }

  rounds(id: string): Promise<RoundRecord[]> {
    return this.request(`/api/sessions/${encodeURIComponent(id)}/rounds`);
  }

  listModels(): Promise<ModelView[]> {
    return this.request("/api/models");
  }

  registerModel(document: unknown): Promise<{ model_id: string; version: number }> {
    return this.request("/api/models", { method: "POST", body: JSON.stringify(document) });
  }

  createSession(body: SessionCreateRequest): Promise<Record<string, unknown>> {
    return this.request("/api/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  queryResult(queryId: string): Promise<HeavyHitterResult | DpMeanResult> {
    return this.request(`/api/queries/${encodeURIComponent(queryId)}/result`);
  }
}
