// Thin client over the coordinator HTTP API.  Every displayed value comes
// from these payloads or the stream; the UI computes nothing itself.

import type {
  AgentRow,
  EventRecord,
  EventRequestBody,
  ProfileSnapshot,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class CoordinatorApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `coordinator unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail ?? body);
      } catch {
        // keep statusText
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  agents(): Promise<AgentRow[]> {
    return this.request<AgentRow[]>("/agents");
  }

  profiles(agentId: string): Promise<ProfileSnapshot> {
    return this.request<ProfileSnapshot>(`/agents/${encodeURIComponent(agentId)}/profiles`);
  }

  event(eventId: string): Promise<EventRecord> {
    return this.request<EventRecord>(`/events/${encodeURIComponent(eventId)}`);
  }

  createEvent(body: EventRequestBody): Promise<EventRecord> {
    return this.request<EventRecord>("/events", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }
}
