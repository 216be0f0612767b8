// Scripted coordinator fixture: canned HTTP responses and a driveable
// fake stream, so UI tests run with no live backend.

import type { StreamHandle } from "../src/app.js";
import type {
  AgentRow,
  EventRecord,
  PowerSlot,
  ProfileSnapshot,
  StreamFrame,
} from "../src/types.js";

export function agentRow(id: string, os = "ubuntu"): AgentRow {
  return {
    agent_id: id,
    os,
    utc_offset_min: 0,
    last_heartbeat_ms: 1_000_000,
    online: true,
    committed_event: null,
  };
}

export function eventRecord(overrides: Partial<EventRecord> = {}): EventRecord {
  return {
    event_id: "ev-0001",
    turbine: { lat: 48.265, lon: 11.671 },
    requested_reduction_w: 10,
    duration_min: 5,
    start_ms: 1_000_000,
    requested_at_ms: 1_000_000,
    published_at_ms: 1_000_000,
    state: "scheduled",
    selected: [
      { agent_id: "lap-a", estimated_contribution_w: 6.5 },
      { agent_id: "lap-b", estimated_contribution_w: 4.2 },
    ],
    schedule_latency_ms: 12,
    join_latency_ms: null,
    under_supplied: false,
    partial_participation: false,
    outcome: null,
    joins: {},
    leaves: {},
    declines: {},
    ...overrides,
  };
}

export function fullPowerSlots(): PowerSlot[] {
  const slots: PowerSlot[] = [];
  for (let weekday = 0; weekday < 7; weekday++) {
    for (let minute = 0; minute < 1440; minute++) {
      slots.push({
        weekday,
        minute_of_day: minute,
        p_running: 0.5,
        p_app_running: 0.5,
        p_plugged: 0.5,
        mean_power_normal: 20 + 10 * Math.sin((minute / 1440) * 2 * Math.PI) + weekday,
        mean_power_save: 18 + 8 * Math.sin((minute / 1440) * 2 * Math.PI) + weekday,
      });
    }
  }
  return slots;
}

export function profileSnapshot(agentId: string): ProfileSnapshot {
  return {
    agent_id: agentId,
    utc_offset_min: 0,
    power_slots: fullPowerSlots(),
    location_slots: [],
    updated_at: 1_000_000,
  };
}

export interface ScriptedCoordinator {
  fetchFn: (url: string, init?: RequestInit) => Promise<Response>;
  requests: { url: string; init?: RequestInit }[];
}

export function scriptedCoordinator(options: {
  agents?: AgentRow[];
  createEvent?: () => EventRecord;
  profiles?: (agentId: string) => ProfileSnapshot;
}): ScriptedCoordinator {
  const requests: { url: string; init?: RequestInit }[] = [];
  const json = (body: unknown, status = 200) =>
    new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });

  async function fetchFn(url: string, init?: RequestInit): Promise<Response> {
    requests.push({ url, init });
    if (url.endsWith("/agents")) {
      return json(options.agents ?? []);
    }
    if (url.includes("/agents/") && url.endsWith("/profiles")) {
      const id = decodeURIComponent(url.split("/agents/")[1].split("/")[0]);
      const make = options.profiles;
      if (make === undefined) return json({ detail: "no such agent" }, 404);
      return json(make(id));
    }
    if (url.endsWith("/events") && init?.method === "POST") {
      const make = options.createEvent;
      if (make === undefined) return json({ detail: "rejected" }, 422);
      return json(make());
    }
    return json({ detail: `unscripted ${url}` }, 404);
  }
  return { fetchFn, requests };
}

export class FakeStream implements StreamHandle {
  connected = false;
  private seq = 0;

  constructor(
    private onFrame: (frame: StreamFrame) => void,
    private onStatus: (status: "connected" | "stale") => void,
  ) {}

  connect(): void {
    this.connected = true;
    this.onStatus("connected");
  }

  close(): void {
    this.connected = false;
  }

  drop(): void {
    this.onStatus("stale");
  }

  push(frame: Omit<StreamFrame, "seq">): void {
    this.seq += 1;
    this.onFrame({ ...frame, seq: this.seq } as StreamFrame);
  }
}
