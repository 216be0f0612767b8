// Wire formats of the coordinator HTTP API and /stream WebSocket.

export interface AgentRow {
  agent_id: string;
  os: string;
  utc_offset_min: number;
  last_heartbeat_ms: number;
  online: boolean;
  committed_event: string | null;
}

export interface SelectedAgent {
  agent_id: string;
  estimated_contribution_w: number;
}

export type EventState = "scheduled" | "active" | "completed" | "aborted";

export interface EventRecord {
  event_id: string;
  turbine: { lat: number; lon: number };
  requested_reduction_w: number;
  duration_min: number;
  start_ms: number;
  requested_at_ms: number;
  published_at_ms: number | null;
  state: EventState;
  selected: SelectedAgent[];
  schedule_latency_ms: number | null;
  join_latency_ms: number | null;
  under_supplied: boolean;
  partial_participation: boolean;
  outcome: string | null;
  joins: Record<string, number>;
  leaves: Record<string, number>;
  declines: Record<string, number>;
}

export interface AgentStatus {
  agent_id: string;
  status: string;
  at_ms: number;
  event_id?: string;
}

export type StreamFrame =
  | { seq: number; type: "event_state"; data: EventRecord }
  | { seq: number; type: "agent_status"; data: AgentStatus };

export interface PowerSlot {
  weekday: number;
  minute_of_day: number;
  p_running: number;
  p_app_running: number;
  p_plugged: number;
  mean_power_normal: number;
  mean_power_save: number;
}

export interface LocationSlot {
  weekday: number;
  quarter_of_day: number;
  latitude: number;
  longitude: number;
  accuracy: number;
  zip: string;
  p_present: number;
}

export interface ProfileSnapshot {
  agent_id: string;
  utc_offset_min: number;
  power_slots: PowerSlot[];
  location_slots: LocationSlot[];
  updated_at: number;
}

export interface EventRequestBody {
  lat: number;
  lon: number;
  reduction_w: number;
  duration_min: number;
  start: "immediate" | number;
}
