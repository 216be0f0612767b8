// Pure client state: a fold over API responses and stream frames.
// Event records are replaced wholesale by event_state frames, so a card can
// never show a transition the coordinator did not emit.

import type { AgentRow, AgentStatus, EventRecord, StreamFrame } from "./types.js";

export interface FleetState {
  agents: Map<string, AgentRow>;
  lastStatus: Map<string, AgentStatus>;
  events: Map<string, EventRecord>;
  eventOrder: string[];
  lastSeq: number | null;
  missedFrames: number;
}

export function initialState(): FleetState {
  return {
    agents: new Map(),
    lastStatus: new Map(),
    events: new Map(),
    eventOrder: [],
    lastSeq: null,
    missedFrames: 0,
  };
}

export function setAgents(state: FleetState, rows: AgentRow[]): FleetState {
  state.agents = new Map(rows.map((r) => [r.agent_id, r]));
  return state;
}

export function upsertEvent(state: FleetState, event: EventRecord): FleetState {
  if (!state.events.has(event.event_id)) {
    state.eventOrder.push(event.event_id);
  }
  state.events.set(event.event_id, event);
  return state;
}

export function applyFrame(state: FleetState, frame: StreamFrame): FleetState {
  if (state.lastSeq !== null && frame.seq > state.lastSeq + 1) {
    state.missedFrames += frame.seq - state.lastSeq - 1;
  }
  state.lastSeq = Math.max(state.lastSeq ?? 0, frame.seq);
  if (frame.type === "event_state") {
    upsertEvent(state, frame.data);
  } else {
    const status = frame.data;
    state.lastStatus.set(status.agent_id, status);
    const row = state.agents.get(status.agent_id);
    if (row !== undefined) {
      row.last_heartbeat_ms = Math.max(row.last_heartbeat_ms, status.at_ms);
      row.online = true;
    }
  }
  return state;
}

export function orderedEvents(state: FleetState): EventRecord[] {
  return state.eventOrder
    .map((id) => state.events.get(id))
    .filter((e): e is EventRecord => e !== undefined);
}
