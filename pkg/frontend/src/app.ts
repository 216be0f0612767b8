// Page orchestration, injectable for tests: the app takes an API client and
// a stream factory and renders into a root element.

import { CoordinatorApi, ApiError } from "./api.js";
import { eventCard, eventForm, fleetTable } from "./components.js";
import { buildHeatmapModel, renderHeatmap, type HeatField } from "./heatmap.js";
import {
  applyFrame,
  initialState,
  orderedEvents,
  setAgents,
  upsertEvent,
  type FleetState,
} from "./state.js";
import type { StreamFrame } from "./types.js";

export interface StreamHandle {
  connect(): void;
  close(): void;
}

export type StreamFactory = (
  onFrame: (frame: StreamFrame) => void,
  onStatus: (status: "connected" | "stale") => void,
) => StreamHandle;

export interface App {
  state: FleetState;
  refreshAgents(): Promise<void>;
  showProfile(agentId: string, field?: HeatField): Promise<void>;
  close(): void;
}

export function createApp(
  root: HTMLElement,
  api: CoordinatorApi,
  makeStream: StreamFactory,
): App {
  const state = initialState();
  root.innerHTML = `
    <div class="top">
      <section id="form-pane"><h2>Schedule event</h2></section>
      <section id="status-pane"><span id="stream-status" data-status="connecting">connecting</span>
        <em id="form-feedback"></em></section>
    </div>
    <section id="events-pane"><h2>DR events</h2><div id="cards"></div></section>
    <section id="fleet-pane"><h2>Fleet</h2><div id="fleet"></div></section>
    <section id="profile-pane"><h2>Power profile</h2><div id="heatmap"></div></section>
  `;
  const cards = root.querySelector("#cards") as HTMLElement;
  const fleet = root.querySelector("#fleet") as HTMLElement;
  const heatmapPane = root.querySelector("#heatmap") as HTMLElement;
  const streamStatus = root.querySelector("#stream-status") as HTMLElement;
  const feedback = root.querySelector("#form-feedback") as HTMLElement;

  function renderEvents(): void {
    cards.textContent = "";
    for (const event of orderedEvents(state).slice().reverse()) {
      cards.appendChild(eventCard(event));
    }
  }

  function renderFleet(): void {
    fleet.textContent = "";
    const rows = [...state.agents.values()];
    fleet.appendChild(fleetTable(rows, state.lastStatus));
    for (const row of fleet.querySelectorAll<HTMLTableRowElement>("tr[data-agent-id]")) {
      row.addEventListener("click", () => {
        void app.showProfile(row.dataset.agentId as string);
      });
    }
  }

  const form = eventForm((body) => {
    feedback.textContent = "";
    api
      .createEvent(body)
      .then((event) => {
        upsertEvent(state, event);
        renderEvents();
      })
      .catch((err: unknown) => {
        feedback.textContent =
          err instanceof ApiError ? err.message : `request failed: ${String(err)}`;
      });
  });
  (root.querySelector("#form-pane") as HTMLElement).appendChild(form);

  const stream = makeStream(
    (frame) => {
      applyFrame(state, frame);
      if (frame.type === "event_state") {
        renderEvents();
      } else {
        renderFleet();
      }
    },
    (status) => {
      streamStatus.dataset.status = status;
      streamStatus.textContent = status === "connected" ? "live" : "stale, reconnecting";
      if (status === "connected") {
        void app.refreshAgents();
      }
    },
  );

  const app: App = {
    state,
    async refreshAgents() {
      setAgents(state, await api.agents());
      renderFleet();
    },
    async showProfile(agentId, field = "mean_power_normal") {
      const snapshot = await api.profiles(agentId);
      renderHeatmap(heatmapPane, buildHeatmapModel(snapshot.power_slots, field));
      heatmapPane.dataset.agentId = agentId;
    },
    close() {
      stream.close();
    },
  };

  stream.connect();
  return app;
}
