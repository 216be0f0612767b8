// DOM builders for the event form, event cards, and the fleet table.

import type { AgentStatus, AgentRow, EventRecord, EventRequestBody } from "./types.js";

export interface FormErrors {
  [field: string]: string;
}

export function validateEventInput(raw: {
  lat: string;
  lon: string;
  reduction_w: string;
  duration_min: string;
  start: string;
}): { body?: EventRequestBody; errors: FormErrors } {
  const errors: FormErrors = {};
  const lat = Number(raw.lat);
  const lon = Number(raw.lon);
  const reduction = Number(raw.reduction_w);
  const duration = Number(raw.duration_min);
  if (!Number.isFinite(lat) || Math.abs(lat) > 90) {
    errors.lat = "latitude must lie in [-90, 90]";
  }
  if (!Number.isFinite(lon) || Math.abs(lon) > 180) {
    errors.lon = "longitude must lie in [-180, 180]";
  }
  if (!Number.isFinite(reduction) || reduction <= 0) {
    errors.reduction_w = "requested reduction must be positive watts";
  }
  if (!Number.isFinite(duration) || duration <= 0) {
    errors.duration_min = "duration must be positive minutes";
  }
  let start: "immediate" | number = "immediate";
  if (raw.start.trim() !== "" && raw.start.trim() !== "immediate") {
    const ms = Number(raw.start);
    if (!Number.isFinite(ms) || ms < 0) {
      errors.start = "start must be 'immediate' or epoch milliseconds";
    } else {
      start = Math.round(ms);
    }
  }
  if (Object.keys(errors).length > 0) {
    return { errors };
  }
  return {
    body: { lat, lon, reduction_w: reduction, duration_min: duration, start },
    errors: {},
  };
}

function field(name: string, label: string, value: string): HTMLElement {
  const wrap = document.createElement("label");
  wrap.className = "field";
  const span = document.createElement("span");
  span.textContent = label;
  const input = document.createElement("input");
  input.name = name;
  input.value = value;
  const error = document.createElement("em");
  error.className = "field-error";
  error.dataset.for = name;
  wrap.append(span, input, error);
  return wrap;
}

export function eventForm(onSubmit: (body: EventRequestBody) => void): HTMLFormElement {
  const form = document.createElement("form");
  form.className = "event-form";
  form.append(
    field("lat", "Turbine latitude", "48.2650"),
    field("lon", "Turbine longitude", "11.6710"),
    field("reduction_w", "Reduction (W)", "10"),
    field("duration_min", "Duration (min)", "5"),
    field("start", "Start (immediate | epoch ms)", "immediate"),
  );
  const submit = document.createElement("button");
  submit.type = "submit";
  submit.textContent = "Schedule DR event";
  form.appendChild(submit);

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const read = (name: string) =>
      (form.querySelector(`input[name=${name}]`) as HTMLInputElement).value;
    const { body, errors } = validateEventInput({
      lat: read("lat"),
      lon: read("lon"),
      reduction_w: read("reduction_w"),
      duration_min: read("duration_min"),
      start: read("start"),
    });
    for (const el of form.querySelectorAll<HTMLElement>(".field-error")) {
      el.textContent = errors[el.dataset.for ?? ""] ?? "";
    }
    if (body !== undefined) {
      onSubmit(body);
    }
  });
  return form;
}

function badge(text: string, kind: string): HTMLElement {
  const el = document.createElement("span");
  el.className = `badge badge-${kind}`;
  el.textContent = text;
  return el;
}

function formatMs(value: number | null): string {
  return value === null ? "-" : `${value} ms`;
}

export function eventCard(event: EventRecord): HTMLElement {
  const card = document.createElement("article");
  card.className = "event-card";
  card.dataset.eventId = event.event_id;
  card.dataset.state = event.state;

  const head = document.createElement("header");
  const title = document.createElement("strong");
  title.textContent = `${event.event_id} - ${event.requested_reduction_w} W for ${event.duration_min} min`;
  head.append(title, badge(event.state, event.state));
  if (event.under_supplied) {
    head.appendChild(badge("under-supplied", "warn"));
  }
  if (event.partial_participation) {
    head.appendChild(badge("partial participation", "warn"));
  }
  if (event.outcome !== null) {
    head.appendChild(badge(event.outcome, "muted"));
  }
  card.appendChild(head);

  const latencies = document.createElement("p");
  latencies.className = "latencies";
  latencies.textContent =
    `scheduling ${formatMs(event.schedule_latency_ms)}, ` +
    `all-join ${formatMs(event.join_latency_ms)}`;
  card.appendChild(latencies);

  const list = document.createElement("ul");
  list.className = "selected-agents";
  for (const selected of event.selected) {
    const item = document.createElement("li");
    const joined = selected.agent_id in event.joins;
    const declined = selected.agent_id in event.declines;
    const left = selected.agent_id in event.leaves;
    const mark = declined ? "declined" : left ? "left" : joined ? "joined" : "pending";
    item.textContent =
      `${selected.agent_id}: ${selected.estimated_contribution_w.toFixed(2)} W (${mark})`;
    list.appendChild(item);
  }
  card.appendChild(list);
  return card;
}

export function fleetTable(
  agents: AgentRow[],
  lastStatus: Map<string, AgentStatus>,
): HTMLTableElement {
  const table = document.createElement("table");
  table.className = "fleet";
  const thead = document.createElement("thead");
  const headRow = document.createElement("tr");
  for (const column of ["agent", "os", "online", "last status", "committed event", "last heartbeat"]) {
    const th = document.createElement("th");
    th.textContent = column;
    headRow.appendChild(th);
  }
  thead.appendChild(headRow);
  table.appendChild(thead);

  const tbody = document.createElement("tbody");
  const cell = (row: HTMLElement, text: string, className?: string) => {
    const td = document.createElement("td");
    td.textContent = text;
    if (className !== undefined) td.className = className;
    row.appendChild(td);
  };
  for (const agent of agents) {
    const row = document.createElement("tr");
    row.dataset.agentId = agent.agent_id;
    const status = lastStatus.get(agent.agent_id);
    cell(row, agent.agent_id);
    cell(row, agent.os);
    cell(row, agent.online ? "online" : "offline");
    cell(row, status ? status.status : "-", "agent-status");
    cell(row, agent.committed_event ?? "-");
    cell(row, new Date(agent.last_heartbeat_ms).toISOString());
    tbody.appendChild(row);
  }
  table.appendChild(tbody);
  return table;
}
