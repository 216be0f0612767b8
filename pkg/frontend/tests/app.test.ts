// Acceptance-grade UI tests against the scripted coordinator fixture.

import { beforeEach, describe, expect, it } from "vitest";

import { CoordinatorApi } from "../src/api.js";
import { createApp, type App } from "../src/app.js";
import {
  FakeStream,
  agentRow,
  eventRecord,
  profileSnapshot,
  scriptedCoordinator,
} from "./fixtures.js";

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

describe("admin app against a scripted coordinator", () => {
  let root: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = '<div id="app"></div>';
    root = document.getElementById("app") as HTMLElement;
  });

  function boot(script: ReturnType<typeof scriptedCoordinator>): {
    app: App;
    stream: FakeStream;
  } {
    let stream!: FakeStream;
    const api = new CoordinatorApi("http://test", script.fetchFn);
    const app = createApp(root, api, (onFrame, onStatus) => {
      stream = new FakeStream(onFrame, onStatus);
      return stream;
    });
    return { app, stream };
  }

  it("renders scheduled -> active -> completed live after an immediate submit", async () => {
    const script = scriptedCoordinator({
      agents: [agentRow("lap-a"), agentRow("lap-b", "windows")],
      createEvent: () => eventRecord({ state: "scheduled" }),
    });
    const { stream } = boot(script);
    await flush();

    const form = root.querySelector("form") as HTMLFormElement;
    (form.querySelector("input[name=reduction_w]") as HTMLInputElement).value = "10";
    form.dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
    await flush();

    const card = () => root.querySelector('[data-event-id="ev-0001"]') as HTMLElement;
    expect(card()).not.toBeNull();
    expect(card().dataset.state).toBe("scheduled");

    stream.push({
      type: "event_state",
      data: eventRecord({ state: "active", join_latency_ms: 18,
                          joins: { "lap-a": 1, "lap-b": 2 } }),
    });
    expect(card().dataset.state).toBe("active");
    expect(card().textContent).toContain("all-join 18 ms");

    stream.push({
      type: "event_state",
      data: eventRecord({ state: "completed", join_latency_ms: 18,
                          joins: { "lap-a": 1, "lap-b": 2 },
                          leaves: { "lap-a": 3, "lap-b": 4 } }),
    });
    expect(card().dataset.state).toBe("completed");
    // One card per event: transitions replace, never duplicate.
    expect(root.querySelectorAll("[data-event-id]").length).toBe(1);
  });

  it("fleet table matches GET /agents", async () => {
    const agents = [agentRow("lap-a"), agentRow("lap-b", "windows"), agentRow("lap-c")];
    const script = scriptedCoordinator({ agents });
    const { app } = boot(script);
    await app.refreshAgents();

    const rows = root.querySelectorAll("tr[data-agent-id]");
    expect(rows.length).toBe(agents.length);
    const ids = [...rows].map((r) => (r as HTMLElement).dataset.agentId);
    expect(ids).toEqual(agents.map((a) => a.agent_id));
    const cells = [...rows].map((r) => r.querySelectorAll("td")[1].textContent);
    expect(cells).toEqual(["ubuntu", "windows", "ubuntu"]);
  });

  it("profile heatmap renders exactly 10,080 cells", async () => {
    const script = scriptedCoordinator({
      agents: [agentRow("lap-a")],
      profiles: (id) => profileSnapshot(id),
    });
    const { app } = boot(script);
    await app.showProfile("lap-a");

    expect(root.querySelectorAll(".hm-cell").length).toBe(10_080);
    expect(root.querySelectorAll(".hm-row").length).toBe(7);
  });

  it("invalid reduction renders inline error and sends no request", async () => {
    const script = scriptedCoordinator({ agents: [] });
    boot(script);
    await flush();
    const posted = () =>
      script.requests.filter((r) => r.init?.method === "POST").length;

    const form = root.querySelector("form") as HTMLFormElement;
    (form.querySelector("input[name=reduction_w]") as HTMLInputElement).value = "-5";
    form.dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
    await flush();

    const error = form.querySelector('[data-for="reduction_w"]') as HTMLElement;
    expect(error.textContent).toContain("positive");
    expect(posted()).toBe(0);
  });

  it("under-supplied events render the flag badge", async () => {
    const script = scriptedCoordinator({
      agents: [],
      createEvent: () => eventRecord({ under_supplied: true }),
    });
    const { stream } = boot(script);
    stream.push({ type: "event_state", data: eventRecord({ under_supplied: true }) });
    const badges = [...root.querySelectorAll(".badge-warn")].map((b) => b.textContent);
    expect(badges).toContain("under-supplied");
  });

  it("stream drop shows the stale badge and reconnect refreshes agents", async () => {
    const script = scriptedCoordinator({ agents: [agentRow("lap-a")] });
    const { stream } = boot(script);
    await flush();
    const status = root.querySelector("#stream-status") as HTMLElement;
    expect(status.dataset.status).toBe("connected");

    stream.drop();
    expect(status.dataset.status).toBe("stale");

    const before = script.requests.filter((r) => r.url.endsWith("/agents")).length;
    stream.connect();
    await flush();
    expect(status.dataset.status).toBe("connected");
    const after = script.requests.filter((r) => r.url.endsWith("/agents")).length;
    expect(after).toBeGreaterThan(before);
  });
});
