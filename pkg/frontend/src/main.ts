import { CoordinatorApi } from "./api.js";
import { createApp } from "./app.js";
import { StreamClient } from "./stream.js";

const base = window.location.origin;
const wsBase = base.replace(/^http/, "ws");

const app = createApp(
  document.getElementById("app") as HTMLElement,
  new CoordinatorApi(base),
  (onFrame, onStatus) =>
    new StreamClient({ url: `${wsBase}/stream`, onFrame, onStatus: onStatus }),
);

void app.refreshAgents();
