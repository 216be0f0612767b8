// Week heatmap of a 10,080-slot power profile: 7 weekday rows of 1440
// minute cells, colored by the selected slot field.

import type { PowerSlot } from "./types.js";

export type HeatField = "mean_power_normal" | "mean_power_save" | "p_running" | "p_plugged";

export interface HeatCell {
  weekday: number;
  minute_of_day: number;
  value: number;
  color: string;
}

export interface HeatmapModel {
  field: HeatField;
  min: number;
  max: number;
  cells: HeatCell[];
}

const WEEKDAYS = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

export function colorFor(value: number, min: number, max: number): string {
  const t = max > min ? (value - min) / (max - min) : 0.5;
  // Cold blue for light load through warm red for heavy load.
  const hue = 220 - 220 * t;
  return `hsl(${hue.toFixed(0)}, 75%, ${Math.round(60 - 15 * t)}%)`;
}

export function buildHeatmapModel(
  slots: PowerSlot[],
  field: HeatField = "mean_power_normal",
): HeatmapModel {
  const values = slots.map((s) => s[field]);
  const min = Math.min(...values);
  const max = Math.max(...values);
  return {
    field,
    min,
    max,
    cells: slots.map((slot) => ({
      weekday: slot.weekday,
      minute_of_day: slot.minute_of_day,
      value: slot[field],
      color: colorFor(slot[field], min, max),
    })),
  };
}

export function renderHeatmap(root: HTMLElement, model: HeatmapModel): void {
  root.textContent = "";
  root.classList.add("heatmap");
  const rows = new Map<number, HTMLElement>();
  for (let weekday = 0; weekday < 7; weekday++) {
    const row = document.createElement("div");
    row.className = "hm-row";
    const label = document.createElement("span");
    label.className = "hm-label";
    label.textContent = WEEKDAYS[weekday];
    row.appendChild(label);
    rows.set(weekday, row);
    root.appendChild(row);
  }
  for (const cell of model.cells) {
    const el = document.createElement("div");
    el.className = "hm-cell";
    el.style.backgroundColor = cell.color;
    el.title =
      `${WEEKDAYS[cell.weekday]} ` +
      `${String(Math.floor(cell.minute_of_day / 60)).padStart(2, "0")}:` +
      `${String(cell.minute_of_day % 60).padStart(2, "0")} ` +
      `${model.field}=${cell.value.toFixed(2)}`;
    rows.get(cell.weekday)?.appendChild(el);
  }
  const legend = document.createElement("div");
  legend.className = "hm-legend";
  legend.textContent = `${model.field}: ${model.min.toFixed(2)} to ${model.max.toFixed(2)}`;
  root.appendChild(legend);
}
