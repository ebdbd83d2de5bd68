// DOM rendering of the cell state: badges, gauges, progress, buttons,
// prediction strip and the end-of-run metrics panel.

import baseline from "./baseline.json";
import type { ClientAction } from "./protocol.js";
import {
  CellState, forecastRemainingMs, isLegal, metricsPanel,
} from "./state.js";

export const ACTIONS: { action: ClientAction; label: string; key: string }[] = [
  { action: "pick_b", label: "Pick B", key: "1" },
  { action: "place_b", label: "Place B", key: "2" },
  { action: "take_a", label: "Take A", key: "3" },
  { action: "place_a", label: "Place A", key: "4" },
];

const WEIGHT_NAMES = ["α", "β", "γ", "δ", "ε", "θ"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function seconds(ms: number): string {
  return (ms / 1000).toFixed(1) + " s";
}

export function render(state: CellState): void {
  el("conn-badge").textContent = state.connection;
  el("status-badge").textContent = state.status;
  el("robot-badge").textContent = state.robotMode ?? "—";
  el("clock").textContent = seconds(state.tMs);

  // Buffer gauge.
  const gauge = el("buffer-gauge");
  gauge.textContent =
    "▮".repeat(state.bufferLevel) +
    "▯".repeat(Math.max(0, state.bufferCapacity - state.bufferLevel));
  el("buffer-label").textContent =
    `${state.bufferLevel}/${state.bufferCapacity}`;

  // Tower progress.
  el("progress").textContent =
    `cycle ${Math.min(state.cycle + 1, state.cyclesTotal)} of ` +
    `${state.cyclesTotal} · cube ${state.nPlaced} of ${state.cubesPerCycle}`;
  el("handover").textContent =
    state.presentedCycle !== null ? "cube A presented — take it" : "";

  // Action buttons mirror server legality exactly.
  for (const { action } of ACTIONS) {
    const btn = el<HTMLButtonElement>(`btn-${action}`);
    btn.disabled = !isLegal(state, action);
  }

  // Running idle counters (accumulated from server cycle metrics).
  el("idle-counters").textContent =
    `human idle ${seconds(state.humanIdleMs)} · ` +
    `robot idle ${seconds(state.robotIdleMs)}`;

  // Prediction strip (adaptive only).
  const strip = el("prediction-strip");
  const remaining = forecastRemainingMs(state);
  if (remaining === null) {
    strip.classList.add("hidden");
  } else {
    strip.classList.remove("hidden");
    el("forecast").textContent = seconds(remaining);
    const bars = el("weight-bars");
    const weights = state.prediction?.weights ?? [];
    bars.innerHTML = "";
    weights.forEach((w, i) => {
      const bar = document.createElement("div");
      bar.className = "weight-bar";
      bar.title = `${WEIGHT_NAMES[i]} = ${w.toFixed(3)}`;
      const fill = document.createElement("div");
      fill.className = "weight-fill";
      fill.style.width = `${Math.round(w * 100)}%`;
      bar.appendChild(fill);
      const label = document.createElement("span");
      label.textContent = WEIGHT_NAMES[i] ?? "";
      bar.appendChild(label);
      bars.appendChild(bar);
    });
  }

  // Error banner.
  const banner = el("banner");
  if (state.lastError) {
    banner.textContent = `${state.lastError.code}: ${state.lastError.msg}`;
    banner.classList.remove("hidden");
  } else if (state.connection === "closed" && state.status !== "complete") {
    banner.textContent = "connection lost — session aborted";
    banner.classList.remove("hidden");
  } else {
    banner.classList.add("hidden");
  }

  renderMetrics(state);
}

function renderMetrics(state: CellState): void {
  const panel = el("metrics-panel");
  const m = metricsPanel(state);
  if (!m) {
    panel.classList.add("hidden");
    return;
  }
  panel.classList.remove("hidden");
  el("m-total").textContent = seconds(m.totalTimeMs);
  el("m-human-idle").textContent = seconds(m.humanIdleMs);
  el("m-robot-idle").textContent = seconds(m.robotIdleMs);
  el("m-total-idle").textContent = seconds(m.totalIdleMs);

  const policy = state.policy as keyof typeof baseline.policies | null;
  const ref = policy ? baseline.policies[policy] : undefined;
  el("m-baseline").textContent = ref
    ? `simulated population under ${policy}: total ` +
      `${seconds(ref.total_time_ms)}, total idle ${seconds(ref.total_idle_ms)} ` +
      `(n=${ref.n_subjects})`
    : "";

  const rows = m.perCycle
    .map((c) =>
      `<tr><td>${c.cycle + 1}</td><td>${seconds(c.assemblyMs)}</td>` +
      `<td>${seconds(c.humanIdleMs)}</td><td>${seconds(c.robotIdleMs)}</td></tr>`)
    .join("");
  el("m-cycles").innerHTML = rows;
}
