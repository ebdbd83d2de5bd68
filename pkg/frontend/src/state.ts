// Pure session state: a reducer over the server's frame stream. The view
// holds no timing authority of its own; every displayed time and counter
// derives from server frames, so replaying the same stream always
// reconstructs the same view.

import type {
  ClientAction, CycleMetrics, PredictionFrame, RunSummary, ServerFrame,
} from "./protocol.js";

export interface CellState {
  connection: "connecting" | "open" | "closed";
  status: "idle" | "waiting" | "running" | "complete" | "aborted";
  policy: string | null;
  tMs: number;
  robotMode: string | null;
  cycle: number;
  nPlaced: number;
  cyclesTotal: number;
  cubesPerCycle: number;
  bufferLevel: number;
  bufferCapacity: number;
  awaiting: ClientAction[];
  presentedCycle: number | null;
  humanIdleMs: number;
  robotIdleMs: number;
  cycles: CycleMetrics[];
  prediction: PredictionFrame | null;
  summary: RunSummary | null;
  lastError: { code: string; msg: string } | null;
}

export function initialState(): CellState {
  return {
    connection: "connecting",
    status: "idle",
    policy: null,
    tMs: 0,
    robotMode: null,
    cycle: 0,
    nPlaced: 0,
    cyclesTotal: 5,
    cubesPerCycle: 20,
    bufferLevel: 0,
    bufferCapacity: 5,
    awaiting: [],
    presentedCycle: null,
    humanIdleMs: 0,
    robotIdleMs: 0,
    cycles: [],
    prediction: null,
    summary: null,
    lastError: null,
  };
}

export function reduce(state: CellState, frame: ServerFrame): CellState {
  const next: CellState = { ...state, tMs: Math.max(state.tMs, frame.t_ms) };
  switch (frame.type) {
    case "state":
      next.status = frame.status;
      next.policy = frame.policy;
      next.robotMode = frame.robot_mode;
      next.cycle = frame.cycle;
      next.nPlaced = frame.n_placed;
      next.awaiting = frame.awaiting;
      next.cyclesTotal = frame.cycles_total;
      next.cubesPerCycle = frame.cubes_per_cycle;
      next.bufferCapacity = frame.buffer_capacity;
      if (frame.buffer_level !== null) next.bufferLevel = frame.buffer_level;
      // Taking the cube clears the presentation.
      if (!frame.awaiting.includes("take_a")) next.presentedCycle = null;
      next.lastError = null;
      return next;
    case "handover_ready":
      next.presentedCycle = frame.cycle;
      return next;
    case "prediction":
      next.prediction = frame;
      return next;
    case "cycle_complete":
      next.cycles = [...state.cycles, frame.metrics];
      next.humanIdleMs += frame.metrics.human_idle_ms ?? 0;
      next.robotIdleMs += frame.metrics.robot_idle_ms ?? 0;
      return next;
    case "run_complete":
      next.summary = frame.summary;
      next.status = "complete";
      return next;
    case "error":
      next.lastError = { code: frame.code, msg: frame.msg };
      if (frame.code === "timeout") next.status = "aborted";
      return next;
  }
}

export function reduceAll(frames: ServerFrame[]): CellState {
  return frames.reduce(reduce, initialState());
}

// Action legality mirrors the server's protocol-order rules exactly: a
// button is enabled iff the server listed the action in the last state.
export function isLegal(state: CellState, action: ClientAction): boolean {
  return state.status === "running" && state.awaiting.includes(action);
}

export interface MetricsPanel {
  totalTimeMs: number;
  humanIdleMs: number;
  robotIdleMs: number;
  totalIdleMs: number;
  perCycle: { cycle: number; assemblyMs: number; humanIdleMs: number;
              robotIdleMs: number }[];
}

// End-of-run panel values, straight from the server's run summary.
export function metricsPanel(state: CellState): MetricsPanel | null {
  if (!state.summary) return null;
  const s = state.summary;
  return {
    totalTimeMs: s.total_time_ms,
    humanIdleMs: s.human_idle_ms,
    robotIdleMs: s.robot_idle_ms,
    totalIdleMs: s.total_idle_ms,
    perCycle: s.per_cycle.map((c) => ({
      cycle: c.cycle_index,
      assemblyMs: c.assembly_ms,
      humanIdleMs: c.human_idle_ms,
      robotIdleMs: c.robot_idle_ms,
    })),
  };
}

// Remaining forecast as of the last server message; the strip counts the
// forecast down only as newer frames arrive (no local clock).
export function forecastRemainingMs(state: CellState): number | null {
  if (!state.prediction || state.status !== "running") return null;
  const elapsed = state.tMs - state.prediction.t_ms;
  return Math.max(0, state.prediction.f_ms - elapsed);
}
