// Wire protocol of the live-session server: JSON text frames, one message
// per frame, every server frame stamped with session-relative t_ms.

export type PolicyId = "timing" | "sensor" | "adaptive";

export type ClientAction = "pick_b" | "place_b" | "take_a" | "place_a";

export interface StateFrame {
  type: "state";
  t_ms: number;
  status: "waiting" | "running" | "complete" | "aborted";
  policy: PolicyId | null;
  robot_mode: string | null;
  cycle: number;
  n_placed: number;
  buffer_level: number | null;
  awaiting: ClientAction[];
  cycles_total: number;
  cubes_per_cycle: number;
  buffer_capacity: number;
}

export interface HandoverReadyFrame {
  type: "handover_ready";
  t_ms: number;
  cycle: number;
}

export interface PredictionFrame {
  type: "prediction";
  t_ms: number;
  n: number;
  f_ms: number;
  weights: number[]; // alpha, beta, gamma, delta, epsilon, theta
}

export interface CycleMetrics {
  cycle: number;
  assembly_ms: number | null;
  human_idle_ms: number | null;
  robot_idle_ms: number | null;
}

export interface CycleCompleteFrame {
  type: "cycle_complete";
  t_ms: number;
  metrics: CycleMetrics;
}

export interface RunSummary {
  policy_id: PolicyId;
  subject_id: string;
  total_time_ms: number;
  human_idle_ms: number;
  robot_idle_ms: number;
  total_idle_ms: number;
  per_cycle: {
    cycle_index: number;
    assembly_ms: number;
    human_idle_ms: number;
    robot_idle_ms: number;
  }[];
}

export interface RunCompleteFrame {
  type: "run_complete";
  t_ms: number;
  summary: RunSummary;
}

export interface ErrorFrame {
  type: "error";
  t_ms: number;
  code: string;
  msg: string;
}

export type ServerFrame =
  | StateFrame
  | HandoverReadyFrame
  | PredictionFrame
  | CycleCompleteFrame
  | RunCompleteFrame
  | ErrorFrame;

export function parseFrame(raw: string): ServerFrame {
  const data = JSON.parse(raw);
  if (typeof data !== "object" || data === null || !("type" in data)) {
    throw new Error("malformed server frame");
  }
  return data as ServerFrame;
}
