// Wire protocol (proto 1): snapshot frames in, control commands out.

export interface AgvFrame {
  id: number;
  x: number;
  y: number;
  heading: "N" | "E" | "S" | "W";
  footprint: number;
  health: "active" | "failed";
  carrying: string | null;
  stage: string | null;
  task: string | null;
  goal: [number, number] | null;
}

export interface ShelfFrame {
  id: string;
  x: number;
  y: number;
  size: number;
  stored: boolean;
  carrier: number | null;
}

export interface CorridorFrame {
  id: string;
  cells: [number, number][];
  until: number;
  cause: number;
}

export interface SnapshotFrame {
  proto: 1;
  type: "snapshot";
  step: number;
  width: number;
  height: number;
  stations: { id: string; x: number; y: number }[];
  obstacles: [number, number][];
  agvs: AgvFrame[];
  shelves: ShelfFrame[];
  corridors: CorridorFrame[];
  metrics: { completed: number; generated: number; expired: number; failures: number };
  events: string[];
}

export interface AckMessage {
  type: "ack";
  command: string;
  applied_step: number;
}

export interface ErrorMessage {
  type: "error";
  message: string;
  command?: string;
}

export type ServerMessage = SnapshotFrame | AckMessage | ErrorMessage;

export type ControlCommand =
  | { type: "pause" }
  | { type: "resume" }
  | { type: "set_speed"; value: number }
  | { type: "step_once" }
  | { type: "inject_failure"; agv: number };

export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null || !("type" in data)) return null;
  const msg = data as { type: string };
  if (msg.type === "snapshot" || msg.type === "ack" || msg.type === "error") {
    return data as ServerMessage;
  }
  return null;
}

export function encodeCommand(cmd: ControlCommand): string {
  return JSON.stringify(cmd);
}

// Commands the four control-panel affordances and the inject gesture emit.
export const panelCommands = {
  pause: (): ControlCommand => ({ type: "pause" }),
  resume: (): ControlCommand => ({ type: "resume" }),
  stepOnce: (): ControlCommand => ({ type: "step_once" }),
  setSpeed: (value: number): ControlCommand => ({ type: "set_speed", value }),
  injectFailure: (agv: number): ControlCommand => ({ type: "inject_failure", agv }),
};
