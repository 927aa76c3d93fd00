// Wire types for the teleop websocket. The server broadcasts one state
// message per control tick and an error message for every rejected command;
// the client sends single-purpose JSON commands. Parsing is strict so a
// drifting server shows up as a loud error instead of a silently odd render.

export type SceneObject = { id: string; x: number; y: number; held: boolean };
export type SceneZone = { id: string; x: number; y: number; radius: number };

export type StateMessage = {
  type: "state";
  tick: number;
  gripper: [number, number, number, number]; // x, y, theta, aperture
  objects: SceneObject[];
  zones: SceneZone[];
  mode: "manual" | "autonomous";
  clutch: boolean;
  recording: boolean;
  task_id: string;
  outcome_pending: boolean;
};

export type ErrorMessage = { type: "error"; message: string };

export type ServerMessage = StateMessage | ErrorMessage;

export type Command =
  | { type: "clutch_down" }
  | { type: "clutch_up" }
  | { type: "move"; dx: number; dy: number; dtheta: number }
  | { type: "grip"; g: number }
  | { type: "toggle_auto" }
  | { type: "mark_success" }
  | { type: "abort" }
  | { type: "reset"; task: string; seed: number };

export class ProtocolError extends Error {}

export function encodeCommand(cmd: Command): string {
  return JSON.stringify(cmd);
}

function fail(why: string): never {
  throw new ProtocolError(`bad server message: ${why}`);
}

function num(value: unknown, field: string): number {
  if (typeof value !== "number" || !Number.isFinite(value)) {
    fail(`${field} is not a finite number`);
  }
  return value;
}

function str(value: unknown, field: string): string {
  if (typeof value !== "string") {
    fail(`${field} is not a string`);
  }
  return value;
}

function bool(value: unknown, field: string): boolean {
  if (typeof value !== "boolean") {
    fail(`${field} is not a boolean`);
  }
  return value;
}

function record(value: unknown, field: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    fail(`${field} is not an object`);
  }
  return value as Record<string, unknown>;
}

function parseObjects(value: unknown): SceneObject[] {
  if (!Array.isArray(value)) fail("objects is not an array");
  return value.map((item, i) => {
    const obj = record(item, `objects[${i}]`);
    return {
      id: str(obj.id, `objects[${i}].id`),
      x: num(obj.x, `objects[${i}].x`),
      y: num(obj.y, `objects[${i}].y`),
      held: bool(obj.held, `objects[${i}].held`),
    };
  });
}

function parseZones(value: unknown): SceneZone[] {
  if (!Array.isArray(value)) fail("zones is not an array");
  return value.map((item, i) => {
    const zone = record(item, `zones[${i}]`);
    return {
      id: str(zone.id, `zones[${i}].id`),
      x: num(zone.x, `zones[${i}].x`),
      y: num(zone.y, `zones[${i}].y`),
      radius: num(zone.radius, `zones[${i}].radius`),
    };
  });
}

export function parseServerMessage(raw: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    fail("not valid JSON");
  }
  const msg = record(data, "message");
  if (msg.type === "error") {
    return { type: "error", message: str(msg.message, "message") };
  }
  if (msg.type !== "state") {
    fail(`unknown type ${String(msg.type)}`);
  }
  const gripper = msg.gripper;
  if (!Array.isArray(gripper) || gripper.length !== 4) {
    fail("gripper is not a 4-vector");
  }
  const mode = str(msg.mode, "mode");
  if (mode !== "manual" && mode !== "autonomous") {
    fail(`unknown mode ${mode}`);
  }
  return {
    type: "state",
    tick: num(msg.tick, "tick"),
    gripper: [
      num(gripper[0], "gripper.x"),
      num(gripper[1], "gripper.y"),
      num(gripper[2], "gripper.theta"),
      num(gripper[3], "gripper.aperture"),
    ],
    objects: parseObjects(msg.objects),
    zones: parseZones(msg.zones),
    mode,
    clutch: bool(msg.clutch, "clutch"),
    recording: bool(msg.recording, "recording"),
    task_id: str(msg.task_id, "task_id"),
    outcome_pending: bool(msg.outcome_pending, "outcome_pending"),
  };
}
