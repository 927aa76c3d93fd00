import type { StateMessage } from "../src/protocol.js";

export function sampleState(tick = 0): StateMessage {
  return {
    type: "state",
    tick,
    gripper: [0.5, 0.1, 0, 1],
    objects: [
      { id: "pepper", x: 0.3, y: 0.6, held: false },
      { id: "apple", x: 0.7, y: 0.4, held: true },
    ],
    zones: [{ id: "tray", x: 0.8, y: 0.8, radius: 0.08 }],
    mode: "manual",
    clutch: false,
    recording: true,
    task_id: "grasp-pepper",
    outcome_pending: true,
  };
}
