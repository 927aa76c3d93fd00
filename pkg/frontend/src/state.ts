// Pure client state: the latest scene plus a short error log. Every update
// returns a fresh object so the render loop can cheaply compare references.

import type { ServerMessage, StateMessage } from "./protocol.js";

const ERROR_LOG_LIMIT = 8;

export type UiState = {
  connected: boolean;
  scene: StateMessage | null;
  statesSeen: number;
  errors: string[]; // newest first
};

export const initialState: UiState = {
  connected: false,
  scene: null,
  statesSeen: 0,
  errors: [],
};

export function applyMessage(ui: UiState, msg: ServerMessage): UiState {
  if (msg.type === "error") {
    return {
      ...ui,
      errors: [msg.message, ...ui.errors].slice(0, ERROR_LOG_LIMIT),
    };
  }
  return { ...ui, scene: msg, statesSeen: ui.statesSeen + 1 };
}

export function applyConnection(ui: UiState, connected: boolean): UiState {
  if (connected) {
    return { ...ui, connected: true };
  }
  return { ...ui, connected: false, scene: null };
}
