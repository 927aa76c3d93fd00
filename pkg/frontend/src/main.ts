// Page bootstrap: opens the websocket, wires inputs to commands, and
// repaints the canvas on every server message.

import { TeleopInput } from "./input.js";
import {
  encodeCommand,
  parseServerMessage,
  ProtocolError,
  type Command,
} from "./protocol.js";
import { render, type Draw2D } from "./render.js";
import { applyConnection, applyMessage, initialState, type UiState } from "./state.js";

const RECONNECT_DELAY_MS = 1000;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

function start(): void {
  const canvas = byId<HTMLCanvasElement>("scene");
  const status = byId<HTMLElement>("status");
  const errors = byId<HTMLElement>("errors");
  const taskField = byId<HTMLInputElement>("task");
  const seedField = byId<HTMLInputElement>("seed");
  const gripSlider = byId<HTMLInputElement>("grip");
  const ctx = canvas.getContext("2d") as unknown as Draw2D | null;
  if (ctx === null) {
    throw new Error("canvas 2d context unavailable");
  }

  let ui: UiState = initialState;
  let socket: WebSocket | null = null;

  const paint = () => {
    render(ctx, canvas.width, ui.scene);
    const scene = ui.scene;
    status.textContent = ui.connected
      ? scene
        ? `connected, ${ui.statesSeen} states`
        : "connected, waiting for a tick"
      : "disconnected, retrying";
    errors.textContent = ui.errors.join("\n");
  };

  const send = (cmd: Command) => {
    if (socket !== null && socket.readyState === WebSocket.OPEN) {
      socket.send(encodeCommand(cmd));
    }
  };

  const input = new TeleopInput(send);

  const connect = () => {
    socket = new WebSocket(`ws://${location.host}/`);
    socket.onopen = () => {
      ui = applyConnection(ui, true);
      paint();
    };
    socket.onmessage = (ev: MessageEvent<string>) => {
      try {
        ui = applyMessage(ui, parseServerMessage(ev.data));
      } catch (err) {
        if (!(err instanceof ProtocolError)) throw err;
        ui = applyMessage(ui, { type: "error", message: err.message });
      }
      paint();
    };
    socket.onclose = () => {
      ui = applyConnection(ui, false);
      paint();
      setTimeout(connect, RECONNECT_DELAY_MS);
    };
  };

  window.addEventListener("keydown", (ev) => {
    if (ev.key === " ") {
      ev.preventDefault();
      if (!ev.repeat) input.keyDown(ev.key);
    }
  });
  window.addEventListener("keyup", (ev) => {
    if (ev.key === " ") {
      ev.preventDefault();
      input.keyUp(ev.key);
    }
  });
  canvas.addEventListener("pointermove", (ev) => {
    input.pointerMove({ x: ev.clientX, y: ev.clientY });
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    input.wheel(Math.sign(ev.deltaY));
  });
  gripSlider.addEventListener("input", () => {
    input.setGrip(Number(gripSlider.value));
  });

  byId<HTMLButtonElement>("toggle-auto").addEventListener("click", () => {
    send({ type: "toggle_auto" });
  });
  byId<HTMLButtonElement>("mark-success").addEventListener("click", () => {
    send({ type: "mark_success" });
  });
  byId<HTMLButtonElement>("abort").addEventListener("click", () => {
    send({ type: "abort" });
  });
  byId<HTMLButtonElement>("reset").addEventListener("click", () => {
    send({
      type: "reset",
      task: taskField.value.trim(),
      seed: Number.parseInt(seedField.value, 10) || 0,
    });
  });

  paint();
  connect();
}

start();
