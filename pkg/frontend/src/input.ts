// Keyboard/pointer handling, DOM-free so tests can drive it directly.
//
// The clutch maps to the space bar: press sends clutch_down, release sends
// clutch_up, and pointer motion in between streams move commands. The first
// motion sample after pressing only anchors the pointer, so every emitted
// move is a real delta. Screen y grows downward while world y grows upward,
// hence the sign flip.

import type { Command } from "./protocol.js";

export type CommandSink = (cmd: Command) => void;

export type Point = { x: number; y: number };

export class TeleopInput {
  private clutched = false;
  private anchor: Point | null = null;

  constructor(
    private readonly send: CommandSink,
    private readonly unitsPerPixel = 1 / 480,
    private readonly radiansPerWheelStep = 0.1,
  ) {}

  keyDown(key: string): void {
    if (key === " " && !this.clutched) {
      this.clutched = true;
      this.anchor = null;
      this.send({ type: "clutch_down" });
    }
  }

  keyUp(key: string): void {
    if (key === " " && this.clutched) {
      this.clutched = false;
      this.anchor = null;
      this.send({ type: "clutch_up" });
    }
  }

  pointerMove(p: Point): void {
    if (!this.clutched) {
      return;
    }
    if (this.anchor === null) {
      this.anchor = p;
      return;
    }
    const dx = (p.x - this.anchor.x) * this.unitsPerPixel;
    const dy = -(p.y - this.anchor.y) * this.unitsPerPixel;
    this.anchor = p;
    if (dx !== 0 || dy !== 0) {
      this.send({ type: "move", dx, dy, dtheta: 0 });
    }
  }

  wheel(steps: number): void {
    if (!this.clutched || steps === 0) {
      return;
    }
    this.send({
      type: "move",
      dx: 0,
      dy: 0,
      dtheta: -steps * this.radiansPerWheelStep,
    });
  }

  setGrip(g: number): void {
    this.send({ type: "grip", g: Math.min(1, Math.max(0, g)) });
  }

  get clutchHeld(): boolean {
    return this.clutched;
  }
}
