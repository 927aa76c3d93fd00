// Canvas scene renderer. Draw2D is the slice of CanvasRenderingContext2D
// the renderer actually touches, so tests can substitute a recording fake.

import type { StateMessage } from "./protocol.js";

export interface Draw2D {
  fillStyle: string;
  strokeStyle: string;
  lineWidth: number;
  font: string;
  textAlign: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  save(): void;
  restore(): void;
  translate(x: number, y: number): void;
  rotate(angle: number): void;
}

const ZONE_FILL = "#dbe7f4";
const ZONE_EDGE = "#7c98b8";
const OBJECT_FILL = "#c96f2f";
const HELD_RING = "#2f7d41";
const GRIPPER_COLOR = "#222222";
const HUD_COLOR = "#333333";
const JAW_SPAN = 26; // px between fully open jaws

export function render(ctx: Draw2D, size: number, scene: StateMessage | null): void {
  ctx.clearRect(0, 0, size, size);
  ctx.fillStyle = "#f7f5f0";
  ctx.fillRect(0, 0, size, size);
  ctx.strokeStyle = "#b0a89a";
  ctx.lineWidth = 1;
  ctx.strokeRect(0.5, 0.5, size - 1, size - 1);

  if (scene === null) {
    ctx.fillStyle = HUD_COLOR;
    ctx.font = "14px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("waiting for the teleop server", size / 2, size / 2);
    return;
  }

  const px = (x: number) => x * size;
  const py = (y: number) => (1 - y) * size;

  for (const zone of scene.zones) {
    ctx.beginPath();
    ctx.arc(px(zone.x), py(zone.y), zone.radius * size, 0, 2 * Math.PI);
    ctx.fillStyle = ZONE_FILL;
    ctx.fill();
    ctx.strokeStyle = ZONE_EDGE;
    ctx.lineWidth = 1;
    ctx.stroke();
    ctx.fillStyle = ZONE_EDGE;
    ctx.font = "11px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(zone.id, px(zone.x), py(zone.y) + zone.radius * size + 12);
  }

  for (const obj of scene.objects) {
    ctx.beginPath();
    ctx.arc(px(obj.x), py(obj.y), 7, 0, 2 * Math.PI);
    ctx.fillStyle = OBJECT_FILL;
    ctx.fill();
    if (obj.held) {
      ctx.beginPath();
      ctx.arc(px(obj.x), py(obj.y), 11, 0, 2 * Math.PI);
      ctx.strokeStyle = HELD_RING;
      ctx.lineWidth = 2;
      ctx.stroke();
    }
    ctx.fillStyle = HUD_COLOR;
    ctx.font = "10px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(obj.id, px(obj.x), py(obj.y) - 11);
  }

  const [gx, gy, theta, aperture] = scene.gripper;
  ctx.save();
  ctx.translate(px(gx), py(gy));
  ctx.rotate(-theta);
  const half = (JAW_SPAN / 2) * Math.max(aperture, 0.08);
  ctx.strokeStyle = GRIPPER_COLOR;
  ctx.lineWidth = 3;
  ctx.beginPath();
  ctx.moveTo(-half, -9);
  ctx.lineTo(-half, 9);
  ctx.moveTo(half, -9);
  ctx.lineTo(half, 9);
  ctx.stroke();
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.moveTo(-half, 0);
  ctx.lineTo(half, 0);
  ctx.moveTo(0, 0);
  ctx.lineTo(0, -14);
  ctx.stroke();
  ctx.restore();

  ctx.fillStyle = HUD_COLOR;
  ctx.font = "12px sans-serif";
  ctx.textAlign = "left";
  const clutchNote = scene.clutch ? " + clutch" : "";
  const recordingNote = scene.recording ? "recording" : "idle";
  ctx.fillText(`task ${scene.task_id || "(none)"}`, 8, 16);
  ctx.fillText(`${scene.mode}${clutchNote}, ${recordingNote}`, 8, 32);
  ctx.fillText(`tick ${scene.tick}`, 8, 48);
}
