// Canvas piano roll: notes colored by realism, the selection rectangle,
// bar grid, and pending-edit outlines.

import type { RollViewModel } from "./viewmodel.js";
import { TICKS_PER_BAR } from "./viewmodel.js";

export interface RollStyle {
  background: string;
  grid: string;
  selection: string;
  changedOutline: string;
  keepOutline: string;
  regenerateOutline: string;
}

export const DEFAULT_STYLE: RollStyle = {
  background: "#14161a",
  grid: "#272b33",
  selection: "rgba(120,140,255,0.15)",
  changedOutline: "#58d68d",
  keepOutline: "#f4d03f",
  regenerateOutline: "#ff6b6b",
};

export function drawRoll(
  canvas: HTMLCanvasElement,
  view: RollViewModel,
  pxPerTick: number,
  style: RollStyle = DEFAULT_STYLE,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.fillStyle = style.background;
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  const barWidth = TICKS_PER_BAR * pxPerTick;
  ctx.strokeStyle = style.grid;
  ctx.lineWidth = 1;
  for (let bar = 0; bar <= view.nBars; bar += 1) {
    const x = bar * barWidth;
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, canvas.height);
    ctx.stroke();
  }

  if (view.selection) {
    ctx.fillStyle = style.selection;
    const x = view.selection.barFrom * barWidth;
    const w = (view.selection.barTo - view.selection.barFrom + 1) * barWidth;
    ctx.fillRect(x, 0, w, canvas.height);
  }

  for (const note of view.notes) {
    ctx.fillStyle = note.color;
    ctx.fillRect(note.x, note.y, note.w, note.h - 1);
    if (note.pendingEdit) {
      ctx.strokeStyle =
        note.pendingEdit.kind === "force_keep" ? style.keepOutline : style.regenerateOutline;
      ctx.lineWidth = 2;
      ctx.strokeRect(note.x - 1, note.y - 1, note.w + 2, note.h + 1);
    } else if (note.changed) {
      ctx.strokeStyle = style.changedOutline;
      ctx.lineWidth = 1;
      ctx.strokeRect(note.x - 0.5, note.y - 0.5, note.w + 1, note.h);
    }
  }
}

/** Hit-test a canvas click back to a note, if any. */
export function noteAt(view: RollViewModel, x: number, y: number) {
  for (let i = view.notes.length - 1; i >= 0; i -= 1) {
    const note = view.notes[i]!;
    if (x >= note.x && x <= note.x + note.w && y >= note.y && y <= note.y + note.h) {
      return note;
    }
  }
  return null;
}

export function barAt(x: number, pxPerTick: number): number {
  return Math.floor(x / (TICKS_PER_BAR * pxPerTick));
}
