// Pure derivation of everything the roll renders. No hidden client state:
// the view is a function of the last fetched session summary, the iteration
// being viewed (the undo pointer) and the locally pending edits.

import type { Edit, IterationRecord, NoteView, SessionSummary } from "./types.js";

export const TICKS_PER_BAR = 4 * 480;
export const PITCH_LOW = 21;
export const PITCH_HIGH = 108;

export interface Geometry {
  pxPerTick: number;
  pxPerPitch: number;
  height: number;
}

export interface RollNote {
  x: number;
  y: number;
  w: number;
  h: number;
  pitch: number;
  onset: number;
  duration: number;
  bar: number;
  prob: number | null;
  color: string;
  changed: boolean;
  tokenIndices: [number, number] | null;
  pendingEdit: Edit | null;
}

export interface TimelineEntry {
  index: number;
  gfs: number;
  accepted: boolean;
}

export interface RollViewModel {
  notes: RollNote[];
  nBars: number;
  selection: { barFrom: number; barTo: number } | null;
  timeline: TimelineEntry[];
  viewedIteration: number | null;
  gfs: number | null;
  pendingEdits: Edit[];
  fragmentTokenCount: number | null;
}

/** Inverted ranges swap before anything is sent to the server. */
export function normalizeBarRange(a: number, b: number): [number, number] {
  return a <= b ? [a, b] : [b, a];
}

/** P(real) 0 -> red, 1 -> blue; linear in between, gray for no score. */
export function probColor(prob: number | null): string {
  if (prob === null) return "rgb(126,130,136)";
  const p = Math.min(Math.max(prob, 0), 1);
  const r = Math.round(214 + (63 - 214) * p);
  const g = Math.round(69 + (111 - 69) * p);
  const b = Math.round(65 + (214 - 65) * p);
  return `rgb(${r},${g},${b})`;
}

/** The server's global feedback score, recomputed from the token heatmap. */
export function clientGfs(heatmap: (number | null)[]): number {
  const values = heatmap.filter((v): v is number => v !== null);
  if (!values.length) return NaN;
  return values.reduce((a, b) => a + b, 0) / values.length;
}

/**
 * Token edits realizing a note-level pin. Keeping a note must keep its time
 * coordinates too, so force_keep also pins the governing Bar and Position
 * tokens; re-opening a note only re-opens its own Pitch/Duration pair
 * (structure tokens are shared with neighbors).
 */
export function notePinEdits(
  note: NoteView,
  kind: "force_keep" | "force_regenerate",
): Edit[] {
  const positions =
    kind === "force_keep"
      ? [...note.structure_indices, ...note.token_indices]
      : [...note.token_indices];
  return positions.filter((p) => p >= 0).map((pos) => ({ kind, pos }));
}

export function noteY(pitch: number, geometry: Geometry): number {
  return (PITCH_HIGH - pitch) * geometry.pxPerPitch;
}

function pendingEditFor(note: NoteView, edits: Edit[]): Edit | null {
  let hit: Edit | null = null;
  for (const edit of edits) {
    if (edit.pos !== undefined && note.token_indices.includes(edit.pos)) hit = edit;
  }
  return hit;
}

function rollNotes(
  notes: NoteView[],
  edits: Edit[],
  geometry: Geometry,
): RollNote[] {
  return notes.map((note) => ({
    x: note.onset * geometry.pxPerTick,
    y: noteY(note.pitch, geometry),
    w: Math.max(note.duration * geometry.pxPerTick, 2),
    h: geometry.pxPerPitch,
    pitch: note.pitch,
    onset: note.onset,
    duration: note.duration,
    bar: note.bar,
    prob: note.prob,
    color: probColor(note.prob),
    changed: note.changed,
    tokenIndices: note.token_indices,
    pendingEdit: pendingEditFor(note, edits),
  }));
}

function baseNotes(summary: SessionSummary): NoteView[] {
  return summary.bars.flatMap((bar) =>
    bar.notes.map((n) => ({
      ...n,
      bar: bar.index,
      prob: null,
      token_indices: [-1, -1] as [number, number],
      changed: false,
    })),
  );
}

/**
 * Merge one iteration's window back over the whole piece: notes whose bars
 * fall inside the record's window come from the record (scored, with token
 * coordinates); everything else is the untouched upload.
 */
export function mergedNotes(summary: SessionSummary, record: IterationRecord): NoteView[] {
  const windowBars = new Set(record.notes.map((n) => n.bar));
  const outside = baseNotes(summary).filter((n) => !windowBars.has(n.bar));
  return [...outside, ...record.notes];
}

export function deriveView(
  summary: SessionSummary,
  viewedIteration: number | null,
  pendingEdits: Edit[],
  geometry: Geometry,
): RollViewModel {
  const records = summary.records;
  const viewed =
    viewedIteration !== null && viewedIteration < records.length
      ? viewedIteration
      : records.length
        ? records.length - 1
        : null;
  const record = viewed !== null ? records[viewed]! : null;

  const selection = summary.fragment
    ? { barFrom: summary.fragment.bars[0], barTo: summary.fragment.bars[1] }
    : null;

  return {
    notes: rollNotes(record ? mergedNotes(summary, record) : baseNotes(summary), pendingEdits, geometry),
    nBars: summary.n_bars,
    selection,
    timeline: records.map((r) => ({
      index: r.index,
      gfs: r.gfs,
      accepted: summary.accepted_index === r.index,
    })),
    viewedIteration: viewed,
    gfs: record ? record.gfs : null,
    pendingEdits,
    fragmentTokenCount: summary.fragment
      ? summary.fragment.token_range[1] - summary.fragment.token_range[0]
      : null,
  };
}
