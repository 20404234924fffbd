import { describe, expect, it } from "vitest";

import {
  clientGfs,
  deriveView,
  normalizeBarRange,
  probColor,
  type Geometry,
} from "../src/viewmodel.js";
import type { IterationRecord, SessionSummary } from "../src/types.js";

const GEOMETRY: Geometry = { pxPerTick: 0.1, pxPerPitch: 6, height: 528 };

function summaryFixture(records: IterationRecord[] = []): SessionSummary {
  return {
    session_id: "s1",
    created: "2026-01-01T00:00:00Z",
    updated: "2026-01-01T00:00:00Z",
    n_bars: 4,
    bars: [
      { index: 0, notes: [{ pitch: 60, onset: 0, duration: 480 }] },
      { index: 1, notes: [{ pitch: 64, onset: 1920, duration: 480 }] },
      { index: 2, notes: [] },
      { index: 3, notes: [] },
    ],
    fragment: records.length
      ? { token_range: [10, 20], bars: [1, 2], window: { start: 0, len: 40 } }
      : null,
    records,
    accepted_index: null,
  };
}

function recordFixture(index: number, gfs: number): IterationRecord {
  return {
    session_id: "s1",
    index,
    gfs,
    regen_count: 5,
    window: { start: 0, len: 40 },
    fragment_token_range: [10, 20],
    notes: [
      {
        pitch: 62, onset: 1920, duration: 480, bar: 1,
        prob: 0.9, token_indices: [11, 12], changed: true,
      },
    ],
    next_regenerate: [13, 14],
    heatmap: [null, null, 0.5, 0.7, null],
  };
}

describe("normalizeBarRange", () => {
  it("keeps ordered ranges and swaps inverted ones", () => {
    expect(normalizeBarRange(2, 5)).toEqual([2, 5]);
    expect(normalizeBarRange(5, 2)).toEqual([2, 5]);
    expect(normalizeBarRange(3, 3)).toEqual([3, 3]);
  });
});

describe("probColor", () => {
  it("is a pure function of the probability", () => {
    expect(probColor(0)).toBe("rgb(214,69,65)"); // believed fake: red
    expect(probColor(1)).toBe("rgb(63,111,214)"); // believed real: blue
    expect(probColor(0.5)).toBe("rgb(139,90,140)");
    expect(probColor(null)).toBe("rgb(126,130,136)");
    expect(probColor(2)).toBe(probColor(1)); // clamped
  });

  it("snapshot of the scale", () => {
    const scale = [0, 0.25, 0.5, 0.75, 1].map(probColor);
    expect(scale).toMatchInlineSnapshot(`
      [
        "rgb(214,69,65)",
        "rgb(176,80,102)",
        "rgb(139,90,140)",
        "rgb(101,101,177)",
        "rgb(63,111,214)",
      ]
    `);
  });
});

describe("clientGfs", () => {
  it("averages the non-null heatmap entries", () => {
    expect(clientGfs([null, 0.2, 0.4, 0.6, null])).toBeCloseTo(0.4, 12);
    expect(clientGfs([1, 1])).toBe(1);
  });
});

describe("deriveView", () => {
  it("shows the uploaded bars before any iteration", () => {
    const view = deriveView(summaryFixture(), null, [], GEOMETRY);
    expect(view.notes).toHaveLength(2);
    expect(view.selection).toBeNull();
    expect(view.timeline).toEqual([]);
    expect(view.gfs).toBeNull();
  });

  it("is a pure function: same inputs, same output", () => {
    const summary = summaryFixture([recordFixture(0, 0.5)]);
    const a = deriveView(summary, null, [], GEOMETRY);
    const b = deriveView(summary, null, [], GEOMETRY);
    expect(JSON.stringify(a)).toBe(JSON.stringify(b));
  });

  it("defaults to the newest record and honors the undo pointer", () => {
    const summary = summaryFixture([recordFixture(0, 0.5), recordFixture(1, 0.7)]);
    expect(deriveView(summary, null, [], GEOMETRY).viewedIteration).toBe(1);
    expect(deriveView(summary, null, [], GEOMETRY).gfs).toBe(0.7);
    const undone = deriveView(summary, 0, [], GEOMETRY);
    expect(undone.viewedIteration).toBe(0);
    expect(undone.gfs).toBe(0.5);
  });

  it("merges window notes over the untouched bars", () => {
    const summary = summaryFixture([recordFixture(0, 0.5)]);
    const view = deriveView(summary, null, [], GEOMETRY);
    // bar 1's original note is replaced by the record's scored note
    const bar1 = view.notes.filter((n) => n.bar === 1);
    expect(bar1).toHaveLength(1);
    expect(bar1[0]!.pitch).toBe(62);
    expect(bar1[0]!.changed).toBe(true);
    // bar 0 is outside the record window: untouched upload note
    const bar0 = view.notes.filter((n) => n.bar === 0);
    expect(bar0[0]!.pitch).toBe(60);
    expect(bar0[0]!.prob).toBeNull();
  });

  it("marks notes carrying pending edits", () => {
    const summary = summaryFixture([recordFixture(0, 0.5)]);
    const view = deriveView(
      summary, null, [{ kind: "force_keep", pos: 11 }], GEOMETRY,
    );
    const pinned = view.notes.find((n) => n.pitch === 62);
    expect(pinned?.pendingEdit?.kind).toBe("force_keep");
  });

  it("reads the selection from server state", () => {
    const summary = summaryFixture([recordFixture(0, 0.5)]);
    expect(deriveView(summary, null, [], GEOMETRY).selection).toEqual({
      barFrom: 1,
      barTo: 2,
    });
  });

  it("lays notes out on the bar/pitch grid", () => {
    const view = deriveView(summaryFixture(), null, [], GEOMETRY);
    const note = view.notes.find((n) => n.pitch === 64)!;
    expect(note.x).toBeCloseTo(1920 * 0.1);
    expect(note.y).toBe((108 - 64) * 6);
    expect(note.w).toBeCloseTo(480 * 0.1);
  });
});
