// DOM wiring for the proofreading studio. All music state lives on the
// server; this file only holds the undo pointer, pending edits and the
// in-flight request queue, and re-derives the whole view after every fetch.

import { ApiError, SessionApi } from "./api.js";
import { play, type Playback } from "./audio.js";
import { barAt, drawRoll, noteAt } from "./roll.js";
import type { Edit, SessionSummary } from "./types.js";
import { clientGfs, deriveView, normalizeBarRange, type Geometry, PITCH_HIGH, PITCH_LOW } from "./viewmodel.js";

const PX_PER_TICK = 0.07;
const PX_PER_PITCH = 6;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

class Studio {
  api = new SessionApi("");
  sessionId: string | null = null;
  summary: SessionSummary | null = null;
  viewedIteration: number | null = null;
  pendingEdits: Edit[] = [];
  playback: Playback | null = null;
  private queue: Promise<unknown> = Promise.resolve();

  canvas = $<HTMLCanvasElement>("roll");
  ruler = $<HTMLCanvasElement>("ruler");
  timeline = $<HTMLUListElement>("timeline");
  status = $<HTMLDivElement>("status");
  keepSlider = $<HTMLInputElement>("keep");
  keepLabel = $<HTMLSpanElement>("keep-label");
  gfsLabel = $<HTMLSpanElement>("gfs");
  private dragStartBar: number | null = null;

  geometry(): Geometry {
    return {
      pxPerTick: PX_PER_TICK,
      pxPerPitch: PX_PER_PITCH,
      height: (PITCH_HIGH - PITCH_LOW + 1) * PX_PER_PITCH,
    };
  }

  /** Client-enforced queue: one mutating request in flight per session. */
  mutate<T>(fn: () => Promise<T>): Promise<T | undefined> {
    const next = this.queue.then(fn).catch((err) => {
      this.showError(err);
      return undefined;
    });
    this.queue = next;
    this.render();
    return next as Promise<T | undefined>;
  }

  showError(err: unknown): void {
    if (err instanceof ApiError) {
      this.status.textContent = err.userMessage;
    } else {
      this.status.textContent = String(err);
    }
    this.status.classList.add("error");
  }

  note(msg: string): void {
    this.status.textContent = msg;
    this.status.classList.remove("error");
  }

  async refresh(): Promise<void> {
    if (!this.sessionId) return;
    this.summary = await this.api.summary(this.sessionId);
    this.render();
  }

  render(): void {
    const geometry = this.geometry();
    this.canvas.height = geometry.height;
    if (!this.summary) {
      drawRoll(this.canvas, {
        notes: [], nBars: 0, selection: null, timeline: [], viewedIteration: null,
        gfs: null, pendingEdits: [], fragmentTokenCount: null,
      }, PX_PER_TICK);
      return;
    }
    const view = deriveView(this.summary, this.viewedIteration, this.pendingEdits, geometry);
    this.canvas.width = Math.max(view.nBars * 4 * 480 * PX_PER_TICK, 600);
    drawRoll(this.canvas, view, PX_PER_TICK);

    this.timeline.replaceChildren(
      ...view.timeline.map((entry) => {
        const li = document.createElement("li");
        li.textContent = `#${entry.index}  gfs ${entry.gfs.toFixed(3)}${entry.accepted ? "  ✓" : ""}`;
        if (entry.index === view.viewedIteration) li.classList.add("viewed");
        li.onclick = () => {
          this.viewedIteration = entry.index;
          this.render();
        };
        return li;
      }),
    );

    const record = view.viewedIteration !== null
      ? this.summary.records[view.viewedIteration]
      : undefined;
    if (record) {
      const recomputed = clientGfs(record.heatmap);
      this.gfsLabel.textContent =
        `gfs ${record.gfs.toFixed(4)} (client ${recomputed.toFixed(4)})`;
    } else {
      this.gfsLabel.textContent = "";
    }

    const n = view.fragmentTokenCount;
    this.keepSlider.disabled = n === null;
    if (n !== null) {
      this.keepSlider.max = String(n);
      this.keepLabel.textContent = `keep ${this.keepSlider.value}/${n}`;
    }
    ($<HTMLButtonElement>("iterate")).disabled = !this.summary.fragment;
    ($<HTMLButtonElement>("accept")).disabled = view.viewedIteration === null;
    ($<HTMLButtonElement>("play")).disabled = view.notes.length === 0;
    ($<HTMLButtonElement>("export")).disabled = this.sessionId === null;
  }

  async upload(file: File): Promise<void> {
    await this.mutate(async () => {
      const created = await this.api.createSession(file, file.name);
      this.sessionId = created.session_id;
      this.viewedIteration = null;
      this.pendingEdits = [];
      this.note(`loaded ${created.n_bars} bars; drag across the ruler to select`);
      await this.refresh();
    });
  }

  selectBars(a: number, b: number): void {
    const [from, to] = normalizeBarRange(a, b);
    void this.mutate(async () => {
      if (!this.sessionId) return;
      const fragment = await this.api.selectFragment(this.sessionId, from, to);
      this.pendingEdits = [];
      this.viewedIteration = null;
      this.keepSlider.value = "0";
      this.note(`selected bars ${from}..${to} (${fragment.n_tokens} tokens)`);
      await this.refresh();
    });
  }

  iterate(): void {
    void this.mutate(async () => {
      if (!this.sessionId) return;
      const keep = Number(this.keepSlider.value);
      const record = await this.api.iterate(
        this.sessionId,
        this.pendingEdits,
        keep > 0 ? keep : undefined,
      );
      this.pendingEdits = [];
      this.viewedIteration = record.index;
      this.note(`iteration ${record.index}: gfs ${record.gfs.toFixed(3)}`);
      await this.refresh();
    });
  }

  toggleEdit(tokenIndices: [number, number]): void {
    const pos = tokenIndices[0];
    const existing = this.pendingEdits.find((e) => e.pos === pos);
    this.pendingEdits = this.pendingEdits.filter((e) => e.pos !== pos && e.pos !== tokenIndices[1]);
    if (!existing) {
      for (const p of tokenIndices) this.pendingEdits.push({ kind: "force_keep", pos: p });
    } else if (existing.kind === "force_keep") {
      for (const p of tokenIndices) this.pendingEdits.push({ kind: "force_regenerate", pos: p });
    }
    this.render();
  }

  accept(): void {
    void this.mutate(async () => {
      if (!this.sessionId || this.viewedIteration === null) return;
      await this.api.accept(this.sessionId, this.viewedIteration);
      this.note(`accepted iteration ${this.viewedIteration}`);
      await this.refresh();
    });
  }

  togglePlayback(): void {
    if (this.playback) {
      this.playback.stop();
      this.playback = null;
      return;
    }
    if (!this.summary) return;
    const view = deriveView(this.summary, this.viewedIteration, [], this.geometry());
    const context = new AudioContext();
    this.playback = play(context, view.notes, 100);
    setTimeout(() => {
      this.playback = null;
    }, this.playback.durationSec * 1000 + 500);
  }

  async exportMidi(): Promise<void> {
    if (!this.sessionId) return;
    const bytes = await this.api.exportMidi(this.sessionId);
    const url = URL.createObjectURL(new Blob([bytes], { type: "audio/midi" }));
    const a = document.createElement("a");
    a.href = url;
    a.download = "refined.mid";
    a.click();
    URL.revokeObjectURL(url);
  }

  install(): void {
    $<HTMLInputElement>("file").addEventListener("change", (event) => {
      const file = (event.target as HTMLInputElement).files?.[0];
      if (file) void this.upload(file);
    });
    this.ruler.addEventListener("mousedown", (event) => {
      this.dragStartBar = barAt(event.offsetX, PX_PER_TICK);
    });
    this.ruler.addEventListener("mouseup", (event) => {
      if (this.dragStartBar === null || !this.sessionId) return;
      this.selectBars(this.dragStartBar, barAt(event.offsetX, PX_PER_TICK));
      this.dragStartBar = null;
    });
    this.canvas.addEventListener("click", (event) => {
      if (!this.summary) return;
      const view = deriveView(this.summary, this.viewedIteration, this.pendingEdits, this.geometry());
      const hit = noteAt(view, event.offsetX, event.offsetY);
      if (hit && hit.tokenIndices && hit.prob !== null) this.toggleEdit(hit.tokenIndices);
    });
    this.keepSlider.addEventListener("input", () => this.render());
    $<HTMLButtonElement>("iterate").addEventListener("click", () => this.iterate());
    $<HTMLButtonElement>("accept").addEventListener("click", () => this.accept());
    $<HTMLButtonElement>("play").addEventListener("click", () => this.togglePlayback());
    $<HTMLButtonElement>("export").addEventListener("click", () => void this.exportMidi());
    this.render();
  }
}

new Studio().install();
