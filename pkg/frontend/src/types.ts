// Wire shapes of the v1 session API. Ticks are at 480 per quarter note,
// bars are 4/4, token positions are window-relative indices.

export interface NoteDatum {
  pitch: number;
  onset: number;
  duration: number;
}

export interface BarDatum {
  index: number;
  notes: NoteDatum[];
}

export interface CreateResponse {
  session_id: string;
  n_bars: number;
  bars: BarDatum[];
}

export interface NoteView extends NoteDatum {
  bar: number;
  prob: number | null;
  token_indices: [number, number];
  // governing Bar and Position token indices (-1 when the window cut them off)
  structure_indices: [number, number];
  changed: boolean;
}

export interface WindowInfo {
  start: number;
  len: number;
}

export interface FragmentResponse {
  fragment_token_range: [number, number];
  n_tokens: number;
  bars: [number, number];
  window: WindowInfo;
  notes: NoteView[];
}

export interface IterationRecord {
  session_id: string;
  index: number;
  gfs: number;
  regen_count: number;
  window: WindowInfo;
  fragment_token_range: [number, number];
  notes: NoteView[];
  next_regenerate: number[];
  heatmap: (number | null)[];
}

export interface SessionSummary {
  session_id: string;
  created: string;
  updated: string;
  n_bars: number;
  bars: BarDatum[];
  fragment: {
    token_range: [number, number];
    bars: [number, number];
    window: WindowInfo;
  } | null;
  records: IterationRecord[];
  accepted_index: number | null;
}

export type EditKind = "force_keep" | "force_regenerate" | "replace_token" | "set_keep_count";

export interface Edit {
  kind: EditKind;
  pos?: number;
  token?: string;
  token_id?: number;
  keep_count?: number;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
