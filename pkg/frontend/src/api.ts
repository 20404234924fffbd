// Typed client for the v1 session API. Every server error code has a
// user-facing message; an unknown code is a contract break and throws.

import type {
  CreateResponse,
  Edit,
  FragmentResponse,
  IterationRecord,
  SessionSummary,
} from "./types.js";

export const ERROR_MESSAGES: Record<string, string> = {
  MalformedBody: "The request was not understood; the file or form may be invalid.",
  UnknownSession: "This session no longer exists on the server.",
  NoFragmentSelected: "Select some bars to work on first.",
  InvalidEdit: "An edit points outside the selected fragment.",
  InvalidFragment: "That bar range cannot be selected.",
  InvalidIteration: "No such iteration to accept.",
  CorruptState: "The stored session could not be read.",
};

export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
  }

  get userMessage(): string {
    const mapped = ERROR_MESSAGES[this.code];
    if (!mapped) throw new Error(`unmapped server error code ${this.code}`);
    return mapped;
  }
}

async function unwrap<T>(response: Response): Promise<T> {
  if (response.ok) return (await response.json()) as T;
  let code = "MalformedBody";
  let message = response.statusText;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    /* non-JSON error body: keep the status text */
  }
  throw new ApiError(code, message, response.status);
}

export class SessionApi {
  constructor(readonly base: string = "") {}

  private url(path: string): string {
    return `${this.base}/v1${path}`;
  }

  async health(): Promise<boolean> {
    try {
      const response = await fetch(this.url("/healthz"));
      return response.ok;
    } catch {
      return false;
    }
  }

  async createSession(midi: Blob | Uint8Array, name = "upload.mid"): Promise<CreateResponse> {
    const blob = midi instanceof Blob ? midi : new Blob([midi as BlobPart], { type: "audio/midi" });
    const form = new FormData();
    form.append("file", blob, name);
    return unwrap(await fetch(this.url("/sessions"), { method: "POST", body: form }));
  }

  async selectFragment(
    sessionId: string,
    barFrom: number,
    barTo: number,
  ): Promise<FragmentResponse> {
    return unwrap(
      await fetch(this.url(`/sessions/${sessionId}/fragment`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ bar_from: barFrom, bar_to: barTo }),
      }),
    );
  }

  async iterate(
    sessionId: string,
    edits: Edit[] = [],
    keepCount?: number,
    temperature?: number,
    seed?: number,
  ): Promise<IterationRecord> {
    const body: Record<string, unknown> = { edits };
    if (keepCount !== undefined) body.keep_count = keepCount;
    if (temperature !== undefined) body.temperature = temperature;
    if (seed !== undefined) body.seed = seed;
    return unwrap(
      await fetch(this.url(`/sessions/${sessionId}/iterate`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      }),
    );
  }

  async summary(sessionId: string): Promise<SessionSummary> {
    return unwrap(await fetch(this.url(`/sessions/${sessionId}`)));
  }

  async accept(sessionId: string, iterationIndex: number): Promise<{ ok: boolean }> {
    return unwrap(
      await fetch(this.url(`/sessions/${sessionId}/accept`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ iteration_index: iterationIndex }),
      }),
    );
  }

  async exportMidi(sessionId: string): Promise<ArrayBuffer> {
    const response = await fetch(this.url(`/sessions/${sessionId}/export`));
    if (!response.ok) await unwrap(response);
    return response.arrayBuffer();
  }
}
