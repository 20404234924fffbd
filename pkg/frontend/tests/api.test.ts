import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiError, ERROR_MESSAGES, SessionApi } from "../src/api.js";

// The server's closed error-code set; every member needs a user message.
const SERVER_ERROR_CODES = [
  "MalformedBody",
  "UnknownSession",
  "NoFragmentSelected",
  "InvalidEdit",
  "InvalidFragment",
  "InvalidIteration",
  "CorruptState",
];

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("error code contract", () => {
  it("maps every server error code to a user-facing message", () => {
    for (const code of SERVER_ERROR_CODES) {
      expect(ERROR_MESSAGES[code], code).toBeTruthy();
    }
  });

  it("treats an unknown code as a contract break", () => {
    const err = new ApiError("SomethingNew", "?", 500);
    expect(() => err.userMessage).toThrow(/unmapped/);
  });
});

describe("SessionApi", () => {
  it("posts fragments to the right endpoint with the right body", async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ ok: true }));
    vi.stubGlobal("fetch", fetchMock);
    const api = new SessionApi("http://h");
    await api.selectFragment("sid", 2, 3);
    const [url, init] = fetchMock.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe("http://h/v1/sessions/sid/fragment");
    expect(JSON.parse(init.body as string)).toEqual({ bar_from: 2, bar_to: 3 });
  });

  it("sends edits and keep_count on iterate", async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ index: 0 }));
    vi.stubGlobal("fetch", fetchMock);
    const api = new SessionApi();
    await api.iterate("sid", [{ kind: "force_keep", pos: 4 }], 10);
    const [url, init] = fetchMock.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe("/v1/sessions/sid/iterate");
    expect(JSON.parse(init.body as string)).toEqual({
      edits: [{ kind: "force_keep", pos: 4 }],
      keep_count: 10,
    });
  });

  it("raises typed errors from the error body", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => jsonResponse({ code: "NoFragmentSelected", message: "no" }, 409)),
    );
    const api = new SessionApi();
    try {
      await api.iterate("sid");
      expect.unreachable("should have thrown");
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).code).toBe("NoFragmentSelected");
      expect((err as ApiError).status).toBe(409);
      expect((err as ApiError).userMessage).toMatch(/Select some bars/);
    }
  });

  it("uploads multipart MIDI on create", async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ session_id: "x", n_bars: 1, bars: [] }));
    vi.stubGlobal("fetch", fetchMock);
    const api = new SessionApi();
    await api.createSession(new Uint8Array([77, 84, 104, 100]), "a.mid");
    const [url, init] = fetchMock.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe("/v1/sessions");
    expect(init.body).toBeInstanceOf(FormData);
    const file = (init.body as FormData).get("file") as File;
    expect(file.name).toBe("a.mid");
  });
});
