import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiError, api } from "../src/api.js";

function mockFetch(status: number, body: unknown) {
  const fn = vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    statusText: "status",
    json: async () => body,
  }));
  vi.stubGlobal("fetch", fn);
  return fn;
}

afterEach(() => vi.unstubAllGlobals());

describe("api client", () => {
  it("posts the config and idempotency key on create", async () => {
    const fn = mockFetch(201, { trial_id: "abc", recommendation: 1 });
    const view = await api.createTrial({ design: "pocrm" }, "key-1");
    expect(view.trial_id).toBe("abc");
    const [path, init] = fn.mock.calls[0] as unknown as [string, RequestInit];
    expect(path).toBe("/trials");
    expect(init.method).toBe("POST");
    expect(JSON.parse(init.body as string)).toEqual({
      config: { design: "pocrm" },
      key: "key-1",
    });
  });

  it("sends outcomes to the cohort endpoint", async () => {
    const fn = mockFetch(200, { recommendation: 3 });
    await api.recordCohort("t9", { 1: 2 }, "k");
    const [path, init] = fn.mock.calls[0] as unknown as [string, RequestInit];
    expect(path).toBe("/trials/t9/cohorts");
    expect(JSON.parse(init.body as string)).toEqual({ outcomes: { "1": 2 }, key: "k" });
  });

  it("raises ApiError with the server detail on non-2xx", async () => {
    mockFetch(409, { detail: "trial already complete" });
    await expect(api.undo("t1", "k")).rejects.toMatchObject({
      status: 409,
      message: "trial already complete",
    });
    mockFetch(422, { detail: "m1 must be at least 1" });
    const err = await api.createTrial({}, "k").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(422);
  });

  it("tolerates a non-JSON error body", async () => {
    const fn = vi.fn(async () => ({
      ok: false,
      status: 500,
      statusText: "oops",
      json: async () => {
        throw new Error("not json");
      },
    }));
    vi.stubGlobal("fetch", fn);
    const err = await api.getTrial("x").catch((e) => e);
    expect(err.status).toBe(500);
  });
});
