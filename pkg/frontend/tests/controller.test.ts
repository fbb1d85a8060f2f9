import { describe, expect, it, vi } from "vitest";

import { PlannerApi, FetchLike } from "../src/api.js";
import { SessionController } from "../src/controller.js";
import { adjustResponse, fakeSnapshot } from "./helpers.js";

interface Route {
  match: (url: string, body: unknown) => boolean;
  respond: (body: unknown) => Promise<{ status: number; payload: unknown }>;
}

function fakeFetch(routes: Route[]): FetchLike {
  return async (url, init) => {
    const body = init?.body ? JSON.parse(init.body) : undefined;
    for (const route of routes) {
      if (route.match(url, body)) {
        const { status, payload } = await route.respond(body);
        return { status, json: async () => payload };
      }
    }
    throw new Error(`no route for ${url}`);
  };
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

describe("session controller", () => {
  it("commit flows through debounce to an applied adjust response", async () => {
    const calls: number[][] = [];
    const api = new PlannerApi("http://x", fakeFetch([
      {
        match: (url) => url.endsWith("/adjust"),
        respond: async (body) => {
          const alpha = (body as { alpha: number[] }).alpha;
          calls.push(alpha);
          return { status: 200, payload: adjustResponse(alpha, calls.length) };
        },
      },
    ]));
    const ctl = new SessionController(api, fakeSnapshot(), 10);
    ctl.commitSlider("brow_L", 0.3);
    ctl.commitSlider("eye_L", 0.5); // same burst: only the final vector is sent
    await sleep(40);
    expect(calls).toHaveLength(1);
    expect(calls[0][0]).toBeCloseTo(0.3);
    expect(calls[0][2]).toBeCloseTo(0.5);
    expect(ctl.state.dose[0]).toBe(1);
    expect(ctl.state.pending).toBe(false);
  });

  it("drops out-of-order responses (fault injection)", async () => {
    let call = 0;
    const api = new PlannerApi("http://x", fakeFetch([
      {
        match: (url) => url.endsWith("/adjust"),
        respond: async (body) => {
          call += 1;
          const mine = call;
          const alpha = (body as { alpha: number[] }).alpha;
          // first response arrives long after the second
          await sleep(mine === 1 ? 80 : 5);
          return { status: 200, payload: adjustResponse(alpha, mine) };
        },
      },
    ]));
    const ctl = new SessionController(api, fakeSnapshot(), 5);
    ctl.commitSlider("brow_L", 0.2);
    await sleep(15); // let the first request depart
    ctl.commitSlider("brow_L", 0.9);
    await sleep(150); // both responses have arrived by now
    expect(call).toBe(2);
    expect(ctl.state.dose[0]).toBe(2); // the newer response won
    expect(ctl.state.lastAppliedSeq).toBe(2);
  });

  it("snaps sliders back on a 422 and keeps prior state intact", async () => {
    const good = adjustResponse([0.1, 0, 0, 0, 0, 0], 1);
    let sent = 0;
    const api = new PlannerApi("http://x", fakeFetch([
      {
        match: (url) => url.endsWith("/adjust"),
        respond: async () => {
          sent += 1;
          if (sent === 1) return { status: 200, payload: good };
          return {
            status: 422,
            payload: { code: "alpha_out_of_bounds", message: "alpha[brow_L] too big", field: "alpha.brow_L" },
          };
        },
      },
    ]));
    const ctl = new SessionController(api, fakeSnapshot(), 5);
    ctl.commitSlider("brow_L", 0.1);
    await sleep(30);
    const doseAfterGood = [...ctl.state.dose];
    ctl.commitSlider("brow_L", 1.5);
    await sleep(30);
    expect(ctl.state.sliders[0]).toBeCloseTo(0.1); // snapped back
    expect(ctl.state.dose).toEqual(doseAfterGood); // panel untouched
    expect(ctl.state.error).toMatch(/too big/);
  });

  it("network failure keeps sliders and surfaces a retry affordance", async () => {
    let fail = true;
    const api = new PlannerApi("http://x", fakeFetch([
      {
        match: (url) => url.endsWith("/adjust"),
        respond: async (body) => {
          if (fail) throw new Error("connection reset");
          const alpha = (body as { alpha: number[] }).alpha;
          return { status: 200, payload: adjustResponse(alpha, 7) };
        },
      },
    ]));
    const ctl = new SessionController(api, fakeSnapshot(), 5);
    ctl.commitSlider("mouth_L", 0.4);
    await sleep(30);
    expect(ctl.state.error).toMatch(/retry/);
    expect(ctl.state.sliders[4]).toBeCloseTo(0.4);
    fail = false;
    ctl.retry();
    await sleep(30);
    expect(ctl.state.error).toBeNull();
    expect(ctl.state.dose[0]).toBe(7);
  });

  it("feedback submissions carry a client-generated id (idempotency key)", async () => {
    const seenRefs: string[] = [];
    const api = new PlannerApi("http://x", fakeFetch([
      {
        match: (url) => url.endsWith("/feedback"),
        respond: async (body) => {
          const ref = (body as { client_ref: string }).client_ref;
          seenRefs.push(ref);
          return { status: 201, payload: { feedback_id: ref } };
        },
      },
    ]));
    const ctl = new SessionController(api, fakeSnapshot(), 5);
    const id1 = await ctl.submitFeedback(true, "note");
    const id2 = await ctl.submitFeedback(false, "second");
    expect(id1).not.toBe(id2);
    expect(seenRefs).toEqual([id1, id2]);
  });

  it("reload reconstructs state from the session endpoint", async () => {
    const snapshot = { ...fakeSnapshot(), alpha: [0.2, 0.2, 0, 0, 0.4, 0.4] };
    const api = new PlannerApi("http://x", fakeFetch([
      {
        match: (url) => url.includes("/sessions/") && !url.endsWith("/adjust"),
        respond: async () => ({ status: 200, payload: snapshot }),
      },
    ]));
    const ctl = await SessionController.reload(api, "s-1");
    expect(ctl.state.sliders).toEqual(snapshot.alpha);
    expect(ctl.state.sessionId).toBe("s-1");
  });
});
