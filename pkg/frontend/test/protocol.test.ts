import { describe, expect, it } from "vitest";

import {
  ActMessage,
  EndMessage,
  ObsMessage,
  makeAct,
  parseServerLine,
  roundTripIdentity,
  serialize,
} from "../src/protocol.js";

const OBS = {
  type: "obs",
  episode_id: "ep00000:beh-only:u1:i2",
  turn: 1,
  budget_left: 8,
  mode: "auto",
  pool: [
    { item_id: "i2", rank: 1, s0: 1.0, summary: "nbrs=i3:4,i4:2" },
    { item_id: "i3", rank: 2, s0: 0.25, summary: "nbrs=i2:4" },
  ],
  last: null,
};

describe("wire schemas", () => {
  it("accepts a valid obs and preserves it through serialize/parse", () => {
    const parsed = parseServerLine(serialize(OBS));
    expect(parsed).toEqual(OBS);
    expect(roundTripIdentity(parsed)).toBe(true);
  });

  it("accepts an end message", () => {
    const end = parseServerLine('{"type":"end","reward":-0.06,"ndcg10":0.5}');
    expect(end).toEqual({ type: "end", reward: -0.06, ndcg10: 0.5 });
  });

  it("rejects malformed server messages", () => {
    expect(() => parseServerLine('{"type":"obs"}')).toThrow();
    expect(() => parseServerLine('{"type":"nope"}')).toThrow();
    expect(() => parseServerLine("{broken")).toThrow();
  });

  it("act messages validate and default args", () => {
    const act = ActMessage.parse(makeAct("analyze_text", { item_id: "i1" }, "why"));
    expect(act.action.kind).toBe("analyze_text");
    expect(ActMessage.safeParse({ type: "act", action: { kind: 7 } }).success).toBe(false);
  });

  it("obs with masked-looking extra fields still parses but never exposes mask keys", () => {
    const parsed = ObsMessage.parse(OBS);
    const text = JSON.stringify(parsed);
    for (const key of ["m_text", "m_img", "m_beh", "mask"]) {
      expect(text.includes(`"${key}"`)).toBe(false);
    }
  });

  it("end schema rejects missing ndcg", () => {
    expect(EndMessage.safeParse({ type: "end", reward: 0.1 }).success).toBe(false);
  });
});
