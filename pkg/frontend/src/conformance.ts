/**
 * Protocol conformance checks against a live episode server. Each check
 * plays its own episode; penalty accounting is audited through the end
 * message, which carries the whole-episode return.
 */

import type { ObsMessageT } from "./protocol.js";
import { makeAct, parseServerLine, roundTripIdentity, serialize } from "./protocol.js";
import { connect } from "./client.js";
import { firstStageOrder, inferSource, summaryTags } from "./scoring.js";

const LAM_TOOL = -0.02;
const LAM_ASK = -0.1;
const LAM_INVALID = -0.2;
const TOL = 1e-9;

export interface CheckResult {
  name: string;
  pass: boolean;
  skipped?: boolean;
  detail: string;
}

type Driver = (obs: ObsMessageT, turnIndex: number) => object | "wait";

async function playEpisode(
  host: string,
  port: number,
  driver: Driver,
  stallMs = 0,
): Promise<{ observations: ObsMessageT[]; end: { reward: number; ndcg10: number } }> {
  const channel = await connect(host, port);
  const observations: ObsMessageT[] = [];
  try {
    for (;;) {
      const line = await channel.readLine();
      if (line === null) throw new Error("server closed mid-episode");
      const message = parseServerLine(line);
      if (message.type === "end") {
        return { observations, end: message };
      }
      observations.push(message);
      const reply = driver(message, observations.length);
      if (reply === "wait") {
        await new Promise((resolve) => setTimeout(resolve, stallMs));
        continue; // deliberately answer nothing; the server should inject invalid
      }
      channel.writeLine(serialize(reply as Record<string, unknown>));
    }
  } finally {
    channel.close();
  }
}

function approx(a: number, b: number): boolean {
  return Math.abs(a - b) <= TOL;
}

async function checkObsSchema(host: string, port: number): Promise<CheckResult> {
  const seen: number[] = [];
  const budgets: number[] = [];
  const { observations } = await playEpisode(host, port, (obs) => {
    seen.push(obs.turn);
    budgets.push(obs.budget_left);
    if (obs.turn === 1) return makeAct("retrieve_graph", {});
    return makeAct("score_candidates", { scores: {} });
  });
  const first = observations[0];
  const ranks = [...first.pool].map((e) => e.rank).sort((a, b) => a - b);
  const ranksOk = ranks.every((r, i) => r === i + 1);
  const turnsOk = seen.every((t, i) => t === i + 1);
  const budgetOk = budgets.every((b, i) => b === budgets[0] - i);
  const identityOk = observations.every((o) => roundTripIdentity(o));
  const pass = ranksOk && turnsOk && budgetOk && identityOk;
  return {
    name: "obs schema and round-trip fidelity",
    pass,
    detail: pass ? `pool of ${first.pool.length}, turns and budgets consistent` :
      `ranks=${ranksOk} turns=${turnsOk} budget=${budgetOk} identity=${identityOk}`,
  };
}

async function checkEvidenceTools(host: string, port: number): Promise<CheckResult> {
  const order = ["analyze_text", "retrieve_graph", "analyze_image"];
  let costs = 0;
  const kinds: string[] = [];
  const { observations, end } = await playEpisode(host, port, (obs, i) => {
    if (obs.last !== null) kinds.push(obs.last.obs_kind);
    if (i <= 3) {
      costs += LAM_TOOL;
      const kind = order[i - 1];
      if (kind === "retrieve_graph") return makeAct(kind, {});
      return makeAct(kind, { item_id: firstStageOrder(obs)[0] });
    }
    return makeAct("score_candidates", { scores: {} });
  });
  const obsKindsOk = kinds.every((k) => k === "evidence" || k === "null");
  const accountingOk = approx(end.reward, costs + end.ndcg10);
  const pass = obsKindsOk && accountingOk && observations.length === 4;
  return {
    name: "evidence tools and cost accounting",
    pass,
    detail: pass
      ? `return ${end.reward.toFixed(4)} = 3*lambda_tool + ndcg ${end.ndcg10.toFixed(4)}`
      : `obs kinds ${kinds.join(",")}; reward ${end.reward} vs expected ${costs + end.ndcg10}`,
  };
}

async function checkUnknownKind(host: string, port: number): Promise<CheckResult> {
  let sawNull = false;
  const { end } = await playEpisode(host, port, (obs, i) => {
    if (i === 1) return makeAct("FOO", {});
    if (obs.last !== null && obs.last.action.kind === "FOO") {
      sawNull = obs.last.obs_kind === "null";
    }
    return makeAct("score_candidates", { scores: {} });
  });
  const pass = sawNull && approx(end.reward, LAM_INVALID + end.ndcg10);
  return {
    name: "unknown tool name penalized as invalid",
    pass,
    detail: pass
      ? `null observed, return carries ${LAM_INVALID}`
      : `null=${sawNull}, reward ${end.reward} vs ${LAM_INVALID + end.ndcg10}`,
  };
}

async function checkAutoAskRejected(host: string, port: number, mode: string): Promise<CheckResult> {
  if (mode !== "auto") {
    return { name: "auto mode rejects ask_user", pass: true, skipped: true, detail: "server is interactive" };
  }
  let obsKind = "";
  const { end } = await playEpisode(host, port, (obs, i) => {
    if (i === 1) return makeAct("ask_user", { modality: "text", query: firstStageOrder(obs)[0] });
    if (obs.last !== null && obs.last.action.kind === "ask_user") obsKind = obs.last.obs_kind;
    return makeAct("score_candidates", { scores: {} });
  });
  const pass = obsKind === "null" && approx(end.reward, LAM_INVALID + end.ndcg10);
  return {
    name: "auto mode rejects ask_user",
    pass,
    detail: pass
      ? "ask answered Null at the invalid penalty"
      : `obs ${obsKind}, reward ${end.reward} vs ${LAM_INVALID + end.ndcg10}`,
  };
}

async function checkInteractiveAsk(host: string, port: number, mode: string): Promise<CheckResult> {
  if (mode !== "interactive") {
    return { name: "interactive ask round trip", pass: true, skipped: true, detail: "server is auto" };
  }
  const probeOrder = ["analyze_text", "retrieve_graph", "analyze_image"];
  let clarified = false;
  const { end } = await playEpisode(host, port, (obs, i) => {
    if (obs.last !== null && obs.last.action.kind === "ask_user") {
      clarified = obs.last.obs_kind === "clarification";
    }
    if (i <= 3) {
      const kind = probeOrder[i - 1];
      return kind === "retrieve_graph"
        ? makeAct(kind, {})
        : makeAct(kind, { item_id: firstStageOrder(obs)[0] });
    }
    if (i === 4) {
      const source = inferSource(obs.pool);
      const name = source === "text" ? "text" : source === "image" ? "image" : "behavior";
      const query = source === "graph" ? "" : firstStageOrder(obs)[0];
      return makeAct("ask_user", { modality: name, query });
    }
    return makeAct("score_candidates", { scores: {} });
  });
  const expected = 3 * LAM_TOOL + LAM_ASK + end.ndcg10;
  const pass = clarified && approx(end.reward, expected);
  return {
    name: "interactive ask round trip",
    pass,
    detail: pass
      ? "clarification received at lambda_ask"
      : `clarified=${clarified}, reward ${end.reward} vs ${expected}`,
  };
}

async function checkClarificationGrounding(
  host: string,
  port: number,
  mode: string,
): Promise<CheckResult> {
  const name = "clarifications grounded in surviving payloads";
  if (mode !== "interactive") {
    return { name, pass: true, skipped: true, detail: "server is auto" };
  }
  for (let attempt = 0; attempt < 12; attempt += 1) {
    let answer: string | null = null;
    let topSummaryTags: Set<string> | null = null;
    let imagePool = false;
    const { end } = await playEpisode(host, port, (obs, i) => {
      if (i === 1 && inferSource(obs.pool) !== "image") {
        return makeAct("score_candidates", { scores: {} });
      }
      imagePool = true;
      if (i === 1) {
        const top = [...obs.pool].sort((a, b) => a.rank - b.rank)[0];
        topSummaryTags = summaryTags(top.summary);
        return makeAct("ask_user", { modality: "image", query: top.item_id });
      }
      if (obs.last !== null && obs.last.obs_kind === "clarification") {
        answer = String((obs.last.payload ?? {})["answer"] ?? "");
      }
      return makeAct("score_candidates", { scores: {} });
    });
    void end;
    if (!imagePool) continue;
    if (answer === null || topSummaryTags === null) {
      return { name, pass: false, detail: "no clarification received on an image pool" };
    }
    const tokens = (answer as string).replace("tags:", "").split(" ").filter((t) => t.length > 0);
    const grounded = tokens.every((t) => (topSummaryTags as Set<string>).has(t));
    return {
      name,
      pass: grounded,
      detail: grounded ? `answer tokens within the item's tags` : `stray tokens in: ${answer}`,
    };
  }
  return { name, pass: true, skipped: true, detail: "no image-source episode sampled" };
}

async function checkTimeout(host: string, port: number, stallSeconds: number): Promise<CheckResult> {
  const name = "timeout substitutes an invalid action";
  if (stallSeconds <= 0) {
    return { name, pass: true, skipped: true, detail: "enable with --stall seconds" };
  }
  let injected = false;
  const { end } = await playEpisode(
    host,
    port,
    (obs, i) => {
      if (i === 1) return "wait";
      if (obs.last !== null) {
        injected = obs.last.action.kind === "invalid" && obs.last.obs_kind === "null";
      }
      return makeAct("score_candidates", { scores: {} });
    },
    stallSeconds * 1000,
  );
  const pass = injected && approx(end.reward, LAM_INVALID + end.ndcg10);
  return {
    name,
    pass,
    detail: pass
      ? "server injected the invalid action and charged it"
      : `injected=${injected}, reward ${end.reward} vs ${LAM_INVALID + end.ndcg10}`,
  };
}

export async function conformanceSuite(
  host: string,
  port: number,
  stallSeconds = 0,
): Promise<{ results: CheckResult[]; allPass: boolean }> {
  // mode is advertised on every observation; sniff it once
  let mode = "auto";
  await playEpisode(host, port, (obs) => {
    mode = obs.mode;
    return makeAct("score_candidates", { scores: {} });
  });

  const results: CheckResult[] = [];
  results.push(await checkObsSchema(host, port));
  results.push(await checkEvidenceTools(host, port));
  results.push(await checkUnknownKind(host, port));
  results.push(await checkAutoAskRejected(host, port, mode));
  results.push(await checkInteractiveAsk(host, port, mode));
  results.push(await checkClarificationGrounding(host, port, mode));
  results.push(await checkTimeout(host, port, stallSeconds));
  const allPass = results.every((r) => r.pass);
  return { results, allPass };
}
