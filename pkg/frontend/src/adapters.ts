/**
 * Agent adapters: pure functions from an observation (plus the episode
 * transcript the session has accumulated) to an act message. The scripted
 * router mirrors the in-process deterministic control; the LLM adapter is a
 * documented stub where any chat backend can be plugged in.
 */

import type { ActMessageT, ObsMessageT } from "./protocol.js";
import { makeAct } from "./protocol.js";
import {
  EvidenceState,
  combineEvidenceScores,
  firstStageOrder,
  inferSource,
} from "./scoring.js";

export interface AgentAdapter {
  name: string;
  act(obs: ObsMessageT, transcript: ObsMessageT[]): ActMessageT | Promise<ActMessageT>;
}

const PROBE_ORDER = ["analyze_text", "retrieve_graph", "analyze_image"] as const;
const EQUAL_WEIGHTS = { text: 1.0, image: 1.0, graph: 1.0 };

function replayEvidence(obs: ObsMessageT, transcript: ObsMessageT[]): {
  state: EvidenceState;
  tried: Set<string>;
} {
  const state = new EvidenceState(inferSource(obs.pool));
  const tried = new Set<string>();
  for (const seen of [...transcript, obs]) {
    if (seen.last !== null) {
      const { action, obs_kind, payload } = seen.last;
      tried.add(action.kind);
      state.update(action.kind, obs_kind, payload);
    }
  }
  return { state, tried };
}

function nextUnanalyzed(kind: string, obs: ObsMessageT, transcript: ObsMessageT[]): string {
  const analyzed = new Set<string>();
  for (const seen of [...transcript, obs]) {
    if (seen.last !== null && seen.last.action.kind === kind) {
      const item = seen.last.action.args["item_id"];
      if (typeof item === "string") analyzed.add(item);
    }
  }
  const order = firstStageOrder(obs);
  for (const iid of order) if (!analyzed.has(iid)) return iid;
  return order[0];
}

/**
 * Mirror of the in-process rule router: probe text, graph, image once each
 * (a Null return is never retried), then score with the equal-weight
 * combination of gathered evidence.
 */
export function scriptedRouterAdapter(): AgentAdapter {
  return {
    name: "scripted-router",
    act(obs, transcript) {
      const { state, tried } = replayEvidence(obs, transcript);
      for (const kind of PROBE_ORDER) {
        if (tried.has(kind)) continue;
        if (kind === "retrieve_graph") return makeAct(kind, {});
        return makeAct(kind, { item_id: nextUnanalyzed(kind, obs, transcript) });
      }
      const scores = combineEvidenceScores(obs.pool, state.modalityScores(obs.pool), EQUAL_WEIGHTS);
      return makeAct("score_candidates", { scores });
    },
  };
}

/** Terminates immediately with an empty map, keeping the first-stage order. */
export function firstStageAdapter(): AgentAdapter {
  return {
    name: "first-stage",
    act() {
      return makeAct("score_candidates", { scores: {} });
    },
  };
}

export interface LlmBackendSettings {
  endpoint: string;
  model: string;
  /** decoding temperature; 0.0 keeps evaluation deterministic */
  temperature?: number;
}

export type ChatCompletion = (prompt: string, settings: LlmBackendSettings) => Promise<string>;

/**
 * Adapter stub for chat-LLM policies. The backend receives a rendered prompt
 * (pool snippet plus the latest observation) and must return a single-line
 * JSON act message. Replies that fail schema validation are replaced by an
 * explicit invalid action by the session, which the environment penalizes,
 * so a flaky backend degrades gracefully instead of breaking the protocol.
 *
 * No model ships with this package; realize it by supplying `complete`, e.g.
 * a thin fetch wrapper around any chat endpoint. Temperature defaults to 0.0
 * to keep evaluation deterministic.
 */
export function llmAdapter(settings: LlmBackendSettings, complete: ChatCompletion): AgentAdapter {
  if (typeof complete !== "function") {
    throw new Error("llmAdapter is a stub: supply a ChatCompletion backend to realize it");
  }
  const resolved = { temperature: 0.0, ...settings };
  return {
    name: `llm:${settings.model}`,
    async act(obs) {
      const reply = await complete(renderPrompt(obs), resolved);
      return JSON.parse(reply.trim().split("\n")[0]) as ActMessageT;
    },
  };
}

export function renderPrompt(obs: ObsMessageT): string {
  const head = obs.pool
    .slice(0, 10)
    .map((e) => `${e.rank}. ${e.item_id} s0=${e.s0.toFixed(3)} ${e.summary}`)
    .join("\n");
  return [
    `turn ${obs.turn}, budget ${obs.budget_left}, mode ${obs.mode}`,
    `tools: analyze_text(item_id) analyze_image(item_id) retrieve_graph()`,
    `        ask_user(modality, query) score_candidates(scores)`,
    `candidates:`,
    head,
    `last: ${obs.last === null ? "none" : JSON.stringify(obs.last)}`,
    `reply with one JSON act message.`,
  ].join("\n");
}

export const ADAPTERS: Record<string, () => AgentAdapter> = {
  "scripted-router": scriptedRouterAdapter,
  "first-stage": firstStageAdapter,
};
