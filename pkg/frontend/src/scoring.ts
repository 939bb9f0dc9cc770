/**
 * Policy-visible evidence scoring, mirrored operation-for-operation from the
 * in-process policies so the scripted adapter reproduces their score maps
 * bit for bit: Jaccard overlaps use integer set sizes, min-max normalization
 * divides the same way, and modalities combine in the fixed text, image,
 * graph order.
 */

import type { ObsMessageT, PoolEntryT } from "./protocol.js";

export type Modality = "text" | "image" | "graph";

export function summaryTokens(summary: string): Set<string> {
  if (!summary.startsWith("title=")) return new Set();
  const body = summary.slice("title=".length).replace("|cat=", " ");
  return new Set(body.split(" ").filter((t) => t.length > 0));
}

export function summaryTags(summary: string): Set<string> {
  if (!summary.startsWith("tags=")) return new Set();
  return new Set(summary.slice("tags=".length).split(",").filter((t) => t.length > 0));
}

export function jaccard(a: Set<string>, b: Set<string>): number {
  if (a.size === 0 || b.size === 0) return 0.0;
  let inter = 0;
  for (const x of a) if (b.has(x)) inter += 1;
  if (inter === 0) return 0.0;
  return inter / (a.size + b.size - inter);
}

export function minMaxNormalize(values: number[]): number[] {
  let lo = values[0];
  let hi = values[0];
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (hi === lo) return values.map(() => 0.5);
  return values.map((v) => (v - lo) / (hi - lo));
}

export function inferSource(pool: PoolEntryT[]): Modality {
  const summary = pool[0].summary;
  if (summary.startsWith("title=")) return "text";
  if (summary.startsWith("tags=")) return "image";
  return "graph";
}

/** Evidence accumulated from observations, never from hidden state. */
export class EvidenceState {
  sourceModality: Modality;
  textAnchor: Set<string> | null = null;
  imageAnchor: Set<string> | null = null;
  graphWeights: Map<string, number> | null = null;

  constructor(sourceModality: Modality) {
    this.sourceModality = sourceModality;
  }

  update(actionKind: string, obsKind: string, payload: Record<string, unknown> | null): void {
    if (obsKind === "evidence" && payload !== null) {
      if (actionKind === "analyze_text") {
        const text = [payload.title, payload.category, payload.description]
          .map((x) => (typeof x === "string" ? x : ""))
          .join(" ");
        const tokens = text.split(" ").filter((t) => t.length > 0);
        this.textAnchor = new Set([...(this.textAnchor ?? []), ...tokens]);
      } else if (actionKind === "analyze_image") {
        const tags = Array.isArray(payload.tags) ? (payload.tags as string[]) : [];
        this.imageAnchor = new Set([...(this.imageAnchor ?? []), ...tags]);
      } else if (actionKind === "retrieve_graph") {
        const neighbors = Array.isArray(payload.neighbors)
          ? (payload.neighbors as [string, string, number][])
          : [];
        this.graphWeights = new Map(neighbors.map(([iid, , w]) => [iid, w]));
      }
    } else if (obsKind === "clarification" && payload !== null && "neighbors" in payload) {
      const neighbors = payload.neighbors as [string, number][];
      this.graphWeights = new Map(neighbors.map(([iid, w]) => [iid, w]));
    }
  }

  modalityScores(pool: PoolEntryT[]): Map<Modality, number[]> {
    const byRank = [...pool].sort((a, b) => a.rank - b.rank);
    const out = new Map<Modality, number[]>();
    if (this.textAnchor !== null && this.sourceModality === "text") {
      out.set("text", byRank.map((e) => jaccard(this.textAnchor!, summaryTokens(e.summary))));
    }
    if (this.imageAnchor !== null && this.sourceModality === "image") {
      out.set("image", byRank.map((e) => jaccard(this.imageAnchor!, summaryTags(e.summary))));
    }
    if (this.graphWeights !== null) {
      out.set("graph", byRank.map((e) => this.graphWeights!.get(e.item_id) ?? 0.0));
    }
    return out;
  }
}

const COMBINE_ORDER: Modality[] = ["text", "image", "graph"];

export function combineEvidenceScores(
  pool: PoolEntryT[],
  modalScores: Map<Modality, number[]>,
  weights: Record<Modality, number>,
): Record<string, number> {
  const byRank = [...pool].sort((a, b) => a.rank - b.rank);
  let total: number[] | null = null;
  for (const modality of COMBINE_ORDER) {
    const scores = modalScores.get(modality);
    if (scores === undefined) continue;
    const contrib = minMaxNormalize(scores).map((v) => weights[modality] * v);
    total = total === null ? contrib : total.map((v, i) => v + contrib[i]);
  }
  if (total === null) return {};
  const out: Record<string, number> = {};
  byRank.forEach((entry, i) => {
    out[entry.item_id] = total![i];
  });
  return out;
}

/** Rank-ordered item ids, the pool's first-stage order. */
export function firstStageOrder(obs: ObsMessageT): string[] {
  return [...obs.pool].sort((a, b) => a.rank - b.rank).map((e) => e.item_id);
}
