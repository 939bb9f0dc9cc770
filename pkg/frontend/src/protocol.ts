/**
 * Wire protocol schemas shared with the episode server: newline-delimited
 * JSON, one object per line. Zod validation guards both directions so a
 * misbehaving server is caught and a malformed adapter reply never leaves
 * the client.
 */

import { z } from "zod";

export const PoolEntry = z.object({
  item_id: z.string(),
  rank: z.number().int().min(1),
  s0: z.number(),
  summary: z.string(),
});

export const ActionSchema = z.object({
  kind: z.string(),
  args: z.record(z.string(), z.unknown()).default({}),
});

export const LastStep = z.object({
  action: ActionSchema,
  obs_kind: z.enum(["evidence", "null", "clarification"]),
  payload: z.union([z.record(z.string(), z.unknown()), z.null()]),
});

export const ObsMessage = z.object({
  type: z.literal("obs"),
  episode_id: z.string(),
  turn: z.number().int().min(1),
  budget_left: z.number().int().min(0),
  mode: z.enum(["auto", "interactive"]),
  pool: z.array(PoolEntry).min(1),
  last: z.union([LastStep, z.null()]),
});

export const ActMessage = z.object({
  type: z.literal("act"),
  rationale: z.string(),
  action: ActionSchema,
});

export const EndMessage = z.object({
  type: z.literal("end"),
  reward: z.number(),
  ndcg10: z.number(),
});

export const ServerMessage = z.discriminatedUnion("type", [ObsMessage, EndMessage]);

export type PoolEntryT = z.infer<typeof PoolEntry>;
export type ObsMessageT = z.infer<typeof ObsMessage>;
export type ActMessageT = z.infer<typeof ActMessage>;
export type EndMessageT = z.infer<typeof EndMessage>;
export type ServerMessageT = z.infer<typeof ServerMessage>;

export const ACTION_KINDS = [
  "analyze_text",
  "analyze_image",
  "retrieve_graph",
  "ask_user",
  "score_candidates",
] as const;

export function makeAct(
  kind: string,
  args: Record<string, unknown> = {},
  rationale = "",
): ActMessageT {
  return { type: "act", rationale, action: { kind, args } };
}

export function serialize(message: object): string {
  return JSON.stringify(message);
}

export function parseServerLine(line: string): ServerMessageT {
  const raw: unknown = JSON.parse(line);
  return ServerMessage.parse(raw);
}

/** serialize -> parse must be the identity for every message type */
export function roundTripIdentity(message: ServerMessageT | ActMessageT): boolean {
  const again: unknown = JSON.parse(serialize(message));
  return JSON.stringify(again) === JSON.stringify(message);
}
