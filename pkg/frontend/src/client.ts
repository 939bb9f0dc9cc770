/**
 * Newline-framed TCP client for the episode protocol. One episode per
 * connection; every obs is answered by exactly one act. Adapter output is
 * validated before sending; anything malformed becomes an explicit invalid
 * action (and is logged) rather than a protocol violation.
 */

import net from "node:net";

import type { AgentAdapter } from "./adapters.js";
import type { ActMessageT, EndMessageT, ObsMessageT } from "./protocol.js";
import { ActMessage, makeAct, parseServerLine, serialize } from "./protocol.js";

export interface EpisodeResult {
  episodeId: string;
  end: EndMessageT;
  transcript: ObsMessageT[];
  actions: ActMessageT[];
}

export interface RunSummary {
  episodes: number;
  meanReward: number;
  meanNdcg10: number;
  actionCounts: Record<string, number>;
  invalidReplacements: number;
}

export class LineSocket {
  private buffer = "";
  private lines: string[] = [];
  private resolvers: ((line: string | null) => void)[] = [];
  private closed = false;

  constructor(private sock: net.Socket) {
    sock.on("data", (chunk) => {
      this.buffer += chunk.toString("utf-8");
      let idx;
      while ((idx = this.buffer.indexOf("\n")) >= 0) {
        this.push(this.buffer.slice(0, idx));
        this.buffer = this.buffer.slice(idx + 1);
      }
    });
    const finish = () => {
      this.closed = true;
      while (this.resolvers.length > 0) this.resolvers.shift()!(null);
    };
    sock.on("end", finish);
    sock.on("close", finish);
    sock.on("error", finish);
  }

  private push(line: string): void {
    const resolver = this.resolvers.shift();
    if (resolver) resolver(line);
    else this.lines.push(line);
  }

  readLine(): Promise<string | null> {
    if (this.lines.length > 0) return Promise.resolve(this.lines.shift()!);
    if (this.closed) return Promise.resolve(null);
    return new Promise((resolve) => this.resolvers.push(resolve));
  }

  writeLine(line: string): void {
    this.sock.write(line + "\n");
  }

  close(): void {
    this.sock.destroy();
  }
}

export function connect(host: string, port: number, timeoutMs = 10_000): Promise<LineSocket> {
  return new Promise((resolve, reject) => {
    const sock = net.createConnection({ host, port });
    const timer = setTimeout(() => {
      sock.destroy();
      reject(new Error(`connection to ${host}:${port} timed out`));
    }, timeoutMs);
    sock.once("connect", () => {
      clearTimeout(timer);
      resolve(new LineSocket(sock));
    });
    sock.once("error", (err) => {
      clearTimeout(timer);
      reject(new Error(`cannot reach episode server at ${host}:${port}: ${err.message}`));
    });
  });
}

/** One episode in flight per session; obs and acts strictly alternate. */
export class ClientSession {
  transcript: ObsMessageT[] = [];
  actions: ActMessageT[] = [];
  invalidReplacements = 0;

  constructor(private channel: LineSocket, private adapter: AgentAdapter) {}

  async runEpisode(): Promise<EpisodeResult | null> {
    let episodeId: string | null = null;
    for (;;) {
      const line = await this.channel.readLine();
      if (line === null) {
        if (episodeId === null) return null; // server out of episodes
        throw new Error(`server dropped mid-episode ${episodeId}`);
      }
      const message = parseServerLine(line);
      if (message.type === "end") {
        if (episodeId === null) throw new Error("end before any observation");
        return {
          episodeId,
          end: message,
          transcript: this.transcript,
          actions: this.actions,
        };
      }
      episodeId = message.episode_id;
      this.transcript.push(message);
      let act: ActMessageT;
      try {
        act = ActMessage.parse(await this.adapter.act(message, this.transcript.slice(0, -1)));
      } catch (err) {
        console.error(`adapter output invalid, substituting invalid action: ${String(err)}`);
        this.invalidReplacements += 1;
        act = makeAct("invalid", {});
      }
      this.actions.push(act);
      this.channel.writeLine(serialize(act));
    }
  }
}

export async function runEpisodes(
  host: string,
  port: number,
  makeAdapter: () => AgentAdapter,
  n: number,
): Promise<{ results: EpisodeResult[]; summary: RunSummary }> {
  const results: EpisodeResult[] = [];
  let invalid = 0;
  for (let i = 0; i < n; i += 1) {
    const channel = await connect(host, port);
    const session = new ClientSession(channel, makeAdapter());
    try {
      const result = await session.runEpisode();
      if (result === null) break;
      results.push(result);
      invalid += session.invalidReplacements;
    } finally {
      channel.close();
    }
  }
  const counts: Record<string, number> = {};
  for (const r of results) {
    for (const act of r.actions) {
      counts[act.action.kind] = (counts[act.action.kind] ?? 0) + 1;
    }
  }
  const summary: RunSummary = {
    episodes: results.length,
    meanReward: results.length
      ? results.reduce((s, r) => s + r.end.reward, 0) / results.length
      : 0,
    meanNdcg10: results.length
      ? results.reduce((s, r) => s + r.end.ndcg10, 0) / results.length
      : 0,
    actionCounts: counts,
    invalidReplacements: invalid,
  };
  return { results, summary };
}
