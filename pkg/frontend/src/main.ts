#!/usr/bin/env node
/**
 * bridge-client run     --addr HOST:PORT --adapter NAME --n N
 * bridge-client conform --addr HOST:PORT [--stall SECONDS]
 */

import { ADAPTERS } from "./adapters.js";
import { runEpisodes } from "./client.js";
import { conformanceSuite } from "./conformance.js";

function parseArgs(argv: string[]): { command: string; flags: Record<string, string> } {
  const [command, ...rest] = argv;
  const flags: Record<string, string> = {};
  for (let i = 0; i < rest.length; i += 2) {
    const key = rest[i];
    if (!key.startsWith("--") || i + 1 >= rest.length) {
      throw new Error(`malformed flag near ${key}`);
    }
    flags[key.slice(2)] = rest[i + 1];
  }
  return { command, flags };
}

function parseAddr(addr: string): { host: string; port: number } {
  const idx = addr.lastIndexOf(":");
  if (idx < 0) throw new Error(`--addr must be HOST:PORT, got ${addr}`);
  return { host: addr.slice(0, idx) || "127.0.0.1", port: Number(addr.slice(idx + 1)) };
}

async function main(): Promise<number> {
  const { command, flags } = parseArgs(process.argv.slice(2));
  const { host, port } = parseAddr(flags.addr ?? "127.0.0.1:7501");

  if (command === "run") {
    const adapterName = flags.adapter ?? "scripted-router";
    const makeAdapter = ADAPTERS[adapterName];
    if (!makeAdapter) {
      console.error(`unknown adapter ${adapterName}; have: ${Object.keys(ADAPTERS).join(", ")}`);
      return 2;
    }
    const n = Number(flags.n ?? "10");
    const { summary } = await runEpisodes(host, port, makeAdapter, n);
    console.log(`played ${summary.episodes} episodes with ${adapterName}`);
    console.log(`mean return ${summary.meanReward.toFixed(4)}, mean NDCG@10 ${summary.meanNdcg10.toFixed(4)}`);
    console.log(`action counts: ${JSON.stringify(summary.actionCounts)}`);
    if (summary.invalidReplacements > 0) {
      console.log(`adapter outputs replaced by invalid actions: ${summary.invalidReplacements}`);
    }
    return 0;
  }

  if (command === "conform") {
    const stall = Number(flags.stall ?? "0");
    const { results, allPass } = await conformanceSuite(host, port, stall);
    for (const r of results) {
      const status = r.skipped ? "skip" : r.pass ? " ok " : "FAIL";
      console.log(`[${status}] ${r.name}: ${r.detail}`);
    }
    return allPass ? 0 : 1;
  }

  console.error("usage: bridge-client run|conform --addr HOST:PORT [--adapter NAME] [--n N] [--stall S]");
  return 2;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(String(err instanceof Error ? err.message : err));
    process.exit(3);
  },
);
