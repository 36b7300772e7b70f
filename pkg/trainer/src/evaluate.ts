/**
 * Policy evaluation: per-stage fee statistics (fee mode) or strategy
 * density (matching mode), written as CSV.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { A2CAgent, Mode, PAPER_DEFAULTS, discountedReturns } from "./a2c";
import { EnvClient } from "./client";
import { Rng, mean, standardError } from "./math";
import { PolicyValueNet } from "./net";

export interface StageFeeStats {
  stage: string;
  buyerFee: number;
  buyerFeeSe: number;
  sellerFee: number;
  sellerFeeSe: number;
  referralRate: number;
  referralRateSe: number;
}

const SUBSCRIPTION_TICK = 0.2;
const REFERRAL_TICK = 0.1;
const STAGES = ["pre", "shock", "post", "flat"];

export interface EvalTables {
  meanReturn: number;
  returnSe: number;
  feeByStage: StageFeeStats[];
  strategyDensity: Array<{ rule: number; thresholdTick: number; density: number }>;
}

export async function evaluatePolicy(
  agent: A2CAgent,
  client: EnvClient,
  configRef: string,
  seeds: number[],
  greedy = true,
): Promise<EvalTables> {
  const feeSamples: Record<string, { pb: number[]; ps: number[]; pr: number[] }> = {};
  for (const stage of STAGES) feeSamples[stage] = { pb: [], ps: [], pr: [] };
  const strategyCounts = new Map<string, number>();
  const returns: number[] = [];
  const rng = greedy ? null : new Rng(555);
  let decisions = 0;
  for (const seed of seeds) {
    const rollout = await agent.rollout(client, configRef, seed, rng, agent.hp.gamma);
    returns.push(rollout.trace.return0);
    for (let k = 0; k < rollout.trace.actions.length; k++) {
      const stage = String(rollout.trace.infos[k]["stage"] ?? "flat");
      const indices = rollout.trace.actions[k];
      decisions += 1;
      if (agent.mode === "fee_setting") {
        const bucket = feeSamples[stage] ?? feeSamples["flat"];
        bucket.pb.push(indices[0] * SUBSCRIPTION_TICK);
        bucket.ps.push(indices[1] * SUBSCRIPTION_TICK);
        bucket.pr.push(indices[2] * REFERRAL_TICK);
      } else {
        const flat = indices[0];
        const key = flat < 11 ? `0:${flat}` : `1:${flat - 11}`;
        strategyCounts.set(key, (strategyCounts.get(key) ?? 0) + 1);
      }
    }
  }
  const feeByStage: StageFeeStats[] = [];
  for (const stage of STAGES) {
    const bucket = feeSamples[stage];
    if (!bucket.pb.length) continue;
    feeByStage.push({
      stage,
      buyerFee: mean(bucket.pb),
      buyerFeeSe: standardError(bucket.pb),
      sellerFee: mean(bucket.ps),
      sellerFeeSe: standardError(bucket.ps),
      referralRate: mean(bucket.pr),
      referralRateSe: standardError(bucket.pr),
    });
  }
  const strategyDensity: EvalTables["strategyDensity"] = [];
  for (const [key, count] of [...strategyCounts.entries()].sort()) {
    const [rule, tick] = key.split(":").map(Number);
    strategyDensity.push({ rule, thresholdTick: tick, density: count / Math.max(decisions, 1) });
  }
  return {
    meanReturn: mean(returns),
    returnSe: standardError(returns),
    feeByStage,
    strategyDensity,
  };
}

export async function randomStrategyDensity(
  client: EnvClient,
  configRef: string,
  seeds: number[],
  rngSeed = 7,
): Promise<Map<string, number>> {
  const rng = new Rng(rngSeed);
  const counts = new Map<string, number>();
  let total = 0;
  for (const seed of seeds) {
    let state = await client.reset(configRef, seed, "matching");
    while (!state.done) {
      const flat = rng.int(21);
      const action = flat < 11 ? { rule: 0, threshold_tick: flat } : { rule: 1, threshold_tick: flat - 11 };
      state = await client.step(action);
      const key = `${action.rule}:${action.threshold_tick}`;
      counts.set(key, (counts.get(key) ?? 0) + 1);
      total += 1;
    }
  }
  for (const [key, value] of counts.entries()) counts.set(key, value / total);
  return counts;
}

export function writeEvalTables(tables: EvalTables, outDir: string): string[] {
  fs.mkdirSync(outDir, { recursive: true });
  const written: string[] = [];
  if (tables.feeByStage.length) {
    const lines = ["stage,buyer_fee,buyer_fee_se,seller_fee,seller_fee_se,referral_rate,referral_rate_se"];
    for (const row of tables.feeByStage) {
      lines.push(
        [row.stage, row.buyerFee, row.buyerFeeSe, row.sellerFee, row.sellerFeeSe, row.referralRate, row.referralRateSe].join(","),
      );
    }
    const file = path.join(outDir, "fees_by_stage.csv");
    fs.writeFileSync(file, lines.join("\n") + "\n");
    written.push(file);
  }
  if (tables.strategyDensity.length) {
    const lines = ["rule,threshold_tick,density"];
    for (const row of tables.strategyDensity) {
      lines.push([row.rule, row.thresholdTick, row.density].join(","));
    }
    const file = path.join(outDir, "strategy_density.csv");
    fs.writeFileSync(file, lines.join("\n") + "\n");
    written.push(file);
  }
  return written;
}

export function loadAgent(checkpointPath: string): { agent: A2CAgent; configRef: string } {
  const data = JSON.parse(fs.readFileSync(checkpointPath, "utf-8"));
  const net = new PolicyValueNet(data.obs_size, data.head_sizes, 1);
  net.load(data.params);
  const hp = { ...PAPER_DEFAULTS[data.mode as Mode], ...(data.hyperparams ?? {}) };
  return { agent: new A2CAgent(net, data.mode, hp), configRef: data.config_ref };
}

async function main(): Promise<void> {
  const args = new Map<string, string>();
  for (let i = 2; i < process.argv.length; i += 2) args.set(process.argv[i], process.argv[i + 1]);
  const checkpoint = args.get("--checkpoint");
  if (!checkpoint) {
    console.error("usage: evaluate --checkpoint ckpt.json [--config-dir DIR] [--episodes N] [--out DIR]");
    process.exit(2);
  }
  const { agent, configRef } = loadAgent(checkpoint);
  const configDir = args.get("--config-dir") ?? "../configs";
  const episodes = Number(args.get("--episodes") ?? 50);
  const outDir = args.get("--out") ?? "eval_out";
  const client = EnvClient.spawnStdio(configDir);
  try {
    const seeds = Array.from({ length: episodes }, (_, i) => 10_000 + i);
    const tables = await evaluatePolicy(agent, client, configRef, seeds);
    const files = writeEvalTables(tables, outDir);
    console.log(`mean return ${tables.meanReturn.toFixed(3)} (se ${tables.returnSe.toFixed(3)})`);
    for (const file of files) console.log(file);
  } finally {
    await client.close();
  }
}

if (require.main === module) {
  main().catch((err) => {
    console.error(err);
    process.exit(1);
  });
}

export { discountedReturns };
