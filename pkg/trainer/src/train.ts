/**
 * Training entry point: drives the env server over the wire protocol and
 * writes a checkpoint plus a CSV learning curve.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { A2CAgent, Mode, PAPER_DEFAULTS, train } from "./a2c";
import { EnvClient } from "./client";
import { Adam, PolicyValueNet } from "./net";

export const FEE_HEAD_SIZES = [51, 51, 11];
export const MATCHING_HEAD_SIZES = [21];

export async function trainFromScratch(options: {
  configDir: string;
  configRef: string;
  mode: Mode;
  episodes: number;
  seed: number;
  learningRate?: number;
  entropyWeight?: number;
  batchEpisodes?: number;
  log?: (line: string) => void;
}): Promise<{ agent: A2CAgent; curve: Array<Record<string, number>>; obsSize: number }> {
  const client = EnvClient.spawnStdio(options.configDir);
  try {
    const headSizes = options.mode === "fee_setting" ? FEE_HEAD_SIZES : MATCHING_HEAD_SIZES;
    const probe = await client.reset(options.configRef, 0, options.mode);
    const obsSize = probe.observation.length;
    const net = new PolicyValueNet(obsSize, headSizes, options.seed);
    const hp = { ...PAPER_DEFAULTS[options.mode] };
    if (options.learningRate !== undefined) hp.learningRate = options.learningRate;
    if (options.entropyWeight !== undefined) hp.entropyWeight = options.entropyWeight;
    if (options.batchEpisodes !== undefined) hp.batchEpisodes = options.batchEpisodes;
    const agent = new A2CAgent(net, options.mode, hp);
    const optimizer = new Adam(net.params, hp.learningRate);
    const result = await train(agent, client, options.configRef, options.episodes, options.seed, optimizer, options.log);
    return { agent, curve: result.curve, obsSize };
  } finally {
    await client.close();
  }
}

export function saveCheckpoint(
  file: string,
  agent: A2CAgent,
  obsSize: number,
  configRef: string,
): void {
  fs.mkdirSync(path.dirname(path.resolve(file)), { recursive: true });
  fs.writeFileSync(
    file,
    JSON.stringify({
      mode: agent.mode,
      obs_size: obsSize,
      head_sizes: agent.net.headSizes,
      config_ref: configRef,
      hyperparams: agent.hp,
      params: agent.net.serialize(),
    }),
  );
}

export function saveCurve(file: string, curve: Array<Record<string, number>>): void {
  const lines = ["episode,mean_return,policy_loss,value_loss,entropy"];
  for (const row of curve) {
    lines.push([row.episode, row.meanReturn, row.policyLoss, row.valueLoss, row.entropy].join(","));
  }
  fs.writeFileSync(file, lines.join("\n") + "\n");
}

async function main(): Promise<void> {
  const args = new Map<string, string>();
  for (let i = 2; i < process.argv.length; i += 2) args.set(process.argv[i], process.argv[i + 1]);
  const mode = (args.get("--mode") ?? "fee_setting") as Mode;
  const configDir = args.get("--config-dir") ?? "../configs";
  const configRef = args.get("--config") ?? "small_4x4";
  const episodes = Number(args.get("--episodes") ?? 2000);
  const seed = Number(args.get("--seed") ?? 1);
  const out = args.get("--out") ?? "checkpoints/policy.json";
  const { agent, curve, obsSize } = await trainFromScratch({
    configDir,
    configRef,
    mode,
    episodes,
    seed,
    learningRate: args.has("--lr") ? Number(args.get("--lr")) : undefined,
    entropyWeight: args.has("--entropy") ? Number(args.get("--entropy")) : undefined,
    batchEpisodes: args.has("--batch") ? Number(args.get("--batch")) : undefined,
    log: (line) => console.log(line),
  });
  saveCheckpoint(out, agent, obsSize, configRef);
  saveCurve(out.replace(/\.json$/, "") + "_curve.csv", curve);
  console.log(`checkpoint written to ${out}`);
}

if (require.main === module) {
  main().catch((err) => {
    console.error(err);
    process.exit(1);
  });
}
