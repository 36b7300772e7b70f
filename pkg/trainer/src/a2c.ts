/**
 * Advantage actor-critic on full-episode rollouts.
 *
 * Per-step losses over observed returns R_k and value estimates V(o_k):
 *   policy:  -log pi(a_k | o_k) * (R_k - V(o_k)) - beta * H(pi(. | o_k))
 *   value:   (R_k - V(o_k))^2
 * The advantage is treated as a constant inside the policy term; batches are
 * whole episodes and one Adam step is taken per batch.
 */

import { Action, EnvClient, StateMessage } from "./client";
import { Rng, entropyOf, mean, softmax } from "./math";
import { Adam, PolicyValueNet, StepCache } from "./net";

export type Mode = "fee_setting" | "matching";

export interface Hyperparams {
  learningRate: number;
  gamma: number;
  entropyWeight: number;
  valueWeight: number;
  batchEpisodes: number;
}

export const PAPER_DEFAULTS: Record<Mode, Hyperparams> = {
  fee_setting: { learningRate: 1e-4, gamma: 0.99, entropyWeight: 0.01, valueWeight: 0.5, batchEpisodes: 4 },
  matching: { learningRate: 1e-4, gamma: 0.99, entropyWeight: 0.01, valueWeight: 0.5, batchEpisodes: 16 },
};

export interface StepLoss {
  policyLoss: number;
  valueLoss: number;
  entropy: number;
  dLogits: Float64Array[];
  dValue: number;
}

/**
 * Loss and logit/value gradients for one decision step.
 *
 * dValue is the gradient of (valueWeight * valueLoss); the policy term sees
 * the advantage as data, exactly as the loss definitions prescribe.
 */
export function stepLoss(
  logits: Float64Array[],
  actions: number[],
  ret: number,
  value: number,
  entropyWeight: number,
  valueWeight: number,
): StepLoss {
  const advantage = ret - value;
  let logProb = 0;
  let entropy = 0;
  const dLogits: Float64Array[] = [];
  for (let headIndex = 0; headIndex < logits.length; headIndex++) {
    const probs = softmax(logits[headIndex]);
    const a = actions[headIndex];
    logProb += Math.log(Math.max(probs[a], 1e-300));
    const h = entropyOf(probs);
    entropy += h;
    const d = new Float64Array(probs.length);
    for (let i = 0; i < probs.length; i++) {
      const indicator = i === a ? 1 : 0;
      // d(-logpi*A)/dz then d(-beta*H)/dz.
      d[i] = (probs[i] - indicator) * advantage + entropyWeight * probs[i] * (Math.log(Math.max(probs[i], 1e-300)) + h);
    }
    dLogits.push(d);
  }
  const policyLoss = -logProb * advantage - entropyWeight * entropy;
  const valueLoss = advantage * advantage;
  const dValue = valueWeight * 2 * (value - ret);
  return { policyLoss, valueLoss, entropy, dLogits, dValue };
}

export function discountedReturns(rewards: number[], gamma: number): number[] {
  const returns = new Array<number>(rewards.length);
  let acc = 0;
  for (let k = rewards.length - 1; k >= 0; k--) {
    acc = rewards[k] + gamma * acc;
    returns[k] = acc;
  }
  return returns;
}

export interface EpisodeTrace {
  observations: Float64Array[];
  actions: number[][];
  rewards: number[];
  infos: Record<string, unknown>[];
  return0: number;
}

export interface Rollout {
  trace: EpisodeTrace;
  caches: StepCache[];
  logits: Float64Array[][];
  values: number[];
}

export class A2CAgent {
  constructor(
    readonly net: PolicyValueNet,
    readonly mode: Mode,
    readonly hp: Hyperparams,
  ) {}

  actionFor(indices: number[]): Action {
    if (this.mode === "fee_setting") {
      return { pb_tick: indices[0], ps_tick: indices[1], pr_tick: indices[2] };
    }
    // Single categorical over the 21 distinct strategies.
    const flat = indices[0];
    return flat < 11 ? { rule: 0, threshold_tick: flat } : { rule: 1, threshold_tick: flat - 11 };
  }

  async rollout(
    client: EnvClient,
    configRef: string,
    seed: number,
    rng: Rng | null,
    gamma: number,
  ): Promise<Rollout> {
    let state = await client.reset(configRef, seed, this.mode);
    let { h, c } = this.net.initialState();
    const trace: EpisodeTrace = { observations: [], actions: [], rewards: [], infos: [], return0: 0 };
    const caches: StepCache[] = [];
    const logitsPerStep: Float64Array[][] = [];
    const values: number[] = [];
    while (!state.done) {
      const obs = Float64Array.from(state.observation);
      const out = this.net.forward(obs, h, c);
      h = out.h;
      c = out.c;
      const indices = out.logits.map((logit) => {
        const probs = softmax(logit);
        if (rng === null) {
          let best = 0;
          for (let i = 1; i < probs.length; i++) if (probs[i] > probs[best]) best = i;
          return best;
        }
        return rng.categorical(probs);
      });
      state = await client.step(this.actionFor(indices));
      trace.observations.push(obs);
      trace.actions.push(indices);
      trace.rewards.push(state.reward ?? 0);
      trace.infos.push(state.info);
      caches.push(out.cache);
      logitsPerStep.push(out.logits);
      values.push(out.value);
    }
    trace.return0 = discountedReturns(trace.rewards, gamma)[0] ?? 0;
    return { trace, caches, logits: logitsPerStep, values };
  }

  /** One Adam update from a batch of episodes; returns summary statistics. */
  update(rollouts: Rollout[], optimizer: Adam): { meanReturn: number; policyLoss: number; valueLoss: number; entropy: number } {
    this.net.zeroGrads();
    let policyTotal = 0;
    let valueTotal = 0;
    let entropyTotal = 0;
    let steps = 0;
    for (const rollout of rollouts) {
      const returns = discountedReturns(rollout.trace.rewards, this.hp.gamma);
      steps += returns.length;
    }
    const scale = 1 / Math.max(steps, 1);
    for (const rollout of rollouts) {
      const returns = discountedReturns(rollout.trace.rewards, this.hp.gamma);
      const dLogits: Float64Array[][] = [];
      const dValues: number[] = [];
      for (let k = 0; k < returns.length; k++) {
        const loss = stepLoss(
          rollout.logits[k],
          rollout.trace.actions[k],
          returns[k],
          rollout.values[k],
          this.hp.entropyWeight,
          this.hp.valueWeight,
        );
        policyTotal += loss.policyLoss;
        valueTotal += loss.valueLoss;
        entropyTotal += loss.entropy;
        dLogits.push(loss.dLogits.map((d) => d.map((x) => x * scale) as Float64Array));
        dValues.push(loss.dValue * scale);
      }
      this.net.backwardEpisode(rollout.caches, dLogits, dValues);
    }
    optimizer.step();
    return {
      meanReturn: mean(rollouts.map((r) => r.trace.return0)),
      policyLoss: policyTotal / Math.max(steps, 1),
      valueLoss: valueTotal / Math.max(steps, 1),
      entropy: entropyTotal / Math.max(steps, 1),
    };
  }
}

export interface TrainResult {
  curve: Array<{ episode: number; meanReturn: number; policyLoss: number; valueLoss: number; entropy: number }>;
  episodes: number;
}

export async function train(
  agent: A2CAgent,
  client: EnvClient,
  configRef: string,
  episodes: number,
  seed: number,
  optimizer: Adam,
  log?: (line: string) => void,
): Promise<TrainResult> {
  const actionRng = new Rng(seed * 7919 + 17);
  const curve: TrainResult["curve"] = [];
  let done = 0;
  let update = 0;
  while (done < episodes) {
    const batch: Rollout[] = [];
    const size = Math.min(agent.hp.batchEpisodes, episodes - done);
    for (let b = 0; b < size; b++) {
      batch.push(await agent.rollout(client, configRef, seed * 1_000_000 + done + b, actionRng, agent.hp.gamma));
    }
    done += size;
    update += 1;
    const stats = agent.update(batch, optimizer);
    curve.push({ episode: done, ...stats });
    if (log && update % 25 === 0) {
      log(`episode ${done}: mean return ${stats.meanReturn.toFixed(3)}, entropy ${stats.entropy.toFixed(3)}`);
    }
  }
  return { curve, episodes: done };
}

export async function evaluateReturns(
  agent: A2CAgent,
  client: EnvClient,
  configRef: string,
  seeds: number[],
  greedy = true,
): Promise<number[]> {
  const out: number[] = [];
  const rng = greedy ? null : new Rng(1234);
  for (const seed of seeds) {
    const rollout = await agent.rollout(client, configRef, seed, rng, agent.hp.gamma);
    out.push(rollout.trace.return0);
  }
  return out;
}

export async function randomPolicyReturns(
  client: EnvClient,
  configRef: string,
  mode: Mode,
  headSizes: number[],
  seeds: number[],
  gamma: number,
  rngSeed = 99,
): Promise<number[]> {
  const rng = new Rng(rngSeed);
  const out: number[] = [];
  for (const seed of seeds) {
    let state = await client.reset(configRef, seed, mode);
    const rewards: number[] = [];
    while (!state.done) {
      const indices = headSizes.map((n) => rng.int(n));
      const action: Action =
        mode === "fee_setting"
          ? { pb_tick: indices[0], ps_tick: indices[1], pr_tick: indices[2] }
          : indices[0] < 11
            ? { rule: 0, threshold_tick: indices[0] }
            : { rule: 1, threshold_tick: indices[0] - 11 };
      state = await client.step(action);
      rewards.push(state.reward ?? 0);
    }
    out.push(discountedReturns(rewards, gamma)[0] ?? 0);
  }
  return out;
}
