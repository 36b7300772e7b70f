/**
 * Recurrent actor-critic network with manual backprop.
 *
 * Layout: shared linear layer (256, tanh) -> LSTM cell (128) -> one linear
 * layer (128, tanh) per branch -> categorical heads / scalar value. The fee
 * branch carries three heads (one per fee grid); the matching branch one
 * head over the 21 strategies.
 */

import { Rng, affine, affineBackward, sigmoid, softmax, tanhVec, zeros } from "./math";

export const TRUNK_SIZE = 256;
export const LSTM_SIZE = 128;
export const BRANCH_SIZE = 128;

export interface Param {
  name: string;
  value: Float64Array;
  grad: Float64Array;
}

function makeParam(name: string, size: number): Param {
  return { name, value: new Float64Array(size), grad: new Float64Array(size) };
}

function initMatrix(param: Param, rows: number, cols: number, rng: Rng): void {
  const scale = Math.sqrt(1 / cols);
  for (let i = 0; i < rows * cols; i++) param.value[i] = rng.normal() * scale;
}

export interface StepCache {
  x: Float64Array;
  trunkPre: Float64Array;
  trunk: Float64Array;
  hPrev: Float64Array;
  cPrev: Float64Array;
  gates: Float64Array; // [i f o g] after nonlinearity
  c: Float64Array;
  h: Float64Array;
  tanhC: Float64Array;
  actorPre: Float64Array;
  actor: Float64Array;
  criticPre: Float64Array;
  critic: Float64Array;
  logits: Float64Array[];
  value: number;
}

export interface StepOutput {
  logits: Float64Array[];
  value: number;
  h: Float64Array;
  c: Float64Array;
  cache: StepCache;
}

export class PolicyValueNet {
  readonly obsSize: number;
  readonly headSizes: number[];
  readonly params: Param[] = [];

  private trunkW: Param;
  private trunkB: Param;
  private lstmWx: Param;
  private lstmWh: Param;
  private lstmB: Param;
  private actorW: Param;
  private actorB: Param;
  private headW: Param[];
  private headB: Param[];
  private criticW: Param;
  private criticB: Param;
  private valueW: Param;
  private valueB: Param;

  constructor(obsSize: number, headSizes: number[], seed = 1) {
    this.obsSize = obsSize;
    this.headSizes = headSizes;
    const rng = new Rng(seed);
    this.trunkW = this.add("trunk.W", TRUNK_SIZE * obsSize);
    this.trunkB = this.add("trunk.b", TRUNK_SIZE);
    this.lstmWx = this.add("lstm.Wx", 4 * LSTM_SIZE * TRUNK_SIZE);
    this.lstmWh = this.add("lstm.Wh", 4 * LSTM_SIZE * LSTM_SIZE);
    this.lstmB = this.add("lstm.b", 4 * LSTM_SIZE);
    this.actorW = this.add("actor.W", BRANCH_SIZE * LSTM_SIZE);
    this.actorB = this.add("actor.b", BRANCH_SIZE);
    this.headW = headSizes.map((n, i) => this.add(`head${i}.W`, n * BRANCH_SIZE));
    this.headB = headSizes.map((n, i) => this.add(`head${i}.b`, n));
    this.criticW = this.add("critic.W", BRANCH_SIZE * LSTM_SIZE);
    this.criticB = this.add("critic.b", BRANCH_SIZE);
    this.valueW = this.add("value.W", BRANCH_SIZE);
    this.valueB = this.add("value.b", 1);

    initMatrix(this.trunkW, TRUNK_SIZE, obsSize, rng);
    initMatrix(this.lstmWx, 4 * LSTM_SIZE, TRUNK_SIZE, rng);
    initMatrix(this.lstmWh, 4 * LSTM_SIZE, LSTM_SIZE, rng);
    initMatrix(this.actorW, BRANCH_SIZE, LSTM_SIZE, rng);
    this.headW.forEach((p, i) => initMatrix(p, headSizes[i], BRANCH_SIZE, rng));
    initMatrix(this.criticW, BRANCH_SIZE, LSTM_SIZE, rng);
    initMatrix(this.valueW, 1, BRANCH_SIZE, rng);
    // Forget-gate bias starts at 1 so early gradients pass through time.
    for (let i = LSTM_SIZE; i < 2 * LSTM_SIZE; i++) this.lstmB.value[i] = 1.0;
  }

  private add(name: string, size: number): Param {
    const p = makeParam(name, size);
    this.params.push(p);
    return p;
  }

  initialState(): { h: Float64Array; c: Float64Array } {
    return { h: zeros(LSTM_SIZE), c: zeros(LSTM_SIZE) };
  }

  zeroGrads(): void {
    for (const p of this.params) p.grad.fill(0);
  }

  forward(obs: Float64Array, h: Float64Array, c: Float64Array): StepOutput {
    const trunkPre = affine(this.trunkW.value, this.trunkB.value, obs, TRUNK_SIZE, this.obsSize);
    const trunk = tanhVec(trunkPre);
    const zx = affine(this.lstmWx.value, this.lstmB.value, trunk, 4 * LSTM_SIZE, TRUNK_SIZE);
    const zh = affine(this.lstmWh.value, zeros(4 * LSTM_SIZE), h, 4 * LSTM_SIZE, LSTM_SIZE);
    const gates = new Float64Array(4 * LSTM_SIZE);
    const cNew = new Float64Array(LSTM_SIZE);
    const hNew = new Float64Array(LSTM_SIZE);
    const tanhC = new Float64Array(LSTM_SIZE);
    for (let j = 0; j < LSTM_SIZE; j++) {
      const zi = zx[j] + zh[j];
      const zf = zx[LSTM_SIZE + j] + zh[LSTM_SIZE + j];
      const zo = zx[2 * LSTM_SIZE + j] + zh[2 * LSTM_SIZE + j];
      const zg = zx[3 * LSTM_SIZE + j] + zh[3 * LSTM_SIZE + j];
      const gi = sigmoid(zi);
      const gf = sigmoid(zf);
      const go = sigmoid(zo);
      const gg = Math.tanh(zg);
      gates[j] = gi;
      gates[LSTM_SIZE + j] = gf;
      gates[2 * LSTM_SIZE + j] = go;
      gates[3 * LSTM_SIZE + j] = gg;
      cNew[j] = gf * c[j] + gi * gg;
      tanhC[j] = Math.tanh(cNew[j]);
      hNew[j] = go * tanhC[j];
    }
    const actorPre = affine(this.actorW.value, this.actorB.value, hNew, BRANCH_SIZE, LSTM_SIZE);
    const actor = tanhVec(actorPre);
    const logits = this.headSizes.map((n, i) =>
      affine(this.headW[i].value, this.headB[i].value, actor, n, BRANCH_SIZE),
    );
    const criticPre = affine(this.criticW.value, this.criticB.value, hNew, BRANCH_SIZE, LSTM_SIZE);
    const critic = tanhVec(criticPre);
    let value = this.valueB.value[0];
    for (let j = 0; j < BRANCH_SIZE; j++) value += this.valueW.value[j] * critic[j];
    const cache: StepCache = {
      x: obs,
      trunkPre,
      trunk,
      hPrev: h,
      cPrev: c,
      gates,
      c: cNew,
      h: hNew,
      tanhC,
      actorPre,
      actor,
      criticPre,
      critic,
      logits,
      value,
    };
    return { logits, value, h: hNew, c: cNew, cache };
  }

  /**
   * Backprop one episode given per-step gradients on head logits and on the
   * value output. Runs backward through time, accumulating into grads.
   */
  backwardEpisode(caches: StepCache[], dLogits: Float64Array[][], dValues: number[]): void {
    let dhNext = zeros(LSTM_SIZE);
    let dcNext = zeros(LSTM_SIZE);
    for (let t = caches.length - 1; t >= 0; t--) {
      const cache = caches[t];
      const dh = new Float64Array(dhNext);
      // Actor branch.
      let dActor = zeros(BRANCH_SIZE);
      for (let i = 0; i < this.headSizes.length; i++) {
        const d = affineBackward(
          this.headW[i].value,
          cache.actor,
          dLogits[t][i],
          this.headW[i].grad,
          this.headB[i].grad,
          this.headSizes[i],
          BRANCH_SIZE,
        );
        for (let j = 0; j < BRANCH_SIZE; j++) dActor[j] += d[j];
      }
      const dActorPre = new Float64Array(BRANCH_SIZE);
      for (let j = 0; j < BRANCH_SIZE; j++) {
        dActorPre[j] = dActor[j] * (1 - cache.actor[j] * cache.actor[j]);
      }
      const dhActor = affineBackward(
        this.actorW.value,
        cache.h,
        dActorPre,
        this.actorW.grad,
        this.actorB.grad,
        BRANCH_SIZE,
        LSTM_SIZE,
      );
      // Critic branch.
      const dv = dValues[t];
      this.valueB.grad[0] += dv;
      const dCritic = new Float64Array(BRANCH_SIZE);
      for (let j = 0; j < BRANCH_SIZE; j++) {
        this.valueW.grad[j] += dv * cache.critic[j];
        dCritic[j] = dv * this.valueW.value[j] * (1 - cache.critic[j] * cache.critic[j]);
      }
      const dhCritic = affineBackward(
        this.criticW.value,
        cache.h,
        dCritic,
        this.criticW.grad,
        this.criticB.grad,
        BRANCH_SIZE,
        LSTM_SIZE,
      );
      for (let j = 0; j < LSTM_SIZE; j++) dh[j] += dhActor[j] + dhCritic[j];

      // LSTM cell.
      const dz = new Float64Array(4 * LSTM_SIZE);
      const dcPrev = new Float64Array(LSTM_SIZE);
      for (let j = 0; j < LSTM_SIZE; j++) {
        const gi = cache.gates[j];
        const gf = cache.gates[LSTM_SIZE + j];
        const go = cache.gates[2 * LSTM_SIZE + j];
        const gg = cache.gates[3 * LSTM_SIZE + j];
        const dc = dcNext[j] + dh[j] * go * (1 - cache.tanhC[j] * cache.tanhC[j]);
        const dgo = dh[j] * cache.tanhC[j];
        const dgi = dc * gg;
        const dgf = dc * cache.cPrev[j];
        const dgg = dc * gi;
        dz[j] = dgi * gi * (1 - gi);
        dz[LSTM_SIZE + j] = dgf * gf * (1 - gf);
        dz[2 * LSTM_SIZE + j] = dgo * go * (1 - go);
        dz[3 * LSTM_SIZE + j] = dgg * (1 - gg * gg);
        dcPrev[j] = dc * gf;
      }
      const dTrunk = affineBackward(
        this.lstmWx.value,
        cache.trunk,
        dz,
        this.lstmWx.grad,
        this.lstmB.grad,
        4 * LSTM_SIZE,
        TRUNK_SIZE,
      );
      const dhPrev = affineBackward(
        this.lstmWh.value,
        cache.hPrev,
        dz,
        this.lstmWh.grad,
        new Float64Array(4 * LSTM_SIZE), // recurrent path shares the gate bias
        4 * LSTM_SIZE,
        LSTM_SIZE,
      );
      const dTrunkPre = new Float64Array(TRUNK_SIZE);
      for (let j = 0; j < TRUNK_SIZE; j++) {
        dTrunkPre[j] = dTrunk[j] * (1 - cache.trunk[j] * cache.trunk[j]);
      }
      affineBackward(
        this.trunkW.value,
        cache.x,
        dTrunkPre,
        this.trunkW.grad,
        this.trunkB.grad,
        TRUNK_SIZE,
        this.obsSize,
      );
      dhNext = dhPrev;
      dcNext = dcPrev;
    }
  }

  actionProbs(logits: Float64Array[]): Float64Array[] {
    return logits.map(softmax);
  }

  serialize(): Record<string, number[]> {
    const out: Record<string, number[]> = {};
    for (const p of this.params) out[p.name] = Array.from(p.value);
    return out;
  }

  load(data: Record<string, number[]>): void {
    for (const p of this.params) {
      const stored = data[p.name];
      if (!stored || stored.length !== p.value.length) {
        throw new Error(`checkpoint missing or mis-sized parameter ${p.name}`);
      }
      p.value.set(stored);
    }
  }
}

export class Adam {
  private m: Float64Array[];
  private v: Float64Array[];
  private t = 0;

  constructor(
    private params: Param[],
    private lr = 1e-4,
    private beta1 = 0.9,
    private beta2 = 0.999,
    private eps = 1e-8,
  ) {
    this.m = params.map((p) => new Float64Array(p.value.length));
    this.v = params.map((p) => new Float64Array(p.value.length));
  }

  step(): void {
    this.t += 1;
    const bc1 = 1 - Math.pow(this.beta1, this.t);
    const bc2 = 1 - Math.pow(this.beta2, this.t);
    for (let k = 0; k < this.params.length; k++) {
      const p = this.params[k];
      const m = this.m[k];
      const v = this.v[k];
      for (let i = 0; i < p.value.length; i++) {
        const g = p.grad[i];
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g;
        v[i] = this.beta2 * v[i] + (1 - this.beta2) * g * g;
        p.value[i] -= (this.lr * (m[i] / bc1)) / (Math.sqrt(v[i] / bc2) + this.eps);
      }
    }
  }
}
