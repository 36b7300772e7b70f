/**
 * Small dense math kernels for the trainer. Everything is Float64Array row
 * major; no external tensor library so the numeric path stays auditable.
 */

export function zeros(n: number): Float64Array {
  return new Float64Array(n);
}

/** Deterministic PRNG (mulberry32); good enough for init and sampling. */
export class Rng {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  next(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  int(n: number): number {
    return Math.floor(this.next() * n);
  }

  /** Box-Muller normal draw. */
  normal(): number {
    let u = 0;
    let v = 0;
    while (u === 0) u = this.next();
    while (v === 0) v = this.next();
    return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
  }

  categorical(probs: Float64Array): number {
    const r = this.next();
    let acc = 0;
    for (let i = 0; i < probs.length; i++) {
      acc += probs[i];
      if (r < acc) return i;
    }
    return probs.length - 1;
  }
}

/** y = W x + b, W is (out x in) row major. */
export function affine(W: Float64Array, b: Float64Array, x: Float64Array, out: number, inn: number): Float64Array {
  const y = new Float64Array(out);
  for (let i = 0; i < out; i++) {
    let acc = b[i];
    const row = i * inn;
    for (let j = 0; j < inn; j++) acc += W[row + j] * x[j];
    y[i] = acc;
  }
  return y;
}

/**
 * Backprop through y = W x + b: accumulates dW/db and returns dx.
 */
export function affineBackward(
  W: Float64Array,
  x: Float64Array,
  dy: Float64Array,
  dW: Float64Array,
  db: Float64Array,
  out: number,
  inn: number,
): Float64Array {
  const dx = new Float64Array(inn);
  for (let i = 0; i < out; i++) {
    const g = dy[i];
    if (g === 0) continue;
    db[i] += g;
    const row = i * inn;
    for (let j = 0; j < inn; j++) {
      dW[row + j] += g * x[j];
      dx[j] += g * W[row + j];
    }
  }
  return dx;
}

export function tanhVec(x: Float64Array): Float64Array {
  const y = new Float64Array(x.length);
  for (let i = 0; i < x.length; i++) y[i] = Math.tanh(x[i]);
  return y;
}

export function sigmoid(x: number): number {
  return x >= 0 ? 1 / (1 + Math.exp(-x)) : Math.exp(x) / (1 + Math.exp(x));
}

export function softmax(logits: Float64Array): Float64Array {
  let max = -Infinity;
  for (const v of logits) if (v > max) max = v;
  const p = new Float64Array(logits.length);
  let sum = 0;
  for (let i = 0; i < logits.length; i++) {
    p[i] = Math.exp(logits[i] - max);
    sum += p[i];
  }
  for (let i = 0; i < p.length; i++) p[i] /= sum;
  return p;
}

export function entropyOf(probs: Float64Array): number {
  let h = 0;
  for (const p of probs) if (p > 0) h -= p * Math.log(p);
  return h;
}

export function mean(values: number[]): number {
  return values.length ? values.reduce((a, b) => a + b, 0) / values.length : 0;
}

export function standardError(values: number[]): number {
  const n = values.length;
  if (n < 2) return 0;
  const m = mean(values);
  const variance = values.reduce((acc, v) => acc + (v - m) * (v - m), 0) / (n - 1);
  return Math.sqrt(variance / n);
}
