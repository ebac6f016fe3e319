/**
 * Toy causal transformer with low-rank adapters on the attention
 * projections, plus hand-coded backprop for per-sample adapter
 * gradients.
 *
 * The model is byte-level: embeddings and positional vectors feed a
 * stack of single-head causal attention layers with residual
 * connections, then a linear head over the 256 next-byte classes. The
 * per-sample loss is the mean cross-entropy over the sequence's
 * next-byte transitions. Only the adapter factors (A, B per adapted
 * projection) are differentiated; base weights stay frozen.
 *
 * Everything is built deterministically from a seed, and all math runs
 * in float64. Callers downcast to f32 at the file boundary.
 *
 * @module model
 */

import fs from 'node:fs';

export const VOCAB = 256;

/** Attention projection modules an adapter may attach to. */
export const ATTENTION_MODULES = ['k_proj', 'o_proj', 'q_proj', 'v_proj'] as const;

export class ModelLoadError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'ModelLoadError';
  }
}

export interface ModelSpec {
  name: string;
  dModel: number;
  layers: number;
  maxSeqLen: number;
  seed: number;
}

export interface AdapterConfig {
  rank: number;
  alpha: number;
  targetModules: string[];
}

// ---------------------------------------------------------------------------
// deterministic rng (splitmix32) and small dense matrices
// ---------------------------------------------------------------------------

class Rng {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  nextUint32(): number {
    this.state = (this.state + 0x9e3779b9) >>> 0;
    let z = this.state;
    z = Math.imul(z ^ (z >>> 16), 0x21f0aaad);
    z = Math.imul(z ^ (z >>> 15), 0x735a2d97);
    return (z ^ (z >>> 15)) >>> 0;
  }

  uniform(): number {
    // 32 bits into [0, 1); never returns exactly 1
    return this.nextUint32() / 4294967296;
  }

  normal(): number {
    // Box-Muller; offset the first uniform away from zero for the log
    const u = (this.nextUint32() + 1) / 4294967297;
    const v = this.uniform();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  }
}

export class Matrix {
  readonly rows: number;
  readonly cols: number;
  readonly data: Float64Array;

  constructor(rows: number, cols: number, data?: Float64Array) {
    this.rows = rows;
    this.cols = cols;
    this.data = data ?? new Float64Array(rows * cols);
  }

  static randn(rng: Rng, rows: number, cols: number, std: number): Matrix {
    const m = new Matrix(rows, cols);
    for (let i = 0; i < m.data.length; i++) {
      m.data[i] = rng.normal() * std;
    }
    return m;
  }

  get(i: number, j: number): number {
    return this.data[i * this.cols + j];
  }

  set(i: number, j: number, v: number): void {
    this.data[i * this.cols + j] = v;
  }
}

/** C = A @ B, (m,k) x (k,n) -> (m,n). */
export function matmul(a: Matrix, b: Matrix): Matrix {
  if (a.cols !== b.rows) {
    throw new Error(`matmul shape mismatch (${a.rows},${a.cols}) x (${b.rows},${b.cols})`);
  }
  const out = new Matrix(a.rows, b.cols);
  for (let i = 0; i < a.rows; i++) {
    for (let k = 0; k < a.cols; k++) {
      const aik = a.get(i, k);
      if (aik === 0) continue;
      for (let j = 0; j < b.cols; j++) {
        out.data[i * out.cols + j] += aik * b.get(k, j);
      }
    }
  }
  return out;
}

/** C = A^T @ B, (k,m) x (k,n) -> (m,n). */
export function matmulTransA(a: Matrix, b: Matrix): Matrix {
  if (a.rows !== b.rows) {
    throw new Error(`matmulTransA shape mismatch (${a.rows},${a.cols}) x (${b.rows},${b.cols})`);
  }
  const out = new Matrix(a.cols, b.cols);
  for (let k = 0; k < a.rows; k++) {
    for (let i = 0; i < a.cols; i++) {
      const aki = a.get(k, i);
      if (aki === 0) continue;
      for (let j = 0; j < b.cols; j++) {
        out.data[i * out.cols + j] += aki * b.get(k, j);
      }
    }
  }
  return out;
}

/** C = A @ B^T, (m,k) x (n,k) -> (m,n). */
export function matmulTransB(a: Matrix, b: Matrix): Matrix {
  if (a.cols !== b.cols) {
    throw new Error(`matmulTransB shape mismatch (${a.rows},${a.cols}) x (${b.rows},${b.cols})`);
  }
  const out = new Matrix(a.rows, b.rows);
  for (let i = 0; i < a.rows; i++) {
    for (let j = 0; j < b.rows; j++) {
      let acc = 0;
      for (let k = 0; k < a.cols; k++) {
        acc += a.get(i, k) * b.get(j, k);
      }
      out.data[i * out.cols + j] = acc;
    }
  }
  return out;
}

function addScaled(target: Matrix, source: Matrix, scale: number): void {
  for (let i = 0; i < target.data.length; i++) {
    target.data[i] += scale * source.data[i];
  }
}

// ---------------------------------------------------------------------------
// model assembly
// ---------------------------------------------------------------------------

interface Adapter {
  a: Matrix; // (d, r)
  b: Matrix; // (r, d)
  scale: number; // alpha / rank
}

interface Layer {
  weights: Map<string, Matrix>; // module name -> frozen (d, d)
}

export class LoraModel {
  readonly spec: ModelSpec;
  readonly adapterConfig: AdapterConfig;
  readonly embed: Matrix; // (VOCAB, d)
  readonly pos: Matrix; // (maxSeqLen, d)
  readonly head: Matrix; // (d, VOCAB)
  readonly layers: Layer[];
  /** Keyed by "layers.{i}.{module}". */
  readonly adapters: Map<string, Adapter>;

  constructor(spec: ModelSpec, adapterConfig: AdapterConfig) {
    for (const name of adapterConfig.targetModules) {
      if (!(ATTENTION_MODULES as readonly string[]).includes(name)) {
        throw new ModelLoadError(`unknown adapter target module ${JSON.stringify(name)}`);
      }
    }
    if (adapterConfig.rank < 1) {
      throw new ModelLoadError('adapter rank must be >= 1');
    }
    this.spec = spec;
    this.adapterConfig = adapterConfig;
    const d = spec.dModel;
    const rng = new Rng(spec.seed);
    this.embed = Matrix.randn(rng, VOCAB, d, 0.3);
    this.pos = Matrix.randn(rng, spec.maxSeqLen, d, 0.3);
    this.layers = [];
    for (let i = 0; i < spec.layers; i++) {
      const weights = new Map<string, Matrix>();
      for (const name of ATTENTION_MODULES) {
        weights.set(name, Matrix.randn(rng, d, d, 1 / Math.sqrt(d)));
      }
      this.layers.push({ weights });
    }
    this.head = Matrix.randn(rng, d, VOCAB, 1 / Math.sqrt(d));

    // both adapter factors get a small nonzero init: this tool only
    // exports gradients, and a zero B factor would zero out every
    // gradient entry of the A factor
    this.adapters = new Map();
    const { rank, alpha } = adapterConfig;
    for (let i = 0; i < spec.layers; i++) {
      for (const name of [...adapterConfig.targetModules].sort()) {
        this.adapters.set(`layers.${i}.${name}`, {
          a: Matrix.randn(rng, d, rank, 0.1),
          b: Matrix.randn(rng, rank, d, 0.1),
          scale: alpha / rank,
        });
      }
    }
  }

  /** Frozen weight plus the adapter delta, if one is attached. */
  effectiveWeight(layerIndex: number, module: string): Matrix {
    const base = this.layers[layerIndex].weights.get(module)!;
    const adapter = this.adapters.get(`layers.${layerIndex}.${module}`);
    if (!adapter) return base;
    const eff = new Matrix(base.rows, base.cols, base.data.slice());
    addScaled(eff, matmul(adapter.a, adapter.b), adapter.scale);
    return eff;
  }

  /** Adapter parameter names in the fixed lexicographic flatten order. */
  adapterParameterNames(): string[] {
    const names: string[] = [];
    for (const key of this.adapters.keys()) {
      names.push(`${key}.lora_a`, `${key}.lora_b`);
    }
    return names.sort();
  }

  /** Flat length of one adapter gradient vector. */
  adapterDim(): number {
    const d = this.spec.dModel;
    const r = this.adapterConfig.rank;
    return this.adapters.size * 2 * d * r;
  }

  /** Every parameter counted, frozen base included. */
  fullParameterCount(): number {
    const d = this.spec.dModel;
    let total = VOCAB * d + this.spec.maxSeqLen * d + d * VOCAB;
    total += this.spec.layers * ATTENTION_MODULES.length * d * d;
    return total + this.adapterDim();
  }
}

export function loadModelSpec(path: string): ModelSpec {
  let raw: string;
  try {
    raw = fs.readFileSync(path, 'utf-8');
  } catch (err) {
    throw new ModelLoadError(`cannot read model spec ${path}: ${(err as Error).message}`);
  }
  let parsed: Record<string, unknown>;
  try {
    parsed = JSON.parse(raw);
  } catch (err) {
    throw new ModelLoadError(`model spec ${path} is not valid JSON: ${(err as Error).message}`);
  }
  const spec: ModelSpec = {
    name: String(parsed.name ?? ''),
    dModel: Number(parsed.dModel ?? 0),
    layers: Number(parsed.layers ?? 0),
    maxSeqLen: Number(parsed.maxSeqLen ?? 64),
    seed: Number(parsed.seed ?? 0),
  };
  if (!spec.name) throw new ModelLoadError('model spec needs a name');
  if (!Number.isInteger(spec.dModel) || spec.dModel < 1) {
    throw new ModelLoadError(`bad dModel ${parsed.dModel}`);
  }
  if (!Number.isInteger(spec.layers) || spec.layers < 1) {
    throw new ModelLoadError(`bad layer count ${parsed.layers}`);
  }
  if (!Number.isInteger(spec.maxSeqLen) || spec.maxSeqLen < 2) {
    throw new ModelLoadError(`bad maxSeqLen ${parsed.maxSeqLen}`);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

interface LayerTrace {
  x: Matrix; // layer input (T, d)
  q: Matrix;
  k: Matrix;
  v: Matrix;
  attn: Matrix; // (T, T) causal softmax rows
  context: Matrix; // (T, d) attention-weighted values
  effective: Map<string, Matrix>;
}

interface ForwardTrace {
  hidden: Matrix; // final (T, d)
  logits: Matrix; // (T, VOCAB)
  layers: LayerTrace[];
  tokens: Uint8Array;
}

function softmaxRowInPlace(m: Matrix, row: number, limit: number): void {
  let max = -Infinity;
  for (let j = 0; j < limit; j++) max = Math.max(max, m.get(row, j));
  let sum = 0;
  for (let j = 0; j < limit; j++) {
    const e = Math.exp(m.get(row, j) - max);
    m.set(row, j, e);
    sum += e;
  }
  for (let j = 0; j < limit; j++) m.set(row, j, m.get(row, j) / sum);
}

function forward(model: LoraModel, tokens: Uint8Array): ForwardTrace {
  const d = model.spec.dModel;
  const t = tokens.length;
  let x = new Matrix(t, d);
  for (let i = 0; i < t; i++) {
    for (let j = 0; j < d; j++) {
      x.set(i, j, model.embed.get(tokens[i], j) + model.pos.get(i, j));
    }
  }
  const invSqrtD = 1 / Math.sqrt(d);
  const layerTraces: LayerTrace[] = [];
  for (let li = 0; li < model.spec.layers; li++) {
    const effective = new Map<string, Matrix>();
    for (const name of ATTENTION_MODULES) {
      effective.set(name, model.effectiveWeight(li, name));
    }
    const q = matmul(x, effective.get('q_proj')!);
    const k = matmul(x, effective.get('k_proj')!);
    const v = matmul(x, effective.get('v_proj')!);
    const attn = new Matrix(t, t);
    for (let i = 0; i < t; i++) {
      for (let u = 0; u <= i; u++) {
        let score = 0;
        for (let j = 0; j < d; j++) score += q.get(i, j) * k.get(u, j);
        attn.set(i, u, score * invSqrtD);
      }
      softmaxRowInPlace(attn, i, i + 1);
    }
    const context = new Matrix(t, d);
    for (let i = 0; i < t; i++) {
      for (let u = 0; u <= i; u++) {
        const w = attn.get(i, u);
        for (let j = 0; j < d; j++) {
          context.data[i * d + j] += w * v.get(u, j);
        }
      }
    }
    const out = matmul(context, effective.get('o_proj')!);
    const next = new Matrix(t, d, x.data.slice());
    addScaled(next, out, 1);
    layerTraces.push({ x, q, k, v, attn, context, effective });
    x = next;
  }
  const logits = matmul(x, model.head);
  return { hidden: x, logits, layers: layerTraces, tokens };
}

function meanTokenLossFromLogits(trace: ForwardTrace): number {
  const t = trace.tokens.length;
  let loss = 0;
  for (let i = 0; i < t - 1; i++) {
    let max = -Infinity;
    for (let j = 0; j < VOCAB; j++) max = Math.max(max, trace.logits.get(i, j));
    let sum = 0;
    for (let j = 0; j < VOCAB; j++) sum += Math.exp(trace.logits.get(i, j) - max);
    const target = trace.tokens[i + 1];
    loss += max + Math.log(sum) - trace.logits.get(i, target);
  }
  return loss / (t - 1);
}

/** Mean next-byte cross-entropy of one token sequence. */
export function sampleLoss(model: LoraModel, tokens: Uint8Array): number {
  if (tokens.length < 2) return 0;
  return meanTokenLossFromLogits(forward(model, clampTokens(model, tokens)));
}

function clampTokens(model: LoraModel, tokens: Uint8Array): Uint8Array {
  return tokens.length > model.spec.maxSeqLen
    ? tokens.subarray(0, model.spec.maxSeqLen)
    : tokens;
}

/**
 * Gradient of the mean next-byte loss with respect to every adapter
 * factor, flattened in parameter-name lexicographic order. Sequences
 * with no transition (under two bytes) get an all-zero gradient.
 */
export function sampleAdapterGradient(model: LoraModel, tokens: Uint8Array): Float64Array {
  const flat = new Float64Array(model.adapterDim());
  if (tokens.length < 2) return flat;
  const clamped = clampTokens(model, tokens);
  const trace = forward(model, clamped);
  const d = model.spec.dModel;
  const t = clamped.length;
  const invSqrtD = 1 / Math.sqrt(d);

  // loss -> logits: softmax cross-entropy, averaged over transitions
  const dLogits = new Matrix(t, VOCAB);
  for (let i = 0; i < t - 1; i++) {
    let max = -Infinity;
    for (let j = 0; j < VOCAB; j++) max = Math.max(max, trace.logits.get(i, j));
    let sum = 0;
    for (let j = 0; j < VOCAB; j++) sum += Math.exp(trace.logits.get(i, j) - max);
    for (let j = 0; j < VOCAB; j++) {
      dLogits.set(i, j, Math.exp(trace.logits.get(i, j) - max) / sum / (t - 1));
    }
    const target = clamped[i + 1];
    dLogits.set(i, target, dLogits.get(i, target) - 1 / (t - 1));
  }
  let dX = matmulTransB(dLogits, model.head); // dH = dLogits @ head^T

  const grads = new Map<string, { a: Matrix; b: Matrix }>();
  for (let li = model.spec.layers - 1; li >= 0; li--) {
    const lt = trace.layers[li];
    const dY = dX;
    const dOut = dY; // residual: dX flows through both branches
    const wo = lt.effective.get('o_proj')!;
    const dWo = matmulTransA(lt.context, dOut);
    const dContext = matmulTransB(dOut, wo);

    const dAttn = new Matrix(t, t);
    const dV = new Matrix(t, d);
    for (let i = 0; i < t; i++) {
      for (let u = 0; u <= i; u++) {
        let acc = 0;
        const w = lt.attn.get(i, u);
        for (let j = 0; j < d; j++) {
          acc += dContext.get(i, j) * lt.v.get(u, j);
          dV.data[u * d + j] += w * dContext.get(i, j);
        }
        dAttn.set(i, u, acc);
      }
    }
    // softmax backward per causal row
    const dScores = new Matrix(t, t);
    for (let i = 0; i < t; i++) {
      let dot = 0;
      for (let u = 0; u <= i; u++) dot += lt.attn.get(i, u) * dAttn.get(i, u);
      for (let u = 0; u <= i; u++) {
        dScores.set(i, u, lt.attn.get(i, u) * (dAttn.get(i, u) - dot));
      }
    }
    const dQ = new Matrix(t, d);
    const dK = new Matrix(t, d);
    for (let i = 0; i < t; i++) {
      for (let u = 0; u <= i; u++) {
        const s = dScores.get(i, u) * invSqrtD;
        if (s === 0) continue;
        for (let j = 0; j < d; j++) {
          dQ.data[i * d + j] += s * lt.k.get(u, j);
          dK.data[u * d + j] += s * lt.q.get(i, j);
        }
      }
    }
    const dWq = matmulTransA(lt.x, dQ);
    const dWk = matmulTransA(lt.x, dK);
    const dWv = matmulTransA(lt.x, dV);

    const dXNext = new Matrix(t, d, dY.data.slice()); // residual branch
    addScaled(dXNext, matmulTransB(dQ, lt.effective.get('q_proj')!), 1);
    addScaled(dXNext, matmulTransB(dK, lt.effective.get('k_proj')!), 1);
    addScaled(dXNext, matmulTransB(dV, lt.effective.get('v_proj')!), 1);
    dX = dXNext;

    const byModule: Record<string, Matrix> = {
      q_proj: dWq, k_proj: dWk, v_proj: dWv, o_proj: dWo,
    };
    for (const [module, dW] of Object.entries(byModule)) {
      const key = `layers.${li}.${module}`;
      const adapter = model.adapters.get(key);
      if (!adapter) continue;
      grads.set(key, {
        a: scaleMatrix(matmulTransB(dW, adapter.b), adapter.scale),
        b: scaleMatrix(matmulTransA(adapter.a, dW), adapter.scale),
      });
    }
  }

  // flatten in the published order
  let offset = 0;
  for (const name of model.adapterParameterNames()) {
    const key = name.slice(0, name.lastIndexOf('.'));
    const part = name.endsWith('.lora_a') ? 'a' : 'b';
    const g = grads.get(key)![part];
    flat.set(g.data, offset);
    offset += g.data.length;
  }
  return flat;
}

function scaleMatrix(m: Matrix, s: number): Matrix {
  for (let i = 0; i < m.data.length; i++) m.data[i] *= s;
  return m;
}

/**
 * Read one adapter parameter's current values in flatten order, for
 * finite-difference probing in tests.
 */
export function getAdapterCoordinate(model: LoraModel, flatIndex: number): number {
  const { key, part, inner } = locate(model, flatIndex);
  const adapter = model.adapters.get(key)!;
  return (part === 'a' ? adapter.a : adapter.b).data[inner];
}

export function setAdapterCoordinate(model: LoraModel, flatIndex: number, value: number): void {
  const { key, part, inner } = locate(model, flatIndex);
  const adapter = model.adapters.get(key)!;
  (part === 'a' ? adapter.a : adapter.b).data[inner] = value;
}

function locate(model: LoraModel, flatIndex: number): { key: string; part: 'a' | 'b'; inner: number } {
  const d = model.spec.dModel;
  const r = model.adapterConfig.rank;
  const blockSize = d * r;
  let offset = 0;
  for (const name of model.adapterParameterNames()) {
    if (flatIndex < offset + blockSize) {
      return {
        key: name.slice(0, name.lastIndexOf('.')),
        part: name.endsWith('.lora_a') ? 'a' : 'b',
        inner: flatIndex - offset,
      };
    }
    offset += blockSize;
  }
  throw new RangeError(`flat index ${flatIndex} out of range for adapter dim ${model.adapterDim()}`);
}
