/**
 * Gradient correctness: central finite differences against the
 * hand-coded backprop, on a tiny 2-layer config with a rank-2 adapter.
 */

import { describe, expect, it } from 'vitest';

import {
  AdapterConfig,
  ATTENTION_MODULES,
  LoraModel,
  ModelSpec,
  getAdapterCoordinate,
  sampleAdapterGradient,
  sampleLoss,
  setAdapterCoordinate,
} from '../src/model.js';

const FD_EPSILON = 1e-4;
const FD_TOLERANCE = 1e-2; // the contract is relative error in f32
const PROBES = 20;

const TINY_SPEC: ModelSpec = {
  name: 'toy-2layer',
  dModel: 8,
  layers: 2,
  maxSeqLen: 32,
  seed: 1234,
};

const TINY_ADAPTER: AdapterConfig = {
  rank: 2,
  alpha: 4,
  targetModules: [...ATTENTION_MODULES],
};

// deterministic probe positions without pulling in an rng dependency
function lcg(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (Math.imul(s, 1664525) + 1013904223) >>> 0;
    return s / 4294967296;
  };
}

function centralDifference(model: LoraModel, tokens: Uint8Array, index: number): number {
  const original = getAdapterCoordinate(model, index);
  setAdapterCoordinate(model, index, original + FD_EPSILON);
  const up = sampleLoss(model, tokens);
  setAdapterCoordinate(model, index, original - FD_EPSILON);
  const down = sampleLoss(model, tokens);
  setAdapterCoordinate(model, index, original);
  return (up - down) / (2 * FD_EPSILON);
}

describe('adapter gradient', () => {
  it('matches central finite differences on 20 random coordinates', () => {
    const model = new LoraModel(TINY_SPEC, TINY_ADAPTER);
    const tokens = new Uint8Array(Buffer.from(
      'def probe(x):\n    return x * 3', 'utf-8'));
    const grad = sampleAdapterGradient(model, tokens);
    const analytic = Float32Array.from(grad); // the values that hit the disk
    const next = lcg(77);
    let worst = 0;
    for (let p = 0; p < PROBES; p++) {
      const index = Math.floor(next() * grad.length);
      const fd = centralDifference(model, tokens, index);
      const g = analytic[index];
      const rel = Math.abs(fd - g) / Math.max(Math.abs(fd), Math.abs(g), 1e-8);
      worst = Math.max(worst, rel);
      expect(rel).toBeLessThanOrEqual(FD_TOLERANCE);
    }
    // the f64 backprop should beat the f32 contract comfortably
    expect(worst).toBeLessThan(1e-3);
  });

  it('flattens to the advertised adapter dimension', () => {
    const model = new LoraModel(TINY_SPEC, TINY_ADAPTER);
    // 2 layers x 4 modules x 2 factors x (8 x 2) values
    expect(model.adapterDim()).toBe(2 * 4 * 2 * 8 * 2);
    const grad = sampleAdapterGradient(model, new Uint8Array([10, 20, 30]));
    expect(grad.length).toBe(model.adapterDim());
    expect(grad.some((v) => v !== 0)).toBe(true);
  });

  it('covers only the adapted modules', () => {
    const partial = new LoraModel(TINY_SPEC, {
      rank: 2,
      alpha: 4,
      targetModules: ['q_proj', 'v_proj'],
    });
    expect(partial.adapterDim()).toBe(2 * 2 * 2 * 8 * 2);
    expect(partial.adapterParameterNames()).toEqual([
      'layers.0.q_proj.lora_a',
      'layers.0.q_proj.lora_b',
      'layers.0.v_proj.lora_a',
      'layers.0.v_proj.lora_b',
      'layers.1.q_proj.lora_a',
      'layers.1.q_proj.lora_b',
      'layers.1.v_proj.lora_a',
      'layers.1.v_proj.lora_b',
    ]);
  });

  it('returns a zero row for a sequence with no transition', () => {
    const model = new LoraModel(TINY_SPEC, TINY_ADAPTER);
    const grad = sampleAdapterGradient(model, new Uint8Array([65]));
    expect(grad.every((v) => v === 0)).toBe(true);
  });
});

describe('loss', () => {
  it('is finite, positive, and near log(256) at a fresh init', () => {
    const model = new LoraModel(TINY_SPEC, TINY_ADAPTER);
    const loss = sampleLoss(model, new Uint8Array(Buffer.from('hello world', 'utf-8')));
    expect(Number.isFinite(loss)).toBe(true);
    expect(loss).toBeGreaterThan(0);
    expect(Math.abs(loss - Math.log(256))).toBeLessThan(3);
  });

  it('is deterministic for a fixed seed', () => {
    const a = new LoraModel(TINY_SPEC, TINY_ADAPTER);
    const b = new LoraModel(TINY_SPEC, TINY_ADAPTER);
    const tokens = new Uint8Array(Buffer.from('same bytes', 'utf-8'));
    expect(sampleLoss(a, tokens)).toBe(sampleLoss(b, tokens));
  });

  it('differs across seeds', () => {
    const a = new LoraModel(TINY_SPEC, TINY_ADAPTER);
    const b = new LoraModel({ ...TINY_SPEC, seed: 999 }, TINY_ADAPTER);
    const tokens = new Uint8Array(Buffer.from('same bytes', 'utf-8'));
    expect(sampleLoss(a, tokens)).not.toBe(sampleLoss(b, tokens));
  });
});
