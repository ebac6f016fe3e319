/**
 * Wire format tests: exact header bytes, roundtrip, corruption handling.
 */

import fs from 'node:fs';
import os from 'node:os';
import path from 'node:path';

import { afterEach, beforeEach, describe, expect, it } from 'vitest';

import {
  FormatError,
  HEADER_SIZE,
  indexPath,
  readGradients,
  writeGradients,
} from '../src/gradfile.js';

let dir: string;

beforeEach(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), 'grdv-'));
});

afterEach(() => {
  fs.rmSync(dir, { recursive: true, force: true });
});

function out(name: string): string {
  return path.join(dir, name);
}

describe('header layout', () => {
  it('writes the exact 42-byte packed little-endian header', () => {
    const p = out('g.grdv');
    writeGradients(p, ['s0'], [Float32Array.from([1.5, -2, 0.25])], 3, {
      applied: true,
      k: 7,
      seed: 0x1122334455,
    });
    const blob = fs.readFileSync(p);
    expect(blob.length).toBe(HEADER_SIZE + 4 * 3);
    expect(blob.toString('ascii', 0, 4)).toBe('GRDV');
    expect(blob.readUInt32LE(4)).toBe(1); // version
    expect(blob.readUInt8(8)).toBe(0); // dtype f32
    expect(blob.readBigUInt64LE(9)).toBe(3n); // dim
    expect(blob.readBigUInt64LE(17)).toBe(1n); // count
    expect(blob.readUInt8(25)).toBe(1); // projection applied
    expect(blob.readBigUInt64LE(26)).toBe(7n); // k
    expect(blob.readBigUInt64LE(34)).toBe(0x1122334455n); // seed
    expect(blob.readFloatLE(HEADER_SIZE)).toBe(1.5);
    expect(blob.readFloatLE(HEADER_SIZE + 4)).toBe(-2);
  });

  it('rejects a dim/id mismatch before touching the disk', () => {
    expect(() =>
      writeGradients(out('bad.grdv'), ['a', 'b'], [Float32Array.from([1])], 1)
    ).toThrow(FormatError);
    expect(fs.existsSync(out('bad.grdv'))).toBe(false);
  });
});

describe('roundtrip', () => {
  it('reads back what it wrote, meta and ids included', () => {
    const p = out('g.grdv');
    const rows = [
      Float32Array.from([0.5, 1.5]),
      Float32Array.from([-3.25, 4]),
    ];
    writeGradients(p, ['alpha', 'beta'], rows, 2, undefined, {
      flatten_order: ['w.0', 'w.1'],
    });
    const gf = readGradients(p);
    expect(gf.dim).toBe(2);
    expect(gf.sampleIds).toEqual(['alpha', 'beta']);
    expect(Array.from(gf.values)).toEqual([0.5, 1.5, -3.25, 4]);
    expect(gf.projection).toEqual({ applied: false, k: 0, seed: 0 });
    expect(gf.meta).toEqual({ flatten_order: ['w.0', 'w.1'] });
  });

  it('handles an empty file: count 0, dim preserved', () => {
    const p = out('empty.grdv');
    writeGradients(p, [], [], 12);
    const gf = readGradients(p);
    expect(gf.dim).toBe(12);
    expect(gf.sampleIds).toEqual([]);
    expect(gf.values.length).toBe(0);
  });
});

describe('corruption', () => {
  it('rejects a bad magic', () => {
    const p = out('g.grdv');
    writeGradients(p, ['x'], [Float32Array.from([1])], 1);
    const blob = fs.readFileSync(p);
    blob.write('NOPE', 0, 'ascii');
    fs.writeFileSync(p, blob);
    expect(() => readGradients(p)).toThrow(/bad magic/);
  });

  it('rejects a truncated payload', () => {
    const p = out('g.grdv');
    writeGradients(p, ['x'], [Float32Array.from([1, 2])], 2);
    fs.writeFileSync(p, fs.readFileSync(p).subarray(0, HEADER_SIZE + 4));
    expect(() => readGradients(p)).toThrow(/size/);
  });

  it('rejects a missing sidecar', () => {
    const p = out('g.grdv');
    writeGradients(p, ['x'], [Float32Array.from([1])], 1);
    fs.rmSync(indexPath(p));
    expect(() => readGradients(p)).toThrow(/missing sidecar/);
  });

  it('rejects a sidecar that skips a row', () => {
    const p = out('g.grdv');
    writeGradients(p, ['x', 'y'], [Float32Array.from([1]), Float32Array.from([2])], 1);
    fs.writeFileSync(indexPath(p), JSON.stringify({ row: 0, sample_id: 'x' }) + '\n');
    expect(() => readGradients(p)).toThrow(/does not cover/);
  });
});
