/**
 * Binary gradient file writer/reader (GRDV).
 *
 * Layout: a fixed 42-byte little-endian header, then `count` row-major
 * f32 vectors. A sidecar newline-delimited index at `<path>.idx` maps
 * row -> sample_id and may carry a single {"meta": ...} line with
 * exporter details (flatten order, adapter config).
 *
 * Header fields, in order: magic "GRDV", version u32, dtype u8 (0 = f32),
 * dim u64, count u64, projection {applied u8, k u64, seed u64}. The
 * struct is packed, so the u64 fields sit at unaligned offsets.
 *
 * @module gradfile
 */

import fs from 'node:fs';

export const MAGIC = 'GRDV';
export const VERSION = 1;
export const DTYPE_F32 = 0;
export const HEADER_SIZE = 42;

export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'FormatError';
  }
}

export interface ProjectionStamp {
  applied: boolean;
  k: number;
  seed: number;
}

export interface GradientFile {
  dim: number;
  sampleIds: string[];
  /** Row-major (count * dim) values as read from disk. */
  values: Float32Array;
  projection: ProjectionStamp;
  meta: unknown | null;
}

const NO_PROJECTION: ProjectionStamp = { applied: false, k: 0, seed: 0 };

export function indexPath(path: string): string {
  return path + '.idx';
}

function packHeader(dim: number, count: number, proj: ProjectionStamp): Buffer {
  const buf = Buffer.alloc(HEADER_SIZE);
  buf.write(MAGIC, 0, 'ascii');
  buf.writeUInt32LE(VERSION, 4);
  buf.writeUInt8(DTYPE_F32, 8);
  buf.writeBigUInt64LE(BigInt(dim), 9);
  buf.writeBigUInt64LE(BigInt(count), 17);
  buf.writeUInt8(proj.applied ? 1 : 0, 25);
  buf.writeBigUInt64LE(BigInt(proj.k), 26);
  buf.writeBigUInt64LE(BigInt(proj.seed), 34);
  return buf;
}

/**
 * Write gradient rows plus the sidecar index, atomically (temp file then
 * rename, for both the binary and the index).
 */
export function writeGradients(
  path: string,
  sampleIds: string[],
  rows: Float32Array[],
  dim: number,
  projection: ProjectionStamp = NO_PROJECTION,
  meta: unknown | null = null
): void {
  if (rows.length !== sampleIds.length) {
    throw new FormatError(`${sampleIds.length} ids for ${rows.length} rows`);
  }
  for (const row of rows) {
    if (row.length !== dim) {
      throw new FormatError(`row has ${row.length} values, dim is ${dim}`);
    }
  }
  const header = packHeader(dim, rows.length, projection);
  const payload = Buffer.alloc(4 * dim * rows.length);
  rows.forEach((row, i) => {
    for (let j = 0; j < dim; j++) {
      payload.writeFloatLE(row[j], 4 * (i * dim + j));
    }
  });
  const tmp = path + '.tmp';
  fs.writeFileSync(tmp, Buffer.concat([header, payload]));
  fs.renameSync(tmp, path);

  const lines: string[] = [];
  if (meta !== null) {
    lines.push(JSON.stringify({ meta }));
  }
  sampleIds.forEach((sid, row) => {
    lines.push(JSON.stringify({ row, sample_id: sid }));
  });
  const idx = indexPath(path);
  const tmpIdx = idx + '.tmp';
  fs.writeFileSync(tmpIdx, lines.join('\n') + '\n');
  fs.renameSync(tmpIdx, idx);
}

export function readGradients(path: string): GradientFile {
  const blob = fs.readFileSync(path);
  if (blob.length < HEADER_SIZE) {
    throw new FormatError('file shorter than header');
  }
  const magic = blob.toString('ascii', 0, 4);
  if (magic !== MAGIC) {
    throw new FormatError(`bad magic ${JSON.stringify(magic)}`);
  }
  const version = blob.readUInt32LE(4);
  if (version !== VERSION) {
    throw new FormatError(`unsupported version ${version}`);
  }
  const dtype = blob.readUInt8(8);
  if (dtype !== DTYPE_F32) {
    throw new FormatError(`unsupported dtype code ${dtype}`);
  }
  const dim = Number(blob.readBigUInt64LE(9));
  const count = Number(blob.readBigUInt64LE(17));
  const projection: ProjectionStamp = {
    applied: blob.readUInt8(25) !== 0,
    k: Number(blob.readBigUInt64LE(26)),
    seed: Number(blob.readBigUInt64LE(34)),
  };
  const expected = HEADER_SIZE + 4 * dim * count;
  if (blob.length !== expected) {
    throw new FormatError(`size ${blob.length} != expected ${expected}`);
  }
  const values = new Float32Array(count * dim);
  for (let i = 0; i < values.length; i++) {
    values[i] = blob.readFloatLE(HEADER_SIZE + 4 * i);
  }

  const idx = indexPath(path);
  if (!fs.existsSync(idx)) {
    throw new FormatError(`missing sidecar index ${idx}`);
  }
  const sampleIds: string[] = new Array(count).fill('');
  let meta: unknown | null = null;
  for (const line of fs.readFileSync(idx, 'utf-8').split('\n')) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    const rec = JSON.parse(trimmed);
    if ('meta' in rec && !('row' in rec)) {
      meta = rec.meta;
      continue;
    }
    const row = Number(rec.row);
    if (!(row >= 0 && row < count)) {
      throw new FormatError(`index row ${row} out of range`);
    }
    sampleIds[row] = String(rec.sample_id);
  }
  if (count > 0 && sampleIds.some((sid) => sid === '')) {
    throw new FormatError('sidecar index does not cover every row');
  }
  return { dim, sampleIds, values, projection, meta };
}
