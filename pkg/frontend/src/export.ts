/**
 * Per-sample adapter gradient export.
 *
 * Reads instruction samples (JSONL of {sample_id, problem, solution}),
 * computes the gradient of each sample's mean token loss with respect
 * to the adapter parameters only, and writes the rows in input order as
 * a GRDV gradient file the downstream pipeline reads directly. The
 * sidecar's meta line records the flatten order so dimension d means
 * the same thing on both sides of the file.
 *
 * Batches are processed sequentially; a batch that exceeds the memory
 * budget raises OOMBatchError internally and is retried at half size
 * until it fits (or the size reaches one, at which point the error
 * propagates).
 *
 * @module export
 */

import fs from 'node:fs';

import { FormatError, writeGradients } from './gradfile.js';
import {
  AdapterConfig,
  LoraModel,
  ModelSpec,
  sampleAdapterGradient,
} from './model.js';

export class OOMBatchError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'OOMBatchError';
  }
}

export interface ExportJob {
  baseModelName: string;
  adapterConfig: AdapterConfig;
  samplesPath: string;
  outPath: string;
  dtype: 'f32';
  /** 'adapter' is the only exportable surface; 'full' is refused. */
  gradientSurface?: 'adapter' | 'full';
  /** Rows per batch before the memory check; halved on overflow. */
  batchSize?: number;
  /** Approximate per-batch budget in bytes; unlimited when absent. */
  memoryLimitBytes?: number;
}

export interface ExportReport {
  count: number;
  dim: number;
  /** Batch size that survived the halving retries. */
  finalBatchSize: number;
  halvings: number;
}

interface RawSample {
  sampleId: string;
  bytes: Uint8Array;
}

export function readSamples(path: string): RawSample[] {
  let raw: string;
  try {
    raw = fs.readFileSync(path, 'utf-8');
  } catch (err) {
    throw new FormatError(`cannot read samples ${path}: ${(err as Error).message}`);
  }
  const out: RawSample[] = [];
  const lines = raw.split('\n');
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    let rec: Record<string, unknown>;
    try {
      rec = JSON.parse(line);
    } catch (err) {
      throw new FormatError(`samples line ${i + 1} is not valid JSON: ${(err as Error).message}`);
    }
    if (typeof rec.sample_id !== 'string' || !rec.sample_id) {
      throw new FormatError(`samples line ${i + 1} lacks a sample_id`);
    }
    if (typeof rec.problem !== 'string' || typeof rec.solution !== 'string') {
      throw new FormatError(`samples line ${i + 1} lacks problem/solution text`);
    }
    out.push({
      sampleId: rec.sample_id,
      bytes: new Uint8Array(Buffer.from(`${rec.problem}\n${rec.solution}`, 'utf-8')),
    });
  }
  return out;
}

function gradientBatch(
  model: LoraModel,
  batch: RawSample[],
  dim: number,
  memoryLimitBytes: number | undefined
): Float32Array[] {
  // f64 working set for the batch: one flat gradient per sample
  const needed = batch.length * dim * 8;
  if (memoryLimitBytes !== undefined && needed > memoryLimitBytes) {
    throw new OOMBatchError(
      `batch of ${batch.length} needs ${needed} bytes, budget is ${memoryLimitBytes}`);
  }
  return batch.map((s) => Float32Array.from(sampleAdapterGradient(model, s.bytes)));
}

/**
 * Run one export job: gradients for every sample in input order,
 * written as an unprojected GRDV file plus sidecar.
 */
export function exportPerSampleGradients(job: ExportJob, spec: ModelSpec): ExportReport {
  if ((job.gradientSurface ?? 'adapter') !== 'adapter') {
    throw new FormatError(
      'full-model gradient export is refused; only adapter parameters are exported');
  }
  if (job.dtype !== 'f32') {
    throw new FormatError(`unsupported dtype ${JSON.stringify(job.dtype)}`);
  }
  const model = new LoraModel(spec, job.adapterConfig);
  const dim = model.adapterDim();
  if (dim >= model.fullParameterCount()) {
    throw new FormatError(
      `adapter dimension ${dim} spans the full parameter count; refusing to export`);
  }
  const samples = readSamples(job.samplesPath);

  let batchSize = Math.max(1, job.batchSize ?? 32);
  let halvings = 0;
  const rows: Float32Array[] = [];
  let cursor = 0;
  while (cursor < samples.length) {
    const batch = samples.slice(cursor, cursor + batchSize);
    try {
      rows.push(...gradientBatch(model, batch, dim, job.memoryLimitBytes));
      cursor += batch.length;
    } catch (err) {
      if (err instanceof OOMBatchError && batchSize > 1) {
        batchSize = Math.floor(batchSize / 2);
        halvings += 1;
        continue;
      }
      throw err;
    }
  }

  writeGradients(
    job.outPath,
    samples.map((s) => s.sampleId),
    rows,
    dim,
    { applied: false, k: 0, seed: 0 },
    {
      base_model: job.baseModelName,
      adapter: {
        rank: job.adapterConfig.rank,
        alpha: job.adapterConfig.alpha,
        target_modules: [...job.adapterConfig.targetModules].sort(),
      },
      flatten_order: model.adapterParameterNames(),
    }
  );
  return { count: rows.length, dim, finalBatchSize: batchSize, halvings };
}
