#!/usr/bin/env node
/**
 * grad-export command line front end.
 *
 * Reads a model spec, attaches a low-rank adapter, and writes per-sample
 * adapter gradients for an instruction sample file as GRDV.
 *
 * @module cli
 */

import { parseArgs } from 'node:util';

import { exportPerSampleGradients } from './export.js';
import { ATTENTION_MODULES, loadModelSpec } from './model.js';

const USAGE = `usage: grad-export --model <spec.json> --samples <path> --out <path>
                   [--adapter-rank 128] [--adapter-alpha 512] [--seed <u64>]

Writes one flattened adapter-parameter gradient row per sample, in input
order, as a GRDV file plus <out>.idx sidecar. --seed overrides the seed
recorded in the model spec, so the same spec can be instantiated
reproducibly per run.`;

export function run(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      model: { type: 'string' },
      samples: { type: 'string' },
      out: { type: 'string' },
      'adapter-rank': { type: 'string', default: '128' },
      'adapter-alpha': { type: 'string', default: '512' },
      seed: { type: 'string' },
      help: { type: 'boolean', default: false },
    },
  });
  if (values.help) {
    console.log(USAGE);
    return 0;
  }
  if (!values.model || !values.samples || !values.out) {
    console.error(USAGE);
    return 2;
  }
  const rank = Number(values['adapter-rank']);
  const alpha = Number(values['adapter-alpha']);
  if (!Number.isInteger(rank) || rank < 1 || !Number.isFinite(alpha)) {
    console.error(`bad adapter config: rank ${values['adapter-rank']}, alpha ${values['adapter-alpha']}`);
    return 2;
  }
  const spec = loadModelSpec(values.model);
  if (values.seed !== undefined) {
    spec.seed = Number(values.seed);
  }
  const report = exportPerSampleGradients(
    {
      baseModelName: spec.name,
      adapterConfig: {
        rank,
        alpha,
        targetModules: [...ATTENTION_MODULES],
      },
      samplesPath: values.samples,
      outPath: values.out,
      dtype: 'f32',
    },
    spec
  );
  console.log(
    `exported ${report.count} gradient rows of dim ${report.dim} -> ${values.out}`);
  return 0;
}

const invokedDirectly = process.argv[1]?.endsWith('cli.js') ?? false;
if (invokedDirectly) {
  process.exit(run(process.argv.slice(2)));
}
