"""Iterative self-distillation pipeline for code instruction data.

Submodules, in pipeline order:

- ``pool``: tokenize raw code, near-dedup with MinHash LSH, n-gram
  decontamination, heuristic function validation.
- ``sampler``: category assignment by embedding similarity and seeded
  stratified sampling.
- ``synthesis``: multi-checkpoint candidate fan-out against chat
  endpoints (or a deterministic mock), problem/solution parsing.
- ``scoring``: multi-aspect score parsing, ridge-fit aspect weights,
  best-candidate selection.
- ``influence``: toy reference model, per-sample gradients, Rademacher
  sketching, cosine influence against a proprietary anchor.
- ``gradfile``: binary gradient wire format with an NDJSON sidecar.
- ``bootstrap``: the resumable multi-iteration loop with manifests.
- ``convergence``: contraction analysis of the idealized loop.
- ``cli``: one subcommand per capability.
"""

from . import (
    bootstrap,
    convergence,
    gradfile,
    influence,
    pool,
    records,
    sampler,
    scoring,
    synthesis,
)
from .records import InstructionSample, Provenance

__version__ = "0.1.0"

__all__ = [
    "InstructionSample",
    "Provenance",
    "bootstrap",
    "convergence",
    "gradfile",
    "influence",
    "pool",
    "records",
    "sampler",
    "scoring",
    "synthesis",
    "__version__",
]
