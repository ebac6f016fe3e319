"""Multi-checkpoint candidate generation against the mock backend.

One snippet fans out to M x N completion slots (M checkpoints, N samples
each). One slot is scripted to fail permanently to show that failures
become records instead of aborting the batch.
"""

from instill.pool import CodeSnippet
from instill.synthesis import (
    CheckpointSet,
    EndpointConfig,
    MockBackend,
    RetryPolicy,
    candidates_to_samples,
    generate_candidates,
)

snippet = CodeSnippet.from_text(
    "def median(xs):\n"
    "    s = sorted(xs)\n"
    "    mid = len(s) // 2\n"
    "    return s[mid] if len(s) % 2 else (s[mid - 1] + s[mid]) / 2\n")

endpoints = tuple(
    EndpointConfig(name=f"checkpoint-{i}", base_url="mock://", model_id="demo",
                   api_key_env=None, max_parallel=4, timeout_ms=1000,
                   retry=RetryPolicy(max_attempts=2, backoff_ms=10))
    for i in (1, 2, 3))
cs = CheckpointSet(checkpoints=endpoints, samples_per_checkpoint=2,
                   temperature=0.2)

# checkpoint 2, sample 1 never answers
backend = MockBackend({f"{snippet.id}/2/1": {"fail": "always"}})

results = generate_candidates(snippet, cs, backend)
print(f"{len(results)} slots for M=3 checkpoints x N=2 samples:\n")
for r in results:
    verdict = "ok" if r.ok else f"FAILED after {r.failure.attempts} attempts"
    print(f"  slot ({r.checkpoint_index}, {r.sample_index}): {verdict}")

samples, failures = candidates_to_samples(snippet, results, iteration=1)
print(f"\nparsed {len(samples)} problem/solution pairs, "
      f"{len(failures)} failure records kept")
print(f"first problem: {samples[0].problem!r}")
