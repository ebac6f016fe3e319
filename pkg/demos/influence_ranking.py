"""Gradient-based influence ranking with the toy reference model.

Trains the byte-bigram reference model on a small proprietary set,
computes per-sample gradients for candidate samples, sketches them down
with a Rademacher projection, and ranks candidates by cosine similarity
to the proprietary anchor gradient. Candidates that look like the
proprietary data score high; off-distribution ones score low.
"""

import numpy as np

from instill.influence import (
    TOY_DIM,
    anchor_gradient,
    build_projection,
    influence_score,
    project_gradient,
    select_top_influential,
    toy_reference_gradient,
    toy_reference_train,
)
from instill.records import InstructionSample, Provenance, derive_id


def sample(i, problem, solution):
    return InstructionSample(
        sample_id=derive_id("demo", i), snippet_id=derive_id("demo-snip", i),
        problem=problem, solution=solution,
        provenance=Provenance.proprietary())


proprietary = [
    sample(i, f"Write a function that sums the first {i + 2} integers.",
           f"def total_{i}(n):\n    return sum(range(n))")
    for i in range(6)
]

candidates = [
    sample(100, "Write a function that sums the first 10 integers.",
           "def total(n):\n    return sum(range(n))"),
    sample(101, "Write a function that multiplies two numbers.",
           "def product(a, b):\n    return a * b"),
    sample(102, "ZZZZ @@@@ ????",  # nothing like the proprietary bytes
           "~~~~ |||| ^^^^"),
]

# a lightly trained reference keeps per-sample gradients large and
# distribution-shaped; near the optimum they shrink toward noise
model = toy_reference_train(proprietary, steps=5, seed=0)
history = model.training_meta["loss_history"]
print(f"reference model: loss {history[0]:.3f} -> {history[-1]:.3f} "
      f"over {len(history) - 1} steps")

proj = build_projection(TOY_DIM, k=1024, seed=3)
anchor = anchor_gradient([
    project_gradient(toy_reference_gradient(s, model), proj)
    for s in proprietary])

records = []
for cand in candidates:
    g = project_gradient(toy_reference_gradient(cand, model), proj)
    records.append(influence_score(g, anchor))

print("\ninfluence against the proprietary anchor:")
for r in sorted(records, key=lambda r: -r.influence):
    print(f"  {r.sample_id[:10]}  V = {r.influence:+.3f}")

top = select_top_influential(records, quota=2)
print(f"\ntop-2 selection: {[sid[:10] for sid in top.sample_ids]} "
      f"(shortfall: {top.shortfall})")
