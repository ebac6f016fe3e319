"""Category assignment and stratified sampling.

Snippets are assigned to whichever of the ten task categories their
embedding is most similar to (cosine), then drawn per category with a
fixed seed so the selection is reproducible.
"""

import numpy as np

from instill.pool import CodeSnippet
from instill.sampler import (
    DEFAULT_CATEGORY_NAMES,
    EmbeddingRecord,
    assign_categories,
    make_category_set,
    stratified_sample,
)

rng = np.random.default_rng(1)
cats = make_category_set(DEFAULT_CATEGORY_NAMES, rng.normal(size=(10, 32)))

snippets = [CodeSnippet.from_text(f"def piece_{i}():\n    return {i}\n")
            for i in range(40)]
# synthetic embeddings: each snippet sits near one category axis plus noise
embeddings = []
for i, s in enumerate(snippets):
    home = i % 10
    vec = cats.embeddings[home] + 0.2 * rng.normal(size=32)
    embeddings.append(EmbeddingRecord(s.id, vec))

categorized = assign_categories(snippets, embeddings, cats)
report = stratified_sample(categorized, per_category=2, seed=7)

print(f"selected {len(report.selected)} snippets, 2 per category\n")
for cat_index in sorted(report.counts):
    name = cats.names[cat_index]
    print(f"{name:55s} {report.counts[cat_index]}")
if report.underflow:
    print("\nunderfilled categories:", report.underflow)
else:
    print("\nevery category filled its quota")

again = stratified_sample(categorized, per_category=2, seed=7)
same = [s.id for s in report.selected] == [s.id for s in again.selected]
print(f"same seed, same draw: {same}")
