"""Near-duplicate removal on a small synthetic corpus.

Builds 12 snippets where three are light edits of others, runs the
MinHash LSH dedup pass, and prints which snippet was kept for each
removed one along with the estimated Jaccard that justified it.
"""

import numpy as np

from instill.pool import CodeSnippet, DedupConfig, dedup_pool

rng = np.random.default_rng(0)


def fresh_snippet(i):
    lines = [f"def job_{i}(xs):", "    total = 0"]
    for _ in range(6):
        lines.append(f"    total += xs[{rng.integers(8)}] * {rng.integers(50)}")
    lines.append("    return total")
    return "\n".join(lines)


texts = [fresh_snippet(i) for i in range(9)]
# clone three of them with one line changed
for src in (0, 3, 7):
    lines = texts[src].split("\n")
    lines[3] = f"    total += xs[0] * {rng.integers(50)}"
    texts.append("\n".join(lines))

snippets = [CodeSnippet.from_text(t) for t in texts]
print(f"pool of {len(snippets)} snippets, 3 of them near-clones")

result = dedup_pool(snippets, DedupConfig())
print(f"kept {len(result.kept)}, removed {len(result.removed)}\n")
for record in result.removed:
    print(f"removed {record.removed_id[:10]} -> kept {record.kept_id[:10]} "
          f"(estimated Jaccard {record.estimated_jaccard:.2f})")
