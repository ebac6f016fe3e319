"""Category assignment by embedding similarity and stratified sampling.

Embeddings are inputs (precomputed files); no embedding model is bundled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .pool import CodeSnippet
from .records import read_jsonl, write_jsonl

N_CATEGORIES = 10

DEFAULT_CATEGORY_NAMES = (
    "Algorithmic and Data Structure Problems",
    "Mathematical and Computational Problems",
    "Database and SQL Problems",
    "System Design and Architecture Problems",
    "Security and Cryptography Problems",
    "Performance Optimization Problems",
    "Web Problems",
    "Domain Specific Problems",
    "User Interface and Application Design Problems",
    "Data Science and Machine Learning Problems",
)


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CategorySet:
    """Ten category descriptions with unit-norm embedding vectors."""

    names: tuple[str, ...]
    embeddings: np.ndarray  # (10, dim)

    def __post_init__(self) -> None:
        if len(self.names) != N_CATEGORIES:
            raise ValueError(f"need exactly {N_CATEGORIES} categories")
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != N_CATEGORIES:
            raise ValueError("embeddings must be a 10 x dim array")
        norms = np.linalg.norm(emb, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("category embeddings must have unit L2 norm")
        object.__setattr__(self, "embeddings", emb)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])


def make_category_set(names: Sequence[str], vectors: np.ndarray,
                      normalize: bool = True) -> CategorySet:
    v = np.asarray(vectors, dtype=np.float64)
    if normalize:
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero category vector cannot be normalized")
        v = v / norms
    return CategorySet(tuple(names), v)


@dataclass
class EmbeddingRecord:
    snippet_id: str
    vector: np.ndarray


def assign_category(e: EmbeddingRecord, cats: CategorySet) -> int:
    """Index of the category whose embedding has the highest cosine
    similarity to the record's vector; ties go to the lowest index."""
    v = np.asarray(e.vector, dtype=np.float64)
    if v.shape != (cats.dim,):
        raise DimensionMismatch(f"vector dim {v.shape} vs categories {cats.dim}")
    nv = np.linalg.norm(v)
    if nv == 0:
        return 0
    sims = cats.embeddings @ (v / nv)
    return int(np.argmax(sims))


def assign_categories(snippets: Sequence[CodeSnippet],
                      embeddings: Sequence[EmbeddingRecord],
                      cats: CategorySet) -> list[CodeSnippet]:
    """Set ``category`` on each snippet from its embedding record."""
    by_id = {e.snippet_id: e for e in embeddings}
    out = []
    for s in snippets:
        if s.id not in by_id:
            raise KeyError(f"no embedding for snippet {s.id[:12]}")
        s.category = assign_category(by_id[s.id], cats)
        out.append(s)
    return out


@dataclass
class SampleReport:
    selected: list[CodeSnippet]
    per_category: int
    seed: int
    counts: dict[int, int] = field(default_factory=dict)
    underflow: dict[int, int] = field(default_factory=dict)  # category -> available


def stratified_sample(pool: Sequence[CodeSnippet], per_category: int,
                      seed: int) -> SampleReport:
    """Draw up to per_category snippets per category, uniformly without
    replacement, deterministically for a given seed.

    Categories with fewer members contribute all of them and appear in the
    report's underflow map.
    """
    if per_category < 0:
        raise ValueError("per_category must be >= 0")
    by_cat: dict[int, list[int]] = {}
    for idx, s in enumerate(pool):
        if s.category is None:
            raise ValueError(f"snippet {s.id[:12]} is uncategorized")
        by_cat.setdefault(s.category, []).append(idx)

    rng = np.random.default_rng(seed)
    report = SampleReport(selected=[], per_category=per_category, seed=seed)
    for cat in sorted(by_cat):
        members = by_cat[cat]
        if per_category == 0:
            report.counts[cat] = 0
            continue
        if len(members) <= per_category:
            chosen = list(members)
            if len(members) < per_category:
                report.underflow[cat] = len(members)
        else:
            picks = rng.choice(len(members), size=per_category, replace=False)
            chosen = [members[i] for i in sorted(picks)]
        report.counts[cat] = len(chosen)
        report.selected.extend(pool[i] for i in chosen)
    return report


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_embeddings(path: str | Path) -> list[EmbeddingRecord]:
    return [EmbeddingRecord(rec["snippet_id"],
                            np.asarray(rec["vector"], dtype=np.float64))
            for rec in read_jsonl(path)]


def write_embeddings(path: str | Path, records: Sequence[EmbeddingRecord]) -> None:
    write_jsonl(path, ({"snippet_id": r.snippet_id,
                        "vector": [float(x) for x in r.vector]}
                       for r in records))


def read_category_set(path: str | Path) -> CategorySet:
    names, vectors = [], []
    for rec in read_jsonl(path):
        names.append(rec["name"])
        vectors.append(rec["vector"])
    return CategorySet(tuple(names), np.asarray(vectors, dtype=np.float64))


def write_category_set(path: str | Path, cats: CategorySet) -> None:
    write_jsonl(path, ({"name": n, "vector": [float(x) for x in v]}
                       for n, v in zip(cats.names, cats.embeddings)))
