"""Category assignment and stratified sampling tests.

Assignments are checked against a brute-force cosine argmax oracle written
with plain Python loops.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from instill.pool import CodeSnippet
from instill.sampler import (
    DEFAULT_CATEGORY_NAMES,
    CategorySet,
    DimensionMismatch,
    EmbeddingRecord,
    assign_categories,
    assign_category,
    make_category_set,
    read_category_set,
    read_embeddings,
    stratified_sample,
    write_category_set,
    write_embeddings,
)


def one_hot_categories(dim: int = 10) -> CategorySet:
    return CategorySet(DEFAULT_CATEGORY_NAMES, np.eye(10, dim))


def oracle_assign(vector, embeddings) -> int:
    """Independent cosine argmax with explicit loops."""
    best, best_idx = None, 0
    nv = math.sqrt(sum(float(x) ** 2 for x in vector))
    for idx, emb in enumerate(embeddings):
        ne = math.sqrt(sum(float(x) ** 2 for x in emb))
        dot = sum(float(a) * float(b) for a, b in zip(vector, emb))
        cos = dot / (nv * ne)
        if best is None or cos > best:
            best, best_idx = cos, idx
    return best_idx


def test_assign_self_similarity():
    cats = one_hot_categories()
    e = EmbeddingRecord("s", cats.embeddings[3].copy())
    assert assign_category(e, cats) == 3


def test_assign_orthogonal_to_all_but_one():
    cats = one_hot_categories(dim=16)
    v = np.zeros(16)
    v[7] = 2.5  # only category 7 has any overlap
    assert assign_category(EmbeddingRecord("s", v), cats) == 7


def test_assign_matches_bruteforce_oracle():
    rng = np.random.default_rng(21)
    cats = make_category_set(DEFAULT_CATEGORY_NAMES, rng.normal(size=(10, 32)))
    for _ in range(200):
        v = rng.normal(size=32)
        e = EmbeddingRecord("s", v)
        assert assign_category(e, cats) == oracle_assign(v, cats.embeddings)


def test_assign_scale_invariant():
    rng = np.random.default_rng(22)
    cats = make_category_set(DEFAULT_CATEGORY_NAMES, rng.normal(size=(10, 8)))
    v = rng.normal(size=8)
    base = assign_category(EmbeddingRecord("s", v), cats)
    for lam in (1e-6, 0.5, 3.0, 1e6):
        assert assign_category(EmbeddingRecord("s", lam * v), cats) == base


def test_assign_dimension_mismatch():
    cats = one_hot_categories(dim=10)
    with pytest.raises(DimensionMismatch):
        assign_category(EmbeddingRecord("s", np.ones(5)), cats)


def test_category_set_validation():
    with pytest.raises(ValueError):
        CategorySet(DEFAULT_CATEGORY_NAMES[:9], np.eye(9, 10))
    with pytest.raises(ValueError):
        CategorySet(DEFAULT_CATEGORY_NAMES, 2.0 * np.eye(10))


def snippet(i: int, cat: int | None) -> CodeSnippet:
    s = CodeSnippet.from_text(f"token_{i} = {i}")
    s.category = cat
    return s


def make_pool(per_cat: dict[int, int]) -> list[CodeSnippet]:
    pool = []
    i = 0
    for cat, count in per_cat.items():
        for _ in range(count):
            pool.append(snippet(i, cat))
            i += 1
    return pool


def test_stratified_zero_quota():
    rep = stratified_sample(make_pool({0: 5, 1: 5}), per_category=0, seed=1)
    assert rep.selected == []


def test_stratified_exact_fill_selects_everything():
    pool = make_pool({c: 4 for c in range(10)})
    rep = stratified_sample(pool, per_category=4, seed=2)
    assert sorted(s.id for s in rep.selected) == sorted(s.id for s in pool)
    assert rep.underflow == {}


def test_stratified_deterministic_and_seed_sensitive():
    pool = make_pool({c: 100 for c in range(10)})
    a = stratified_sample(pool, per_category=10, seed=33)
    b = stratified_sample(pool, per_category=10, seed=33)
    c = stratified_sample(pool, per_category=10, seed=34)
    assert [s.id for s in a.selected] == [s.id for s in b.selected]
    assert [s.id for s in a.selected] != [s.id for s in c.selected]


def test_stratified_counts_and_disjointness():
    pool = make_pool({0: 30, 1: 8, 2: 30})
    rep = stratified_sample(pool, per_category=10, seed=5)
    assert rep.counts == {0: 10, 1: 8, 2: 10}
    assert rep.underflow == {1: 8}
    ids = [s.id for s in rep.selected]
    assert len(ids) == len(set(ids))


def test_stratified_uncategorized_rejected():
    with pytest.raises(ValueError):
        stratified_sample([snippet(0, None)], per_category=1, seed=0)


def test_stratified_negative_quota_rejected():
    with pytest.raises(ValueError):
        stratified_sample(make_pool({0: 3}), per_category=-1, seed=0)


def test_assign_categories_bulk_and_files(tmp_path):
    rng = np.random.default_rng(23)
    cats = make_category_set(DEFAULT_CATEGORY_NAMES, rng.normal(size=(10, 12)))
    pool = [CodeSnippet.from_text(f"value_{i} = {i}") for i in range(6)]
    embs = [EmbeddingRecord(s.id, rng.normal(size=12)) for s in pool]

    cat_path = tmp_path / "cats.jsonl"
    emb_path = tmp_path / "embs.jsonl"
    write_category_set(cat_path, cats)
    write_embeddings(emb_path, embs)
    cats2 = read_category_set(cat_path)
    embs2 = read_embeddings(emb_path)
    assert cats2.names == cats.names
    np.testing.assert_allclose(cats2.embeddings, cats.embeddings, atol=1e-12)

    tagged = assign_categories(pool, embs2, cats2)
    for s, e in zip(tagged, embs):
        assert s.category == oracle_assign(e.vector, cats.embeddings)


def test_assign_categories_missing_embedding():
    cats = one_hot_categories()
    pool = [CodeSnippet.from_text("lonely = 1")]
    with pytest.raises(KeyError):
        assign_categories(pool, [], cats)
