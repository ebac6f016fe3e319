"""Projection, cosine influence, and toy reference model tests.

Oracles: a materialized sign matrix for the small projection case, plain
fsum cosine/mean implementations, central finite differences for gradients,
and closed-form bigram optima.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from instill.influence import (
    BadDims,
    Empty,
    EmptyCorpus,
    GradientVector,
    InfluenceRecord,
    MixedProjections,
    ProjectedGradient,
    TooShort,
    ZeroVector,
    anchor_gradient,
    build_optimal_model,
    build_projection,
    influence_score,
    project_batch,
    project_gradient,
    projection_entry,
    sample_loss,
    select_top_influential,
    sign_block,
    toy_reference_gradient,
    toy_reference_train,
)
from instill.records import InstructionSample, Provenance


def sample(text_q: str, text_s: str, sid: str = "s0") -> InstructionSample:
    return InstructionSample(sample_id=sid, snippet_id="snip",
                             problem=text_q, solution=text_s,
                             provenance=Provenance.proprietary())


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_projection_entry_deterministic():
    p = build_projection(1000, 64, seed=5)
    for r, c in [(0, 0), (511, 63), (999, 1)]:
        assert projection_entry(p, r, c) == projection_entry(p, r, c)
        assert abs(projection_entry(p, r, c)) == pytest.approx(p.scale)


def test_projection_sign_balance():
    # one full slab holds 256 x 4096 > 1e6 entries
    p = build_projection(4096, 4096, seed=11)
    signs = sign_block(p, 0)
    frac_plus = float(np.mean(signs == 1))
    assert abs(frac_plus - 0.5) <= 0.01


def test_projection_seeds_decorrelated():
    pa = build_projection(512, 512, seed=1)
    pb = build_projection(512, 512, seed=2)
    a = sign_block(pa, 0).ravel()[:100_000]
    b = sign_block(pb, 0).ravel()[:100_000]
    differ = float(np.mean(a != b))
    assert 0.45 <= differ <= 0.55


def test_project_zero_vector():
    p = build_projection(512, 32, seed=3)
    out = project_gradient(GradientVector("z", np.zeros(512)), p)
    assert np.all(out.values == 0.0)
    assert out.norm == 0.0


def test_project_matches_materialized_matrix():
    p = build_projection(4, 2, seed=9)
    m = np.array([[projection_entry(p, r, c) for c in range(2)]
                  for r in range(4)])
    rng = np.random.default_rng(40)
    for _ in range(10):
        g = rng.normal(size=4)
        got = project_gradient(GradientVector("g", g), p).values
        np.testing.assert_allclose(got, g @ m, rtol=1e-12, atol=1e-12)


def test_project_linearity():
    p = build_projection(300, 50, seed=13)
    rng = np.random.default_rng(41)
    g1, g2 = rng.normal(size=300), rng.normal(size=300)
    a, b = 2.5, -1.25
    lhs = project_gradient(GradientVector("x", a * g1 + b * g2), p).values
    rhs = (a * project_gradient(GradientVector("x", g1), p).values
           + b * project_gradient(GradientVector("x", g2), p).values)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9)


def test_project_batch_agrees_with_single():
    p = build_projection(700, 40, seed=14)
    rng = np.random.default_rng(42)
    g = rng.normal(size=(6, 700))
    batch = project_batch(g, p)
    for i in range(6):
        single = project_gradient(GradientVector("g", g[i]), p).values
        np.testing.assert_allclose(batch[i], single, rtol=1e-12)


def test_projection_distance_preservation_small():
    # the acceptance suite runs the full d=65536 version
    d, k = 2048, 256
    p = build_projection(d, k, seed=15)
    rng = np.random.default_rng(43)
    g = rng.normal(size=(40, d))
    proj = project_batch(g, p)
    ok = 0
    pairs = [(i, j) for i in range(20) for j in (i + 20,)]
    for i, j in pairs:
        exact = float(np.sum((g[i] - g[j]) ** 2))
        approx = float(np.sum((proj[i] - proj[j]) ** 2))
        if abs(approx - exact) <= 0.2 * exact:
            ok += 1
    assert ok / len(pairs) >= 0.9


def test_projection_bad_dims():
    with pytest.raises(BadDims):
        build_projection(10, 11, seed=0)
    with pytest.raises(BadDims):
        build_projection(10, 0, seed=0)
    p = build_projection(10, 4, seed=0)
    with pytest.raises(BadDims):
        project_gradient(GradientVector("g", np.zeros(9)), p)
    with pytest.raises(BadDims):
        projection_entry(p, 10, 0)


# ---------------------------------------------------------------------------
# anchor + cosine
# ---------------------------------------------------------------------------

def pg(values, seed=0, sid="g") -> ProjectedGradient:
    return ProjectedGradient(sid, np.asarray(values, dtype=float), seed)


def test_anchor_single_vector():
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(anchor_gradient([pg(v)]), v)


def test_anchor_symmetric_cancellation():
    v = np.array([0.5, -2.0, 4.0])
    np.testing.assert_allclose(anchor_gradient([pg(v), pg(-v)]), np.zeros(3),
                               atol=1e-15)


def test_anchor_matches_mean_oracle():
    rng = np.random.default_rng(44)
    vecs = rng.normal(size=(100, 16))
    anchor = anchor_gradient([pg(v) for v in vecs])
    for c in range(16):
        want = math.fsum(float(v[c]) for v in vecs) / 100
        assert abs(anchor[c] - want) <= 1e-12


def test_anchor_errors():
    with pytest.raises(Empty):
        anchor_gradient([])
    with pytest.raises(MixedProjections):
        anchor_gradient([pg(np.ones(4), seed=0), pg(np.ones(4), seed=1)])
    with pytest.raises(MixedProjections):
        anchor_gradient([pg(np.ones(4)), pg(np.ones(5))])


def test_influence_parallel_and_orthogonal():
    anchor = np.array([1.0, 1.0, 0.0])
    assert influence_score(pg(2.0 * anchor), anchor).influence == pytest.approx(1.0, abs=1e-12)
    assert influence_score(pg([1.0, -1.0, 5.0]), anchor).influence == pytest.approx(0.0, abs=1e-12)


def test_influence_matches_cosine_oracle_and_scale_invariance():
    rng = np.random.default_rng(45)
    for _ in range(50):
        a = rng.normal(size=24)
        g = rng.normal(size=24)
        got = influence_score(pg(g), a).influence
        dot = math.fsum(float(x) * float(y) for x, y in zip(g, a))
        na = math.sqrt(math.fsum(float(x) ** 2 for x in a))
        ng = math.sqrt(math.fsum(float(x) ** 2 for x in g))
        assert abs(got - dot / (na * ng)) <= 1e-12
        scaled = influence_score(pg(3.7 * g), a).influence
        assert abs(scaled - got) <= 1e-12


def test_influence_zero_vector_rejected():
    with pytest.raises(ZeroVector):
        influence_score(pg(np.zeros(4)), np.ones(4))
    with pytest.raises(ZeroVector):
        influence_score(pg(np.ones(4)), np.zeros(4))


def test_influence_record_range_checked():
    with pytest.raises(ValueError):
        InfluenceRecord("s", 1.5)


def test_select_top_quota_exceeds_count():
    recs = [InfluenceRecord("a", 0.5), InfluenceRecord("b", 0.1)]
    sel = select_top_influential(recs, quota=5)
    assert sel.sample_ids == ["a", "b"]
    assert sel.shortfall


def test_select_top_takes_highest():
    recs = [InfluenceRecord("a", 0.9), InfluenceRecord("b", 0.1),
            InfluenceRecord("c", 0.5)]
    sel = select_top_influential(recs, quota=2)
    assert sel.sample_ids == ["a", "c"]
    assert not sel.shortfall


def test_select_top_matches_sort_oracle():
    rng = np.random.default_rng(46)
    recs = [InfluenceRecord(f"id{i:04d}", float(v))
            for i, v in enumerate(rng.uniform(-1, 1, size=1000))]
    sel = select_top_influential(recs, quota=100)
    oracle = [r.sample_id for r in
              sorted(recs, key=lambda r: (-r.influence, r.sample_id))[:100]]
    assert sel.sample_ids == oracle


def test_select_top_ties_by_id():
    recs = [InfluenceRecord("zz", 0.5), InfluenceRecord("aa", 0.5),
            InfluenceRecord("mm", 0.5)]
    assert select_top_influential(recs, quota=2).sample_ids == ["aa", "mm"]


def test_select_top_bad_quota():
    with pytest.raises(ValueError):
        select_top_influential([], quota=0)


def test_ranking_through_projection_preserves_order():
    # gradients built with exactly controlled cosines against the anchor
    # direction, so the exact ranking is unambiguous and spread over [-1, 1]
    rng = np.random.default_rng(47)
    d, k, n = 256, 64, 50
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    rhos = np.linspace(-0.95, 0.95, n)
    grads = []
    for rho in rhos:
        e = rng.normal(size=d)
        e -= (e @ direction) * direction
        e /= np.linalg.norm(e)
        grads.append(rho * direction + np.sqrt(1 - rho ** 2) * e)
    grads = np.stack(grads)
    exact = [float(g @ direction / np.linalg.norm(g)) for g in grads]

    p = build_projection(d, k, seed=48)
    proj = project_batch(grads, p)
    proj_anchor = project_batch(direction[None, :], p)[0]
    approx = [influence_score(ProjectedGradient(f"s{i}", proj[i], p.seed),
                              proj_anchor).influence for i in range(n)]

    agree = total = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += 1
            if (exact[i] - exact[j]) * (approx[i] - approx[j]) > 0:
                agree += 1
    assert agree / total >= 0.9


# ---------------------------------------------------------------------------
# toy reference model
# ---------------------------------------------------------------------------

def test_toy_train_learns_repeated_bigram():
    corpus = [sample("ab" * 50, "ab" * 50)]
    model = toy_reference_train(corpus, steps=300, seed=1)
    probs = np.exp(model.logits[ord("a")])
    probs /= probs.sum()
    assert probs[ord("b")] > 0.9


def test_toy_train_zero_steps_keeps_init():
    corpus = [sample("hello", "world")]
    model = toy_reference_train(corpus, steps=0, seed=7)
    expect = np.random.default_rng(7).normal(0.0, 0.01, size=(256, 256))
    np.testing.assert_array_equal(model.logits, expect)


def test_toy_train_loss_never_increases():
    corpus = [sample("def add(a, b):", "return a + b"),
              sample("for i in range(3):", "print(i)")]
    model = toy_reference_train(corpus, steps=120, seed=2)
    hist = model.training_meta["loss_history"]
    assert len(hist) == 121
    for prev, nxt in zip(hist, hist[1:]):
        assert nxt <= prev + 1e-12


def test_toy_train_empty_corpus():
    with pytest.raises(EmptyCorpus):
        toy_reference_train([], steps=10)


def test_toy_gradient_zero_at_optimum():
    corpus = [sample("ab" * 40, "ab" * 40)]
    model = build_optimal_model(corpus)
    g = toy_reference_gradient(corpus[0], model)
    assert float(np.linalg.norm(g.values)) <= 1e-6


def test_toy_gradient_matches_finite_differences():
    s = sample("def f(x):", "return x * 2")
    model = toy_reference_train([s], steps=5, seed=3)

    def loss_at(w: np.ndarray) -> float:
        # independent re-implementation: loop over transitions
        data = s.text.encode("utf-8")
        terms = []
        for cur, nxt in zip(data[:-1], data[1:]):
            row = w[cur]
            m = float(np.max(row))
            lse = m + math.log(math.fsum(math.exp(float(v) - m) for v in row))
            terms.append(lse - float(row[nxt]))
        return math.fsum(terms) / len(terms)

    analytic = toy_reference_gradient(s, model).values.reshape(256, 256)
    rng = np.random.default_rng(49)
    h = 1e-4
    # probe coordinates on rows that actually occur, plus a few that do not
    present = sorted({b for b in s.text.encode("utf-8")})
    coords = [(int(rng.choice(present)), int(rng.integers(256)))
              for _ in range(40)]
    coords += [(0, 0), (255, 255)]
    for r, c in coords:
        wp = model.logits.copy()
        wp[r, c] += h
        wm = model.logits.copy()
        wm[r, c] -= h
        fd = (loss_at(wp) - loss_at(wm)) / (2 * h)
        denom = max(abs(fd), abs(analytic[r, c]), 1e-8)
        assert abs(fd - analytic[r, c]) / denom <= 1e-4


def test_toy_gradient_deterministic_and_too_short():
    s1 = sample("abc", "def", sid="x")
    s2 = sample("abc", "def", sid="y")
    model = toy_reference_train([s1], steps=10, seed=4)
    g1 = toy_reference_gradient(s1, model)
    g2 = toy_reference_gradient(s2, model)
    np.testing.assert_array_equal(g1.values, g2.values)

    with pytest.raises(ValueError):
        sample("", "")  # empty texts are rejected by the record type

    # a sub-2-byte text is unreachable through the constructor; force one
    bad = sample("a", "b", sid="t2")
    bad.problem = ""
    bad.solution = ""
    with pytest.raises(TooShort):
        toy_reference_gradient(bad, model)


def test_sample_loss_lower_for_in_distribution_text():
    corpus = [sample("ab" * 30, "ab" * 30)]
    model = toy_reference_train(corpus, steps=200, seed=5)
    in_dist = sample_loss(corpus[0], model)
    out_dist = sample_loss(sample("zq" * 30, "zq" * 30), model)
    assert in_dist < out_dist
