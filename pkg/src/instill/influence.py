"""Gradient-based influence estimation.

Per-sample gradients are projected through an implicit seeded Rademacher
matrix (never materialized; signs are generated counter-style per row
block) and ranked by cosine similarity against the mean projected gradient
of the proprietary set. A character-bigram reference model provides real
trained gradients at desk scale; externally exported gradient files plug in
through the same wire format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .records import InstructionSample

TOY_DIM = 65_536  # 256 x 256 logits table
_ALPHABET = 256
_BLOCK_ROWS = 256
_SIGN_STREAM = 0xA11CE


class BadDims(ValueError):
    pass


class Empty(ValueError):
    pass


class MixedProjections(ValueError):
    pass


class ZeroVector(ValueError):
    pass


class TooShort(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


# ---------------------------------------------------------------------------
# Rademacher projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionConfig:
    input_dim: int
    output_dim: int
    seed: int
    scale: float

    def __post_init__(self) -> None:
        if not 1 <= self.output_dim <= self.input_dim:
            raise BadDims(
                f"need 1 <= k <= d, got k={self.output_dim} d={self.input_dim}")


def build_projection(d: int, k: int, seed: int) -> ProjectionConfig:
    if d < 1 or k < 1 or k > d:
        raise BadDims(f"need 1 <= k <= d, got k={k} d={d}")
    return ProjectionConfig(input_dim=d, output_dim=k, seed=seed,
                            scale=1.0 / np.sqrt(k))


@dataclass
class GradientVector:
    sample_id: str
    values: np.ndarray  # (d,)
    provider_tag: str = "toy"


@dataclass
class ProjectedGradient:
    sample_id: str
    values: np.ndarray  # (k,)
    projection_seed: int
    norm: float = field(init=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.norm = float(np.linalg.norm(self.values))


def sign_block(p: ProjectionConfig, block: int) -> np.ndarray:
    """The (256, k) slab of ±1 signs for rows [256*block, 256*(block+1)).

    Signs come from a counter-based generator keyed by (seed, block), so any
    slab is reproducible in isolation and the full d x k matrix never needs
    to exist at once.
    """
    key = np.array([p.seed, _SIGN_STREAM + block], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    raw = np.frombuffer(gen.bytes((_BLOCK_ROWS * p.output_dim + 7) // 8),
                        dtype=np.uint8)
    bits = np.unpackbits(raw)[:_BLOCK_ROWS * p.output_dim]
    return (1 - 2 * bits.astype(np.int8)).reshape(_BLOCK_ROWS, p.output_dim)


def projection_entry(p: ProjectionConfig, row: int, col: int) -> float:
    """Single matrix entry (±scale); for spot checks, not bulk math."""
    if not (0 <= row < p.input_dim and 0 <= col < p.output_dim):
        raise BadDims(f"entry ({row},{col}) outside {p.input_dim}x{p.output_dim}")
    return float(sign_block(p, row // _BLOCK_ROWS)[row % _BLOCK_ROWS, col]) * p.scale


def project_batch(matrix: np.ndarray, p: ProjectionConfig) -> np.ndarray:
    """Project (B, d) rows to (B, k) in one pass over the sign blocks."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if m.shape[1] != p.input_dim:
        raise BadDims(f"gradient dim {m.shape[1]} != {p.input_dim}")
    out = np.zeros((m.shape[0], p.output_dim), dtype=np.float64)
    for block in range(0, p.input_dim, _BLOCK_ROWS):
        rows = min(_BLOCK_ROWS, p.input_dim - block)
        signs = sign_block(p, block // _BLOCK_ROWS)[:rows]
        out += m[:, block:block + rows] @ signs
    return out * p.scale


def project_gradient(g: GradientVector, p: ProjectionConfig) -> ProjectedGradient:
    if g.values.shape != (p.input_dim,):
        raise BadDims(f"gradient dim {g.values.shape} != {p.input_dim}")
    values = project_batch(g.values[None, :], p)[0]
    return ProjectedGradient(g.sample_id, values, p.seed)


# ---------------------------------------------------------------------------
# influence scores
# ---------------------------------------------------------------------------

@dataclass
class InfluenceRecord:
    sample_id: str
    influence: float

    def __post_init__(self) -> None:
        if abs(self.influence) > 1 + 1e-9:
            raise ValueError(f"influence {self.influence} outside [-1, 1]")


def anchor_gradient(projected: Sequence[ProjectedGradient]) -> np.ndarray:
    """Componentwise mean of the proprietary set's projected gradients."""
    if not projected:
        raise Empty("no projected gradients to average")
    k = len(projected[0].values)
    seed = projected[0].projection_seed
    for g in projected:
        if len(g.values) != k or g.projection_seed != seed:
            raise MixedProjections(
                "all gradients must share one projection (k and seed)")
    return np.mean(np.stack([g.values for g in projected]), axis=0)


def influence_score(g: ProjectedGradient, anchor: np.ndarray) -> InfluenceRecord:
    """Cosine similarity between one projected gradient and the anchor."""
    a = np.asarray(anchor, dtype=np.float64)
    if len(g.values) != len(a):
        raise BadDims(f"k mismatch: {len(g.values)} vs {len(a)}")
    na = float(np.linalg.norm(a))
    ng = g.norm
    if na < 1e-12 or ng < 1e-12:
        raise ZeroVector("cosine undefined for (near-)zero vectors")
    return InfluenceRecord(g.sample_id, float(np.dot(g.values, a) / (ng * na)))


@dataclass
class TopSelection:
    sample_ids: list[str]
    quota: int
    shortfall: bool


def select_top_influential(records: Sequence[InfluenceRecord],
                           quota: int) -> TopSelection:
    """Ids of the quota highest-influence samples (ties: lexicographic id)."""
    if quota < 1:
        raise ValueError("quota must be >= 1")
    ranked = sorted(records, key=lambda r: (-r.influence, r.sample_id))
    chosen = ranked[:quota]
    return TopSelection(sample_ids=[r.sample_id for r in chosen],
                        quota=quota,
                        shortfall=len(records) < quota)


# ---------------------------------------------------------------------------
# toy reference model: character-bigram softmax over bytes
# ---------------------------------------------------------------------------

@dataclass
class ToyReferenceModel:
    logits: np.ndarray  # (256, 256)
    training_meta: dict = field(default_factory=dict)


def _bigram_counts(texts: Sequence[str]) -> np.ndarray:
    """Transition count matrix over UTF-8 bytes of each text separately."""
    counts = np.zeros((_ALPHABET, _ALPHABET), dtype=np.float64)
    for text in texts:
        data = text.encode("utf-8")
        if len(data) < 2:
            continue
        cur = np.frombuffer(data, dtype=np.uint8)
        np.add.at(counts, (cur[:-1], cur[1:]), 1.0)
    return counts


def _corpus_loss(w: np.ndarray, counts: np.ndarray) -> float:
    """Mean next-byte cross-entropy, pooled over all counted transitions."""
    total = counts.sum()
    if total == 0:
        raise EmptyCorpus("no byte transitions to train on")
    lse = logsumexp(w, axis=1)
    return float((counts * (lse[:, None] - w)).sum() / total)


def _corpus_grad(w: np.ndarray, counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    probs = softmax(w, axis=1)
    return (counts.sum(axis=1)[:, None] * probs - counts) / total


def toy_reference_train(proprietary: Sequence[InstructionSample],
                        steps: int = 500, learning_rate: float = 50.0,
                        seed: int = 0) -> ToyReferenceModel:
    """Full-batch gradient descent on the pooled bigram cross-entropy.

    A backtracking halving rule on the step size guarantees the recorded
    loss sequence never increases.
    """
    if not proprietary:
        raise EmptyCorpus("need at least one proprietary sample")
    counts = _bigram_counts([s.text for s in proprietary])
    if counts.sum() == 0:
        raise EmptyCorpus("proprietary texts contain no byte transitions")
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=(_ALPHABET, _ALPHABET))
    history = [_corpus_loss(w, counts)]
    for _ in range(steps):
        g = _corpus_grad(w, counts)
        lr = learning_rate
        improved = None
        for _attempt in range(60):
            candidate = w - lr * g
            cand_loss = _corpus_loss(candidate, counts)
            if cand_loss <= history[-1]:
                improved = (candidate, cand_loss)
                break
            lr /= 2
        if improved is None:
            history.append(history[-1])
            continue
        w, new_loss = improved
        history.append(new_loss)
    return ToyReferenceModel(
        logits=w,
        training_meta={"steps": steps, "learning_rate": learning_rate,
                       "seed": seed, "loss_history": history},
    )


def build_optimal_model(samples: Sequence[InstructionSample],
                        clamp: float = 1e-15) -> ToyReferenceModel:
    """Closed-form minimizer: log of the clamped empirical conditionals."""
    counts = _bigram_counts([s.text for s in samples])
    if counts.sum() == 0:
        raise EmptyCorpus("no byte transitions")
    row = counts.sum(axis=1, keepdims=True)
    probs = np.where(row > 0, counts / np.maximum(row, 1.0), 1.0 / _ALPHABET)
    return ToyReferenceModel(logits=np.log(np.maximum(probs, clamp)),
                             training_meta={"analytic": True})


def sample_loss(sample: InstructionSample, model: ToyReferenceModel) -> float:
    counts = _bigram_counts([sample.text])
    return _corpus_loss(model.logits, counts)


def toy_reference_gradient(sample: InstructionSample,
                           model: ToyReferenceModel) -> GradientVector:
    """Gradient of the sample's mean next-byte cross-entropy w.r.t. the
    logits table, flattened to length 65,536."""
    if len(sample.text.encode("utf-8")) < 2:
        raise TooShort("sample text must be at least 2 bytes")
    counts = _bigram_counts([sample.text])
    grad = _corpus_grad(model.logits, counts)
    return GradientVector(sample.sample_id, grad.reshape(-1), provider_tag="toy")
