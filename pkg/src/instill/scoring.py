"""Multi-aspect score parsing, weighted aggregation, and ridge-regression
weight fitting.

A candidate's final score is a plain dot product of its integer aspect
scores with a learned weight vector; the weights come from regressing
downstream performance on mean aspect scores across tuning experiments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .records import InstructionSample, read_jsonl, write_jsonl

N_ASPECTS = 10
SCORE_MIN = 0
SCORE_MAX = 9

# aspect order is positional; this list is recorded in run manifests so
# vectors stay comparable across runs
DEFAULT_ASPECT_NAMES = (
    "problem-solution consistency",
    "problem clarity",
    "solution correctness",
    "code readability",
    "difficulty calibration",
    "concept coverage",
    "constraint fidelity",
    "edge case handling",
    "efficiency of solution",
    "pedagogical value",
)


class ScoreParseError(ValueError):
    pass


class WrongArity(ScoreParseError):
    pass


class OutOfRange(ScoreParseError):
    pass


class Unparseable(ScoreParseError):
    pass


class DimensionMismatch(ValueError):
    pass


class SingularSystem(ValueError):
    pass


class NoValidCandidates(ValueError):
    pass


_INT = re.compile(r"(?<!\w)-?\d+")


def parse_aspect_scores(raw: str, n_aspects: int = N_ASPECTS) -> list[int]:
    """Extract the aspect scores from a scorer completion.

    The reply must contain exactly ``n_aspects`` integer literals, in aspect
    order, each within [0, 9].
    """
    if not raw.strip():
        raise Unparseable("empty scorer completion")
    found = [int(m.group()) for m in _INT.finditer(raw)]
    if not found:
        raise Unparseable("no integer scores in completion")
    if len(found) != n_aspects:
        raise WrongArity(f"expected {n_aspects} scores, found {len(found)}")
    for v in found:
        if not SCORE_MIN <= v <= SCORE_MAX:
            raise OutOfRange(f"score {v} outside [{SCORE_MIN}, {SCORE_MAX}]")
    return found


@dataclass
class WeightVector:
    w: np.ndarray
    lam: float
    fit_diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        if not np.all(np.isfinite(self.w)):
            raise ValueError("weights must be finite")


@dataclass
class ExperimentRecord:
    mean_scores: np.ndarray
    performance: float

    def __post_init__(self) -> None:
        self.mean_scores = np.asarray(self.mean_scores, dtype=np.float64)


def aggregate_score(x: Sequence[int], w: WeightVector) -> float:
    """Weighted sum of aspect scores (no intercept)."""
    xv = np.asarray(x, dtype=np.float64)
    if xv.shape != w.w.shape:
        raise DimensionMismatch(f"{xv.shape} vs {w.w.shape}")
    return float(np.dot(w.w, xv))


AGGREGATION_STRATEGIES = ("weighted", "raw_sum", "mean")


def aggregate_with_strategy(x: Sequence[int], w: WeightVector | None,
                            strategy: str = "weighted") -> float:
    """Ablation hook: learned weights, unweighted composite, or average."""
    if strategy == "weighted":
        if w is None:
            raise ValueError("weighted aggregation needs a weight vector")
        return aggregate_score(x, w)
    if strategy == "raw_sum":
        return float(sum(x))
    if strategy == "mean":
        return float(sum(x)) / len(x)
    raise ValueError(f"unknown strategy {strategy!r}; "
                     f"choose from {AGGREGATION_STRATEGIES}")


def fit_weights(experiments: Sequence[ExperimentRecord],
                lam: float = 1.0) -> WeightVector:
    """Ridge fit of performance on mean aspect scores via the normal
    equations (X'X + lam*I) w = X'y, solved as a symmetric positive-definite
    system. No intercept; aggregation has none either.
    """
    if not experiments:
        raise ValueError("need at least one experiment record")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    z = len(experiments[0].mean_scores)
    for rec in experiments:
        if len(rec.mean_scores) != z:
            raise DimensionMismatch("experiment records differ in length")
    x = np.stack([rec.mean_scores for rec in experiments])
    y = np.array([rec.performance for rec in experiments], dtype=np.float64)
    a = x.T @ x + lam * np.eye(z)
    b = x.T @ y
    if lam == 0 and np.linalg.matrix_rank(a) < z:
        raise SingularSystem("normal equations singular; increase lam")
    try:
        w = scipy.linalg.solve(a, b, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystem(
            "normal equations singular; increase lam") from exc
    residual = float(np.linalg.norm(y - x @ w))
    cond = float(np.linalg.cond(a))
    return WeightVector(w, lam, {"residual_norm": residual,
                                 "condition_estimate": cond})


def select_best_candidate(candidates: Sequence[InstructionSample],
                          w: WeightVector | None,
                          strategy: str = "weighted") -> InstructionSample:
    """Highest-aggregate candidate for one snippet.

    Unscored candidates (failed scorer slots) are skipped. Ties go to the
    lowest (checkpoint_index, sample_index).
    """
    best = None
    best_key = None
    for cand in candidates:
        if cand.aspect_scores is None:
            continue
        cand.aggregate_score = aggregate_with_strategy(
            cand.aspect_scores, w, strategy)
        prov = cand.provenance
        key = (-cand.aggregate_score,
               prov.checkpoint_index or 0,
               prov.sample_index or 0)
        if best_key is None or key < best_key:
            best, best_key = cand, key
    if best is None:
        raise NoValidCandidates("no candidate carries aspect scores")
    return best


# ---------------------------------------------------------------------------
# experiment records on disk
# ---------------------------------------------------------------------------

def read_experiments(path: str | Path) -> list[ExperimentRecord]:
    return [ExperimentRecord(rec["mean_scores"], float(rec["performance"]))
            for rec in read_jsonl(path)]


def write_experiments(path: str | Path,
                      experiments: Sequence[ExperimentRecord]) -> None:
    write_jsonl(path, ({"mean_scores": [float(v) for v in rec.mean_scores],
                        "performance": rec.performance}
                       for rec in experiments))


def write_weights(path: str | Path, wv: WeightVector) -> None:
    write_jsonl(path, [{"w": [float(v) for v in wv.w], "lam": wv.lam,
                        "fit_diagnostics": wv.fit_diagnostics,
                        "aspects": list(DEFAULT_ASPECT_NAMES[:len(wv.w)])}])


def read_weights(path: str | Path) -> WeightVector:
    rec = next(iter(read_jsonl(path)))
    return WeightVector(rec["w"], float(rec["lam"]),
                        rec.get("fit_diagnostics", {}))
