"""Shared record types and newline-delimited JSON I/O.

Every durable artifact in the pipeline is a stream of JSON records, one per
line, so outputs are appendable, diffable, and digestable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

PROPRIETARY = "proprietary"
SELF_DISTILLED = "self_distilled"


@dataclass(frozen=True)
class Provenance:
    """Where an instruction sample came from.

    ``proprietary`` samples are externally supplied; ``self_distilled``
    samples carry the 1-based checkpoint index, sample index, and the
    bootstrap iteration that produced them.
    """

    kind: str
    checkpoint_index: int | None = None
    sample_index: int | None = None
    iteration: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (PROPRIETARY, SELF_DISTILLED):
            raise ValueError(f"unknown provenance kind: {self.kind!r}")
        if self.kind == SELF_DISTILLED:
            if self.checkpoint_index is None or self.checkpoint_index < 1:
                raise ValueError("self-distilled provenance needs checkpoint_index >= 1")
            if self.sample_index is None or self.sample_index < 1:
                raise ValueError("self-distilled provenance needs sample_index >= 1")

    @classmethod
    def proprietary(cls) -> "Provenance":
        return cls(PROPRIETARY)

    @classmethod
    def self_distilled(cls, checkpoint_index: int, sample_index: int,
                       iteration: int) -> "Provenance":
        return cls(SELF_DISTILLED, checkpoint_index, sample_index, iteration)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == PROPRIETARY:
            return {"kind": self.kind}
        return {
            "kind": self.kind,
            "checkpoint_index": self.checkpoint_index,
            "sample_index": self.sample_index,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Provenance":
        return cls(
            kind=d["kind"],
            checkpoint_index=d.get("checkpoint_index"),
            sample_index=d.get("sample_index"),
            iteration=d.get("iteration"),
        )


@dataclass
class InstructionSample:
    """A problem-solution pair with provenance and optional quality fields."""

    sample_id: str
    snippet_id: str
    problem: str
    solution: str
    provenance: Provenance
    aspect_scores: list[int] | None = None
    aggregate_score: float | None = None
    influence: float | None = None

    def __post_init__(self) -> None:
        if not self.problem or not self.solution:
            raise ValueError("problem and solution must be non-empty")

    @property
    def text(self) -> str:
        """The sample as one training text (problem then solution)."""
        return self.problem + "\n" + self.solution

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "sample_id": self.sample_id,
            "snippet_id": self.snippet_id,
            "problem": self.problem,
            "solution": self.solution,
            "provenance": self.provenance.to_dict(),
        }
        if self.aspect_scores is not None:
            d["aspect_scores"] = list(self.aspect_scores)
        if self.aggregate_score is not None:
            d["aggregate_score"] = self.aggregate_score
        if self.influence is not None:
            d["influence"] = self.influence
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "InstructionSample":
        return cls(
            sample_id=d["sample_id"],
            snippet_id=d["snippet_id"],
            problem=d["problem"],
            solution=d["solution"],
            provenance=Provenance.from_dict(d["provenance"]),
            aspect_scores=d.get("aspect_scores"),
            aggregate_score=d.get("aggregate_score"),
            influence=d.get("influence"),
        )


def stable_json(obj: Any) -> str:
    """Canonical single-line JSON: sorted keys, no float repr surprises."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def derive_id(*parts: Any) -> str:
    """Deterministic hex id from any printable parts."""
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def content_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_jsonl(path: str | Path, records: Iterable[dict[str, Any]]) -> None:
    """Write records atomically (tmp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(stable_json(rec))
            f.write("\n")
    tmp.replace(path)


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_samples(path: str | Path, samples: Iterable[InstructionSample]) -> None:
    write_jsonl(path, (s.to_dict() for s in samples))


def read_samples(path: str | Path) -> list[InstructionSample]:
    return [InstructionSample.from_dict(d) for d in read_jsonl(path)]
