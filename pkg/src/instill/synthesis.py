"""Candidate generation across multiple synthesizer checkpoints.

Each snippet fans out to M checkpoints x N samples. Requests run
concurrently under a per-endpoint parallelism bound; failed slots are
recorded, never dropped, so quota accounting stays exact. A scripted mock
backend stands in for live endpoints and makes every test deterministic.
"""

from __future__ import annotations

import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import requests

from .pool import CodeSnippet
from .records import InstructionSample, Provenance, derive_id
from .scoring import (
    DEFAULT_ASPECT_NAMES,
    ScoreParseError,
    parse_aspect_scores,
)

SYNTHESIS_TEMPERATURE = 0.2
SCORING_TEMPERATURE = 0.0

PROBLEM_MARK = "[problem]"
SOLUTION_MARK = "[solution]"


class MissingPlaceholder(ValueError):
    pass


class MalformedCompletion(ValueError):
    pass


class EndpointUnavailable(RuntimeError):
    pass


class AllSlotsFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_ms: int = 100

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class EndpointConfig:
    name: str
    base_url: str
    model_id: str
    api_key_env: str | None = None
    max_parallel: int = 4
    timeout_ms: int = 60_000
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


@dataclass
class CheckpointSet:
    checkpoints: list[EndpointConfig]
    samples_per_checkpoint: int
    temperature: float = SYNTHESIS_TEMPERATURE

    def __post_init__(self) -> None:
        if not self.checkpoints:
            raise ValueError("need at least one checkpoint")
        if self.samples_per_checkpoint < 1:
            raise ValueError("samples_per_checkpoint must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


# ---------------------------------------------------------------------------
# prompts
# ---------------------------------------------------------------------------

DEFAULT_SYNTHESIS_TEMPLATE = """You are given a seed code snippet. Invent a \
self-contained programming problem inspired by it, then solve the problem.

Seed snippet:
{snippet}

Reply in exactly this format:
[problem]
<the problem statement>
[solution]
<the complete solution code>"""

DEFAULT_SCORING_TEMPLATE = """Rate the following problem-solution pair on \
each aspect with an integer from 0 (worst) to 9 (best).

Aspects, in order:
""" + "\n".join(f"- {name}" for name in DEFAULT_ASPECT_NAMES) + """

[problem]
{problem}
[solution]
{solution}

Reply with one line per aspect: <aspect name>: <integer>."""


def render_synthesis_prompt(snippet: CodeSnippet,
                            template: str = DEFAULT_SYNTHESIS_TEMPLATE) -> str:
    if "{snippet}" not in template:
        raise MissingPlaceholder("template lacks {snippet}")
    return template.replace("{snippet}", snippet.source_text)


def render_scoring_prompt(sample: InstructionSample,
                          template: str = DEFAULT_SCORING_TEMPLATE) -> str:
    for ph in ("{problem}", "{solution}"):
        if ph not in template:
            raise MissingPlaceholder(f"template lacks {ph}")
    return (template.replace("{problem}", sample.problem)
            .replace("{solution}", sample.solution))


def parse_problem_solution(raw: str) -> tuple[str, str]:
    """Split a completion at the first problem marker and the last solution
    marker; both parts stripped and non-empty.

    Taking the last solution marker means the extracted solution can never
    contain one, which is what makes serialize-then-parse idempotent.
    """
    p = raw.find(PROBLEM_MARK)
    s = raw.rfind(SOLUTION_MARK)
    if p < 0 or s < 0 or s < p + len(PROBLEM_MARK):
        raise MalformedCompletion("problem/solution markers absent or reversed")
    q = raw[p + len(PROBLEM_MARK):s].strip()
    sol = raw[s + len(SOLUTION_MARK):].strip()
    if not q or not sol:
        raise MalformedCompletion("empty problem or solution part")
    return q, sol


def serialize_problem_solution(q: str, s: str) -> str:
    return f"{PROBLEM_MARK}\n{q}\n{SOLUTION_MARK}\n{s}"


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------

class Backend(Protocol):
    def complete(self, endpoint: EndpointConfig, prompt: str,
                 temperature: float, tag: tuple | None = None) -> str:
        ...


class HttpBackend:
    """JSON-over-HTTP chat-completion client, one completion per request."""

    def complete(self, endpoint: EndpointConfig, prompt: str,
                 temperature: float, tag: tuple | None = None) -> str:
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            key = os.environ.get(endpoint.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": endpoint.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "n": 1,
        }
        try:
            resp = requests.post(endpoint.base_url, json=payload,
                                 headers=headers,
                                 timeout=endpoint.timeout_ms / 1000.0)
        except requests.RequestException as exc:
            raise EndpointUnavailable(f"{endpoint.name}: {exc}") from exc
        if resp.status_code != 200:
            raise EndpointUnavailable(
                f"{endpoint.name}: HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EndpointUnavailable(
                f"{endpoint.name}: malformed response body") from exc


class MockBackend:
    """Deterministic stand-in for live endpoints.

    ``script`` maps a slot key to either a reply string or {"fail": n}
    (n attempts fail, then the default reply; "always" never succeeds).
    Slot keys: "<snippet_id>/<i>/<j>" for synthesis, "score/<sample_id>"
    for scoring. Unscripted slots get a deterministic default reply derived
    from the tag alone, so thread arrival order never matters.
    """

    def __init__(self, script: dict | None = None):
        self.script = dict(script or {})
        self._lock = threading.Lock()
        self.calls: dict[str, int] = {}
        self.total_calls = 0
        self._in_flight: dict[str, int] = {}
        self.max_in_flight: dict[str, int] = {}
        self.temperatures: set[float] = set()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    @staticmethod
    def slot_key(tag: tuple | None) -> str:
        return "/".join(str(part) for part in tag) if tag else "untagged"

    def default_reply(self, tag: tuple | None) -> str:
        if tag and tag[0] == "score":
            digest = derive_id("mock-scores", *tag)
            scores = [int(ch, 16) % 10 for ch in digest[:10]]
            return "\n".join(f"{name}: {v}" for name, v
                             in zip(DEFAULT_ASPECT_NAMES, scores))
        if tag and len(tag) == 3:
            sid, i, j = tag
            return serialize_problem_solution(
                f"Write a function for case {str(sid)[:8]}, variant {i}-{j}.",
                f"def solve_{i}_{j}():\n    return {i} * 10 + {j}")
        return serialize_problem_solution("Write anything.", "pass")

    def complete(self, endpoint: EndpointConfig, prompt: str,
                 temperature: float, tag: tuple | None = None) -> str:
        key = self.slot_key(tag)
        with self._lock:
            self.total_calls += 1
            self.calls[key] = self.calls.get(key, 0) + 1
            attempt = self.calls[key]
            self.temperatures.add(temperature)
            cur = self._in_flight.get(endpoint.name, 0) + 1
            self._in_flight[endpoint.name] = cur
            self.max_in_flight[endpoint.name] = max(
                self.max_in_flight.get(endpoint.name, 0), cur)
        try:
            time.sleep(0.002)  # let concurrent slots overlap
            entry = self.script.get(key)
            if isinstance(entry, dict) and "fail" in entry:
                n = entry["fail"]
                if n == "always" or attempt <= int(n):
                    raise EndpointUnavailable(f"{endpoint.name}: scripted failure")
                return self.default_reply(tag)
            if isinstance(entry, str):
                return entry
            return self.default_reply(tag)
        finally:
            with self._lock:
                self._in_flight[endpoint.name] -= 1


# ---------------------------------------------------------------------------
# fan-out
# ---------------------------------------------------------------------------

@dataclass
class CandidateFailure:
    checkpoint_index: int
    sample_index: int
    error: str
    attempts: int
    kind: str = "endpoint"  # or "malformed"


@dataclass
class CandidateResult:
    checkpoint_index: int
    sample_index: int
    endpoint_name: str
    completion: str | None = None
    failure: CandidateFailure | None = None

    @property
    def ok(self) -> bool:
        return self.completion is not None


def _run_slot(snippet: CodeSnippet, cs: CheckpointSet, backend: Backend,
              prompt: str, i: int, j: int,
              sem: threading.BoundedSemaphore) -> CandidateResult:
    ep = cs.checkpoints[i - 1]
    attempts = 0
    while True:
        attempts += 1
        try:
            with sem:
                text = backend.complete(ep, prompt, cs.temperature,
                                        tag=(snippet.id, i, j))
            return CandidateResult(i, j, ep.name, completion=text)
        except EndpointUnavailable as exc:
            if attempts >= ep.retry.max_attempts:
                return CandidateResult(
                    i, j, ep.name,
                    failure=CandidateFailure(i, j, str(exc), attempts))
            time.sleep(ep.retry.backoff_ms * (2 ** (attempts - 1)) / 1000.0)


def generate_candidates(snippet: CodeSnippet, cs: CheckpointSet,
                        backend: Backend,
                        template: str = DEFAULT_SYNTHESIS_TEMPLATE,
                        max_workers: int = 16,
                        allow_all_failed: bool = False) -> list[CandidateResult]:
    """All M x N completion slots for one snippet, in (i, j) order.

    Every slot yields either a completion or a failure record; the call
    raises only when no slot at all succeeded. Batch callers pass
    allow_all_failed=True so one dead snippet never aborts a long run.
    """
    prompt = render_synthesis_prompt(snippet, template)
    m = len(cs.checkpoints)
    n = cs.samples_per_checkpoint
    sems = {i: threading.BoundedSemaphore(cs.checkpoints[i - 1].max_parallel)
            for i in range(1, m + 1)}
    out: dict[tuple[int, int], CandidateResult] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as ex:
        futures = {
            ex.submit(_run_slot, snippet, cs, backend, prompt, i, j, sems[i]):
            (i, j)
            for i in range(1, m + 1) for j in range(1, n + 1)
        }
        for fut, slot in futures.items():
            out[slot] = fut.result()
    results = [out[slot] for slot in sorted(out)]
    if not allow_all_failed and not any(r.ok for r in results):
        raise AllSlotsFailed(f"all {m * n} slots failed for {snippet.id[:12]}")
    return results


def candidates_to_samples(snippet: CodeSnippet,
                          results: Sequence[CandidateResult],
                          iteration: int) -> tuple[list[InstructionSample],
                                                   list[CandidateFailure]]:
    """Parse successful completions into instruction samples.

    Unparseable completions are demoted to failure records with kind
    "malformed"; endpoint failures pass through unchanged.
    """
    samples: list[InstructionSample] = []
    failures: list[CandidateFailure] = []
    for r in results:
        if not r.ok:
            failures.append(r.failure)
            continue
        try:
            q, s = parse_problem_solution(r.completion)
        except MalformedCompletion as exc:
            failures.append(CandidateFailure(
                r.checkpoint_index, r.sample_index, str(exc), 1,
                kind="malformed"))
            continue
        samples.append(InstructionSample(
            sample_id=derive_id(snippet.id, r.checkpoint_index,
                                r.sample_index, iteration),
            snippet_id=snippet.id,
            problem=q,
            solution=s,
            provenance=Provenance.self_distilled(
                r.checkpoint_index, r.sample_index, iteration),
        ))
    return samples, failures


# ---------------------------------------------------------------------------
# scorer requests
# ---------------------------------------------------------------------------

@dataclass
class ScoreFailure:
    sample_id: str
    error: str


def score_candidates(samples: Sequence[InstructionSample],
                     endpoint: EndpointConfig, backend: Backend,
                     template: str = DEFAULT_SCORING_TEMPLATE,
                     temperature: float = SCORING_TEMPERATURE,
                     max_workers: int = 16) -> list[ScoreFailure]:
    """Fill ``aspect_scores`` on each sample via the scorer endpoint.

    Failed or unparseable replies leave the sample unscored and are
    returned as failure records.
    """
    sem = threading.BoundedSemaphore(endpoint.max_parallel)
    failures: list[ScoreFailure] = []
    lock = threading.Lock()

    def run(sample: InstructionSample) -> None:
        prompt = render_scoring_prompt(sample, template)
        attempts = 0
        while True:
            attempts += 1
            try:
                with sem:
                    raw = backend.complete(endpoint, prompt, temperature,
                                           tag=("score", sample.sample_id))
                break
            except EndpointUnavailable as exc:
                if attempts >= endpoint.retry.max_attempts:
                    with lock:
                        failures.append(ScoreFailure(sample.sample_id, str(exc)))
                    return
                time.sleep(endpoint.retry.backoff_ms
                           * (2 ** (attempts - 1)) / 1000.0)
        try:
            sample.aspect_scores = parse_aspect_scores(raw)
        except ScoreParseError as exc:
            with lock:
                failures.append(ScoreFailure(sample.sample_id, str(exc)))

    with ThreadPoolExecutor(max_workers=max_workers) as ex:
        list(ex.map(run, samples))
    return failures


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def _endpoint_from_dict(d: dict) -> EndpointConfig:
    if "api_key" in d:
        raise ValueError(
            "api keys belong in environment variables (api_key_env), "
            "never in config files")
    retry = d.get("retry", {})
    return EndpointConfig(
        name=d["name"],
        base_url=d["base_url"],
        model_id=d["model_id"],
        api_key_env=d.get("api_key_env"),
        max_parallel=int(d.get("max_parallel", 4)),
        timeout_ms=int(d.get("timeout_ms", 60_000)),
        retry=RetryPolicy(
            max_attempts=int(retry.get("max_attempts", 3)),
            backoff_ms=int(retry.get("backoff_ms", 100)),
        ),
    )


def load_checkpoint_set(path: str | Path) -> CheckpointSet:
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    return CheckpointSet(
        checkpoints=[_endpoint_from_dict(d) for d in cfg["checkpoints"]],
        samples_per_checkpoint=int(cfg.get("samples_per_checkpoint", 3)),
        temperature=float(cfg.get("temperature", SYNTHESIS_TEMPERATURE)),
    )


def load_endpoint(path: str | Path) -> EndpointConfig:
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if "checkpoints" in cfg:
        return _endpoint_from_dict(cfg["checkpoints"][0])
    return _endpoint_from_dict(cfg)
