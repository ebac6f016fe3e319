"""Orchestration of the iterative self-distillation loop.

One iteration runs six stages in order: pool (snapshot the snippet
pool), sample (seeded draw), synthesize (M x N candidates per snippet),
score (aspect scores + best candidate per snippet), influence (rank the
best candidates against the proprietary anchor and keep the quota), and
emit (dataset + training-job descriptor + manifest).

Every stage ends with a durable artifact on disk and an advanced stage
cursor, so an interrupted run resumes at the failed stage without
repeating completed backend calls. Manifest counts are derived from the
artifacts themselves, never from in-process memory, which keeps them
correct across resumes. The manifest carries a self digest over
everything except wall-clock timings; re-running with the same seeds and
transcripts reproduces every output digest byte for byte.
"""

from __future__ import annotations

import json
import math
import os
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .influence import (
    TOY_DIM,
    ProjectedGradient,
    ProjectionConfig,
    ToyReferenceModel,
    TooShort,
    ZeroVector,
    anchor_gradient,
    build_projection,
    influence_score,
    project_batch,
    select_top_influential,
    toy_reference_gradient,
    toy_reference_train,
)
from .pool import read_snippets, write_snippets
from .records import (
    InstructionSample,
    derive_id,
    file_digest,
    read_jsonl,
    read_samples,
    stable_json,
    write_jsonl,
    write_samples,
)
from .sampler import assign_categories, read_category_set, read_embeddings, stratified_sample
from .scoring import (
    N_ASPECTS,
    NoValidCandidates,
    WeightVector,
    read_weights,
    select_best_candidate,
)
from .synthesis import (
    Backend,
    CheckpointSet,
    EndpointConfig,
    HttpBackend,
    MockBackend,
    candidates_to_samples,
    generate_candidates,
    score_candidates,
)

STAGES = ("pool", "sample", "synthesize", "score", "influence", "emit")

DEFAULT_QUOTAS = (20_000, 40_000)
TRAINING_EPOCHS = 3
TRAINING_LEARNING_RATE = 1e-5
TRAINING_BATCH_SIZE = 128

_STATE_FILE = "state.json"
_LOCK_FILE = "lock"
_POOL_FILE = "pool.jsonl"
_MODEL_FILE = "reference_model.npz"


class BadSchedule(ValueError):
    """Iteration schedule with a non-positive quota."""


class CorruptManifest(ValueError):
    """Stored manifest whose digest no longer matches its content."""


class StageFailure(RuntimeError):
    """A pipeline stage raised; carries the stage name and the partial
    manifest assembled so far."""

    def __init__(self, stage: str, manifest: dict, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.manifest = manifest
        self.cause = cause


class QuotaShortfall(UserWarning):
    """Fewer samples available than the iteration quota; not fatal."""


class LockHeld(RuntimeError):
    """Another process holds the pipeline lock for this state directory."""


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationSpec:
    index: int
    self_distilled_quota: int

    def __post_init__(self):
        if self.index < 1:
            raise BadSchedule("iteration index starts at 1")
        if self.self_distilled_quota < 1:
            raise BadSchedule(
                f"iteration {self.index}: quota must be positive")


@dataclass(frozen=True)
class IterationPlan:
    iterations: tuple[IterationSpec, ...]
    scale_factor: float = 1.0
    seeds: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.iterations:
            raise BadSchedule("plan needs at least one iteration")
        for expect, spec in enumerate(self.iterations, start=1):
            if spec.index != expect:
                raise BadSchedule("iteration indices must run 1, 2, ...")
        for stage in STAGES:
            self.seeds.setdefault(stage, _stage_base_seed(0, stage))

    def quota(self, iteration: int) -> int:
        return self.iterations[iteration - 1].self_distilled_quota

    def to_dict(self) -> dict[str, Any]:
        return {
            "iterations": [
                {"index": s.index, "self_distilled_quota": s.self_distilled_quota}
                for s in self.iterations
            ],
            "scale_factor": self.scale_factor,
            "seeds": dict(self.seeds),
        }


def _stage_base_seed(master_seed: int, stage: str) -> int:
    return int(derive_id("stage-seed", master_seed, stage)[:16], 16)


def stage_seed(plan: IterationPlan, stage: str, iteration: int) -> int:
    """Per-iteration seed for one stage, derived from the plan's base seed."""
    return int(derive_id("iter-seed", plan.seeds[stage], stage, iteration)[:16], 16)


def plan_iterations(config: dict | None = None) -> IterationPlan:
    """Build the iteration schedule.

    The default is the two-round schedule scaled by ``scale_factor``
    (ceiling); an explicit ``quotas`` list overrides it verbatim so
    decreasing or single-round ablation schedules pass through unchanged.
    """
    config = dict(config or {})
    scale = float(config.get("scale_factor", 1.0))
    if not 0.0 < scale <= 1.0:
        raise BadSchedule(f"scale_factor must be in (0, 1], got {scale}")
    quotas = config.get("quotas")
    if quotas is None:
        quotas = [math.ceil(q * scale) for q in DEFAULT_QUOTAS]
    quotas = [int(q) for q in quotas]
    master = int(config.get("master_seed", 0))
    seeds = {stage: _stage_base_seed(master, stage) for stage in STAGES}
    seeds.update({k: int(v) for k, v in config.get("seeds", {}).items()})
    return IterationPlan(
        iterations=tuple(
            IterationSpec(i, q) for i, q in enumerate(quotas, start=1)),
        scale_factor=scale,
        seeds=seeds,
    )


# ---------------------------------------------------------------------------
# services
# ---------------------------------------------------------------------------

@dataclass
class ServiceBundle:
    """Everything one iteration needs from the outside world."""

    pool_path: str
    proprietary_path: str
    checkpoint_set: CheckpointSet
    scorer: EndpointConfig
    backend: Backend
    base_model: str = "synthesizer-base"
    weights: WeightVector | None = None
    embeddings_path: str | None = None
    categories_path: str | None = None
    snippets_per_iteration: int | None = None
    projection_k: int = 1024
    toy_train_steps: int = 120

    def describe(self) -> dict[str, Any]:
        """Digestable summary of the configuration (never credentials)."""
        return {
            "pool_path": str(self.pool_path),
            "proprietary_path": str(self.proprietary_path),
            "checkpoints": [e.name for e in self.checkpoint_set.checkpoints],
            "samples_per_checkpoint": self.checkpoint_set.samples_per_checkpoint,
            "temperature": self.checkpoint_set.temperature,
            "scorer": self.scorer.name,
            "base_model": self.base_model,
            "weights": None if self.weights is None else list(self.weights.w),
            "embeddings_path": self.embeddings_path,
            "categories_path": self.categories_path,
            "snippets_per_iteration": self.snippets_per_iteration,
            "projection_k": self.projection_k,
            "toy_train_steps": self.toy_train_steps,
        }


def load_services(path: str | Path, mock: str | Path | bool = False) -> ServiceBundle:
    """Build a service bundle from a JSON config file.

    ``mock`` switches the backend to a deterministic stand-in, optionally
    loading a scripted transcript from the given path.
    """
    from .synthesis import _endpoint_from_dict

    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    cs = CheckpointSet(
        checkpoints=tuple(_endpoint_from_dict(d) for d in cfg["checkpoints"]),
        samples_per_checkpoint=int(cfg.get("samples_per_checkpoint", 3)),
        temperature=float(cfg.get("temperature", 0.2)),
    )
    if mock:
        backend: Backend = (MockBackend.from_file(mock)
                            if isinstance(mock, (str, Path)) else MockBackend())
    else:
        backend = HttpBackend()
    weights = None
    if cfg.get("weights_path"):
        weights = read_weights(cfg["weights_path"])
    return ServiceBundle(
        pool_path=cfg["pool_path"],
        proprietary_path=cfg["proprietary_path"],
        checkpoint_set=cs,
        scorer=_endpoint_from_dict(cfg["scorer"]),
        backend=backend,
        base_model=cfg.get("base_model", "synthesizer-base"),
        weights=weights,
        embeddings_path=cfg.get("embeddings_path"),
        categories_path=cfg.get("categories_path"),
        snippets_per_iteration=cfg.get("snippets_per_iteration"),
        projection_k=int(cfg.get("projection_k", 1024)),
        toy_train_steps=int(cfg.get("toy_train_steps", 120)),
    )


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineState:
    """Durable cursor over the loop: which iteration, which stage, and the
    manifests completed so far (append-only)."""

    root: Path
    iteration: int = 1
    stage_cursor: str = "pool"
    completed: tuple[dict, ...] = ()

    def __post_init__(self):
        if self.stage_cursor not in STAGES:
            raise ValueError(f"unknown stage {self.stage_cursor!r}")

    def iter_dir(self, iteration: int | None = None) -> Path:
        n = self.iteration if iteration is None else iteration
        return self.root / f"iter_{n:03d}"

    def save(self) -> None:
        payload = {
            "iteration": self.iteration,
            "stage_cursor": self.stage_cursor,
            "completed": [f"iter_{m['iteration']:03d}/manifest.json"
                          for m in self.completed],
        }
        tmp = self.root / (_STATE_FILE + ".tmp")
        tmp.write_text(stable_json(payload) + "\n", encoding="utf-8")
        tmp.replace(self.root / _STATE_FILE)


def _verify_manifest(manifest: dict, root: Path) -> None:
    claimed = manifest.get("self_digest")
    if claimed != manifest_digest(manifest):
        raise CorruptManifest(
            f"iteration {manifest.get('iteration')}: manifest digest mismatch")
    dataset = root / manifest["dataset_path"]
    if not dataset.exists() or file_digest(dataset) != manifest["dataset_digest"]:
        raise CorruptManifest(
            f"iteration {manifest.get('iteration')}: dataset digest mismatch")


def resume(manifest_dir: str | Path) -> PipelineState:
    """Reconstruct pipeline state from disk.

    An empty directory yields a fresh state at iteration 1, stage pool.
    Completed manifests are digest-verified before they are trusted.
    """
    root = Path(manifest_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"state directory {root} does not exist")
    state_path = root / _STATE_FILE
    if not state_path.exists():
        return PipelineState(root=root)
    data = json.loads(state_path.read_text(encoding="utf-8"))
    manifests = []
    for rel in data["completed"]:
        mpath = root / rel
        if not mpath.exists():
            raise CorruptManifest(f"missing manifest {rel}")
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        _verify_manifest(manifest, root)
        manifests.append(manifest)
    return PipelineState(
        root=root,
        iteration=int(data["iteration"]),
        stage_cursor=data["stage_cursor"],
        completed=tuple(manifests),
    )


@contextmanager
def pipeline_lock(root: str | Path):
    """Exclusive advisory lock for one state directory."""
    path = Path(root) / _LOCK_FILE
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockHeld(f"lock file {path} exists; another run is active") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def manifest_digest(manifest: dict) -> str:
    """Digest over the manifest body, excluding the digest itself and the
    wall-clock timings (the only run-dependent field)."""
    body = {k: v for k, v in manifest.items()
            if k not in ("self_digest", "timings")}
    return derive_id("manifest", stable_json(body))


def _artifact(root: Path, path: Path) -> dict[str, str]:
    return {"path": str(path.relative_to(root)), "digest": file_digest(path)}


def _count_lines(path: Path) -> int:
    with open(path, "rb") as fh:
        return sum(1 for line in fh if line.strip())


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

@dataclass
class _IterationRun:
    """Read-only context shared by the stage functions."""

    state: PipelineState
    plan: IterationPlan
    services: ServiceBundle
    spec: IterationSpec
    iter_dir: Path

    @property
    def root(self) -> Path:
        return self.state.root


def _pool_snapshot_path(root: Path) -> Path:
    return root / _POOL_FILE


def _stage_pool(run: _IterationRun) -> None:
    snapshot = _pool_snapshot_path(run.root)
    if not snapshot.exists():
        snippets = read_snippets(run.services.pool_path)
        if not snippets:
            raise ValueError("snippet pool is empty")
        write_snippets(snapshot, snippets)


def _draw_count(run: _IterationRun) -> int:
    n = run.services.snippets_per_iteration
    return run.spec.self_distilled_quota if n is None else int(n)


def _stage_sample(run: _IterationRun) -> None:
    snippets = read_snippets(_pool_snapshot_path(run.root))
    n = _draw_count(run)
    seed = stage_seed(run.plan, "sample", run.spec.index)
    svc = run.services
    if svc.embeddings_path and svc.categories_path:
        cats = read_category_set(svc.categories_path)
        embeds = read_embeddings(svc.embeddings_path)
        categorized = assign_categories(snippets, embeds, cats)
        per_category = math.ceil(n / len(cats.names))
        report = stratified_sample(categorized, per_category, seed)
        drawn = list(report.selected[:n])
    else:
        rng = np.random.default_rng(seed)
        ordered = sorted(snippets, key=lambda s: s.id)
        take = min(n, len(ordered))
        picks = rng.choice(len(ordered), size=take, replace=False)
        drawn = [ordered[i] for i in sorted(picks)]
    write_snippets(run.iter_dir / "sampled.jsonl", drawn)


def _failure_record(snippet_id: str, f) -> dict[str, Any]:
    return {
        "snippet_id": snippet_id,
        "checkpoint_index": f.checkpoint_index,
        "sample_index": f.sample_index,
        "error": f.error,
        "attempts": f.attempts,
        "kind": f.kind,
    }


def _stage_synthesize(run: _IterationRun) -> None:
    snippets = read_snippets(run.iter_dir / "sampled.jsonl")
    all_samples: list[InstructionSample] = []
    all_failures: list[dict] = []
    for snippet in snippets:
        results = generate_candidates(
            snippet, run.services.checkpoint_set, run.services.backend,
            allow_all_failed=True)
        samples, failures = candidates_to_samples(
            snippet, results, iteration=run.spec.index)
        all_samples.extend(samples)
        all_failures.extend(_failure_record(snippet.id, f) for f in failures)
    write_samples(run.iter_dir / "candidates.jsonl", all_samples)
    write_jsonl(run.iter_dir / "candidate_failures.jsonl", all_failures)


def _effective_weights(services: ServiceBundle) -> WeightVector:
    """Configured weights, or a uniform vector until some are learned."""
    if services.weights is not None:
        return services.weights
    return WeightVector(w=np.full(N_ASPECTS, 1.0 / N_ASPECTS), lam=0.0,
                        fit_diagnostics={"uniform_fallback": True})


def _stage_score(run: _IterationRun) -> None:
    samples = read_samples(run.iter_dir / "candidates.jsonl")
    failures = score_candidates(
        samples, run.services.scorer, run.services.backend)
    write_jsonl(run.iter_dir / "score_failures.jsonl",
                ({"sample_id": f.sample_id, "error": f.error} for f in failures))
    write_samples(run.iter_dir / "scored.jsonl", samples)
    by_snippet: dict[str, list[InstructionSample]] = {}
    for s in samples:
        by_snippet.setdefault(s.snippet_id, []).append(s)
    weights = _effective_weights(run.services)
    best: list[InstructionSample] = []
    for snippet_id in sorted(by_snippet):
        try:
            best.append(select_best_candidate(by_snippet[snippet_id], weights))
        except NoValidCandidates:
            continue
    write_samples(run.iter_dir / "best.jsonl", best)


def _load_reference_model(run: _IterationRun) -> ToyReferenceModel:
    """Train the byte-bigram reference model once per state directory."""
    cache = run.root / _MODEL_FILE
    if cache.exists():
        with np.load(cache) as data:
            return ToyReferenceModel(logits=data["logits"].copy())
    proprietary = read_samples(run.services.proprietary_path)
    model = toy_reference_train(
        proprietary, steps=run.services.toy_train_steps,
        seed=run.plan.seeds["influence"])
    tmp = cache.with_name(cache.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, logits=model.logits)
    tmp.replace(cache)
    return model


def _projected(samples: Sequence[InstructionSample],
               model: ToyReferenceModel,
               proj: ProjectionConfig) -> list[ProjectedGradient]:
    # one batched pass so the sign blocks are generated once, not per sample
    ids, rows = [], []
    for s in samples:
        try:
            g = toy_reference_gradient(s, model)
        except TooShort:
            continue
        ids.append(s.sample_id)
        rows.append(g.values)
    if not rows:
        return []
    mat = project_batch(np.stack(rows), proj)
    return [ProjectedGradient(sid, row, proj.seed)
            for sid, row in zip(ids, mat)]


def _stage_influence(run: _IterationRun) -> None:
    best = read_samples(run.iter_dir / "best.jsonl")
    model = _load_reference_model(run)
    proj = build_projection(
        TOY_DIM, run.services.projection_k,
        seed=int(derive_id("projection", run.plan.seeds["influence"])[:16], 16))
    proprietary = read_samples(run.services.proprietary_path)
    anchor = anchor_gradient(_projected(proprietary, model, proj))
    records = []
    for pg in _projected(best, model, proj):
        try:
            records.append(influence_score(pg, anchor))
        except ZeroVector:
            continue
    quota = run.spec.self_distilled_quota
    selection = select_top_influential(records, quota)
    if selection.shortfall:
        warnings.warn(
            f"iteration {run.spec.index}: {len(selection.sample_ids)} of "
            f"{quota} quota available", QuotaShortfall, stacklevel=2)
    write_jsonl(run.iter_dir / "influence.jsonl",
                ({"sample_id": r.sample_id, "influence": r.influence}
                 for r in records))
    write_jsonl(run.iter_dir / "selected.jsonl",
                ({"sample_id": sid} for sid in selection.sample_ids))


def _stage_emit(run: _IterationRun) -> None:
    best = {s.sample_id: s for s in read_samples(run.iter_dir / "best.jsonl")}
    influence = {r["sample_id"]: r["influence"]
                 for r in read_jsonl(run.iter_dir / "influence.jsonl")}
    selected_ids = [r["sample_id"]
                    for r in read_jsonl(run.iter_dir / "selected.jsonl")]
    dataset = []
    for sid in selected_ids:
        sample = best[sid]
        sample.influence = influence[sid]
        dataset.append(sample)
    write_samples(run.iter_dir / "dataset.jsonl", dataset)

    job = {
        "dataset": str((run.iter_dir / "dataset.jsonl").relative_to(run.root)),
        "base_model": run.services.base_model,
        "epochs": TRAINING_EPOCHS,
        "learning_rate": TRAINING_LEARNING_RATE,
        "batch_size": TRAINING_BATCH_SIZE,
    }
    job_path = run.iter_dir / "training_job.json"
    tmp = job_path.with_name(job_path.name + ".tmp")
    tmp.write_text(stable_json(job) + "\n", encoding="utf-8")
    tmp.replace(job_path)


_STAGE_FNS: dict[str, Callable[[_IterationRun], None]] = {
    "pool": _stage_pool,
    "sample": _stage_sample,
    "synthesize": _stage_synthesize,
    "score": _stage_score,
    "influence": _stage_influence,
    "emit": _stage_emit,
}

# artifacts counted into the manifest, in pipeline order
_COUNTED = ("sampled", "candidates", "candidate_failures", "scored",
            "score_failures", "best", "influence", "selected", "dataset")


def _partial_manifest(run: _IterationRun) -> dict[str, Any]:
    """Manifest assembled from whatever artifacts exist on disk.

    Counts come from the durable files themselves so they stay correct
    when earlier stages ran in a previous process.
    """
    m: dict[str, Any] = {
        "iteration": run.spec.index,
        "quota": run.spec.self_distilled_quota,
        "seeds": {stage: stage_seed(run.plan, stage, run.spec.index)
                  for stage in STAGES},
        "config_digest": derive_id(
            "config", stable_json(run.plan.to_dict()),
            stable_json(run.services.describe())),
    }
    snapshot = _pool_snapshot_path(run.root)
    if snapshot.exists():
        m["pool_digest"] = file_digest(snapshot)
    counts = {}
    artifacts = {}
    for name in _COUNTED:
        path = run.iter_dir / f"{name}.jsonl"
        if path.exists():
            counts[name] = _count_lines(path)
            artifacts[name] = _artifact(run.root, path)
    if "sampled" in counts:
        m["snippets_drawn"] = counts["sampled"]
    if "candidates" in counts:
        m["candidates_generated"] = counts["candidates"]
        m["candidates_failed"] = counts.get("candidate_failures", 0)
    if "best" in counts:
        m["score_failures"] = counts.get("score_failures", 0)
        m["best_selected"] = counts["best"]
    if "selected" in counts:
        m["influence_filtered"] = counts["selected"]
        m["shortfall"] = counts["selected"] < m["quota"]
    if "dataset" in counts:
        m["emitted"] = counts["dataset"]
        m["dataset_path"] = str(
            (run.iter_dir / "dataset.jsonl").relative_to(run.root))
        m["dataset_digest"] = artifacts["dataset"]["digest"]
    job_path = run.iter_dir / "training_job.json"
    if job_path.exists():
        artifacts["training_job"] = _artifact(run.root, job_path)
        m["training_job"] = json.loads(job_path.read_text(encoding="utf-8"))
    m["artifacts"] = artifacts
    return m


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def _timings_path(iter_dir: Path) -> Path:
    return iter_dir / "timings.json"


def _record_timing(iter_dir: Path, stage: str, seconds: float) -> None:
    path = _timings_path(iter_dir)
    timings = json.loads(path.read_text()) if path.exists() else {}
    timings[stage] = round(seconds, 6)
    path.write_text(stable_json(timings) + "\n", encoding="utf-8")


def run_iteration(state: PipelineState, plan: IterationPlan,
                  services: ServiceBundle) -> tuple[PipelineState, dict]:
    """Run the current iteration from the stage cursor to completion.

    Returns the advanced state (next iteration, cursor back at pool) and
    the completed manifest. Stage outputs already on disk are not redone;
    a failing stage raises StageFailure carrying the partial manifest.
    """
    if state.iteration > len(plan.iterations):
        raise ValueError(
            f"plan has {len(plan.iterations)} iterations; "
            f"state asks for iteration {state.iteration}")
    spec = plan.iterations[state.iteration - 1]
    iter_dir = state.iter_dir()
    iter_dir.mkdir(parents=True, exist_ok=True)
    run = _IterationRun(state=state, plan=plan, services=services,
                        spec=spec, iter_dir=iter_dir)

    for stage in STAGES[STAGES.index(state.stage_cursor):]:
        t0 = time.perf_counter()
        try:
            _STAGE_FNS[stage](run)
        except Exception as exc:
            raise StageFailure(stage, _partial_manifest(run), exc) from exc
        _record_timing(iter_dir, stage, time.perf_counter() - t0)
        if stage != "emit":
            state = replace(state, stage_cursor=STAGES[STAGES.index(stage) + 1])
            run.state = state
            state.save()

    manifest = _partial_manifest(run)
    manifest["timings"] = json.loads(_timings_path(iter_dir).read_text())
    manifest["self_digest"] = manifest_digest(manifest)
    mpath = iter_dir / "manifest.json"
    tmp = mpath.with_name(mpath.name + ".tmp")
    tmp.write_text(stable_json(manifest) + "\n", encoding="utf-8")
    tmp.replace(mpath)

    state = PipelineState(
        root=state.root,
        iteration=state.iteration + 1,
        stage_cursor="pool",
        completed=state.completed + (manifest,),
    )
    state.save()
    return state, manifest


def run_all(state: PipelineState, plan: IterationPlan,
            services: ServiceBundle) -> tuple[PipelineState, list[dict]]:
    """Run every remaining iteration under the exclusive pipeline lock."""
    manifests: list[dict] = []
    with pipeline_lock(state.root):
        while state.iteration <= len(plan.iterations):
            state, manifest = run_iteration(state, plan, services)
            manifests.append(manifest)
    return state, manifests


def status(manifest_dir: str | Path) -> str:
    """Human-readable manifest table for a state directory."""
    state = resume(manifest_dir)
    header = (f"{'iter':>4}  {'drawn':>6}  {'cands':>6}  {'failed':>6}  "
              f"{'best':>6}  {'emitted':>7}  {'short':>5}  dataset digest")
    lines = [header, "-" * len(header)]
    for m in state.completed:
        lines.append(
            f"{m['iteration']:>4}  {m['snippets_drawn']:>6}  "
            f"{m['candidates_generated']:>6}  {m['candidates_failed']:>6}  "
            f"{m['best_selected']:>6}  {m['emitted']:>7}  "
            f"{'yes' if m['shortfall'] else 'no':>5}  "
            f"{m['dataset_digest'][:16]}")
    lines.append(f"next: iteration {state.iteration}, stage {state.stage_cursor}")
    return "\n".join(lines)
