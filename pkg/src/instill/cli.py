"""Command-line front end over the library.

One executable, one subcommand per pipeline capability. Commands read
and write the same newline-delimited record files the library modules
use, so any step can be run standalone or spliced into the full loop.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bootstrap import load_services, plan_iterations, resume, run_all
from .bootstrap import status as pipeline_status
from .convergence import (
    iterate_self_distillation,
    make_affine_system,
    verify_contraction,
    write_trajectory_csv,
)
from .gradfile import ProjectionStamp, read_gradients, write_gradients
from .influence import (
    ProjectedGradient,
    anchor_gradient,
    build_projection,
    influence_score,
    project_batch,
    toy_reference_train,
)
from .pool import DedupConfig, decontaminate, dedup_pool, read_snippets, write_snippets
from .records import read_jsonl, read_samples, write_jsonl, write_samples
from .sampler import (
    assign_categories,
    read_category_set,
    read_embeddings,
    stratified_sample,
)
from .scoring import aggregate_score, fit_weights, read_experiments, read_weights, write_weights
from .synthesis import (
    HttpBackend,
    MockBackend,
    candidates_to_samples,
    generate_candidates,
    load_checkpoint_set,
    load_endpoint,
    score_candidates,
)


def _backend(mock):
    if mock is False or mock is None:
        return HttpBackend()
    if mock is True:
        return MockBackend()
    return MockBackend.from_file(mock)


def _add_mock_flag(sub) -> None:
    sub.add_argument("--mock", nargs="?", const=True, default=False,
                     metavar="TRANSCRIPT",
                     help="use the deterministic mock backend, optionally "
                          "scripted from a JSON transcript")


# ---------------------------------------------------------------------------
# pool build
# ---------------------------------------------------------------------------

def cmd_pool_build(args) -> int:
    snippets = read_snippets(args.input)
    cfg = DedupConfig(perms=args.perms, bands=args.bands, rows=args.rows,
                      jaccard_threshold=args.threshold,
                      shingle_size=args.shingle, perm_seed=args.seed)
    result = dedup_pool(snippets, cfg)
    kept = result.kept
    n_deduped = len(result.removed)
    n_contaminated = 0
    if args.decontam:
        bench = [rec["text"] for rec in read_jsonl(args.decontam)]
        kept, removed_ids = decontaminate(kept, bench, args.ngram)
        n_contaminated = len(removed_ids)
    write_snippets(args.output, kept)
    print(f"{len(snippets)} in, {n_deduped} near-duplicates removed, "
          f"{n_contaminated} contaminated removed, {len(kept)} kept")
    return 0


# ---------------------------------------------------------------------------
# sample stratify
# ---------------------------------------------------------------------------

def cmd_sample_stratify(args) -> int:
    snippets = read_snippets(args.pool)
    cats = read_category_set(args.categories)
    embeds = read_embeddings(args.embeddings)
    categorized = assign_categories(snippets, embeds, cats)
    report = stratified_sample(categorized, args.per_category, args.seed)
    if args.out:
        write_snippets(args.out, report.selected)
    else:
        for s in report.selected:
            print(s.id)
    counts = " ".join(f"{cats.names[c]}={n}"
                      for c, n in sorted(report.counts.items()))
    print(f"selected {len(report.selected)}: {counts}", file=sys.stderr)
    if report.underflow:
        print(f"underflow in {len(report.underflow)} categories",
              file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------

def cmd_synthesize(args) -> int:
    snippets = read_snippets(args.snippets)
    cs = load_checkpoint_set(args.checkpoints)
    backend = _backend(args.mock)
    all_samples, n_failed = [], 0
    for snippet in snippets:
        results = generate_candidates(snippet, cs, backend,
                                      allow_all_failed=True)
        samples, failures = candidates_to_samples(snippet, results,
                                                  iteration=args.iteration)
        all_samples.extend(samples)
        n_failed += len(failures)
    write_samples(args.out, all_samples)
    print(f"{len(all_samples)} candidates from {len(snippets)} snippets "
          f"({n_failed} slots failed)")
    return 0


# ---------------------------------------------------------------------------
# score / fit-weights
# ---------------------------------------------------------------------------

def cmd_score(args) -> int:
    samples = read_samples(args.infile)
    endpoint = load_endpoint(args.scorer)
    weights = read_weights(args.weights)
    backend = _backend(args.mock)
    failures = score_candidates(samples, endpoint, backend)
    for s in samples:
        if s.aspect_scores is not None:
            s.aggregate_score = aggregate_score(s.aspect_scores, weights)
    out = args.out or args.infile
    write_samples(out, samples)
    print(f"{len(samples) - len(failures)} of {len(samples)} scored "
          f"-> {out}")
    return 0


def cmd_fit_weights(args) -> int:
    experiments = read_experiments(args.experiments)
    wv = fit_weights(experiments, lam=args.lam)
    write_weights(args.out, wv)
    print(f"fit {len(wv.w)} weights from {len(experiments)} experiments "
          f"(lambda={args.lam})")
    return 0


# ---------------------------------------------------------------------------
# influence
# ---------------------------------------------------------------------------

def cmd_influence_project(args) -> int:
    gf = read_gradients(args.gradients)
    if gf.projection.applied:
        raise SystemExit("input gradients are already projected")
    proj = build_projection(gf.dim, args.k, args.seed)
    projected = project_batch(gf.matrix.astype(np.float64), proj)
    out = args.out or str(args.gradients) + ".proj"
    write_gradients(out, gf.sample_ids, projected,
                    projection=ProjectionStamp(True, args.k, args.seed),
                    meta=gf.meta)
    print(f"projected {gf.count} gradients {gf.dim} -> {args.k} ({out})")
    return 0


def _as_projected(gf) -> list[ProjectedGradient]:
    if not gf.projection.applied:
        raise SystemExit("gradient file is not projected; "
                         "run influence project first")
    return [ProjectedGradient(sid, row, gf.projection.seed)
            for sid, row in zip(gf.sample_ids, gf.matrix.astype(np.float64))]


def cmd_influence_score(args) -> int:
    own = read_gradients(args.self_path)
    anchor_file = read_gradients(args.anchor_from)
    if own.projection != anchor_file.projection:
        raise SystemExit("self and anchor gradients use different projections")
    anchor = anchor_gradient(_as_projected(anchor_file))
    records = [influence_score(g, anchor) for g in _as_projected(own)]
    write_jsonl(args.out, ({"sample_id": r.sample_id, "influence": r.influence}
                           for r in records))
    print(f"scored {len(records)} gradients against "
          f"{anchor_file.count}-sample anchor")
    return 0


def cmd_influence_toy_train(args) -> int:
    proprietary = read_samples(args.proprietary)
    model = toy_reference_train(proprietary, steps=args.steps, seed=args.seed)
    with open(args.out, "wb") as fh:
        np.savez(fh, logits=model.logits)
    history = model.training_meta["loss_history"]
    print(f"trained on {len(proprietary)} samples: "
          f"loss {history[0]:.4f} -> {history[-1]:.4f} ({args.out})")
    return 0


# ---------------------------------------------------------------------------
# iterate / status
# ---------------------------------------------------------------------------

def cmd_iterate(args) -> int:
    root = Path(args.state)
    root.mkdir(parents=True, exist_ok=True)
    with open(args.plan, encoding="utf-8") as fh:
        plan = plan_iterations(json.load(fh))
    services = load_services(args.services, mock=args.mock)
    state = resume(root)
    state, manifests = run_all(state, plan, services)
    print(pipeline_status(root))
    return 0


def cmd_status(args) -> int:
    print(pipeline_status(args.state))
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    sys_ = make_affine_system(args.seed, args.n, args.lt, args.lg)
    traj = iterate_self_distillation(sys_, np.zeros(args.n), steps=args.steps)
    write_trajectory_csv(args.out, traj, sys_)
    report = verify_contraction(traj, sys_)
    verdict = "passed" if report.passed else "FAILED"
    print(f"rate {sys_.contraction_bound:.6f}, "
          f"nash residual {report.nash_residual}, "
          f"verification {verdict} ({args.out})")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="instill",
        description="Self-distillation pipeline for code instruction data")
    subs = parser.add_subparsers(dest="command", required=True)

    pool = subs.add_parser("pool", help="snippet pool construction")
    pool_subs = pool.add_subparsers(dest="subcommand", required=True)
    build = pool_subs.add_parser("build", help="dedup and decontaminate")
    build.add_argument("--input", required=True)
    build.add_argument("--output", required=True)
    build.add_argument("--perms", type=int, default=128)
    build.add_argument("--bands", type=int, default=32)
    build.add_argument("--rows", type=int, default=4)
    build.add_argument("--shingle", type=int, default=5)
    build.add_argument("--threshold", type=float, default=0.5)
    build.add_argument("--decontam", default=None)
    build.add_argument("--ngram", type=int, default=10)
    build.add_argument("--seed", type=int, default=0)
    build.set_defaults(fn=cmd_pool_build)

    sample = subs.add_parser("sample", help="category-stratified sampling")
    sample_subs = sample.add_subparsers(dest="subcommand", required=True)
    stratify = sample_subs.add_parser("stratify")
    stratify.add_argument("--pool", required=True)
    stratify.add_argument("--embeddings", required=True)
    stratify.add_argument("--categories", required=True)
    stratify.add_argument("--per-category", type=int, default=1000,
                          dest="per_category")
    stratify.add_argument("--seed", type=int, default=0)
    stratify.add_argument("--out", default=None)
    stratify.set_defaults(fn=cmd_sample_stratify)

    synth = subs.add_parser("synthesize",
                            help="draw M x N candidates per snippet")
    synth.add_argument("--snippets", required=True)
    synth.add_argument("--checkpoints", required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--iteration", type=int, default=1)
    _add_mock_flag(synth)
    synth.set_defaults(fn=cmd_synthesize)

    score = subs.add_parser("score", help="aspect-score candidates")
    score.add_argument("--in", required=True, dest="infile")
    score.add_argument("--scorer", required=True)
    score.add_argument("--weights", required=True)
    score.add_argument("--out", default=None)
    _add_mock_flag(score)
    score.set_defaults(fn=cmd_score)

    fitw = subs.add_parser("fit-weights",
                           help="ridge-fit aspect weights from experiments")
    fitw.add_argument("--experiments", required=True)
    fitw.add_argument("--lambda", type=float, default=1.0, dest="lam")
    fitw.add_argument("--out", required=True)
    fitw.set_defaults(fn=cmd_fit_weights)

    infl = subs.add_parser("influence", help="gradient-based data selection")
    infl_subs = infl.add_subparsers(dest="subcommand", required=True)
    project = infl_subs.add_parser("project")
    project.add_argument("--gradients", required=True)
    project.add_argument("--k", type=int, default=8192)
    project.add_argument("--seed", type=int, default=0)
    project.add_argument("--out", default=None)
    project.set_defaults(fn=cmd_influence_project)
    iscore = infl_subs.add_parser("score")
    iscore.add_argument("--self", required=True, dest="self_path")
    iscore.add_argument("--anchor-from", required=True, dest="anchor_from")
    iscore.add_argument("--out", required=True)
    iscore.set_defaults(fn=cmd_influence_score)
    toy = infl_subs.add_parser("toy-train")
    toy.add_argument("--proprietary", required=True)
    toy.add_argument("--steps", type=int, default=500)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--out", default="reference_model.npz")
    toy.set_defaults(fn=cmd_influence_toy_train)

    it = subs.add_parser("iterate", help="run the full bootstrap loop")
    it.add_argument("--plan", required=True)
    it.add_argument("--state", required=True)
    it.add_argument("--services", required=True)
    _add_mock_flag(it)
    it.set_defaults(fn=cmd_iterate)

    st = subs.add_parser("status", help="print the manifest table")
    st.add_argument("--state", required=True)
    st.set_defaults(fn=cmd_status)

    sim = subs.add_parser("simulate",
                          help="contraction dynamics of the idealized loop")
    sim.add_argument("--n", type=int, default=10)
    sim.add_argument("--lt", type=float, default=0.8)
    sim.add_argument("--lg", type=float, default=0.5)
    sim.add_argument("--steps", type=int, default=50)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(fn=cmd_simulate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
