"""End-to-end smoke tests for every subcommand, mock-backed."""

import json
import subprocess
import sys

import numpy as np
import pytest

from instill.cli import main
from instill.gradfile import read_gradients, write_gradients
from instill.pool import CodeSnippet, read_snippets, write_snippets
from instill.records import (
    InstructionSample,
    Provenance,
    derive_id,
    read_jsonl,
    read_samples,
    write_samples,
)
from instill.sampler import (
    EmbeddingRecord,
    make_category_set,
    write_category_set,
    write_embeddings,
)
from instill.scoring import ExperimentRecord, WeightVector, write_experiments, write_weights


def snippets_file(tmp_path, n=4, name="snips.jsonl"):
    path = tmp_path / name
    write_snippets(path, [CodeSnippet.from_text(
        f"def g_{i}(a):\n    return a * {i + 2}\n") for i in range(n)])
    return path


def endpoint_dict(name):
    return {"name": name, "base_url": "mock://", "model_id": "m",
            "max_parallel": 4, "timeout_ms": 1000,
            "retry": {"max_attempts": 2, "backoff_ms": 1}}


def proprietary_file(tmp_path):
    path = tmp_path / "prop.jsonl"
    write_samples(path, [InstructionSample(
        sample_id=derive_id("p", i), snippet_id=derive_id("ps", i),
        problem=f"Count the vowels in input string number {i}.",
        solution=f"def count_{i}(s):\n    return sum(c in 'aeiou' for c in s)",
        provenance=Provenance.proprietary()) for i in range(5)])
    return path


def test_pool_build_dedups_and_decontaminates(tmp_path, capsys):
    text = "def f(x):\n    return x + 1\n"
    clone = "def f(x):\n    return x + 1\n\n"
    other = "def g(y):\n    s = 0\n    for i in range(y):\n        s += i\n    return s\n"
    leaked = "def h(z):\n    return z * z - z\n"
    inp = tmp_path / "in.jsonl"
    write_snippets(inp, [CodeSnippet.from_text(t)
                         for t in (text, clone, other, leaked)])
    bench = tmp_path / "bench.jsonl"
    bench.write_text(json.dumps({"text": leaked}) + "\n")
    out = tmp_path / "out.jsonl"
    rc = main(["pool", "build", "--input", str(inp), "--output", str(out),
               "--decontam", str(bench), "--ngram", "5"])
    assert rc == 0
    kept = read_snippets(out)
    assert len(kept) == 2
    assert "1 near-duplicates" in capsys.readouterr().out


def test_sample_stratify_writes_selection(tmp_path):
    rng = np.random.default_rng(1)
    cats = make_category_set([f"c{i}" for i in range(10)],
                             rng.normal(size=(10, 8)))
    cats_path = tmp_path / "cats.jsonl"
    write_category_set(cats_path, cats)
    pool = snippets_file(tmp_path, n=6)
    snippets = read_snippets(pool)
    emb_path = tmp_path / "emb.jsonl"
    write_embeddings(emb_path, [
        EmbeddingRecord(s.id, cats.embeddings[i % 10])
        for i, s in enumerate(snippets)])
    out = tmp_path / "sel.jsonl"
    rc = main(["sample", "stratify", "--pool", str(pool),
               "--embeddings", str(emb_path), "--categories", str(cats_path),
               "--per-category", "1", "--seed", "3", "--out", str(out)])
    assert rc == 0
    assert len(read_snippets(out)) == 6


def test_synthesize_then_score_mock(tmp_path):
    pool = snippets_file(tmp_path, n=2)
    ckpt_cfg = tmp_path / "ckpts.json"
    ckpt_cfg.write_text(json.dumps({
        "checkpoints": [endpoint_dict("c1"), endpoint_dict("c2")],
        "samples_per_checkpoint": 2,
        "temperature": 0.2,
    }))
    cands = tmp_path / "cands.jsonl"
    rc = main(["synthesize", "--snippets", str(pool),
               "--checkpoints", str(ckpt_cfg), "--out", str(cands), "--mock"])
    assert rc == 0
    samples = read_samples(cands)
    assert len(samples) == 8
    assert all(s.aspect_scores is None for s in samples)

    scorer_cfg = tmp_path / "scorer.json"
    scorer_cfg.write_text(json.dumps(endpoint_dict("scorer")))
    weights_path = tmp_path / "weights.jsonl"
    write_weights(weights_path, WeightVector(w=np.full(10, 0.1), lam=1.0))
    rc = main(["score", "--in", str(cands), "--scorer", str(scorer_cfg),
               "--weights", str(weights_path), "--mock"])
    assert rc == 0
    scored = read_samples(cands)
    assert all(s.aspect_scores is not None for s in scored)
    assert all(s.aggregate_score is not None for s in scored)


def test_fit_weights_command(tmp_path):
    rng = np.random.default_rng(2)
    w_true = rng.normal(size=10)
    experiments = [ExperimentRecord(x, float(x @ w_true))
                   for x in rng.normal(size=(20, 10))]
    exp_path = tmp_path / "exp.jsonl"
    write_experiments(exp_path, experiments)
    out = tmp_path / "w.jsonl"
    rc = main(["fit-weights", "--experiments", str(exp_path),
               "--lambda", "0.001", "--out", str(out)])
    assert rc == 0
    rec = next(iter(read_jsonl(out)))
    assert len(rec["w"]) == 10


def test_influence_commands_chain(tmp_path):
    prop = proprietary_file(tmp_path)
    model_path = tmp_path / "ref.npz"
    rc = main(["influence", "toy-train", "--proprietary", str(prop),
               "--steps", "5", "--seed", "1", "--out", str(model_path)])
    assert rc == 0
    with np.load(model_path) as data:
        assert data["logits"].shape == (256, 256)

    rng = np.random.default_rng(3)
    raw = tmp_path / "grads.grdv"
    write_gradients(raw, [f"s{i}" for i in range(6)],
                    rng.normal(size=(6, 512)).astype(np.float32))
    proj_path = tmp_path / "grads.proj.grdv"
    rc = main(["influence", "project", "--gradients", str(raw),
               "--k", "16", "--seed", "9", "--out", str(proj_path)])
    assert rc == 0
    gf = read_gradients(proj_path)
    assert gf.dim == 16
    assert gf.projection.applied

    scores_path = tmp_path / "scores.jsonl"
    rc = main(["influence", "score", "--self", str(proj_path),
               "--anchor-from", str(proj_path), "--out", str(scores_path)])
    assert rc == 0
    records = list(read_jsonl(scores_path))
    assert len(records) == 6
    assert all(-1 - 1e-9 <= r["influence"] <= 1 + 1e-9 for r in records)


def test_influence_project_refuses_double_projection(tmp_path):
    rng = np.random.default_rng(4)
    raw = tmp_path / "g.grdv"
    write_gradients(raw, ["a"], rng.normal(size=(1, 64)).astype(np.float32))
    proj = tmp_path / "g.proj.grdv"
    main(["influence", "project", "--gradients", str(raw),
          "--k", "8", "--seed", "0", "--out", str(proj)])
    with pytest.raises(SystemExit):
        main(["influence", "project", "--gradients", str(proj),
              "--k", "4", "--seed", "0", "--out", str(tmp_path / "x.grdv")])


def test_iterate_and_status(tmp_path, capsys):
    pool = snippets_file(tmp_path, n=4)
    prop = proprietary_file(tmp_path)
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps({"quotas": [2], "master_seed": 5}))
    services_path = tmp_path / "services.json"
    services_path.write_text(json.dumps({
        "pool_path": str(pool),
        "proprietary_path": str(prop),
        "checkpoints": [endpoint_dict("c1")],
        "samples_per_checkpoint": 2,
        "scorer": endpoint_dict("scorer"),
        "snippets_per_iteration": 4,
        "projection_k": 32,
        "toy_train_steps": 5,
    }))
    state_dir = tmp_path / "state"
    rc = main(["iterate", "--plan", str(plan_path), "--state", str(state_dir),
               "--services", str(services_path), "--mock"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "next: iteration 2" in out
    rc = main(["status", "--state", str(state_dir)])
    assert rc == 0
    assert "next: iteration 2" in capsys.readouterr().out


def test_simulate_writes_csv(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    rc = main(["simulate", "--n", "4", "--lt", "0.8", "--lg", "0.5",
               "--steps", "10", "--seed", "2", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,distance,bound,ratio"
    assert len(lines) == 12
    assert "passed" in capsys.readouterr().out


def test_module_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "instill.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("pool", "synthesize", "score", "fit-weights",
                    "influence", "iterate", "status", "simulate"):
        assert command in proc.stdout
