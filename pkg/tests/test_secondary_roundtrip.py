"""Cross-language round trip: gradient files written by the frontend
exporter parse here with matching dimension, count, and sample order,
and feed straight into the projection machinery.

Skipped when node or the built frontend is absent; the rest of the
suite does not depend on it.
"""

import json
import shutil
import subprocess
from pathlib import Path

import pytest

from instill.gradfile import read_gradients
from instill.influence import build_projection, project_batch

FRONTEND_CLI = Path(__file__).resolve().parent.parent / "frontend" / "dist" / "cli.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not FRONTEND_CLI.exists(),
    reason="needs node and a built frontend/dist",
)


def run_export(tmp_path, samples, rank=2, alpha=4, seed=9):
    model_path = tmp_path / "model.json"
    model_path.write_text(json.dumps({
        "name": "toy-2layer", "dModel": 8, "layers": 2,
        "maxSeqLen": 32, "seed": 42,
    }))
    samples_path = tmp_path / "samples.jsonl"
    samples_path.write_text(
        "".join(json.dumps(rec) + "\n" for rec in samples))
    out_path = tmp_path / "export.grdv"
    proc = subprocess.run(
        ["node", str(FRONTEND_CLI),
         "--model", str(model_path), "--samples", str(samples_path),
         "--out", str(out_path), "--adapter-rank", str(rank),
         "--adapter-alpha", str(alpha), "--seed", str(seed)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return out_path


def sample(i):
    return {"sample_id": f"xlang-{i}",
            "problem": f"Reverse the digits of case {i}.",
            "solution": f"def rev_{i}(n):\n    return int(str(n)[::-1])"}


def test_exported_file_parses_with_matching_shape(tmp_path):
    samples = [sample(i) for i in range(5)]
    out = run_export(tmp_path, samples)
    gf = read_gradients(out)
    # 2 layers x 4 modules x 2 factors x (8 x 2) values
    assert gf.dim == 256
    assert gf.count == 5
    assert gf.sample_ids == [f"xlang-{i}" for i in range(5)]
    assert not gf.projection.applied
    assert gf.matrix.shape == (5, 256)
    assert gf.matrix.dtype.name == "float32"
    order = gf.meta["flatten_order"]
    assert order == sorted(order)
    assert len(order) == 16
    print("\n[PASS] gradient export round-trip: dim 256, 5 rows, "
          "input order preserved")


def test_exported_rows_project_without_adapter_knowledge(tmp_path):
    out = run_export(tmp_path, [sample(i) for i in range(3)])
    gf = read_gradients(out)
    proj = build_projection(gf.dim, k=16, seed=4)
    projected = project_batch(gf.matrix.astype("float64"), proj)
    assert projected.shape == (3, 16)
    assert (projected != 0).any()


def test_export_is_deterministic_per_seed(tmp_path):
    dirs = [tmp_path / name for name in ("a", "b", "c")]
    for d in dirs:
        d.mkdir()
    a = run_export(dirs[0], [sample(0)], seed=9)
    b = run_export(dirs[1], [sample(0)], seed=9)
    c = run_export(dirs[2], [sample(0)], seed=10)
    assert a.read_bytes() == b.read_bytes()
    assert read_gradients(a).matrix.tobytes() != read_gradients(c).matrix.tobytes()


def test_empty_sample_file_round_trips_with_count_zero(tmp_path):
    out = run_export(tmp_path, [])
    gf = read_gradients(out)
    assert gf.count == 0
    assert gf.dim == 256
    assert gf.sample_ids == []
