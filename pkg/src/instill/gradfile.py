"""Binary gradient file format shared with external exporters.

Layout: a fixed little-endian header, then ``count`` row-major f32 vectors.
A sidecar newline-delimited index at ``<path>.idx`` maps row -> sample_id;
it may also carry a single {"meta": ...} line with exporter details (flatten
order, adapter config) which readers surface but do not interpret.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"GRDV"
VERSION = 1
DTYPE_F32 = 0

# magic, version u32, dtype u8, dim u64, count u64,
# projection: applied u8, k u64, seed u64
_HEADER = struct.Struct("<4sIBQQBQQ")
HEADER_SIZE = _HEADER.size


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectionStamp:
    applied: bool
    k: int
    seed: int


@dataclass
class GradientFile:
    dim: int
    sample_ids: list[str]
    matrix: np.ndarray  # (count, dim) float32
    projection: ProjectionStamp
    meta: dict | None = None

    @property
    def count(self) -> int:
        return len(self.sample_ids)


def index_path(path: str | Path) -> Path:
    return Path(str(path) + ".idx")


def write_gradients(path: str | Path, sample_ids: list[str],
                    matrix: np.ndarray,
                    projection: ProjectionStamp | None = None,
                    meta: dict | None = None) -> None:
    """Write vectors plus the sidecar index, atomically."""
    m = np.ascontiguousarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise FormatError("matrix must be 2-d (count x dim)")
    count, dim = m.shape
    if count != len(sample_ids):
        raise FormatError(f"{len(sample_ids)} ids for {count} rows")
    proj = projection or ProjectionStamp(False, 0, 0)
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, dim, count,
                          int(proj.applied), proj.k, proj.seed)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(m.astype("<f4", copy=False).tobytes())
    tmp.replace(path)

    idx = index_path(path)
    tmp_idx = idx.with_suffix(idx.suffix + ".tmp")
    with open(tmp_idx, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for row, sid in enumerate(sample_ids):
            fh.write(json.dumps({"row": row, "sample_id": sid}) + "\n")
    tmp_idx.replace(idx)


def read_gradients(path: str | Path) -> GradientFile:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < HEADER_SIZE:
        raise FormatError("file shorter than header")
    magic, version, dtype, dim, count, applied, k, seed = _HEADER.unpack(
        blob[:HEADER_SIZE])
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}")
    expected = HEADER_SIZE + 4 * dim * count
    if len(blob) != expected:
        raise FormatError(f"size {len(blob)} != expected {expected}")
    m = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).reshape(count, dim)

    sample_ids: list[str] = [""] * count
    meta = None
    idx = index_path(path)
    if not idx.exists():
        raise FormatError(f"missing sidecar index {idx}")
    with open(idx, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "meta" in rec and "row" not in rec:
                meta = rec["meta"]
                continue
            row = int(rec["row"])
            if not 0 <= row < count:
                raise FormatError(f"index row {row} out of range")
            sample_ids[row] = rec["sample_id"]
    if count and any(sid == "" for sid in sample_ids):
        raise FormatError("sidecar index does not cover every row")
    return GradientFile(
        dim=int(dim),
        sample_ids=sample_ids,
        matrix=np.array(m),  # own the memory; blob goes away
        projection=ProjectionStamp(bool(applied), int(k), int(seed)),
        meta=meta,
    )
