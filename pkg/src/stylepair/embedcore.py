"""Embedding sets, the cosine-similarity primitive, and clip pooling.

An EmbeddingSet is an immutable id-keyed matrix of float32 row vectors.
All similarity math takes float32 inputs and accumulates in float64, and
matrix products are always evaluated over the same fixed row partition so
results are bit-identical for any worker count.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import container
from .errors import (
    DimMismatch,
    DuplicateId,
    EmptyClip,
    MagicMismatch,
    NonFiniteValue,
    NotNormalized,
    RangeOutOfBounds,
    ZeroVector,
    ZeroVectorRow,
)

NORM_FLAG_TOL = 1e-4   # how far a "normalized" row may drift from unit norm
_FLAG_NORMALIZED = 1
_CHUNK_ROWS = 512      # fixed partition for similarity products


@dataclass(frozen=True)
class EmbeddingSet:
    """Dense matrix of embeddings with stable integer ids.

    ids must be unique, non-negative and ascending; data is float32 with
    one row per id. Rows are made read-only so a set can be shared across
    workers without copies.
    """

    ids: np.ndarray
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"data must be 2-D, got shape {data.shape}")
        if ids.ndim != 1 or len(ids) != data.shape[0]:
            raise ValueError("ids must be 1-D with one entry per data row")
        if len(ids) and ids.min() < 0:
            raise ValueError("ids must be non-negative")
        if len(ids) > 1:
            diffs = np.diff(ids)
            if (diffs == 0).any():
                dup = int(ids[1:][diffs == 0][0])
                raise DuplicateId(f"id {dup} appears more than once")
            if (diffs < 0).any():
                raise ValueError("ids must be sorted ascending")
        if not np.isfinite(data).all():
            raise NonFiniteValue("embedding matrix contains non-finite entries")
        if self.normalized and len(ids):
            norms = np.linalg.norm(data.astype(np.float64), axis=1)
            worst = float(np.abs(norms - 1.0).max())
            if worst > NORM_FLAG_TOL:
                raise NotNormalized(
                    f"normalized flag set but a row norm deviates by {worst:.2e}"
                )
        ids.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row_for_id(self, wanted: np.ndarray) -> np.ndarray:
        """Map ids to row indices (ids are sorted, so this is a bisect)."""
        wanted = np.asarray(wanted, dtype=np.int64)
        pos = np.searchsorted(self.ids, wanted)
        bad = (pos >= len(self.ids)) | (self.ids[np.minimum(pos, len(self.ids) - 1)] != wanted)
        if bad.any():
            raise KeyError(f"unknown id {int(np.atleast_1d(wanted)[np.atleast_1d(bad)][0])}")
        return pos


@dataclass
class ClipSpan:
    """One fixed-length clip cut from a source video.

    frame_row_start/frame_row_end is a half-open range into a frame-level
    EmbeddingSet.
    """

    clip_id: int
    source_video_id: int
    start_s: float
    end_s: float
    frame_row_start: int
    frame_row_end: int


def normalize(emb: EmbeddingSet) -> EmbeddingSet:
    """Return a copy whose rows are rescaled to unit L2 norm."""
    data64 = emb.data.astype(np.float64)
    norms = np.linalg.norm(data64, axis=1)
    zero = norms == 0.0
    if zero.any():
        raise ZeroVectorRow(f"row id {int(emb.ids[zero][0])} is the zero vector")
    out = (data64 / norms[:, None]).astype(np.float32)
    return EmbeddingSet(ids=emb.ids.copy(), data=out, normalized=True)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, accumulated in float64."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimMismatch(f"vector dims differ: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for the zero vector")
    return float(a @ b / (na * nb))


def _chunk_bounds(n_rows: int):
    return [(lo, min(lo + _CHUNK_ROWS, n_rows)) for lo in range(0, n_rows, _CHUNK_ROWS)]


def pairwise_dots(a: np.ndarray, b: np.ndarray, threads: int = 1) -> np.ndarray:
    """Row-by-row dot products a @ b.T in float64 over a fixed partition.

    The partition of a's rows into blocks of _CHUNK_ROWS never depends on
    `threads`, so the output is bit-identical for any worker count.
    """
    a64 = a.astype(np.float64)
    b64t = b.astype(np.float64).T
    out = np.empty((a64.shape[0], b.shape[0]), dtype=np.float64)
    bounds = _chunk_bounds(a64.shape[0])

    def run(span):
        lo, hi = span
        out[lo:hi] = a64[lo:hi] @ b64t

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, bounds))
    else:
        for span in bounds:
            run(span)
    return out


def sim_matrix(texts: EmbeddingSet, videos: EmbeddingSet, threads: int = 1) -> np.ndarray:
    """Full cosine-similarity matrix between two normalized sets."""
    if not texts.normalized or not videos.normalized:
        raise NotNormalized("sim_matrix requires both sets normalized")
    if texts.dim != videos.dim:
        raise DimMismatch(f"dims differ: {texts.dim} vs {videos.dim}")
    return pairwise_dots(texts.data, videos.data, threads=threads)


def pool_clips(frames: EmbeddingSet, table: list[ClipSpan]) -> EmbeddingSet:
    """Mean-pool frame rows per clip, then renormalize.

    Each clip embedding is the unit-normalized arithmetic mean of its
    frame rows; output ids are the clip ids.
    """
    n_frames = frames.count
    rows = np.empty((len(table), frames.dim), dtype=np.float64)
    ids = np.empty(len(table), dtype=np.int64)
    for i, clip in enumerate(table):
        lo, hi = clip.frame_row_start, clip.frame_row_end
        if hi <= lo:
            raise EmptyClip(f"clip {clip.clip_id} has no frame rows")
        if lo < 0 or hi > n_frames:
            raise RangeOutOfBounds(
                f"clip {clip.clip_id} frame range [{lo}, {hi}) outside 0..{n_frames}"
            )
        rows[i] = frames.data[lo:hi].astype(np.float64).mean(axis=0)
        ids[i] = clip.clip_id
    order = np.argsort(ids, kind="stable")
    pooled = EmbeddingSet(ids=ids[order], data=rows[order].astype(np.float32))
    return normalize(pooled)


def validate_clip_table(
    table: list[ClipSpan],
    clip_len_s: float | None = None,
    max_clips_per_video: int | None = None,
) -> None:
    """Check the structural clip-table invariants; raise ValueError on breach."""
    by_video: dict[int, list[ClipSpan]] = {}
    for clip in table:
        by_video.setdefault(clip.source_video_id, []).append(clip)
    for video_id, clips in by_video.items():
        if max_clips_per_video is not None and len(clips) > max_clips_per_video:
            raise ValueError(
                f"video {video_id} has {len(clips)} clips, max {max_clips_per_video}"
            )
        prev_end = None
        for i, clip in enumerate(clips):
            if clip.end_s <= clip.start_s or clip.start_s < 0:
                raise ValueError(f"clip {clip.clip_id} has an invalid time span")
            if prev_end is not None and clip.start_s < prev_end:
                raise ValueError(f"video {video_id} clips overlap or are unordered")
            terminal = i == len(clips) - 1
            if clip_len_s is not None and not terminal:
                if abs((clip.end_s - clip.start_s) - clip_len_s) > 1e-9:
                    raise ValueError(
                        f"non-terminal clip {clip.clip_id} is not {clip_len_s}s long"
                    )
            prev_end = clip.end_s


# ---- persistence ----


def save_embeddings(emb: EmbeddingSet, path: str | os.PathLike) -> None:
    """Write the binary embedding layout; load_embeddings round-trips it byte-exactly."""
    flags = _FLAG_NORMALIZED if emb.normalized else 0
    with open(path, "wb") as f:
        container.write_header(f)
        container.write_u64(f, emb.count)
        container.write_u32(f, emb.dim)
        container.write_u32(f, flags)
        container.write_array(f, emb.ids, "<u8")
        container.write_array(f, emb.data, "<f4")


def load_embeddings(path: str | os.PathLike) -> EmbeddingSet:
    with open(path, "rb") as f:
        container.read_header(f)
        peek = f.peek(4)[:4] if hasattr(f, "peek") else b""
        if peek in (container.STYLE_CHUNK, container.ADAPTER_CHUNK):
            raise MagicMismatch(f"file holds a {peek.decode()} sub-chunk, not embeddings")
        count = container.read_u64(f, "count")
        dim = container.read_u32(f, "dim")
        flags = container.read_u32(f, "flags")
        ids = container.read_array(f, "<u8", count, "ids").astype(np.int64)
        data = container.read_array(f, "<f4", count * dim, "rows").reshape(count, dim)
        extra = f.read(1)
    if extra:
        raise ValueError(f"{path}: trailing bytes after embedding payload")
    return EmbeddingSet(ids=ids, data=data, normalized=bool(flags & _FLAG_NORMALIZED))


def write_clip_table(table: list[ClipSpan], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for clip in table:
            f.write(json.dumps({
                "clip_id": clip.clip_id,
                "source_video_id": clip.source_video_id,
                "start_s": clip.start_s,
                "end_s": clip.end_s,
                "frame_row_start": clip.frame_row_start,
                "frame_row_end": clip.frame_row_end,
            }) + "\n")


def read_clip_table(path: str | os.PathLike) -> list[ClipSpan]:
    table = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            table.append(ClipSpan(
                clip_id=int(obj["clip_id"]),
                source_video_id=int(obj["source_video_id"]),
                start_s=float(obj["start_s"]),
                end_s=float(obj["end_s"]),
                frame_row_start=int(obj["frame_row_start"]),
                frame_row_end=int(obj["frame_row_end"]),
            ))
    return table
