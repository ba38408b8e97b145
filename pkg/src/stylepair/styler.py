"""Caption-style surrogate: a ridge-regularized affine map in embedding space.

fit_style learns (W, b) from pseudo pairs so that W @ clip + b lands near
the matched query embedding. generate_styled applies the map (plus
optional seeded Gaussian jitter) to every clip in the pool, and
filter_pairs keeps only rows whose styled caption stays similar enough to
its own clip in the fixed judge space.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import container
from .embedcore import EmbeddingSet, _chunk_bounds
from .errors import CountMismatch, DimMismatch, NotNormalized, SingularSystem
from .matcher import PseudoPairSet

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.28
DEFAULT_RIDGE_LAMBDA = 1e-2
DEFAULT_NOISE_SIGMA = 0.05


@dataclass
class StyleTransform:
    """Affine map from clip-embedding space into styled-caption space."""

    weight: np.ndarray   # (dim_out, dim_in) float64
    bias: np.ndarray     # (dim_out,) float64
    ridge_lambda: float
    noise_sigma: float
    style_tag: str = ""

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("weight must be (dim_out, dim_in) with matching bias")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValueError("style transform has non-finite entries")
        if self.ridge_lambda < 0 or self.noise_sigma < 0:
            raise ValueError("ridge_lambda and noise_sigma must be non-negative")

    @property
    def dim_in(self) -> int:
        return self.weight.shape[1]

    @property
    def dim_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class GeneratedPairSet:
    """Clip/styled-caption pairs that survived threshold filtering.

    `rows` are row indices into the styled EmbeddingSet the filter ran on;
    retention statistics keep the pre-filter candidate count around.
    """

    clip_ids: np.ndarray
    rows: np.ndarray
    sims: np.ndarray
    threshold: float
    style_tag: str = ""
    total_candidates: int = 0

    def __post_init__(self):
        self.clip_ids = np.asarray(self.clip_ids, dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.sims = np.asarray(self.sims, dtype=np.float64)
        if not (len(self.clip_ids) == len(self.rows) == len(self.sims)):
            raise ValueError("pair columns must have equal length")
        if len(self.sims) and self.sims.min() <= self.threshold:
            raise ValueError("a retained pair violates the strict threshold")

    def __len__(self) -> int:
        return len(self.clip_ids)

    @property
    def retention_rate(self) -> float:
        return len(self) / self.total_candidates if self.total_candidates else 0.0

    def pairs(self):
        for c, r, s in zip(self.clip_ids, self.rows, self.sims):
            yield int(c), int(r), float(s)


@dataclass
class RetentionRow:
    threshold: float
    kept: int
    rate: float


def fit_style(
    pseudo: PseudoPairSet,
    queries: EmbeddingSet,
    clips: EmbeddingSet,
    ridge_lambda: float = DEFAULT_RIDGE_LAMBDA,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    style_tag: str = "",
) -> StyleTransform:
    """Solve min_W,b sum ||W v + b - t||^2 + lambda ||W||_F^2 over pseudo pairs.

    Normal equations in float64; the bias column is never penalized. With
    lambda = 0 a rank-deficient system raises SingularSystem.
    """
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be non-negative")
    if len(pseudo) == 0:
        raise SingularSystem("cannot fit a style transform on zero pairs")
    t_rows = queries.data[queries.row_for_id(pseudo.query_ids)].astype(np.float64)
    v_rows = clips.data[clips.row_for_id(pseudo.clip_ids)].astype(np.float64)
    n, dim_in = v_rows.shape
    dim_out = t_rows.shape[1]
    x = np.concatenate([v_rows, np.ones((n, 1))], axis=1)
    gram = x.T @ x
    penalty = np.eye(dim_in + 1)
    penalty[-1, -1] = 0.0  # bias stays unpenalized
    lhs = gram + ridge_lambda * penalty
    rhs = x.T @ t_rows
    if ridge_lambda == 0.0:
        # solve() tolerates mildly ill-conditioned systems; reject them explicitly
        if np.linalg.matrix_rank(lhs) < dim_in + 1:
            raise SingularSystem("lambda=0 with a rank-deficient normal system")
    try:
        theta = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc

    weight = theta[:dim_in].T
    bias = theta[dim_in]
    residual = float(np.mean(np.sum((x @ theta - t_rows) ** 2, axis=1)))
    log.info("stage=fit_style tag=%s pairs=%d lambda=%g residual=%g",
             style_tag, n, ridge_lambda, residual)
    return StyleTransform(
        weight=weight,
        bias=bias,
        ridge_lambda=float(ridge_lambda),
        noise_sigma=float(noise_sigma),
        style_tag=style_tag,
    )


def generate_styled(
    clips: EmbeddingSet,
    style: StyleTransform,
    seed: int,
    threads: int = 1,
) -> EmbeddingSet:
    """Styled caption embedding per clip: normalize(W v + b + noise).

    Noise for row i comes from its own generator derived as spawn (i,) of
    the seed, so any row partition and worker count reproduces the
    sequential output bit for bit.
    """
    if style.dim_in != clips.dim:
        raise DimMismatch(f"style expects dim {style.dim_in}, clips have {clips.dim}")
    data64 = clips.data.astype(np.float64)
    out = np.empty((clips.count, style.dim_out), dtype=np.float64)
    bounds = _chunk_bounds(clips.count)
    wt = style.weight.T

    def run(span):
        lo, hi = span
        block = data64[lo:hi] @ wt + style.bias
        if style.noise_sigma > 0.0:
            for i in range(lo, hi):
                rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=seed, spawn_key=(i,))
                )
                block[i - lo] += rng.normal(0.0, style.noise_sigma, style.dim_out)
        out[lo:hi] = block

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, bounds))
    else:
        for span in bounds:
            run(span)

    norms = np.linalg.norm(out, axis=1)
    if (norms == 0.0).any():
        raise ValueError("a styled caption collapsed to the zero vector")
    styled = (out / norms[:, None]).astype(np.float32)
    return EmbeddingSet(ids=clips.ids.copy(), data=styled, normalized=True)


def _aligned_sims(styled: EmbeddingSet, clips: EmbeddingSet) -> np.ndarray:
    if styled.count != clips.count:
        raise CountMismatch(f"{styled.count} styled rows vs {clips.count} clips")
    if styled.dim != clips.dim:
        raise DimMismatch(f"dims differ: {styled.dim} vs {clips.dim}")
    if not styled.normalized or not clips.normalized:
        raise NotNormalized("filtering requires normalized sets")
    return np.einsum(
        "ij,ij->i",
        styled.data.astype(np.float64),
        clips.data.astype(np.float64),
    )


def filter_pairs(styled: EmbeddingSet, clips: EmbeddingSet, th: float) -> GeneratedPairSet:
    """Keep row i only when cos(styled_i, clip_i) is strictly above th."""
    sims = _aligned_sims(styled, clips)
    keep = np.flatnonzero(sims > th)
    result = GeneratedPairSet(
        clip_ids=clips.ids[keep],
        rows=keep,
        sims=sims[keep],
        threshold=float(th),
        total_candidates=styled.count,
    )
    log.info("stage=filter threshold=%g kept=%d total=%d rate=%.4f",
             th, len(result), styled.count, result.retention_rate)
    return result


def threshold_sweep(
    styled: EmbeddingSet,
    clips: EmbeddingSet,
    thresholds: list[float],
) -> list[RetentionRow]:
    """Retention count per threshold; thresholds must come sorted ascending."""
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    sims = _aligned_sims(styled, clips)
    total = len(sims)
    rows = []
    for th in thresholds:
        kept = int((sims > th).sum())
        rows.append(RetentionRow(threshold=float(th), kept=kept,
                                 rate=kept / total if total else 0.0))
    return rows


# ---- persistence ----


def save_style(style: StyleTransform, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        container.write_header(f)
        f.write(container.STYLE_CHUNK)
        container.write_u32(f, style.dim_out)
        container.write_u32(f, style.dim_in)
        container.write_f64(f, style.ridge_lambda)
        container.write_f64(f, style.noise_sigma)
        container.write_string(f, style.style_tag)
        container.write_array(f, style.weight, "<f8")
        container.write_array(f, style.bias, "<f8")


def load_style(path: str | os.PathLike) -> StyleTransform:
    with open(path, "rb") as f:
        container.read_header(f)
        container.read_chunk_tag(f, container.STYLE_CHUNK)
        dim_out = container.read_u32(f, "dim_out")
        dim_in = container.read_u32(f, "dim_in")
        ridge_lambda = container.read_f64(f, "ridge_lambda")
        noise_sigma = container.read_f64(f, "noise_sigma")
        tag = container.read_string(f, "style_tag")
        weight = container.read_array(f, "<f8", dim_out * dim_in, "weight")
        bias = container.read_array(f, "<f8", dim_out, "bias")
    return StyleTransform(
        weight=weight.reshape(dim_out, dim_in),
        bias=bias,
        ridge_lambda=ridge_lambda,
        noise_sigma=noise_sigma,
        style_tag=tag,
    )


def write_generated_pairs(pairs: GeneratedPairSet, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({
            "kind": "generated_pairs",
            "threshold": pairs.threshold,
            "style_tag": pairs.style_tag,
            "total_candidates": pairs.total_candidates,
        }) + "\n")
        for c, r, s in pairs.pairs():
            f.write(json.dumps({"clip_id": c, "row": r, "sim": s}) + "\n")


def read_generated_pairs(path: str | os.PathLike) -> GeneratedPairSet:
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("kind") != "generated_pairs":
            raise ValueError(f"{path} is not a generated-pair file")
        cs, rs, ss = [], [], []
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            cs.append(obj["clip_id"])
            rs.append(obj["row"])
            ss.append(obj["sim"])
    return GeneratedPairSet(
        clip_ids=np.array(cs, dtype=np.int64),
        rows=np.array(rs, dtype=np.int64),
        sims=np.array(ss, dtype=np.float64),
        threshold=float(header["threshold"]),
        style_tag=header.get("style_tag", ""),
        total_candidates=int(header.get("total_candidates", 0)),
    )
