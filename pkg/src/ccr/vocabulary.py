"""Visual vocabulary: k-means codebook training and descriptor quantization.

The vocabulary is an ordered list of exemplar descriptors; a word id is the
exemplar's position. Quantization is an exact brute-force linear scan (the
vocabulary is desk-scale here), which keeps the asymmetric-distance tests
bit-exact against their oracles.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError
from .features import fmt

VOCAB_MAGIC = "CCRVOC 1"


def descriptor_distances(queries: np.ndarray, exemplars: np.ndarray) -> np.ndarray:
    """L2 distances between row vectors, shape (n_queries, n_exemplars).

    Uses the plain (q - e)^2 sum so a (1, D) query produces bit-identical
    values to the corresponding row of a batched call.
    """
    q = np.asarray(queries, dtype=np.float64)
    e = np.asarray(exemplars, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.shape[1] != e.shape[1]:
        raise DataError(f"descriptor dimension mismatch: {q.shape[1]} vs {e.shape[1]}")
    diff = q[:, None, :] - e[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


@dataclass(frozen=True)
class Vocabulary:
    """Ordered exemplar descriptors; word id = row index."""

    exemplars: np.ndarray  # (k, dim) float64, finite

    def __post_init__(self):
        ex = np.asarray(self.exemplars, dtype=np.float64)
        if ex.ndim != 2 or ex.shape[0] < 1:
            raise DataError("vocabulary needs a (k, dim) exemplar matrix with k >= 1")
        if not np.all(np.isfinite(ex)):
            raise DataError("vocabulary exemplars must be finite")
        ex.flags.writeable = False
        object.__setattr__(self, "exemplars", ex)

    @property
    def dim(self) -> int:
        return self.exemplars.shape[1]

    @property
    def size(self) -> int:
        return self.exemplars.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return np.array_equal(self.exemplars, other.exemplars)


def exemplar(w: int, vocab: Vocabulary) -> np.ndarray:
    """The stored exemplar vector of word w, unmodified."""
    if not 0 <= w < vocab.size:
        raise DataError(f"word id {w} out of range [0, {vocab.size})")
    return vocab.exemplars[w]


def quantize(d: np.ndarray, vocab: Vocabulary) -> tuple[int, float]:
    """Nearest exemplar by L2; ties break toward the smallest word id."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (vocab.dim,):
        raise DataError(f"descriptor shape {d.shape} != ({vocab.dim},)")
    dists = descriptor_distances(d, vocab.exemplars)[0]
    w = int(np.argmin(dists))  # argmin returns the first (smallest) index on ties
    return w, float(dists[w])


def quantize_batch(descs: np.ndarray, vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized quantize over an (N, dim) matrix; same tie rule."""
    return nearest_exemplars(descs, vocab.exemplars)


def nearest_exemplars(descs: np.ndarray, ex: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row nearest exemplar: (column ids, exact L2 distances).

    Large batches take a prefiltered path: a fast expanded-form squared
    distance narrows each row to the near-minimal exemplars, which are then
    re-evaluated with the exact formula, so the result (column id and
    distance) is identical to the plain path for any batch size.
    """
    descs = np.asarray(descs, dtype=np.float64)
    ex = np.asarray(ex, dtype=np.float64)
    if descs.shape[0] == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    if descs.shape[0] * ex.shape[0] * ex.shape[1] <= (1 << 20):
        dists = descriptor_distances(descs, ex)
        words = np.argmin(dists, axis=1)
        return words, dists[np.arange(len(words)), words]
    if descs.shape[1] != ex.shape[1]:
        raise DataError(
            f"descriptor dimension mismatch: {descs.shape[1]} vs {ex.shape[1]}"
        )
    qn = np.einsum("ij,ij->i", descs, descs)
    en = np.einsum("ij,ij->i", ex, ex)
    en_max = float(en.max())
    out_words = np.empty(descs.shape[0], dtype=np.int64)
    out_dists = np.empty(descs.shape[0], dtype=np.float64)
    chunk = max(1, (1 << 23) // ex.shape[0])
    for s in range(0, descs.shape[0], chunk):
        q = descs[s : s + chunk]
        d2e = qn[s : s + chunk, None] - 2.0 * (q @ ex.T) + en[None, :]
        m = d2e.min(axis=1)
        # slack vastly exceeds the cancellation error of the expanded form,
        # so the true nearest exemplar is always among the candidates
        slack = 1e-8 * (qn[s : s + chunk] + en_max + 1.0)
        rows, cols = np.nonzero(d2e <= (m + slack)[:, None])
        diff = q[rows] - ex[cols]
        exact = np.sqrt(np.sum(diff * diff, axis=1))
        order = np.lexsort((cols, exact, rows))
        rows_o = rows[order]
        keep = np.ones(len(rows_o), dtype=bool)
        keep[1:] = rows_o[1:] != rows_o[:-1]
        sel = order[keep]
        out_words[s + rows[sel]] = cols[sel]
        out_dists[s + rows[sel]] = exact[sel]
    return out_words, out_dists


def _pick_weighted(rng: np.random.Generator, weights: np.ndarray) -> int:
    total = float(weights.sum())
    if total <= 0.0:
        # all remaining points coincide with chosen centers; fall back to uniform
        return int(rng.integers(0, len(weights)))
    u = rng.random() * total
    return int(min(np.searchsorted(np.cumsum(weights), u, side="right"),
                   len(weights) - 1))


def kmeans_pp_init(training: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; deterministic for a fixed generator state."""
    n = training.shape[0]
    centers = np.empty((k, training.shape[1]), dtype=np.float64)
    first = int(rng.integers(0, n))
    centers[0] = training[first]
    # expanded-form squared distances (clamped: cancellation can dip below 0)
    tn2 = np.einsum("ij,ij->i", training, training)

    def _d2_to(c):
        out = tn2 - training @ (2.0 * c) + float(c @ c)
        np.maximum(out, 0.0, out=out)
        return out

    d2 = _d2_to(centers[0])
    for j in range(1, k):
        idx = _pick_weighted(rng, d2)
        centers[j] = training[idx]
        np.minimum(d2, _d2_to(centers[j]), out=d2)
    return centers


def _assign(training: np.ndarray, centers: np.ndarray):
    """Nearest-center labels, per-point squared distances, total distortion."""
    d2 = (
        np.sum(training**2, axis=1)[:, None]
        - 2.0 * training @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    labels = np.argmin(d2, axis=1)
    # recompute the achieved distances exactly (the expanded form can go
    # slightly negative from cancellation)
    point_d2 = np.sum((training - centers[labels]) ** 2, axis=1)
    return labels, point_d2, float(np.sum(point_d2))


def build_vocabulary(
    training: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 25,
    rel_tol: float = 1e-4,
) -> Vocabulary:
    """Lloyd k-means with k-means++ seeding.

    Deterministic for fixed (training order, k, seed). Distortion is
    non-increasing across iterations; empty clusters are reseeded to the
    training point currently farthest from its assigned exemplar.
    """
    training = np.asarray(training, dtype=np.float64)
    if training.ndim != 2:
        raise DataError("training must be an (N, dim) matrix")
    if not np.all(np.isfinite(training)):
        raise DataError("training descriptors must be finite")
    n = training.shape[0]
    if k < 1:
        raise DataError("k must be >= 1")
    if n < k:
        raise DataError(f"need at least k={k} training descriptors, got {n}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    centers = kmeans_pp_init(training, k, rng)
    prev = None
    for _ in range(max_iters):
        labels, point_d2, dist = _assign(training, centers)
        point_d2 = point_d2.copy()
        new_centers = np.empty_like(centers)
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, training)
        for j in range(k):
            if counts[j] > 0:
                new_centers[j] = sums[j] / counts[j]
            else:
                # reseed to the point farthest from its current exemplar
                idx = int(np.argmax(point_d2))
                new_centers[j] = training[idx]
                point_d2[idx] = 0.0
        centers = new_centers
        if prev is not None and prev - dist <= rel_tol * max(prev, 1e-300):
            break
        prev = dist
    return Vocabulary(centers)


# ---------------------------------------------------------------------------
# Vocabulary file I/O


def write_vocabulary(vocab: Vocabulary, path) -> None:
    buf = io.StringIO()
    buf.write(VOCAB_MAGIC + "\n")
    buf.write(f"dim {vocab.dim}\n")
    buf.write(f"count {vocab.size}\n")
    for row in vocab.exemplars:
        buf.write("w" + "".join(" " + fmt(v) for v in row) + "\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_vocabulary(path) -> Vocabulary:
    from .features import _LineReader, _parse_float, _parse_int, _keyed

    with open(path, "r", encoding="utf-8") as fh:
        r = _LineReader(path, fh.read())
    if r.next().strip() != VOCAB_MAGIC:
        r.fail(f"malformed header, expected {VOCAB_MAGIC!r}")
    dim = _parse_int(r, _keyed(r, "dim", 1)[0])
    count = _parse_int(r, _keyed(r, "count", 1)[0])
    if dim < 1 or count < 1:
        r.fail("dim and count must be >= 1")
    rows = []
    for _ in range(count):
        rows.append([_parse_float(r, t) for t in _keyed(r, "w", dim)])
    r.expect_eof()
    return Vocabulary(np.asarray(rows, dtype=np.float64))
