"""Per-feature anomaly scoring against retrieved reference images.

A query feature's anomaly score is the minimum L2 distance to anything a
reference image can offer: raw descriptors in direct-matching (DM) mode, or
word exemplars in compressed (CCR) mode, where only the reference side is
quantized (asymmetric distance computation). Optional refinements restrict
the candidate set: local geometry (LG) keeps only superpixels adjacent to
strong ratio-test matches, and visibility analysis (VA) clips both images to
quantile bounding boxes around the matched features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .features import ChangeEntry, ChangeResult, Feature, FeatureSet
from .index import IndexedImage, InvertedIndex
from .retrieval import rank_references
from .vocabulary import Vocabulary, descriptor_distances, nearest_exemplars

DM = "dm"
CCR = "ccr"


@dataclass(frozen=True)
class DetectOptions:
    mode: str = CCR
    lg: bool = False
    va: bool = False
    ratio: float = 0.8
    delta: float = 0.1
    k_max: int = 10
    n_refs: int = 40
    normalize_descriptors: bool = False

    def validate(self) -> "DetectOptions":
        if self.mode not in (DM, CCR):
            raise DataError(f"mode must be 'dm' or 'ccr', got {self.mode!r}")
        if not 0.0 < self.ratio < 1.0:
            raise DataError(f"ratio must be in (0, 1), got {self.ratio}")
        if not 0.0 <= self.delta < 0.5:
            raise DataError(f"delta must be in [0, 0.5), got {self.delta}")
        if self.k_max < 1:
            raise DataError("k_max must be >= 1")
        if self.n_refs < 1:
            raise DataError("n_refs must be >= 1")
        if self.va and not self.lg:
            raise DataError("visibility analysis requires local geometry (lg)")
        if self.mode == DM and (self.lg or self.va):
            raise DataError("lg/va apply to compressed (ccr) mode only")
        return self


@dataclass(frozen=True)
class MatchList:
    """Nearest distinct reference words, ascending distance (ties by word)."""

    neighbors: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class StrongMatch:
    """The leading K match-list entries passing the ratio condition."""

    k: int
    words: tuple[int, ...]


def _maybe_normalize(mat: np.ndarray, enabled: bool) -> np.ndarray:
    if not enabled or mat.size == 0:
        return mat
    norms = np.sqrt(np.sum(mat * mat, axis=-1, keepdims=True))
    return np.where(norms > 0.0, mat / np.where(norms == 0.0, 1.0, norms), mat)


def knn_words(
    qf_desc: np.ndarray, img: IndexedImage, vocab: Vocabulary, k_max: int = 10
) -> MatchList:
    """kNN over the distinct words occurring in the image, keeping k_max+1
    entries (the extra one feeds the ratio test)."""
    qf_desc = np.asarray(qf_desc, dtype=np.float64)
    words = img.distinct_words()
    if not words:
        return MatchList(())
    dists = descriptor_distances(qf_desc, vocab.exemplars[np.asarray(words)])[0]
    order = sorted(range(len(words)), key=lambda i: (dists[i], words[i]))
    keep = order[: k_max + 1]
    return MatchList(tuple((words[i], float(dists[i])) for i in keep))


def strong_matches(ml: MatchList, ratio: float = 0.8) -> StrongMatch:
    """K = smallest k >= 1 with dist[k] < ratio * dist[k+1] (1-based); 0 when
    no prefix passes or the list has fewer than two entries."""
    d = [dist for _, dist in ml.neighbors]
    for k in range(1, len(d)):
        if d[k - 1] < ratio * d[k]:
            return StrongMatch(k, tuple(w for w, _ in ml.neighbors[:k]))
    return StrongMatch(0, ())


def lg_candidates(sm: StrongMatch, img: IndexedImage) -> set[int]:
    """Superpixels holding a strong-match word, plus their Delaunay neighbors."""
    if sm.k == 0:
        return set()
    word_sp = img.word_superpixels()
    hot: set[int] = set()
    for w in sm.words:
        hot |= word_sp.get(w, set())
    nbrs = img.adjacency.neighbor_map()
    out = set(hot)
    for sp in hot:
        out |= nbrs[sp]
    return out


def visibility_box(matched, delta: float = 0.1) -> tuple[float, float, float, float]:
    """Quantile bounding box of matched positions, enlarged by 1/(1-delta).

    Per axis the pre-box spans the floor(delta*M)-th and floor((1-delta)*M)-th
    order statistics (0-based, the upper clamped to M-1), then the box is
    scaled about its center.
    """
    pts = list(matched)
    if not pts:
        raise DataError("visibility box needs at least one matched position")
    m = len(pts)
    lo_i = math.floor(delta * m)
    hi_i = min(math.floor((1.0 - delta) * m), m - 1)
    scale = 1.0 / (1.0 - delta)
    out = []
    for axis in (0, 1):
        coords = sorted(p[axis] for p in pts)
        lo, hi = coords[lo_i], coords[hi_i]
        center = (lo + hi) / 2.0
        half = (hi - lo) / 2.0 * scale
        out.append((center - half, center + half))
    (x0, x1), (y0, y1) = out
    return (x0, y0, x1, y1)


def _in_box(pos, box) -> bool:
    x0, y0, x1, y1 = box
    return x0 <= pos[0] <= x1 and y0 <= pos[1] <= y1


@dataclass
class _RefContext:
    """Per-(query image, reference) scoring state for one CCR reference."""

    img: IndexedImage
    words: np.ndarray  # distinct words, ascending
    exemplars: np.ndarray
    word_sp: dict[int, set[int]]
    nbr_map: list[set[int]]
    qbox: tuple | None = None
    rbox_sps: set[int] | None = None  # superpixels with centers in the ref box
    lg_cache: dict[tuple[int, ...], set[int]] = field(default_factory=dict)


@dataclass(frozen=True)
class RefScore:
    """Provenance of one reference's inner minimum."""

    ref_id: str
    score: float | None  # None when the reference offered no candidate
    word: int | None
    k: int
    allowed_superpixels: frozenset[int] | None  # None = unrestricted


def _row_order(ctx: _RefContext, dists: np.ndarray) -> np.ndarray:
    # ascending (distance, word id); ctx.words is already ascending, so a
    # stable sort on distance realizes the word tie rule
    return np.argsort(dists, kind="stable")


def _strong_k(ctx: _RefContext, dists: np.ndarray, order: np.ndarray, opts) -> int:
    keep = order[: opts.k_max + 1]
    d = dists[keep]
    for k in range(1, len(d)):
        if d[k - 1] < opts.ratio * d[k]:
            return k
    return 0


def _strong_k_rows(dmat: np.ndarray, orders: np.ndarray, opts) -> np.ndarray:
    """Row-wise _strong_k over a (features x words) distance matrix."""
    m = min(opts.k_max + 1, dmat.shape[1])
    s = np.take_along_axis(dmat, orders[:, :m], axis=1)
    ok = s[:, :-1] < opts.ratio * s[:, 1:]
    if ok.shape[1] == 0:
        return np.zeros(dmat.shape[0], dtype=np.int64)
    return np.where(ok.any(axis=1), np.argmax(ok, axis=1) + 1, 0)


def _lg_set(ctx: _RefContext, strong_words: tuple[int, ...]) -> set[int]:
    cached = ctx.lg_cache.get(strong_words)
    if cached is None:
        hot: set[int] = set()
        for w in strong_words:
            hot |= ctx.word_sp[w]
        cached = set(hot)
        for sp in hot:
            cached |= ctx.nbr_map[sp]
        ctx.lg_cache[strong_words] = cached
    return cached


def _score_feature_ccr(
    ctx: _RefContext,
    dists: np.ndarray,
    qpos,
    opts: DetectOptions,
    order: np.ndarray | None = None,
    k: int | None = None,
) -> RefScore:
    """Inner minimum of one query feature against one compressed reference."""
    if len(ctx.words) == 0:
        return RefScore(ctx.img.image_id, None, None, 0, None)
    if order is None:
        order = _row_order(ctx, dists)
    if k is None:
        k = _strong_k(ctx, dists, order, opts)
    allowed: set[int] | None = None
    if ctx.qbox is not None:
        if not _in_box(qpos, ctx.qbox):
            return RefScore(ctx.img.image_id, None, None, k, frozenset())
        allowed = ctx.rbox_sps
    if opts.lg and k >= 1:
        strong_words = tuple(int(ctx.words[i]) for i in order[:k])
        cand = _lg_set(ctx, strong_words)
        allowed = cand if allowed is None else (allowed & cand)
    if allowed is None:
        best = int(order[0])
        return RefScore(
            ctx.img.image_id, float(dists[best]), int(ctx.words[best]), k, None
        )
    for i in order:
        w = int(ctx.words[i])
        if not ctx.word_sp[w].isdisjoint(allowed):
            return RefScore(
                ctx.img.image_id, float(dists[i]), w, k, frozenset(allowed)
            )
    return RefScore(ctx.img.image_id, None, None, k, frozenset(allowed))


def _build_ref_context(
    img: IndexedImage,
    vocab: Vocabulary,
    opts: DetectOptions,
    query: FeatureSet | None,
) -> _RefContext:
    words = np.asarray(img.distinct_words(), dtype=np.int64)
    exemplars = (
        _maybe_normalize(vocab.exemplars[words], opts.normalize_descriptors)
        if len(words)
        else np.empty((0, vocab.dim))
    )
    ctx = _RefContext(
        img=img,
        words=words,
        exemplars=exemplars,
        word_sp=img.word_superpixels(),
        nbr_map=img.adjacency.neighbor_map(),
    )
    if opts.va and len(words) and query is not None and query.features:
        q_mat = _maybe_normalize(
            query.descriptor_matrix(), opts.normalize_descriptors
        )
        dmat = descriptor_distances(q_mat, exemplars)
        orders = np.argsort(dmat, axis=1, kind="stable")
        ks = _strong_k_rows(dmat, orders, opts)
        matched_q = []
        strong_union: set[int] = set()
        for i in np.nonzero(ks >= 1)[0]:
            matched_q.append(query.features[i].pos)
            strong_union.update(int(words[j]) for j in orders[i, : ks[i]])
        if matched_q:
            matched_r = [
                occ.pos for occ in img.occurrences if occ.word in strong_union
            ]
            ctx.qbox = visibility_box(matched_q, opts.delta)
            rbox = visibility_box(matched_r, opts.delta)
            ctx.rbox_sps = {
                sp.id for sp in img.superpixels if _in_box(sp.center, rbox)
            }
    return ctx


def _score_feature_dm(qf_desc: np.ndarray, ref: FeatureSet, opts) -> RefScore:
    if not ref.features:
        return RefScore(ref.image_id, None, None, 0, None)
    mat = _maybe_normalize(ref.descriptor_matrix(), opts.normalize_descriptors)
    dists = descriptor_distances(qf_desc, mat)[0]
    best = int(np.argmin(dists))
    return RefScore(ref.image_id, float(dists[best]), None, 0, None)


def anomalyness_detail(
    qf: Feature,
    refs,
    vocab: Vocabulary | None,
    opts: DetectOptions,
    query: FeatureSet | None = None,
) -> tuple[float, str | None, list[RefScore]]:
    """Score one query feature against explicit references, with provenance."""
    opts.validate()
    if not refs:
        raise DataError("refs must be nonempty")
    if opts.va and query is None:
        raise DataError("visibility analysis needs the full query feature set")
    qdesc = _maybe_normalize(
        np.asarray(qf.desc, dtype=np.float64), opts.normalize_descriptors
    )
    details = []
    best_score = math.inf
    best_ref = None
    for ref in refs:
        if opts.mode == DM:
            rs = _score_feature_dm(qdesc, ref, opts)
        else:
            ctx = _build_ref_context(ref, vocab, opts, query)
            dists = (
                descriptor_distances(qdesc, ctx.exemplars)[0]
                if len(ctx.words)
                else np.empty(0)
            )
            rs = _score_feature_ccr(ctx, dists, qf.pos, opts)
        details.append(rs)
        if rs.score is not None and rs.score < best_score:
            best_score = rs.score
            best_ref = rs.ref_id
    return best_score, best_ref, details


def anomalyness(
    qf: Feature,
    refs,
    vocab: Vocabulary | None,
    opts: DetectOptions,
    query: FeatureSet | None = None,
) -> tuple[float, str | None]:
    """Eq.-style outer/inner minimum: min over references of the reference's
    best candidate distance; +inf when nothing qualifies anywhere."""
    score, best_ref, _ = anomalyness_detail(qf, refs, vocab, opts, query)
    return score, best_ref


def detect_changes(
    query: FeatureSet,
    idx: InvertedIndex,
    opts: DetectOptions,
    raw_refs: dict[str, FeatureSet] | None = None,
) -> ChangeResult:
    """Full pipeline step 2+3: retrieve top-n references, score every query
    feature, return entries in feature order."""
    opts.validate()
    query.validate()
    if opts.mode == CCR and query.desc_dim != idx.vocab.dim:
        raise DataError(
            f"query descriptor dimension {query.desc_dim} != vocabulary "
            f"dimension {idx.vocab.dim}"
        )
    ranked = rank_references(query.global_desc, idx, opts.n_refs)
    n_feat = len(query.features)
    best = np.full(n_feat, math.inf)
    best_ref: list[str | None] = [None] * n_feat

    if opts.mode == DM:
        if raw_refs is None:
            raise DataError("DM mode needs the raw reference feature sets")
        q_mat = _maybe_normalize(
            query.descriptor_matrix(), opts.normalize_descriptors
        )
        for ref_id in ranked.image_ids():
            ref = raw_refs.get(ref_id)
            if ref is None:
                raise DataError(f"missing raw reference {ref_id!r} for DM mode")
            if ref.desc_dim != query.desc_dim:
                raise DataError(
                    f"reference {ref_id!r} descriptor dimension {ref.desc_dim} "
                    f"!= query dimension {query.desc_dim}"
                )
            if not ref.features or n_feat == 0:
                continue
            mat = _maybe_normalize(
                ref.descriptor_matrix(), opts.normalize_descriptors
            )
            dmat = descriptor_distances(q_mat, mat)
            mins = np.min(dmat, axis=1)
            for i in range(n_feat):
                if mins[i] < best[i]:
                    best[i] = mins[i]
                    best_ref[i] = ref_id
    else:
        q_mat = _maybe_normalize(
            query.descriptor_matrix(), opts.normalize_descriptors
        )
        for ref_id in ranked.image_ids():
            img = idx.images[ref_id]
            ctx = _build_ref_context(img, vocab=idx.vocab, opts=opts, query=query)
            if len(ctx.words) == 0 or n_feat == 0:
                continue
            _, mins = nearest_exemplars(q_mat, ctx.exemplars)
            if not opts.lg:
                # unrestricted inner minimum: a row min is the row's best
                improved = np.nonzero(mins < best)[0]
                best[improved] = mins[improved]
                for i in improved:
                    best_ref[i] = ref_id
                continue
            # restriction can only raise a row's score above its unrestricted
            # minimum, so rows at or above the current best cannot improve
            rows = np.nonzero(mins < best)[0]
            if len(rows) == 0:
                continue
            dsub = descriptor_distances(q_mat[rows], ctx.exemplars)
            orders = np.argsort(dsub, axis=1, kind="stable")
            ks = _strong_k_rows(dsub, orders, opts)
            for t, i in enumerate(rows):
                rs = _score_feature_ccr(
                    ctx,
                    dsub[t],
                    query.features[i].pos,
                    opts,
                    order=orders[t],
                    k=int(ks[t]),
                )
                if rs.score is not None and rs.score < best[i]:
                    best[i] = rs.score
                    best_ref[i] = ref_id

    entries = tuple(
        ChangeEntry(i, query.features[i].pos, float(best[i]), best_ref[i])
        for i in range(n_feat)
    )
    return ChangeResult(query.image_id, entries)
