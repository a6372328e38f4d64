"""Ranking-based evaluation and the deterministic synthetic scene generator.

The metric ranks all query features by descending anomaly score and reports
the percentile of the best-ranked feature inside the annotated box; top-X%
success rates aggregate those percentiles over queries. The generator plants
descriptors guaranteed to be far from every latent world descriptor, which
gives a ground-truth change signal at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .features import (
    ChangeResult,
    Feature,
    FeatureSet,
    GroundTruthBox,
    Superpixel,
    make_feature_set,
)

DEFAULT_THRESHOLDS = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
TABLE_ROW_LABELS = ("DM", "CCR", "CCR+LG", "CCR+LG+VA")


@dataclass(frozen=True)
class RankingOutcome:
    query_id: str
    total_features: int
    best_gt_rank: int  # 1-based
    percentile: float  # 100 * best_gt_rank / total_features


def score_ranking(result: ChangeResult) -> list[int]:
    """Feature indices sorted by descending score; ties by ascending index.

    +inf scores (nothing explained the feature) sort first: they are the most
    anomalous by construction.
    """
    order = sorted(
        range(len(result.entries)),
        key=lambda i: (-result.entries[i].score, result.entries[i].feature_index),
    )
    return order


def ranking_percentile(result: ChangeResult, gt: GroundTruthBox) -> RankingOutcome:
    gt.validate()
    if not result.entries:
        raise DataError(f"query {result.query_id!r} has no scored features")
    in_box = {
        i for i, e in enumerate(result.entries) if gt.contains(e.pos)
    }
    if not in_box:
        raise DataError(
            f"no feature of query {result.query_id!r} lies inside the "
            f"ground-truth box {gt.box}"
        )
    order = score_ranking(result)
    best_rank = min(rank for rank, i in enumerate(order, start=1) if i in in_box)
    total = len(result.entries)
    return RankingOutcome(result.query_id, total, best_rank, 100.0 * best_rank / total)


def topx_table(outcomes, thresholds=DEFAULT_THRESHOLDS) -> dict[float, float]:
    """Success rate (in percent) of percentile <= X, per threshold X."""
    outcomes = list(outcomes)
    if not outcomes:
        raise DataError("no outcomes to aggregate")
    n = len(outcomes)
    return {
        float(x): 100.0 * sum(1 for o in outcomes if o.percentile <= x) / n
        for x in thresholds
    }


def render_table(rows: dict[str, dict[float, float]], thresholds=DEFAULT_THRESHOLDS) -> str:
    """Aligned text table: one row per method, top-X columns."""
    headers = ["method"] + [f"top-{x:g}" for x in thresholds]
    lines = [headers]
    for label, cells in rows.items():
        lines.append(
            [label] + [f"{cells[float(x)]:.1f}" for x in thresholds]
        )
    widths = [max(len(row[c]) for row in lines) for c in range(len(headers))]
    out = []
    for row in lines:
        out.append(
            "  ".join(
                cell.ljust(widths[c]) if c == 0 else cell.rjust(widths[c])
                for c, cell in enumerate(row)
            ).rstrip()
        )
    return "\n".join(out) + "\n"


def render_table_csv(rows: dict[str, dict[float, float]], thresholds=DEFAULT_THRESHOLDS) -> str:
    lines = ["method," + ",".join(f"top-{x:g}" for x in thresholds)]
    for label, cells in rows.items():
        lines.append(label + "," + ",".join(f"{cells[float(x)]:.1f}" for x in thresholds))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Synthetic scene generation


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    desc_dim: int = 16
    world_size: int = 2000
    n_refs: int = 40
    features_per_image: int = 300
    obs_noise_sigma: float = 0.02
    change_count: int = 10
    change_margin: float = 0.16
    image_extent: tuple[float, float] = (640.0, 480.0)
    superpixel_grid: tuple[int, int] = (8, 8)
    global_dim: int = 8

    def validate(self) -> "SceneSpec":
        counts = (
            self.desc_dim,
            self.world_size,
            self.n_refs,
            self.features_per_image,
            self.change_count,
            self.superpixel_grid[0],
            self.superpixel_grid[1],
            self.global_dim,
        )
        if any(c < 1 for c in counts):
            raise DataError("all scene counts must be >= 1")
        if self.change_margin <= 0:
            raise DataError("change_margin must be > 0")
        if self.obs_noise_sigma < 0:
            raise DataError("obs_noise_sigma must be >= 0")
        if self.change_count > self.features_per_image:
            raise DataError("change_count cannot exceed features_per_image")
        if self.image_extent[0] <= 0 or self.image_extent[1] <= 0:
            raise DataError("image_extent must be positive")
        return self


def _grid_superpixels(spec: SceneSpec) -> tuple[Superpixel, ...]:
    gx, gy = spec.superpixel_grid
    w, h = spec.image_extent
    out = []
    for j in range(gy):
        for i in range(gx):
            cx = (i + 0.5) * w / gx
            cy = (j + 0.5) * h / gy
            out.append(Superpixel(j * gx + i, (cx, cy)))
    return tuple(out)


def _cell_of(pos, spec: SceneSpec) -> int:
    gx, gy = spec.superpixel_grid
    w, h = spec.image_extent
    i = min(int(pos[0] / w * gx), gx - 1)
    j = min(int(pos[1] / h * gy), gy - 1)
    return j * gx + i


def _sample_image(
    rng: np.random.Generator, spec: SceneSpec, world: np.ndarray, image_id: str,
    superpixels,
) -> FeatureSet:
    n = spec.features_per_image
    picks = rng.integers(0, spec.world_size, size=n)
    descs = world[picks] + rng.normal(0.0, spec.obs_noise_sigma, size=(n, spec.desc_dim))
    xs = rng.random(n) * spec.image_extent[0]
    ys = rng.random(n) * spec.image_extent[1]
    global_desc = rng.normal(0.0, 1.0, size=spec.global_dim)
    features = [
        Feature((float(xs[i]), float(ys[i])), _cell_of((xs[i], ys[i]), spec), descs[i])
        for i in range(n)
    ]
    return make_feature_set(image_id, global_desc, spec.desc_dim, superpixels, features)


def _sample_changed_descriptor(
    rng: np.random.Generator, spec: SceneSpec, world: np.ndarray, budget: int = 10000
) -> np.ndarray:
    margin2 = spec.change_margin**2
    for _ in range(budget):
        cand = rng.random(spec.desc_dim)
        d2 = np.sum((world - cand) ** 2, axis=1)
        if float(np.min(d2)) >= margin2:
            return cand
    raise DataError(
        f"could not place a changed descriptor at margin {spec.change_margin} "
        f"within {budget} attempts; margin too large for the unit cube"
    )


def generate_scene(spec: SceneSpec):
    """Deterministic synthetic scene: (refs, query, gt).

    References observe latent world descriptors with isotropic noise; the
    query does too, except change_count features are replaced by descriptors
    at least change_margin away from every world descriptor, clustered in a
    random sub-box whose bounding box becomes the ground truth.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    world = rng.random((spec.world_size, spec.desc_dim))
    superpixels = _grid_superpixels(spec)
    refs = [
        _sample_image(rng, spec, world, f"ref{i:03d}", superpixels)
        for i in range(spec.n_refs)
    ]
    query = _sample_image(rng, spec, world, "query", superpixels)

    # plant the changes: replace the last change_count features
    w, h = spec.image_extent
    bw, bh = w / 4.0, h / 4.0
    bx = rng.random() * (w - bw)
    by = rng.random() * (h - bh)
    planted = []
    for _ in range(spec.change_count):
        desc = _sample_changed_descriptor(rng, spec, world)
        px = bx + rng.random() * bw
        py = by + rng.random() * bh
        planted.append(Feature((float(px), float(py)), _cell_of((px, py), spec), desc))
    features = list(query.features[: len(query.features) - spec.change_count]) + planted
    query = make_feature_set(
        "query", query.global_desc, spec.desc_dim, superpixels, features
    )
    xs = [f.pos[0] for f in planted]
    ys = [f.pos[1] for f in planted]
    gt = GroundTruthBox("query", (min(xs), min(ys), max(xs), max(ys))).validate()
    return refs, query, gt


def planted_feature_indices(spec: SceneSpec) -> list[int]:
    """Indices of the planted (changed) query features for a given spec."""
    return list(
        range(spec.features_per_image - spec.change_count, spec.features_per_image)
    )
