"""Core domain records and bit-exact text file I/O.

All record types are immutable after construction and safe to share across
threads. Files are UTF-8 text with an explicit version header; floats are
serialized as the shortest decimal that round-trips to the identical 64-bit
value (Python ``repr``), so equal inputs always produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

FEATURESET_MAGIC = "CCRFS 1"
GROUNDTRUTH_MAGIC = "CCRGT 1"
RESULTS_HEADER = ["query_id", "feature_index", "x", "y", "score", "best_ref"]


def fmt(x: float) -> str:
    """Shortest decimal representation that round-trips to the same float."""
    return repr(float(x))


def _finite_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Superpixel:
    """One segmentation region: integer id and its center position."""

    id: int
    center: tuple[float, float]


@dataclass(frozen=True)
class Feature:
    """A local feature: position, owning superpixel, raw descriptor."""

    pos: tuple[float, float]
    superpixel: int
    desc: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Feature):
            return NotImplemented
        return (
            self.pos == other.pos
            and self.superpixel == other.superpixel
            and np.array_equal(self.desc, other.desc)
        )


@dataclass(frozen=True)
class FeatureSet:
    """All features of one image plus its superpixels and global descriptor."""

    image_id: str
    global_desc: np.ndarray
    desc_dim: int
    superpixels: tuple[Superpixel, ...]
    features: tuple[Feature, ...]

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and np.array_equal(self.global_desc, other.global_desc)
            and self.desc_dim == other.desc_dim
            and self.superpixels == other.superpixels
            and self.features == other.features
        )

    def superpixel_centers(self) -> list[tuple[float, float]]:
        return [sp.center for sp in self.superpixels]

    def descriptor_matrix(self) -> np.ndarray:
        """Features' descriptors stacked as an (N, D) float64 matrix."""
        if not self.features:
            return np.empty((0, self.desc_dim), dtype=np.float64)
        return np.stack([f.desc for f in self.features]).astype(np.float64)

    def validate(self) -> "FeatureSet":
        if not self.image_id or any(c.isspace() for c in self.image_id):
            raise ValidationError("image_id must be nonempty without whitespace")
        if not np.all(np.isfinite(self.global_desc)):
            raise ValidationError("global descriptor contains a non-finite value")
        for i, sp in enumerate(self.superpixels):
            if sp.id != i:
                raise ValidationError(
                    f"superpixel ids must be contiguous 0..S-1, got {sp.id} at {i}"
                )
            if not (math.isfinite(sp.center[0]) and math.isfinite(sp.center[1])):
                raise ValidationError(f"superpixel {i} has a non-finite center")
        n_sp = len(self.superpixels)
        for i, f in enumerate(self.features):
            x, y = f.pos
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValidationError(f"feature {i} has a non-finite position")
            if x < 0 or y < 0:
                raise ValidationError(f"feature {i} has a negative position")
            if not 0 <= f.superpixel < n_sp:
                raise ValidationError(
                    f"feature {i}: dangling superpixel reference {f.superpixel} "
                    f"(have {n_sp})"
                )
            if f.desc.shape != (self.desc_dim,):
                raise ValidationError(
                    f"feature {i}: descriptor dimension {f.desc.shape} != "
                    f"({self.desc_dim},)"
                )
            if not np.all(np.isfinite(f.desc)):
                raise ValidationError(f"feature {i}: non-finite descriptor value")
        return self


def make_feature_set(image_id, global_desc, desc_dim, superpixels, features) -> FeatureSet:
    """Construct and validate a FeatureSet from plain sequences."""
    fs = FeatureSet(
        image_id=image_id,
        global_desc=_finite_array(global_desc),
        desc_dim=int(desc_dim),
        superpixels=tuple(superpixels),
        features=tuple(features),
    )
    return fs.validate()


@dataclass(frozen=True)
class GroundTruthBox:
    """Annotated location of a changed object in one query image."""

    query_id: str
    box: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max

    def validate(self) -> "GroundTruthBox":
        x0, y0, x1, y1 = self.box
        if not all(math.isfinite(v) for v in self.box):
            raise ValidationError("ground-truth box has a non-finite coordinate")
        if x0 > x1 or y0 > y1:
            raise ValidationError(f"ground-truth box is inverted: {self.box}")
        return self

    def contains(self, pos: tuple[float, float]) -> bool:
        x0, y0, x1, y1 = self.box
        return x0 <= pos[0] <= x1 and y0 <= pos[1] <= y1


@dataclass(frozen=True)
class ChangeEntry:
    """Score of one query feature, with the reference that achieved the min."""

    feature_index: int
    pos: tuple[float, float]
    score: float  # >= 0; math.inf when no reference offered any candidate
    best_ref: str | None


@dataclass(frozen=True)
class ChangeResult:
    """Per-feature anomaly scores for one query image, in feature order."""

    query_id: str
    entries: tuple[ChangeEntry, ...] = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# FeatureSet file I/O


class _LineReader:
    def __init__(self, path, text: str):
        self.path = path
        self.lines = text.splitlines()
        self.i = 0

    @property
    def line_no(self) -> int:
        return self.i

    def next(self) -> str:
        if self.i >= len(self.lines):
            raise FormatError(self.path, self.i + 1, "unexpected end of file")
        self.i += 1
        return self.lines[self.i - 1]

    def fail(self, message: str):
        raise FormatError(self.path, self.i, message)

    def expect_eof(self):
        while self.i < len(self.lines):
            if self.lines[self.i].strip():
                self.i += 1
                self.fail("trailing content after record")
            self.i += 1


def _parse_float(r: _LineReader, tok: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        r.fail(f"not a number: {tok!r}")
    if not math.isfinite(v):
        r.fail(f"non-finite value: {tok!r}")
    return v


def _parse_int(r: _LineReader, tok: str) -> int:
    try:
        return int(tok)
    except ValueError:
        r.fail(f"not an integer: {tok!r}")


def _keyed(r: _LineReader, key: str, n_values: int | None = None) -> list[str]:
    line = r.next()
    parts = line.split()
    if not parts or parts[0] != key:
        r.fail(f"expected {key!r} record, got: {line!r}")
    if n_values is not None and len(parts) - 1 != n_values:
        r.fail(f"{key!r} record needs {n_values} value(s), got {len(parts) - 1}")
    return parts[1:]


def read_feature_set(path) -> FeatureSet:
    """Parse a ``CCRFS 1`` file, reporting errors with line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        r = _LineReader(path, fh.read())
    if r.next().strip() != FEATURESET_MAGIC:
        r.fail(f"malformed header, expected {FEATURESET_MAGIC!r}")
    image_id = _keyed(r, "image_id", 1)[0]
    g_dim = _parse_int(r, _keyed(r, "global_dim", 1)[0])
    if g_dim < 0:
        r.fail("global_dim must be >= 0")
    global_desc = [_parse_float(r, t) for t in _keyed(r, "global", g_dim)]
    desc_dim = _parse_int(r, _keyed(r, "desc_dim", 1)[0])
    if desc_dim < 1:
        r.fail("desc_dim must be >= 1")
    n_sp = _parse_int(r, _keyed(r, "num_superpixels", 1)[0])
    superpixels = []
    for i in range(n_sp):
        toks = _keyed(r, "sp", 3)
        sp_id = _parse_int(r, toks[0])
        if sp_id != i:
            r.fail(f"superpixel ids must ascend 0..S-1, got {sp_id}, expected {i}")
        superpixels.append(
            Superpixel(sp_id, (_parse_float(r, toks[1]), _parse_float(r, toks[2])))
        )
    n_feat = _parse_int(r, _keyed(r, "num_features", 1)[0])
    features = []
    for _ in range(n_feat):
        toks = _keyed(r, "f", 3 + desc_dim)
        x = _parse_float(r, toks[0])
        y = _parse_float(r, toks[1])
        sp_id = _parse_int(r, toks[2])
        if not 0 <= sp_id < n_sp:
            r.fail(f"dangling superpixel reference {sp_id} (have {n_sp})")
        desc = _finite_array([_parse_float(r, t) for t in toks[3:]])
        features.append(Feature((x, y), sp_id, desc))
    r.expect_eof()
    try:
        return make_feature_set(image_id, global_desc, desc_dim, superpixels, features)
    except ValidationError as e:
        raise FormatError(path, r.line_no, str(e)) from e


def write_feature_set(fs: FeatureSet, path) -> None:
    """Write the canonical text form; byte output is deterministic."""
    fs.validate()
    buf = io.StringIO()
    buf.write(FEATURESET_MAGIC + "\n")
    buf.write(f"image_id {fs.image_id}\n")
    buf.write(f"global_dim {len(fs.global_desc)}\n")
    buf.write("global" + "".join(" " + fmt(v) for v in fs.global_desc) + "\n")
    buf.write(f"desc_dim {fs.desc_dim}\n")
    buf.write(f"num_superpixels {len(fs.superpixels)}\n")
    for sp in fs.superpixels:
        buf.write(f"sp {sp.id} {fmt(sp.center[0])} {fmt(sp.center[1])}\n")
    buf.write(f"num_features {len(fs.features)}\n")
    for f in fs.features:
        buf.write(
            f"f {fmt(f.pos[0])} {fmt(f.pos[1])} {f.superpixel}"
            + "".join(" " + fmt(v) for v in f.desc)
            + "\n"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# GroundTruth file I/O


def read_ground_truth(path) -> list[GroundTruthBox]:
    with open(path, "r", encoding="utf-8") as fh:
        r = _LineReader(path, fh.read())
    if r.next().strip() != GROUNDTRUTH_MAGIC:
        r.fail(f"malformed header, expected {GROUNDTRUTH_MAGIC!r}")
    boxes = []
    while r.i < len(r.lines):
        line = r.next()
        if not line.strip():
            continue
        toks = line.split()
        if toks[0] != "gt" or len(toks) != 6:
            r.fail(f"expected 'gt <query_id> <4 coords>', got: {line!r}")
        box = GroundTruthBox(toks[1], tuple(_parse_float(r, t) for t in toks[2:]))
        try:
            boxes.append(box.validate())
        except ValidationError as e:
            r.fail(str(e))
    return boxes


def write_ground_truth(boxes, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(GROUNDTRUTH_MAGIC + "\n")
        for b in boxes:
            b.validate()
            fh.write("gt " + b.query_id + "".join(" " + fmt(v) for v in b.box) + "\n")


# ---------------------------------------------------------------------------
# Results CSV I/O


def write_results(results, path) -> None:
    """Write one or more ChangeResults as the canonical results CSV."""
    if isinstance(results, ChangeResult):
        results = [results]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for res in results:
            for e in res.entries:
                w.writerow(
                    [
                        res.query_id,
                        e.feature_index,
                        fmt(e.pos[0]),
                        fmt(e.pos[1]),
                        "inf" if math.isinf(e.score) else fmt(e.score),
                        e.best_ref if e.best_ref is not None else "",
                    ]
                )


def read_results(path) -> list[ChangeResult]:
    """Read a results CSV back into ChangeResults grouped by query_id."""
    per_query: dict[str, list[ChangeEntry]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULTS_HEADER:
            raise FormatError(path, 1, f"bad results header: {header!r}")
        for i, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise FormatError(path, i, f"expected 6 columns, got {len(row)}")
            qid, idx, x, y, score, best_ref = row
            try:
                entry = ChangeEntry(
                    feature_index=int(idx),
                    pos=(float(x), float(y)),
                    score=float(score),
                    best_ref=best_ref or None,
                )
            except ValueError as e:
                raise FormatError(path, i, str(e)) from e
            if entry.score < 0 or math.isnan(entry.score):
                raise FormatError(path, i, f"invalid score {score!r}")
            per_query.setdefault(qid, []).append(entry)
    return [ChangeResult(qid, tuple(entries)) for qid, entries in per_query.items()]
