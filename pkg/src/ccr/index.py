"""Indexed reference images and the global inverted index.

Indexing a reference image quantizes every feature to a visual word and
computes the Delaunay adjacency of its superpixel centers; the raw
descriptors are then discarded — only word ids remain, which is what makes
the reference database compact.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .delaunay import AdjacencyGraph, delaunay_adjacency
from .errors import DataError, FormatError
from .features import FeatureSet, Superpixel, fmt
from .vocabulary import Vocabulary, quantize_batch

INDEX_MAGIC = "CCRIDX 1"


@dataclass(frozen=True)
class Occurrence:
    """One quantized feature of a reference image."""

    word: int
    superpixel: int
    pos: tuple[float, float]


@dataclass(frozen=True)
class IndexedImage:
    """A reference image compressed to words + superpixel geometry."""

    image_id: str
    global_desc: np.ndarray
    superpixels: tuple[Superpixel, ...]
    adjacency: AdjacencyGraph
    occurrences: tuple[Occurrence, ...]

    def __post_init__(self):
        if self.adjacency.n != len(self.superpixels):
            raise DataError("adjacency node count != superpixel count")
        for occ in self.occurrences:
            if not 0 <= occ.superpixel < len(self.superpixels):
                raise DataError(f"occurrence superpixel {occ.superpixel} out of range")

    def distinct_words(self) -> list[int]:
        return sorted({occ.word for occ in self.occurrences})

    def word_superpixels(self) -> dict[int, set[int]]:
        """Map word -> superpixels holding at least one occurrence of it."""
        out: dict[int, set[int]] = {}
        for occ in self.occurrences:
            out.setdefault(occ.word, set()).add(occ.superpixel)
        return out


# Identical superpixel layouts (e.g. the synthetic generator's fixed grid)
# share one triangulation.
_ADJ_CACHE: dict[tuple, AdjacencyGraph] = {}


def _adjacency_for(centers: tuple) -> AdjacencyGraph:
    graph = _ADJ_CACHE.get(centers)
    if graph is None:
        graph = delaunay_adjacency(centers)
        if len(_ADJ_CACHE) > 256:
            _ADJ_CACHE.clear()
        _ADJ_CACHE[centers] = graph
    return graph


def index_image(fs: FeatureSet, vocab: Vocabulary) -> IndexedImage:
    """Quantize a feature set against the vocabulary and drop raw descriptors."""
    fs.validate()
    if fs.desc_dim != vocab.dim:
        raise DataError(
            f"descriptor dimension {fs.desc_dim} != vocabulary dimension {vocab.dim}"
        )
    words, _ = quantize_batch(fs.descriptor_matrix(), vocab)
    occurrences = tuple(
        Occurrence(int(w), f.superpixel, f.pos) for w, f in zip(words, fs.features)
    )
    adjacency = _adjacency_for(tuple(sp.center for sp in fs.superpixels))
    return IndexedImage(
        image_id=fs.image_id,
        global_desc=fs.global_desc,
        superpixels=fs.superpixels,
        adjacency=adjacency,
        occurrences=occurrences,
    )


@dataclass
class InvertedIndex:
    """word -> postings over a frozen set of indexed images."""

    vocab: Vocabulary
    images: dict[str, IndexedImage] = field(default_factory=dict)
    postings_map: dict[int, list[tuple[str, int]]] = field(default_factory=dict)

    def add(self, img: IndexedImage) -> None:
        if img.image_id in self.images:
            raise DataError(f"duplicate image_id {img.image_id!r}")
        self.images[img.image_id] = img
        for i, occ in enumerate(img.occurrences):
            if not 0 <= occ.word < self.vocab.size:
                raise DataError(f"occurrence word {occ.word} outside vocabulary")
            self.postings_map.setdefault(occ.word, []).append((img.image_id, i))

    def postings(self, w: int) -> list[tuple[str, int]]:
        return list(self.postings_map.get(w, []))

    def __len__(self) -> int:
        return len(self.images)


def add_to_index(idx: InvertedIndex, img: IndexedImage) -> None:
    idx.add(img)


def postings(idx: InvertedIndex, w: int) -> list[tuple[str, int]]:
    return idx.postings(w)


def build_index(vocab: Vocabulary, feature_sets) -> InvertedIndex:
    """Index all feature sets; insertion is serialized in image_id order."""
    idx = InvertedIndex(vocab=vocab)
    for fs in sorted(feature_sets, key=lambda fs: fs.image_id):
        idx.add(index_image(fs, vocab))
    return idx


# ---------------------------------------------------------------------------
# Index file I/O


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_index(idx: InvertedIndex, path, vocab_path, vocab_hash: str) -> None:
    """Canonical text serialization: images and edges in sorted order."""
    buf = io.StringIO()
    buf.write(INDEX_MAGIC + "\n")
    buf.write(f"vocab {vocab_path} {vocab_hash}\n")
    buf.write(f"num_images {len(idx.images)}\n")
    for image_id in sorted(idx.images):
        img = idx.images[image_id]
        buf.write(f"image {image_id}\n")
        buf.write(f"global_dim {len(img.global_desc)}\n")
        buf.write("global" + "".join(" " + fmt(v) for v in img.global_desc) + "\n")
        buf.write(f"num_superpixels {len(img.superpixels)}\n")
        for sp in img.superpixels:
            buf.write(f"sp {sp.id} {fmt(sp.center[0])} {fmt(sp.center[1])}\n")
        edges = img.adjacency.sorted_edges()
        buf.write(f"num_edges {len(edges)}\n")
        for a, b in edges:
            buf.write(f"edge {a} {b}\n")
        buf.write(f"num_occurrences {len(img.occurrences)}\n")
        for occ in img.occurrences:
            buf.write(
                f"occ {occ.word} {occ.superpixel} "
                f"{fmt(occ.pos[0])} {fmt(occ.pos[1])}\n"
            )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_index(path, vocab: Vocabulary | None = None, vocab_path=None) -> InvertedIndex:
    """Load an index file.

    The embedded vocabulary path (resolved relative to the index file unless
    absolute, overridable via vocab_path) is loaded and hash-checked when no
    vocabulary object is supplied.
    """
    import os

    from .features import _LineReader, _parse_float, _parse_int, _keyed
    from .vocabulary import read_vocabulary

    with open(path, "r", encoding="utf-8") as fh:
        r = _LineReader(path, fh.read())
    if r.next().strip() != INDEX_MAGIC:
        r.fail(f"malformed header, expected {INDEX_MAGIC!r}")
    vtoks = _keyed(r, "vocab", 2)
    if vocab is None:
        vpath = vocab_path or vtoks[0]
        if not os.path.isabs(vpath) and vocab_path is None:
            vpath = os.path.join(os.path.dirname(os.path.abspath(path)), vpath)
        if not os.path.exists(vpath):
            raise DataError(f"vocabulary file not found: {vpath}")
        actual = file_sha256(vpath)
        if actual != vtoks[1]:
            raise DataError(
                f"vocabulary hash mismatch for {vpath}: index expects {vtoks[1]}, "
                f"file has {actual}"
            )
        vocab = read_vocabulary(vpath)
    idx = InvertedIndex(vocab=vocab)
    n_images = _parse_int(r, _keyed(r, "num_images", 1)[0])
    for _ in range(n_images):
        image_id = _keyed(r, "image", 1)[0]
        g_dim = _parse_int(r, _keyed(r, "global_dim", 1)[0])
        global_desc = np.asarray(
            [_parse_float(r, t) for t in _keyed(r, "global", g_dim)], dtype=np.float64
        )
        n_sp = _parse_int(r, _keyed(r, "num_superpixels", 1)[0])
        superpixels = []
        for i in range(n_sp):
            toks = _keyed(r, "sp", 3)
            if _parse_int(r, toks[0]) != i:
                r.fail("superpixel ids must ascend 0..S-1")
            superpixels.append(
                Superpixel(i, (_parse_float(r, toks[1]), _parse_float(r, toks[2])))
            )
        n_edges = _parse_int(r, _keyed(r, "num_edges", 1)[0])
        edges = set()
        for _ in range(n_edges):
            toks = _keyed(r, "edge", 2)
            a, b = _parse_int(r, toks[0]), _parse_int(r, toks[1])
            if not (0 <= a < b < n_sp):
                r.fail(f"invalid edge ({a}, {b}) for {n_sp} superpixels")
            edges.add((a, b))
        n_occ = _parse_int(r, _keyed(r, "num_occurrences", 1)[0])
        occurrences = []
        for _ in range(n_occ):
            toks = _keyed(r, "occ", 4)
            w = _parse_int(r, toks[0])
            sp = _parse_int(r, toks[1])
            if not 0 <= sp < n_sp:
                r.fail(f"occurrence superpixel {sp} out of range")
            occurrences.append(
                Occurrence(w, sp, (_parse_float(r, toks[2]), _parse_float(r, toks[3])))
            )
        idx.add(
            IndexedImage(
                image_id=image_id,
                global_desc=global_desc,
                superpixels=tuple(superpixels),
                adjacency=AdjacencyGraph(n_sp, frozenset(edges)),
                occurrences=tuple(occurrences),
            )
        )
    r.expect_eof()
    return idx
