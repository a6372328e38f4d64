"""Keypoint/superpixel extraction from images.

Pipeline per image: SIFT keypoints and 128-dim descriptors on the grayscale
image, SLIC superpixels on the RGB image, keypoint-to-superpixel assignment
by label lookup at the keypoint's pixel, superpixel centers as mean pixel
coordinates, and a color-histogram global descriptor.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import cv2
import numpy as np
import skimage
from skimage.segmentation import slic

from .writer import write_feature_set_file

DESC_DIM = 128
HIST_BINS = 8  # per channel; global descriptor is 3 * HIST_BINS long


class ExtractError(Exception):
    pass


@dataclass(frozen=True)
class ExtractConfig:
    images: tuple[str, ...]
    out_dir: str
    nr: int = 100  # target superpixel (region) count
    nc: float = 50.0  # SLIC compactness
    global_source: str = "histogram"

    def validate(self) -> "ExtractConfig":
        if not self.images:
            raise ExtractError("no input images given")
        if self.nr < 1:
            raise ExtractError("nr (region count) must be >= 1")
        if self.nc <= 0:
            raise ExtractError("nc (compactness) must be > 0")
        if self.global_source != "histogram":
            raise ExtractError(
                f"unknown global descriptor source {self.global_source!r} "
                "(available: histogram)"
            )
        return self


@dataclass(frozen=True)
class ExtractedImage:
    image_id: str
    global_desc: np.ndarray
    centers: list[tuple[float, float]]  # superpixel centers, ids 0..S-1
    features: list[tuple[float, float, int, np.ndarray]]  # (x, y, sp, desc)
    labels: np.ndarray = field(repr=False)  # compacted label map (H, W)


def _image_id_for(path: str) -> str:
    stem = os.path.splitext(os.path.basename(path))[0]
    cleaned = "".join("_" if c.isspace() else c for c in stem)
    return cleaned or "image"


def _load(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise ExtractError(f"unreadable image: {path}")
    return img


def compute_superpixels(rgb: np.ndarray, nr: int, nc: float) -> np.ndarray:
    """Compacted SLIC label map: contiguous labels 0..S-1."""
    labels = slic(rgb, n_segments=nr, compactness=nc, start_label=0)
    present = np.unique(labels)
    if len(present) == 0:
        raise ExtractError("segmentation produced zero superpixels")
    remap = np.zeros(int(present.max()) + 1, dtype=np.int64)
    remap[present] = np.arange(len(present))
    return remap[labels]


def superpixel_centers(labels: np.ndarray) -> list[tuple[float, float]]:
    """Mean pixel coordinates (x, y) of each region, in label order."""
    n = int(labels.max()) + 1
    ys, xs = np.nonzero(labels >= 0)
    flat = labels[ys, xs]
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    cx = np.bincount(flat, weights=xs, minlength=n) / counts
    cy = np.bincount(flat, weights=ys, minlength=n) / counts
    return [(float(cx[i]), float(cy[i])) for i in range(n)]


def global_histogram(bgr: np.ndarray) -> np.ndarray:
    """Per-channel intensity histogram, L1-normalized; deterministic."""
    chans = []
    for c in range(3):
        h, _ = np.histogram(bgr[:, :, c], bins=HIST_BINS, range=(0, 256))
        chans.append(h)
    out = np.concatenate(chans).astype(np.float64)
    return out / out.sum()


def assign_superpixel(labels: np.ndarray, x: float, y: float) -> int:
    """Label of the pixel containing the (sub-pixel) keypoint position."""
    h, w = labels.shape
    col = min(max(int(round(x)), 0), w - 1)
    row = min(max(int(round(y)), 0), h - 1)
    return int(labels[row, col])


def extract_image(path: str, cfg: ExtractConfig) -> ExtractedImage:
    bgr = _load(path)
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    gray = cv2.cvtColor(bgr, cv2.COLOR_BGR2GRAY)
    labels = compute_superpixels(rgb, cfg.nr, cfg.nc)
    centers = superpixel_centers(labels)
    sift = cv2.SIFT_create()
    keypoints, descs = sift.detectAndCompute(gray, None)
    features = []
    if keypoints:
        for kp, desc in zip(keypoints, descs):
            x = max(float(kp.pt[0]), 0.0)
            y = max(float(kp.pt[1]), 0.0)
            sp = assign_superpixel(labels, x, y)
            features.append((x, y, sp, np.asarray(desc, dtype=np.float64)))
    return ExtractedImage(
        image_id=_image_id_for(path),
        global_desc=global_histogram(bgr),
        centers=centers,
        features=features,
        labels=labels,
    )


def run_extract(cfg: ExtractConfig) -> list[str]:
    """Extract every configured image into cfg.out_dir; returns output paths."""
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    written = []
    seen_ids = set()
    for path in cfg.images:
        ex = extract_image(path, cfg)
        if ex.image_id in seen_ids:
            raise ExtractError(f"duplicate image id {ex.image_id!r} (from {path})")
        seen_ids.add(ex.image_id)
        out_path = os.path.join(cfg.out_dir, ex.image_id + ".ccrfs")
        write_feature_set_file(
            out_path, ex.image_id, ex.global_desc, DESC_DIM, ex.centers, ex.features
        )
        written.append(out_path)
    _write_provenance(cfg)
    return written


def _write_provenance(cfg: ExtractConfig) -> None:
    doc = {
        "tool": "ccr-extract",
        "versions": {
            "opencv": cv2.__version__,
            "scikit-image": skimage.__version__,
            "numpy": np.__version__,
        },
        "parameters": {
            "nr": cfg.nr,
            "nc": cfg.nc,
            "global_source": cfg.global_source,
            "desc_dim": DESC_DIM,
            "hist_bins": HIST_BINS,
        },
        "images": [os.path.basename(p) for p in cfg.images],
    }
    path = os.path.join(cfg.out_dir, "provenance.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
