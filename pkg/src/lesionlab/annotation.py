"""Unsupervised mask bootstrapping: spatial K-means, merge, cleanup, orient.

Per image: embed every pixel as (r, g, b, w*x, w*y), cluster with seeded
k-means++ / Lloyd, split the centroids into a dark and a light luminance
group (dark = lesion), then clean the binary mask morphologically and flip
it automatically when the foreground hugs the image border.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    ContractError,
    DegenerateInputError,
    DegenerateMaskError,
    DegenerateMergeError,
    EmptyMaskError,
    NoInputError,
)

CROSS = ndimage.generate_binary_structure(2, 1)  # 3x3 plus-shaped element

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class ClusterModel:
    """Result of one k-means fit over pixel features."""

    k: int
    centroids: np.ndarray        # (k, d)
    assignments: np.ndarray      # (n,) int
    sse: float
    sse_history: list[float]     # per-iteration SSE, non-increasing


@dataclass
class AnnotationConfig:
    cluster_count: int = 5
    spatial_weight: float = 0.1
    restarts: int = 5
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0


@dataclass
class MaskRecord:
    """One manifest line describing an auto-generated mask."""

    image_id: str
    mask_path: str
    border_fraction: float
    inverted: bool
    status: str                  # auto | failed
    failure_reason: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def extract_features(image: np.ndarray, spatial_weight: float = 0.1) -> np.ndarray:
    """Per-pixel (r, g, b, w*x, w*y) features, row-major, all in [0, 1]."""
    if spatial_weight < 0:
        raise ContractError("spatial_weight must be nonnegative")
    img = np.asarray(image, dtype=np.float64) / 255.0
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"expected (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    xs = np.arange(w, dtype=np.float64) / (w - 1) if w > 1 else np.zeros(w)
    ys = np.arange(h, dtype=np.float64) / (h - 1) if h > 1 else np.zeros(h)
    grid_x, grid_y = np.meshgrid(xs, ys)
    feats = np.concatenate(
        [img.reshape(-1, 3),
         (spatial_weight * grid_x).reshape(-1, 1),
         (spatial_weight * grid_y).reshape(-1, 1)], axis=1)
    return feats


def _kmeans_pp_init(feats: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = feats.shape[0]
    centroids = np.empty((k, feats.shape[1]))
    centroids[0] = feats[rng.integers(n)]
    d2 = ((feats - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centroids[j] = feats[idx]
        d2 = np.minimum(d2, ((feats - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _assign(feats: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # squared Euclidean distance to every centroid
    d2 = ((feats[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    return assign, d2

def _lloyd(feats: np.ndarray, centroids: np.ndarray, max_iter: int,
           tol: float) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    k = centroids.shape[0]
    history: list[float] = []
    assign = np.zeros(feats.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        assign, d2 = _assign(feats, centroids)
        # empty-cluster repair: the globally farthest point becomes the centroid
        for c in range(k):
            if not (assign == c).any():
                own = d2[np.arange(feats.shape[0]), assign]
                far = int(own.argmax())
                centroids = centroids.copy()
                centroids[c] = feats[far]
                assign, d2 = _assign(feats, centroids)
        sse = float(d2[np.arange(feats.shape[0]), assign].sum())
        if history and sse > history[-1] + 1e-12 * max(1.0, history[-1]):
            raise AssertionError("Lloyd SSE increased, implementation bug")
        history.append(sse)
        new_centroids = centroids.copy()
        for c in range(k):
            members = feats[assign == c]
            if members.shape[0]:
                new_centroids[c] = members.mean(axis=0)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break
    assign, d2 = _assign(feats, centroids)
    sse = float(d2[np.arange(feats.shape[0]), assign].sum())
    history.append(sse)
    return centroids, assign, sse, history


def kmeans_fit(features: np.ndarray, k: int, restarts: int = 5,
               max_iter: int = 100, tol: float = 1e-6, seed: int = 0) -> ClusterModel:
    """Best-SSE Lloyd run over `restarts` seeded k-means++ initializations."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ContractError(f"features must be 2D, got {feats.ndim}D")
    if k < 1:
        raise ContractError("k must be >= 1")
    distinct = np.unique(feats, axis=0).shape[0]
    if distinct < k:
        raise DegenerateInputError(
            f"only {distinct} distinct feature vectors for k={k}")
    best: ClusterModel | None = None
    for child_seq in np.random.SeedSequence(seed).spawn(max(restarts, 1)):
        rng = np.random.default_rng(child_seq)
        init = _kmeans_pp_init(feats, k, rng)
        centroids, assign, sse, history = _lloyd(feats, init, max_iter, tol)
        if best is None or sse < best.sse:
            best = ClusterModel(k=k, centroids=centroids, assignments=assign,
                                sse=sse, sse_history=history)
    return best


def split_dark_light(values: np.ndarray) -> np.ndarray:
    """Exact 1-D 2-means: boolean array, True = dark group (lower mean)."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    n = len(values)
    best_cut, best_sse = 1, np.inf
    for cut in range(1, n):
        lo, hi = sorted_vals[:cut], sorted_vals[cut:]
        sse = ((lo - lo.mean()) ** 2).sum() + ((hi - hi.mean()) ** 2).sum()
        if sse < best_sse:
            best_sse, best_cut = sse, cut
    dark = np.zeros(n, dtype=bool)
    dark[order[:best_cut]] = True
    return dark


def centroid_merge_mask(model: ClusterModel, dims: tuple[int, int]) -> np.ndarray:
    """Merge k clusters into a binary mask: dark-luminance clusters = lesion."""
    if model.k < 2:
        raise ContractError("merging requires k >= 2")
    lum = model.centroids[:, :3] @ LUMA_WEIGHTS
    if float(lum.max() - lum.min()) <= 1e-9:
        raise DegenerateMergeError("all centroid luminances equal, cannot split")
    dark = split_dark_light(lum)
    h, w = dims
    if model.assignments.size != h * w:
        raise ContractError(
            f"assignments ({model.assignments.size}) do not cover {h}x{w} pixels")
    return dark[model.assignments].reshape(h, w)


def _erode(mask: np.ndarray) -> np.ndarray:
    # border_value=1 so the element is only tested against in-image pixels
    return ndimage.binary_erosion(mask, structure=CROSS, border_value=1)


def _dilate(mask: np.ndarray) -> np.ndarray:
    return ndimage.binary_dilation(mask, structure=CROSS, border_value=0)


def _clean_once(mask: np.ndarray) -> np.ndarray:
    opened = _dilate(_erode(mask))
    closed = _erode(_dilate(opened))
    if not closed.any():
        raise EmptyMaskError("mask empty after morphological cleanup")
    labels, count = ndimage.label(closed, structure=CROSS)
    if count > 1:
        sizes = np.bincount(labels.reshape(-1))
        sizes[0] = 0
        closed = labels == sizes.argmax()
    return ndimage.binary_fill_holes(closed, structure=CROSS)


def clean_mask(mask: np.ndarray) -> np.ndarray:
    """Open, close, keep the largest 4-connected blob, fill enclosed holes.

    Iterated to a fixed point so the whole cleanup is idempotent.
    """
    current = np.asarray(mask, dtype=bool)
    for _ in range(8):
        cleaned = _clean_once(current)
        if np.array_equal(cleaned, current):
            return cleaned
        current = cleaned
    return current


def border_fraction(mask: np.ndarray) -> float:
    """Fraction of the 1-pixel image border covered by foreground."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    if h <= 2 or w <= 2:
        border = m
    else:
        border = np.concatenate(
            [m[0, :], m[-1, :], m[1:-1, 0], m[1:-1, -1]])
    return float(border.sum()) / border.size


def orient_mask(mask: np.ndarray) -> tuple[np.ndarray, bool]:
    """Flip the mask when foreground covers more than half the image border."""
    m = np.asarray(mask, dtype=bool)
    if not m.any() or m.all():
        raise DegenerateMaskError("mask is all-zero or all-one, cannot orient")
    if border_fraction(m) > 0.5:
        return ~m, True
    return m, False


def annotate_image(image: np.ndarray,
                   config: AnnotationConfig) -> tuple[np.ndarray, float, bool]:
    """Full per-image scheme; returns (mask, border_fraction_before, inverted)."""
    feats = extract_features(image, config.spatial_weight)
    model = kmeans_fit(feats, config.cluster_count, restarts=config.restarts,
                       max_iter=config.max_iter, tol=config.tol, seed=config.seed)
    raw = centroid_merge_mask(model, image.shape[:2])
    cleaned = clean_mask(raw)
    frac = border_fraction(cleaned)
    oriented, inverted = orient_mask(cleaned)
    return oriented, frac, inverted


def annotate_corpus(image_dir: str | Path, mask_dir: str | Path,
                    config: AnnotationConfig) -> list[MaskRecord]:
    """Annotate every image in a directory; failures are recorded, not raised.

    Masks land in mask_dir as 0/255 grayscale PNGs; the caller persists the
    returned records to the corpus manifest.
    """
    from . import dataset_io

    image_dir = Path(image_dir)
    mask_dir = Path(mask_dir)
    paths = sorted(p for p in image_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not paths:
        raise NoInputError(f"no images found in {image_dir}")
    mask_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for path in paths:
        image_id = path.stem
        try:
            image = dataset_io.read_image(path)
            mask, frac, inverted = annotate_image(image, config)
            mask_path = mask_dir / f"{image_id}.png"
            dataset_io.write_mask(mask, mask_path)
            records.append(MaskRecord(image_id=image_id, mask_path=str(mask_path),
                                      border_fraction=frac, inverted=inverted,
                                      status="auto"))
        except Exception as exc:  # noqa: BLE001 - per-image isolation is the contract
            records.append(MaskRecord(image_id=image_id, mask_path="",
                                      border_fraction=0.0, inverted=False,
                                      status="failed", failure_reason=str(exc)))
    return records
