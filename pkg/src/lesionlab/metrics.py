"""Confusion matrices, derived performance metrics, mask overlap, ABCD shape features.

F1 is computed with benign as the positive class. That convention is forced
by the published per-model results this module is validated against: with
TP = actual-benign predicted-benign, the three reference confusion matrices
(240,7,120,293), (261,22,99,278) and (301,57,59,243) reproduce F1 scores
0.7908, 0.8118 and 0.8384; the malignant-positive reading does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import ContractError, DimensionError, EmptyMaskError

LABELS = ("benign", "malignant")


@dataclass(frozen=True)
class ConfusionMatrix:
    """2x2 counts indexed [actual][predicted] over (benign, malignant)."""

    benign_benign: int
    benign_malignant: int
    malignant_benign: int
    malignant_malignant: int

    @property
    def total(self) -> int:
        return (self.benign_benign + self.benign_malignant
                + self.malignant_benign + self.malignant_malignant)

    def count(self, actual: str, predicted: str) -> int:
        return getattr(self, f"{actual}_{predicted}")

    def as_array(self) -> np.ndarray:
        return np.array([[self.benign_benign, self.benign_malignant],
                         [self.malignant_benign, self.malignant_malignant]])


@dataclass(frozen=True)
class MetricsReport:
    testing_accuracy_pct: float
    misclassification_rate_pct: float
    f1_benign_positive: float
    precision: float
    recall: float
    sample_count: int
    f1_defined: bool

    def to_text(self) -> str:
        """Flat key/value record, one field per line."""
        lines = [
            f"sample_count={self.sample_count}",
            f"testing_accuracy_pct={self.testing_accuracy_pct:.2f}",
            f"misclassification_rate_pct={self.misclassification_rate_pct:.2f}",
            f"f1_benign_positive={self.f1_benign_positive:.4f}",
            f"precision={self.precision:.6f}",
            f"recall={self.recall:.6f}",
            f"f1_defined={str(self.f1_defined).lower()}",
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AbcdFeatures:
    area_px: int
    perimeter_px: int
    major_axis_px: float
    minor_axis_px: float
    asymmetry_index: float
    border_irregularity: float
    color_variance: tuple[float, float, float]
    diameter_px: float


def confusion_matrix(predictions, actuals) -> ConfusionMatrix:
    """Tally (actual, predicted) label pairs."""
    preds = list(predictions)
    acts = list(actuals)
    if not preds or len(preds) != len(acts):
        raise ContractError(
            f"need equal nonzero label lists, got {len(preds)} and {len(acts)}")
    counts = {(a, p): 0 for a in LABELS for p in LABELS}
    for p, a in zip(preds, acts):
        if p not in LABELS or a not in LABELS:
            raise ContractError(f"unknown label in ({a!r}, {p!r})")
        counts[(a, p)] += 1
    return ConfusionMatrix(
        benign_benign=counts[("benign", "benign")],
        benign_malignant=counts[("benign", "malignant")],
        malignant_benign=counts[("malignant", "benign")],
        malignant_malignant=counts[("malignant", "malignant")])


def summarize(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, misclassification, and benign-positive precision/recall/F1."""
    total = cm.total
    if total == 0:
        raise ContractError("cannot summarize an empty confusion matrix")
    correct = cm.benign_benign + cm.malignant_malignant
    accuracy_pct = 100.0 * correct / total
    tp = cm.benign_benign
    fp = cm.malignant_benign
    fn = cm.benign_malignant
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall > 0.0:
        f1 = 2.0 * precision * recall / (precision + recall)
        defined = True
    else:
        f1 = 0.0
        defined = False
    return MetricsReport(
        testing_accuracy_pct=accuracy_pct,
        misclassification_rate_pct=100.0 - accuracy_pct,
        f1_benign_positive=f1,
        precision=precision,
        recall=recall,
        sample_count=total,
        f1_defined=defined)


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks score 1."""
    ma, mb = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if ma.shape != mb.shape:
        raise DimensionError(f"mask shapes differ: {ma.shape} vs {mb.shape}")
    denom = int(ma.sum()) + int(mb.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((ma & mb).sum()) / denom


def _perimeter_edges(mask: np.ndarray) -> int:
    """Count foreground-to-background 4-neighbor edges; outside is background."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1)
    edges = 0
    for shift_ax, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        neighbor = np.roll(padded, shift, axis=shift_ax)
        edges += int((padded & ~neighbor).sum())
    return edges


def _max_pairwise_distance(points: np.ndarray) -> float:
    """Max Feret diameter over pixel centers, via the convex hull when possible."""
    if points.shape[0] == 1:
        return 0.0
    try:
        pts = points[ConvexHull(points).vertices]
    except QhullError:
        pts = points  # degenerate (collinear) sets: brute-force all pairs
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=2)).max())


def abcd_features(image: np.ndarray, mask: np.ndarray) -> AbcdFeatures:
    """Lesion shape and color descriptors from a mask and its source image.

    Area counts foreground pixels; perimeter counts exposed 4-neighbor pixel
    edges; axes come from the second central moments (length = 4*sqrt(eig));
    asymmetry is the fraction of the mask not covered by its reflection
    across the centroid-aligned major axis; border irregularity is
    perimeter^2 / (4*pi*area); color variance is per-channel over foreground
    pixels of the [0,1]-scaled image; diameter is the max Feret diameter.
    """
    m = np.asarray(mask, dtype=bool)
    img = np.asarray(image)
    if img.shape[:2] != m.shape:
        raise DimensionError(
            f"image dims {img.shape[:2]} != mask dims {m.shape}")
    if not m.any():
        raise EmptyMaskError("abcd_features requires a nonempty mask")

    ys, xs = np.nonzero(m)
    pts = np.stack([ys, xs], axis=1).astype(np.float64)
    area = int(pts.shape[0])
    perimeter = _perimeter_edges(m)

    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / area
    eigvals, eigvecs = np.linalg.eigh(cov)       # ascending eigenvalues
    minor_axis = 4.0 * np.sqrt(max(eigvals[0], 0.0))
    major_axis = 4.0 * np.sqrt(max(eigvals[1], 0.0))

    # reflect foreground pixels across the major-axis line through the centroid
    major_dir = eigvecs[:, 1]
    along = centered @ major_dir
    across = centered - np.outer(along, major_dir)
    reflected = centroid + np.outer(along, major_dir) - across
    ref_px = np.rint(reflected).astype(np.int64)
    inside = ((ref_px[:, 0] >= 0) & (ref_px[:, 0] < m.shape[0])
              & (ref_px[:, 1] >= 0) & (ref_px[:, 1] < m.shape[1]))
    covered = np.zeros(area, dtype=bool)
    covered[inside] = m[ref_px[inside, 0], ref_px[inside, 1]]
    asymmetry = 1.0 - covered.sum() / area

    irregularity = perimeter ** 2 / (4.0 * np.pi * area)
    scaled = img.reshape(-1, img.shape[2] if img.ndim == 3 else 1)[m.reshape(-1)]
    variance = (scaled.astype(np.float64) / 255.0).var(axis=0)
    color_variance = tuple(float(v) for v in variance[:3]) if variance.size >= 3 \
        else (float(variance[0]),) * 3
    diameter = _max_pairwise_distance(pts)

    return AbcdFeatures(area_px=area, perimeter_px=perimeter,
                        major_axis_px=float(major_axis),
                        minor_axis_px=float(minor_axis),
                        asymmetry_index=float(asymmetry),
                        border_irregularity=float(irregularity),
                        color_variance=color_variance,
                        diameter_px=diameter)
