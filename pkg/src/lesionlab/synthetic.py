"""Seeded synthetic dermoscopy-like corpus for desk-scale verification.

Half the images are "benign": a near-circular smooth dark ellipse with low
internal color variance. The other half are "malignant": a more eccentric
blob with a harmonically wobbled border, darker tone, speckle, and color
blotches. Both sit on a light skin-toned noisy background with a soft
illumination gradient, strictly inside the frame. Ground-truth masks are
written next to the images so annotation and segmentation quality can be
scored without human labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

TRUTH_DIR = "truth_masks"


@dataclass
class SyntheticRecord:
    image_id: str
    label: str
    image_path: str
    truth_mask_path: str


def _lesion_mask(rng: np.random.Generator, size: int, benign: bool) -> np.ndarray:
    cy, cx = size / 2 + rng.uniform(-0.12, 0.12, 2) * size
    if benign:
        a = rng.uniform(0.15, 0.22) * size
        b = a * rng.uniform(0.82, 1.0)
        amp = rng.uniform(0.0, 0.06)
        harmonics = [2, 3]
    else:
        a = rng.uniform(0.18, 0.26) * size
        b = a * rng.uniform(0.42, 0.62)
        amp = rng.uniform(0.15, 0.30)
        harmonics = [2, 3, 4, 5]
    # keep the blob strictly interior even at full wobble
    a = min(a, 0.30 * size / (1.0 + amp))
    theta = rng.uniform(0.0, np.pi)
    coeffs = rng.uniform(-1.0, 1.0, len(harmonics)) * amp / max(len(harmonics) - 1, 1)
    phases = rng.uniform(0.0, 2 * np.pi, len(harmonics))

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    rad = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    phi = np.arctan2(v / b, u / a)
    wobble = np.ones_like(phi)
    for k, c, p in zip(harmonics, coeffs, phases):
        wobble += c * np.sin(k * phi + p)
    return rad <= np.maximum(wobble, 0.3)


def _render(rng: np.random.Generator, size: int, mask: np.ndarray,
            benign: bool) -> np.ndarray:
    img = np.empty((size, size, 3), dtype=np.float64)
    bg = np.array([205.0, 172.0, 150.0]) + rng.uniform(-10, 10, 3)
    grad_dir = rng.uniform(-1.0, 1.0, 2)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    gradient = 8.0 * (grad_dir[0] * (yy - 0.5) + grad_dir[1] * (xx - 0.5))
    img[:] = bg
    img += gradient[:, :, None]
    img += rng.normal(0.0, 5.0, (size, size, 3))

    if benign:
        tone = np.array([128.0, 92.0, 74.0]) + rng.uniform(-8, 8, 3)
        lesion = tone + rng.normal(0.0, 4.0, (size, size, 3))
    else:
        tone = np.array([95.0, 62.0, 52.0]) + rng.uniform(-10, 10, 3)
        lesion = tone + rng.normal(0.0, 10.0, (size, size, 3))
        ys, xs = np.nonzero(mask)
        for _ in range(rng.integers(2, 5)):
            i = rng.integers(len(ys))
            by, bx = ys[i], xs[i]
            radius = rng.uniform(2.0, 5.0)
            shift = rng.uniform(-1.0, 1.0, 3) * np.array([35.0, 25.0, 25.0])
            blob = ((np.mgrid[0:size, 0:size][0] - by) ** 2
                    + (np.mgrid[0:size, 0:size][1] - bx) ** 2) <= radius ** 2
            lesion[blob] += shift
    img[mask] = lesion[mask]
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_synthetic_corpus(n: int, image_size: int, seed: int,
                              out_dir: str | Path) -> list[SyntheticRecord]:
    """Write n/2 benign + n/2 malignant PNGs plus ground-truth masks."""
    if n < 2 or n % 2:
        raise ContractError("n must be an even number >= 2")
    from . import dataset_io

    out_dir = Path(out_dir)
    truth_dir = out_dir / TRUTH_DIR
    records = []
    half = n // 2
    for label, offset in (("benign", 0), ("malignant", half)):
        for i in range(half):
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, offset + i]))
            benign = label == "benign"
            mask = _lesion_mask(rng, image_size, benign)
            image = _render(rng, image_size, mask, benign)
            image_id = f"{label}_{i:03d}"
            image_path = out_dir / label / f"{image_id}.png"
            truth_path = truth_dir / f"{image_id}.png"
            dataset_io.write_image(image, image_path)
            dataset_io.write_mask(mask, truth_path)
            records.append(SyntheticRecord(image_id=image_id, label=label,
                                           image_path=str(image_path),
                                           truth_mask_path=str(truth_path)))
    return records
