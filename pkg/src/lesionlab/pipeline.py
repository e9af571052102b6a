"""End-to-end orchestration: annotate, train U-Net, segment, classify, evaluate.

Stages communicate only through files under the work directory:

    masks/         auto-generated annotation masks (0/255 PNG)
    manifest.jsonl corpus samples + mask records
    decisions.jsonl / applied.jsonl   review log and applied markers
    models/        unet.ckpt, lenet.ckpt
    pred_masks/    U-Net predictions for every corpus image
    reports/       one JSON report per completed stage
    metrics.txt    final flat key/value metrics record

Each stage validates that its upstream artifacts exist and records processed
and skipped counts; skipped samples (empty predicted mask, unreadable file)
never abort a batch.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset_io
from .annotation import AnnotationConfig, annotate_corpus
from .errors import (
    ConfigError,
    DependencyError,
    DimensionError,
    EmptyMaskError,
    NoInputError,
)
from .metrics import confusion_matrix, summarize
from .networks import (
    Checkpoint,
    NetworkSpec,
    TrainConfig,
    build_lenet5,
    build_unet,
    classify,
    restore_network,
    segment,
    train_classifier,
    train_segmentation,
)

STAGES = ("annotate", "train-unet", "segment", "train-classifier", "evaluate")


# -- resampling --------------------------------------------------------------

def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize of an (H, W[, C]) array."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0f, x0f = np.floor(ys), np.floor(xs)
    wy, wx = ys - y0f, xs - x0f
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)
    if img.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
        top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
        bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    else:
        wy = wy[:, None]
        wx = wx[None, :]
        top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
        bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize; binary masks stay binary."""
    m = np.asarray(mask)
    h, w = m.shape[:2]
    if (h, w) == (out_h, out_w):
        return m.copy()
    ys = np.clip(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.int64), 0, h - 1)
    xs = np.clip(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.int64), 0, w - 1)
    return m[ys][:, xs]


# -- mask application and cropping -------------------------------------------

def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Pixelwise AND: background outside the mask becomes exactly zero."""
    img = np.asarray(image)
    m = np.asarray(mask, dtype=bool)
    if img.shape[:2] != m.shape:
        raise DimensionError(f"image {img.shape[:2]} vs mask {m.shape}")
    return img * m[:, :, None].astype(img.dtype)


def foreground_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Inclusive (y0, x0, y1, x1) bounds of the mask foreground."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyMaskError("cannot take bounding box of an empty mask")
    rows = np.nonzero(m.any(axis=1))[0]
    cols = np.nonzero(m.any(axis=0))[0]
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def mask_and_crop(image: np.ndarray, mask: np.ndarray, crop_size: int) -> np.ndarray:
    """AND the mask onto the image, crop to its bounding box, resize square."""
    anded = apply_mask(image, mask)
    y0, x0, y1, x1 = foreground_bbox(mask)
    window = anded[y0:y1 + 1, x0:x1 + 1]
    resized = resize_bilinear(window, crop_size, crop_size)
    return np.clip(np.rint(resized), 0, 255).astype(np.uint8)


# -- configuration -----------------------------------------------------------

_UNET_SPEC_KEYS = {"input_size", "depth", "base_channels"}
_TRAIN_KEYS = {"iterations", "learning_rate", "beta1", "beta2", "epsilon",
               "batch_size", "seed"}
_ANNOTATION_KEYS = {"cluster_count", "spatial_weight", "restarts", "max_iter",
                    "tol", "seed"}
_TOP_KEYS = {"corpus_root", "work_dir", "seed", "split", "mask_threshold",
             "crop_size", "annotation", "unet", "unet_train", "lenet_train"}


@dataclass
class PipelineConfig:
    corpus_root: str
    work_dir: str
    seed: int = 0
    split: str = "train:0.8"
    mask_threshold: float = 0.5
    crop_size: int = 32
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    unet_spec: NetworkSpec = field(default_factory=lambda: NetworkSpec(
        kind="unet", input_size=(3, 64, 64), depth=4, base_channels=8))
    unet_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        iterations=2000, learning_rate=1e-3, batch_size=2))
    lenet_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        iterations=1500, learning_rate=1e-3, batch_size=8))

    def __post_init__(self):
        if not 0.0 < self.mask_threshold < 1.0:
            raise ConfigError("mask_threshold must lie in (0, 1)")
        if self.crop_size < 8:
            raise ConfigError("crop_size must be >= 8")

    def paths(self) -> dict[str, Path]:
        work = Path(self.work_dir)
        return {
            "work": work,
            "masks": work / "masks",
            "manifest": work / "manifest.jsonl",
            "decisions": work / "decisions.jsonl",
            "applied": work / "applied.jsonl",
            "lock": work / "review.lock",
            "models": work / "models",
            "unet_ckpt": work / "models" / "unet.ckpt",
            "lenet_ckpt": work / "models" / "lenet.ckpt",
            "pred_masks": work / "pred_masks",
            "reports": work / "reports",
            "metrics": work / "metrics.txt",
        }


def _check_keys(d: dict, allowed: set[str], where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")


def config_from_dict(raw: dict) -> PipelineConfig:
    """Build a PipelineConfig from parsed JSON; unknown keys are errors."""
    _check_keys(raw, _TOP_KEYS, "top-level")
    if "corpus_root" not in raw or "work_dir" not in raw:
        raise ConfigError("config requires corpus_root and work_dir")
    seed = int(raw.get("seed", 0))

    ann_raw = dict(raw.get("annotation", {}))
    _check_keys(ann_raw, _ANNOTATION_KEYS, "annotation")
    ann_raw.setdefault("seed", seed)
    annotation = AnnotationConfig(**ann_raw)

    unet_raw = dict(raw.get("unet", {}))
    _check_keys(unet_raw, _UNET_SPEC_KEYS, "unet")
    unet_raw.setdefault("input_size", [3, 64, 64])
    unet_spec = NetworkSpec(kind="unet",
                            input_size=tuple(unet_raw["input_size"]),
                            depth=int(unet_raw.get("depth", 4)),
                            base_channels=int(unet_raw.get("base_channels", 8)))

    def train_cfg(key: str, defaults: dict) -> TrainConfig:
        t_raw = dict(raw.get(key, {}))
        _check_keys(t_raw, _TRAIN_KEYS, key)
        merged = {**defaults, **t_raw}
        merged.setdefault("seed", seed)
        return TrainConfig(**merged)

    return PipelineConfig(
        corpus_root=str(raw["corpus_root"]),
        work_dir=str(raw["work_dir"]),
        seed=seed,
        split=str(raw.get("split", "train:0.8")),
        mask_threshold=float(raw.get("mask_threshold", 0.5)),
        crop_size=int(raw.get("crop_size", 32)),
        annotation=annotation,
        unet_spec=unet_spec,
        unet_train=train_cfg("unet_train",
                             dict(iterations=2000, learning_rate=1e-3, batch_size=2)),
        lenet_train=train_cfg("lenet_train",
                              dict(iterations=1500, learning_rate=1e-3, batch_size=8)),
    )


def load_config(path: str | Path) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


def apply_paper_preset(config: PipelineConfig) -> PipelineConfig:
    """Swap in the full-scale settings: 256x256 input, 25000 iterations."""
    return dataclasses.replace(
        config,
        unet_spec=dataclasses.replace(config.unet_spec, input_size=(3, 256, 256)),
        unet_train=dataclasses.replace(config.unet_train, iterations=25000),
    )


def write_loss_log(ckpt: Checkpoint, path: str | Path):
    """Export a checkpoint's training log, one loss value per line."""
    Path(path).write_text(
        "".join(f"{value!r}\n" for value in ckpt.training_log))


# -- stage reports -----------------------------------------------------------

@dataclass
class StageReport:
    stage: str
    processed: int
    skipped: int
    inputs: list[str]
    outputs: list[str]
    wall_time_s: float
    seed: int
    skipped_ids: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def write(self, reports_dir: Path):
        reports_dir.mkdir(parents=True, exist_ok=True)
        payload = dataclasses.asdict(self)
        (reports_dir / f"{self.stage}.json").write_text(
            json.dumps(payload, indent=2) + "\n")


def _finish(report: StageReport, config: PipelineConfig, t0: float) -> StageReport:
    report.wall_time_s = round(time.time() - t0, 3)
    report.write(config.paths()["reports"])
    return report


# -- stages ------------------------------------------------------------------

def stage_annotate(config: PipelineConfig) -> StageReport:
    t0 = time.time()
    paths = config.paths()
    corpus = dataset_io.load_corpus(config.corpus_root, config.split, config.seed)
    records = []
    for label in ("benign", "malignant"):
        records.extend(annotate_corpus(Path(config.corpus_root) / label,
                                       paths["masks"], config.annotation))
    for rec in records:
        corpus.mask_entries[rec.image_id] = rec
    dataset_io.write_manifest(corpus, paths["manifest"])
    failed = [r.image_id for r in records if r.status == "failed"]
    return _finish(StageReport(
        stage="annotate",
        processed=len(records) - len(failed),
        skipped=len(failed),
        inputs=[config.corpus_root],
        outputs=[str(paths["masks"]), str(paths["manifest"])],
        wall_time_s=0.0,
        seed=config.seed,
        skipped_ids=failed,
        details={"counts": corpus.counts()}), config, t0)


def _load_training_pairs(config: PipelineConfig, manifest, training_ids):
    """Images and reviewed masks resized to the U-Net input resolution."""
    _, in_h, in_w = config.unet_spec.input_size
    images, masks, used = [], [], []
    for sample in manifest.samples:
        if sample.split != "train" or sample.image_id not in training_ids:
            continue
        entry = manifest.mask_entries.get(sample.image_id)
        if entry is None or entry.status != "auto":
            continue
        image = dataset_io.read_image(sample.image_path)
        mask = dataset_io.read_mask(entry.mask_path)
        img_r = resize_bilinear(image, in_h, in_w) / 255.0
        mask_r = resize_nearest(mask, in_h, in_w)
        images.append(img_r.transpose(2, 0, 1))
        masks.append(mask_r)
        used.append(sample.image_id)
    return images, masks, used


def _review_lock_held(lock: Path) -> bool:
    """True when the lock file names a live process; stale locks are removed."""
    if not lock.exists():
        return False
    try:
        pid = int(lock.read_text().strip())
        os.kill(pid, 0)
        return True
    except (ValueError, ProcessLookupError):
        lock.unlink(missing_ok=True)
        return False
    except PermissionError:
        return True


def stage_train_unet(config: PipelineConfig) -> StageReport:
    from .review import apply_decisions

    t0 = time.time()
    paths = config.paths()
    if not paths["manifest"].exists():
        raise DependencyError(f"missing manifest {paths['manifest']}; run annotate first")
    if _review_lock_held(paths["lock"]):
        raise DependencyError(
            f"review session open (lock file {paths['lock']} present)")
    manifest = dataset_io.read_manifest(paths["manifest"])
    summary = apply_decisions(manifest, paths["masks"],
                              decisions_path=paths["decisions"],
                              applied_path=paths["applied"])
    images, masks, used = _load_training_pairs(config, manifest,
                                               set(summary.training_ids))
    if not images:
        raise NoInputError("no usable training samples after review decisions")
    net = build_unet(config.unet_spec, seed=config.unet_train.seed)
    ckpt = train_segmentation(net, images, masks, config.unet_train)
    dataset_io.save_checkpoint(ckpt, paths["unet_ckpt"])
    write_loss_log(ckpt, paths["unet_ckpt"].with_suffix(".loss.log"))
    return _finish(StageReport(
        stage="train-unet",
        processed=len(images),
        skipped=summary.excluded,
        inputs=[str(paths["manifest"]), str(paths["masks"])],
        outputs=[str(paths["unet_ckpt"])],
        wall_time_s=0.0,
        seed=config.unet_train.seed,
        details={"final_loss": ckpt.training_log[-1],
                 "first_loss": ckpt.training_log[0],
                 "review": {"accepted": summary.accepted,
                            "inverted": summary.inverted,
                            "excluded": summary.excluded}}), config, t0)


def stage_segment(config: PipelineConfig) -> StageReport:
    t0 = time.time()
    paths = config.paths()
    if not paths["unet_ckpt"].exists():
        raise DependencyError(f"missing U-Net checkpoint {paths['unet_ckpt']}")
    if not paths["manifest"].exists():
        raise DependencyError(f"missing manifest {paths['manifest']}")
    manifest = dataset_io.read_manifest(paths["manifest"])
    ckpt = dataset_io.load_checkpoint(paths["unet_ckpt"])
    net = restore_network(ckpt)
    _, in_h, in_w = config.unet_spec.input_size
    paths["pred_masks"].mkdir(parents=True, exist_ok=True)
    processed, skipped = 0, []
    for sample in manifest.samples:
        try:
            image = dataset_io.read_image(sample.image_path)
            resized = resize_bilinear(image, in_h, in_w) / 255.0
            pred = segment(resized.transpose(2, 0, 1), net, config.mask_threshold)
            pred_full = resize_nearest(pred, image.shape[0], image.shape[1])
            dataset_io.write_mask(pred_full,
                                  paths["pred_masks"] / f"{sample.image_id}.png")
            processed += 1
        except Exception:  # noqa: BLE001 - per-image isolation
            skipped.append(sample.image_id)
    return _finish(StageReport(
        stage="segment",
        processed=processed,
        skipped=len(skipped),
        inputs=[str(paths["unet_ckpt"]), str(paths["manifest"])],
        outputs=[str(paths["pred_masks"])],
        wall_time_s=0.0,
        seed=config.seed,
        skipped_ids=skipped), config, t0)


def _collect_crops(config: PipelineConfig, manifest, split: str):
    """AND-crop every sample of a split with its predicted mask."""
    paths = config.paths()
    crops, labels, ids, skipped = [], [], [], []
    for sample in manifest.samples:
        if sample.split != split:
            continue
        mask_path = paths["pred_masks"] / f"{sample.image_id}.png"
        try:
            if not mask_path.exists():
                raise DependencyError(f"missing predicted mask {mask_path}")
            image = dataset_io.read_image(sample.image_path)
            mask = dataset_io.read_mask(mask_path)
            crop = mask_and_crop(image, mask, config.crop_size)
            crops.append((crop.astype(np.float64) / 255.0).transpose(2, 0, 1))
            labels.append(sample.label)
            ids.append(sample.image_id)
        except Exception:  # noqa: BLE001 - empty masks / missing files skip the sample
            skipped.append(sample.image_id)
    return crops, labels, ids, skipped


def stage_train_classifier(config: PipelineConfig) -> StageReport:
    t0 = time.time()
    paths = config.paths()
    if not paths["pred_masks"].exists():
        raise DependencyError(f"missing predicted masks {paths['pred_masks']}; run segment")
    manifest = dataset_io.read_manifest(paths["manifest"])
    crops, labels, _, skipped = _collect_crops(config, manifest, "train")
    if not crops:
        raise NoInputError("no usable crops for classifier training")
    spec = NetworkSpec(kind="lenet5",
                       input_size=(3, config.crop_size, config.crop_size))
    net = build_lenet5(spec, seed=config.lenet_train.seed)
    ckpt = train_classifier(net, crops, labels, config.lenet_train)
    dataset_io.save_checkpoint(ckpt, paths["lenet_ckpt"])
    write_loss_log(ckpt, paths["lenet_ckpt"].with_suffix(".loss.log"))
    return _finish(StageReport(
        stage="train-classifier",
        processed=len(crops),
        skipped=len(skipped),
        inputs=[str(paths["pred_masks"]), str(paths["manifest"])],
        outputs=[str(paths["lenet_ckpt"])],
        wall_time_s=0.0,
        seed=config.lenet_train.seed,
        skipped_ids=skipped,
        details={"final_loss": ckpt.training_log[-1]}), config, t0)


def stage_evaluate(config: PipelineConfig) -> StageReport:
    t0 = time.time()
    paths = config.paths()
    if not paths["lenet_ckpt"].exists():
        raise DependencyError(f"missing classifier checkpoint {paths['lenet_ckpt']}")
    manifest = dataset_io.read_manifest(paths["manifest"])
    ckpt = dataset_io.load_checkpoint(paths["lenet_ckpt"])
    net = restore_network(ckpt)
    crops, actuals, ids, skipped = _collect_crops(config, manifest, "test")
    if not crops:
        raise NoInputError("no usable test crops to evaluate")
    predictions = [classify(crop, net)[0] for crop in crops]
    cm = confusion_matrix(predictions, actuals)
    report = summarize(cm)
    # training accuracy is logged for reference, never asserted
    train_crops, train_actuals, _, _ = _collect_crops(config, manifest, "train")
    if train_crops:
        train_preds = [classify(crop, net)[0] for crop in train_crops]
        train_acc = 100.0 * sum(p == a for p, a in zip(train_preds, train_actuals)) \
            / len(train_preds)
    else:
        train_acc = float("nan")
    paths["metrics"].write_text(report.to_text()
                                + f"training_accuracy_pct={train_acc:.2f}\n")
    return _finish(StageReport(
        stage="evaluate",
        processed=len(crops),
        skipped=len(skipped),
        inputs=[str(paths["lenet_ckpt"]), str(paths["pred_masks"])],
        outputs=[str(paths["metrics"])],
        wall_time_s=0.0,
        seed=config.seed,
        skipped_ids=skipped,
        details={"confusion": {"benign_benign": cm.benign_benign,
                               "benign_malignant": cm.benign_malignant,
                               "malignant_benign": cm.malignant_benign,
                               "malignant_malignant": cm.malignant_malignant},
                 "testing_accuracy_pct": report.testing_accuracy_pct,
                 "training_accuracy_pct": train_acc,
                 "f1_benign_positive": report.f1_benign_positive,
                 "misclassification_rate_pct": report.misclassification_rate_pct}),
        config, t0)


_STAGE_FUNCS = {
    "annotate": stage_annotate,
    "train-unet": stage_train_unet,
    "segment": stage_segment,
    "train-classifier": stage_train_classifier,
    "evaluate": stage_evaluate,
}


def run_stage(stage: str, config: PipelineConfig) -> StageReport:
    if stage not in _STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    return _STAGE_FUNCS[stage](config)


def run_pipeline(config: PipelineConfig) -> list[StageReport]:
    """All five stages in order; returns their reports."""
    return [run_stage(stage, config) for stage in STAGES]
