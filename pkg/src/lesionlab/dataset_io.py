"""Corpus ingestion, image/mask files, manifest persistence, checkpoints.

Corpus layout: root/benign/*.png|jpg and root/malignant/*.png|jpg. Masks are
always written as 8-bit grayscale PNG with values 0/255 so round trips are
bit-exact; any nonzero pixel reads back as foreground.

The manifest is line-delimited JSON. The first line is a header carrying the
format version; every other line is a record tagged "sample" or "mask".
Records are append-only: re-annotating appends fresh mask records and readers
fold the file with last-writer-wins per (record, image_id).

Checkpoint container (replaces a heavyweight scientific format on purpose):

    bytes 0..7    magic "LLCKPT01"
    bytes 8..15   header length, uint64 little-endian
    header        UTF-8 JSON: format version, network spec, seed, iteration
                  count, training log, sha256 of the payload, and a tensor
                  index of (name, shape, offset, nbytes)
    payload       concatenated raw float64 little-endian tensor blocks
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .annotation import MaskRecord
from .errors import (
    CollisionError,
    ContractError,
    CorruptCheckpointError,
    FormatError,
    LayoutError,
    SpecMismatchError,
)
from .networks import Checkpoint, NetworkSpec

MANIFEST_VERSION = 1
CHECKPOINT_MAGIC = b"LLCKPT01"
CHECKPOINT_VERSION = 1

LABELS = ("benign", "malignant")
MIN_PIXELS = 64  # refuse degenerate corpus images


# -- images and masks --------------------------------------------------------

def read_image(path: str | Path) -> np.ndarray:
    """Decode an image file to (H, W, 3) uint8; degenerate sizes are refused."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc
    if arr.shape[0] * arr.shape[1] < MIN_PIXELS:
        raise FormatError(f"image {path} is degenerate ({arr.shape[0]}x{arr.shape[1]})")
    return arr


def write_image(image: np.ndarray, path: str | Path):
    arr = np.asarray(image, dtype=np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def write_mask(mask: np.ndarray, path: str | Path):
    """Store a binary mask as 0/255 grayscale PNG."""
    m = np.asarray(mask, dtype=bool)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((m * np.uint8(255)), mode="L").save(path, format="PNG")


def read_mask(path: str | Path) -> np.ndarray:
    """Load a mask PNG; any nonzero value counts as foreground."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise FormatError(f"cannot decode mask {path}: {exc}") from exc
    return arr > 0


# -- corpus ------------------------------------------------------------------

@dataclass
class LabeledSample:
    image_id: str
    image_path: str
    label: str                   # benign | malignant
    split: str                   # train | test

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "image_path": self.image_path,
                "label": self.label, "split": self.split}


@dataclass
class CorpusManifest:
    samples: list[LabeledSample] = field(default_factory=list)
    mask_entries: dict[str, MaskRecord] = field(default_factory=dict)

    def sample_by_id(self, image_id: str) -> LabeledSample | None:
        for s in self.samples:
            if s.image_id == image_id:
                return s
        return None

    def counts(self) -> dict:
        out: dict[str, int] = {}
        for s in self.samples:
            out[f"{s.label}/{s.split}"] = out.get(f"{s.label}/{s.split}", 0) + 1
        return out


def _parse_split_spec(split_spec: str) -> tuple[str, object]:
    if split_spec.startswith("train:"):
        frac = float(split_spec.split(":", 1)[1])
        if not 0.0 < frac < 1.0:
            raise ContractError(f"train fraction must be in (0, 1), got {frac}")
        return "fraction", frac
    if split_spec.startswith("file:"):
        path = Path(split_spec.split(":", 1)[1])
        if not path.exists():
            raise LayoutError(f"split list file not found: {path}")
        mapping = json.loads(path.read_text())
        return "explicit", mapping
    raise ContractError(f"unrecognized split spec {split_spec!r}")


def load_corpus(root: str | Path, split_spec: str = "train:0.8",
                seed: int = 0) -> CorpusManifest:
    """Enumerate benign/ and malignant/ deterministically and assign splits."""
    root = Path(root)
    mode, arg = _parse_split_spec(split_spec)
    per_label: dict[str, list[Path]] = {}
    for label in LABELS:
        class_dir = root / label
        if not class_dir.is_dir():
            raise LayoutError(f"missing class directory {class_dir}")
        per_label[label] = sorted(
            p for p in class_dir.iterdir()
            if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    seen: dict[str, str] = {}
    for label in LABELS:
        for p in per_label[label]:
            if p.stem in seen:
                raise CollisionError(
                    f"image id {p.stem!r} appears under both {seen[p.stem]} and {label}")
            seen[p.stem] = label

    samples: list[LabeledSample] = []
    for label in LABELS:
        paths = per_label[label]
        if mode == "fraction":
            rng = np.random.default_rng(np.random.SeedSequence([seed, LABELS.index(label)]))
            order = rng.permutation(len(paths))
            n_train = int(round(arg * len(paths)))
            train_ids = {paths[i].stem for i in order[:n_train]}
            split_of = lambda p: "train" if p.stem in train_ids else "test"  # noqa: E731
        else:
            split_of = lambda p: arg.get(p.stem, "train")  # noqa: E731
        for p in paths:
            samples.append(LabeledSample(image_id=p.stem, image_path=str(p),
                                         label=label, split=split_of(p)))
    return CorpusManifest(samples=samples)


# -- manifest persistence ----------------------------------------------------

def write_manifest(manifest: CorpusManifest, path: str | Path):
    """Write the full manifest (header, samples, mask entries)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"record": "header", "version": MANIFEST_VERSION}) + "\n")
        for s in manifest.samples:
            fh.write(json.dumps({"record": "sample", **s.to_dict()}) + "\n")
        for rec in manifest.mask_entries.values():
            fh.write(json.dumps({"record": "mask", **rec.to_dict()}) + "\n")


def append_mask_records(records: list[MaskRecord], path: str | Path):
    """Append fresh mask records; readers fold with last-writer-wins."""
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps({"record": "mask", **rec.to_dict()}) + "\n")


def read_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    if not path.exists():
        raise LayoutError(f"manifest not found: {path}")
    manifest = CorpusManifest()
    with open(path) as fh:
        first = fh.readline()
        header = json.loads(first)
        if header.get("record") != "header":
            raise FormatError(f"manifest {path} missing header line")
        if header.get("version") != MANIFEST_VERSION:
            raise FormatError(
                f"manifest version {header.get('version')} unsupported")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kind = rec.pop("record", None)
            if kind == "sample":
                manifest.samples.append(LabeledSample(**rec))
            elif kind == "mask":
                manifest.mask_entries[rec["image_id"]] = MaskRecord(**rec)
            else:
                raise FormatError(f"unknown manifest record kind {kind!r}")
    return manifest


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks: list[bytes] = []
    index = []
    offset = 0
    for name in sorted(ckpt.parameters):
        arr = np.ascontiguousarray(ckpt.parameters[name], dtype="<f8")
        raw = arr.tobytes()
        index.append({"name": name, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blocks.append(raw)
        offset += len(raw)
    payload = b"".join(blocks)
    header = {
        "version": CHECKPOINT_VERSION,
        "spec": ckpt.spec.to_dict(),
        "seed": ckpt.seed,
        "iteration_count": ckpt.iteration_count,
        "training_log": ckpt.training_log,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "tensors": index,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path: str | Path,
                    expected_spec: NetworkSpec | None = None) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorruptCheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path} is not a checkpoint (bad magic)")
    try:
        header_len = struct.unpack("<Q", raw[8:16])[0]
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path} has a corrupt header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(
            f"{path}: unsupported checkpoint version {header.get('version')}")
    payload = raw[16 + header_len:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CorruptCheckpointError(f"{path}: payload integrity check failed")
    spec = NetworkSpec.from_dict(header["spec"])
    if expected_spec is not None and spec != expected_spec:
        raise SpecMismatchError(
            f"{path} was trained with spec {spec}, requested {expected_spec}")
    params = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start:start + n], dtype="<f8")
        params[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return Checkpoint(spec=spec, parameters=params,
                      training_log=list(header["training_log"]),
                      seed=header["seed"],
                      iteration_count=header["iteration_count"])
