"""Human mask review: HTTP service, decision log, and decision application.

Decisions land in an append-only JSONL log, fsynced before the request is
acknowledged; the effective state is a fold over the log with the latest
decision per image winning. apply_decisions() consumes the effective
decisions idempotently: every applied (image_id, seq) pair is recorded in a
marker file, so an invert flips the mask file exactly once per decision even
across repeated runs. A lock file guards against training during an open
review session.

Wire format (camelCase, JSON): GET /api/items, /api/progress; GET
/api/image/{id}, /api/mask/{id}, /api/overlay/{id} as PNG; POST
/api/decision {imageId, verdict, reviewer}. Errors carry {code, message}.
"""

from __future__ import annotations

import io
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel, Field

from . import dataset_io
from .errors import IntegrityError, NotFoundError

VERDICTS = ("accept", "invert", "exclude")

_append_lock = threading.Lock()


@dataclass(frozen=True)
class ReviewDecision:
    image_id: str
    verdict: str
    reviewer: str
    timestamp: float
    seq: int                     # position in the log; orders same-image decisions


@dataclass
class ApplySummary:
    accepted: int = 0
    inverted: int = 0
    excluded: int = 0
    training_ids: list[str] = field(default_factory=list)


def read_decisions(path: str | Path) -> list[ReviewDecision]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path) as fh:
        for seq, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(ReviewDecision(image_id=rec["image_id"],
                                      verdict=rec["verdict"],
                                      reviewer=rec.get("reviewer", ""),
                                      timestamp=rec.get("timestamp", 0.0),
                                      seq=seq))
    return out


def effective_decisions(path: str | Path) -> dict[str, ReviewDecision]:
    """Latest decision per image id (pure fold over the log)."""
    state: dict[str, ReviewDecision] = {}
    for decision in read_decisions(path):
        state[decision.image_id] = decision
    return state


def record_decision(path: str | Path, image_id: str, verdict: str,
                    reviewer: str = "") -> ReviewDecision:
    """Durably append one decision; the write is fsynced before returning."""
    if verdict not in VERDICTS:
        raise ValueError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"image_id": image_id, "verdict": verdict,
               "reviewer": reviewer, "timestamp": time.time()}
    with _append_lock:
        seq = sum(1 for line in open(path)) if path.exists() else 0
        with open(path, "a") as fh:
            fh.write(json.dumps(payload) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
    return ReviewDecision(seq=seq, **payload)


def _read_applied(path: Path) -> set[tuple[str, int]]:
    if not path.exists():
        return set()
    out = set()
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rec = json.loads(line)
                out.add((rec["image_id"], rec["seq"]))
    return out


def apply_decisions(manifest, mask_dir: str | Path,
                    decisions_path: str | Path,
                    applied_path: str | Path) -> ApplySummary:
    """Finalize the training set: invert flips mask files, exclude drops ids.

    Undecided items default to accept (the automatic orientation stands).
    Applying twice is a no-op: each (image_id, seq) flip is marked durable.
    """
    mask_dir = Path(mask_dir)
    applied_path = Path(applied_path)
    decisions = effective_decisions(decisions_path)
    applied = _read_applied(applied_path)
    summary = ApplySummary()
    new_markers = []
    for image_id, entry in sorted(manifest.mask_entries.items()):
        if entry.status != "auto":
            continue
        decision = decisions.get(image_id)
        verdict = decision.verdict if decision else "accept"
        if decision and not Path(entry.mask_path).exists():
            raise IntegrityError(
                f"decided item {image_id} has no mask file at {entry.mask_path}")
        if verdict == "exclude":
            summary.excluded += 1
            continue
        if verdict == "invert":
            key = (image_id, decision.seq)
            if key not in applied:
                mask = dataset_io.read_mask(entry.mask_path)
                dataset_io.write_mask(~mask, entry.mask_path)
                new_markers.append(key)
            summary.inverted += 1
        else:
            summary.accepted += 1
        summary.training_ids.append(image_id)
    if new_markers:
        applied_path.parent.mkdir(parents=True, exist_ok=True)
        with open(applied_path, "a") as fh:
            for image_id, seq in new_markers:
                fh.write(json.dumps({"image_id": image_id, "seq": seq}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
    return summary


# -- HTTP service --------------------------------------------------------------

class DecisionBody(BaseModel):
    image_id: str = Field(alias="imageId")
    verdict: Literal["accept", "invert", "exclude"]
    reviewer: str = ""

    model_config = {"populate_by_name": True}


def _png_bytes(arr: np.ndarray, mode: str) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def create_app(manifest_path: str | Path, decisions_path: str | Path,
               static_dir: str | Path | None = None) -> FastAPI:
    manifest_path = Path(manifest_path)
    decisions_path = Path(decisions_path)
    app = FastAPI(title="mask review service")

    def manifest():
        return dataset_io.read_manifest(manifest_path)

    def entry_or_404(image_id: str):
        m = manifest()
        entry = m.mask_entries.get(image_id)
        sample = m.sample_by_id(image_id)
        if entry is None and sample is None:
            raise NotFoundError(f"unknown image id {image_id!r}")
        return m, sample, entry

    @app.exception_handler(NotFoundError)
    async def not_found(_, exc):
        return JSONResponse(status_code=404,
                            content={"code": "not_found", "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def invalid(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"code": "validation_error",
                                     "message": json.dumps(exc.errors(), default=str)})

    @app.get("/api/items")
    def items():
        m = manifest()
        decisions = effective_decisions(decisions_path)
        out = []
        for image_id in sorted(m.mask_entries):
            entry = m.mask_entries[image_id]
            decision = decisions.get(image_id)
            out.append({
                "imageId": image_id,
                "status": entry.status,
                "borderFraction": entry.border_fraction,
                "autoInverted": entry.inverted,
                "failureReason": entry.failure_reason,
                "decision": decision.verdict if decision else None,
                "reviewer": decision.reviewer if decision else None,
                "overlayUrl": f"/api/overlay/{image_id}",
            })
        return out

    @app.get("/api/image/{image_id}")
    def image(image_id: str):
        _, sample, _ = entry_or_404(image_id)
        if sample is None:
            raise NotFoundError(f"no source image for {image_id!r}")
        arr = dataset_io.read_image(sample.image_path)
        return Response(content=_png_bytes(arr, "RGB"), media_type="image/png")

    @app.get("/api/mask/{image_id}")
    def mask(image_id: str):
        _, _, entry = entry_or_404(image_id)
        if entry is None or entry.status != "auto":
            raise NotFoundError(f"no mask available for {image_id!r}")
        m = dataset_io.read_mask(entry.mask_path)
        return Response(content=_png_bytes(m.astype(np.uint8) * 255, "L"),
                        media_type="image/png")

    @app.get("/api/overlay/{image_id}")
    def overlay(image_id: str):
        _, sample, entry = entry_or_404(image_id)
        if sample is None or entry is None or entry.status != "auto":
            raise NotFoundError(f"no overlay available for {image_id!r}")
        arr = dataset_io.read_image(sample.image_path).astype(np.float64)
        m = dataset_io.read_mask(entry.mask_path)
        red = np.array([255.0, 0.0, 0.0])
        arr[m] = 0.6 * arr[m] + 0.4 * red
        return Response(content=_png_bytes(arr.astype(np.uint8), "RGB"),
                        media_type="image/png")

    @app.post("/api/decision")
    def decide(body: DecisionBody):
        entry_or_404(body.image_id)
        decision = record_decision(decisions_path, body.image_id,
                                   body.verdict, body.reviewer)
        return {"ok": True, "imageId": decision.image_id,
                "verdict": decision.verdict, "seq": decision.seq}

    @app.get("/api/progress")
    def progress():
        m = manifest()
        decisions = effective_decisions(decisions_path)
        relevant = {i: d for i, d in decisions.items() if i in m.mask_entries}
        counts = {v: 0 for v in VERDICTS}
        for d in relevant.values():
            counts[d.verdict] += 1
        total = len(m.mask_entries)
        return {"total": total, "decided": len(relevant),
                "undecided": total - len(relevant), "verdicts": counts}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True),
                  name="ui")
    return app


def serve(manifest_path: str | Path, decisions_path: str | Path,
          port: int = 8700, static_dir: str | Path | None = None,
          lock_path: str | Path | None = None):
    """Run the review service until interrupted; holds the training lock."""
    import uvicorn

    app = create_app(manifest_path, decisions_path, static_dir)
    lock = Path(lock_path) if lock_path else None
    if lock is not None:
        lock.parent.mkdir(parents=True, exist_ok=True)
        lock.write_text(str(os.getpid()))
    try:
        uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    finally:
        if lock is not None and lock.exists():
            lock.unlink()
