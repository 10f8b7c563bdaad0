"""HTTP annotation service: serve face images, collect 5-point VAD judgments.

The store is an append-only JSON-lines log; every accepted write is flushed
and fsynced before the client sees a success, and replaying the log (or any
prefix of it cut at a record boundary) reconstructs the in-memory index.
Images go out as PNGs produced by a tiny fixed encoder so the bytes for a
given image never change.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
import zlib
from dataclasses import asdict, dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse, Response
from pydantic import BaseModel

from .dataset import (
    DIMENSION_DEFINITIONS,
    EMOTION_ANCHORS,
    SCALE_VALUES,
    AnnotationRecord,
    DuplicateAnnotationError,
    FaceImage,
    VadTriple,
    consistency_filter,
    vad_distribution,
    write_annotations,
)


# ---------------------------------------------------------------------------
# deterministic grayscale PNG
# ---------------------------------------------------------------------------

def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))


def encode_gray_png(pixels: np.ndarray) -> bytes:
    """8-bit grayscale PNG with a fixed filter and compression setting."""
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale array, got shape {arr.shape}")
    h, w = arr.shape
    raw = b"".join(b"\x00" + arr[y].tobytes() for y in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n"
            + _png_chunk(b"IHDR", ihdr)
            + _png_chunk(b"IDAT", zlib.compress(raw, 9))
            + _png_chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# store
# ---------------------------------------------------------------------------

@dataclass
class StoredAnnotation:
    image_index: int
    annotator_id: str
    v: int
    a: int
    d: int
    timestamp: int
    reviewed: bool = False

    def to_record(self) -> AnnotationRecord:
        return AnnotationRecord(self.image_index, self.annotator_id,
                                VadTriple.annotation(self.v, self.a, self.d),
                                self.timestamp, self.reviewed)


class AnnotationStore:
    """Append-only annotation log with an in-memory (image, annotator) index.

    Writes are serialized through one lock and made durable before the call
    returns. Overwrites append a superseding record; replay keeps the last
    one per key, so the log stays a complete audit trail.
    """

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._index: dict[tuple[int, str], StoredAnnotation] = {}
        self._replay()
        self._file = open(path, "a", encoding="utf-8", newline="\n")

    def _replay(self) -> None:
        if not os.path.exists(self.path):
            return
        with open(self.path, "r", encoding="utf-8") as f:
            content = f.read()
        for line in content.split("\n"):
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                # a torn trailing write; everything before it is intact
                break
            rec = StoredAnnotation(**obj)
            self._index[(rec.image_index, rec.annotator_id)] = rec

    def close(self) -> None:
        self._file.close()

    def get(self, image_index: int, annotator_id: str) -> StoredAnnotation | None:
        return self._index.get((image_index, annotator_id))

    def records(self) -> list[StoredAnnotation]:
        return sorted(self._index.values(),
                      key=lambda r: (r.image_index, r.annotator_id))

    def labeled_by(self, annotator_id: str) -> set[int]:
        return {idx for (idx, ann) in self._index if ann == annotator_id}

    def append(self, rec: StoredAnnotation, overwrite: bool = False) -> StoredAnnotation:
        if {rec.v, rec.a, rec.d} - set(SCALE_VALUES):
            raise ValueError(f"values must lie in {SCALE_VALUES}")
        key = (rec.image_index, rec.annotator_id)
        with self._lock:
            existing = self._index.get(key)
            if existing is not None and not overwrite:
                raise DuplicateAnnotationError(
                    f"image {rec.image_index} already labeled by {rec.annotator_id!r}")
            self._file.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
            self._file.flush()
            os.fsync(self._file.fileno())
            self._index[key] = rec
        return rec

    def export_csv(self, path) -> None:
        write_annotations([r.to_record() for r in self.records()], path)

    def export_text(self) -> str:
        lines = ["image_index,annotator_id,v,a,d,timestamp"]
        for r in self.records():
            lines.append(f"{r.image_index},{r.annotator_id},{r.v},{r.a},{r.d},{r.timestamp}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# app
# ---------------------------------------------------------------------------

class AnnotationIn(BaseModel):
    image_index: int
    annotator_id: str
    v: int
    a: int
    d: int
    overwrite: bool = False


def create_app(images: list[FaceImage], store: AnnotationStore,
               exclusions: set[int] | None = None, min_annotators: int = 1,
               max_spread: int = 1, static_dir=None) -> FastAPI:
    """Wire the annotation endpoints over an image list and a store."""
    excluded = set(exclusions or ())
    by_index = {img.index: img for img in images}
    assignable = sorted(idx for idx in by_index if idx not in excluded)

    app = FastAPI(title="vadreg annotation service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.store = store

    def _record_json(rec: StoredAnnotation) -> dict:
        return asdict(rec)

    @app.get("/api/next")
    def next_image(annotator: str = Query(default="")):
        if not annotator:
            raise HTTPException(status_code=400, detail="annotator parameter required")
        done_set = store.labeled_by(annotator)
        total = len(assignable)
        labeled = sum(1 for idx in assignable if idx in done_set)
        for idx in assignable:
            if idx not in done_set:
                return {"done": False, "image_index": idx,
                        "labeled": labeled, "total": total}
        return {"done": True, "image_index": None, "labeled": labeled, "total": total}

    @app.get("/api/image/{index}")
    def image_bytes(index: int):
        img = by_index.get(index)
        if img is None:
            raise HTTPException(status_code=404, detail=f"no image with index {index}")
        return Response(content=encode_gray_png(img.pixels), media_type="image/png")

    @app.post("/api/annotation", status_code=201)
    def post_annotation(body: AnnotationIn):
        if not body.annotator_id:
            raise HTTPException(status_code=422, detail="annotator_id must be non-empty")
        for name in ("v", "a", "d"):
            if getattr(body, name) not in SCALE_VALUES:
                raise HTTPException(
                    status_code=422,
                    detail=f"{name}={getattr(body, name)} outside the scale {SCALE_VALUES}")
        if body.image_index not in by_index:
            raise HTTPException(status_code=404,
                                detail=f"no image with index {body.image_index}")
        rec = StoredAnnotation(body.image_index, body.annotator_id,
                               body.v, body.a, body.d, int(time.time()))
        try:
            store.append(rec, overwrite=body.overwrite)
        except DuplicateAnnotationError:
            existing = store.get(body.image_index, body.annotator_id)
            raise HTTPException(status_code=409, detail={
                "message": "already annotated; resend with overwrite=true to replace",
                "existing": _record_json(existing),
            }) from None
        return _record_json(rec)

    @app.get("/api/reference")
    def reference():
        return {
            "dimensions": DIMENSION_DEFINITIONS,
            "scale": list(SCALE_VALUES),
            "anchors": [
                {"emotion": cat.value, "v": t.v, "a": t.a, "d": t.d}
                for cat, t in EMOTION_ANCHORS.items()
            ],
        }

    @app.get("/api/progress")
    def progress(annotator: str = Query(default="")):
        if not annotator:
            raise HTTPException(status_code=400, detail="annotator parameter required")
        done_set = store.labeled_by(annotator)
        labeled = sum(1 for idx in assignable if idx in done_set)
        return {"annotator": annotator, "labeled": labeled, "total": len(assignable)}

    @app.get("/api/stats")
    def stats():
        records = [r.to_record() for r in store.records()]
        result = consistency_filter(records, min_annotators=min_annotators,
                                    max_spread=max_spread)
        table = vad_distribution(result.accepted.values())
        return {
            "values": list(SCALE_VALUES),
            "counts": {"v": table[0].tolist(), "a": table[1].tolist(),
                       "d": table[2].tolist()},
            "accepted": len(result.accepted),
            "rejected": len(result.rejected),
        }

    @app.get("/api/export", response_class=PlainTextResponse)
    def export():
        return store.export_text()

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
