"""Annotation service core and its FastAPI wrapper.

``AnnotationService`` owns the task pool logic (lease-with-TTL, per-task
deterministic caption shuffle, idempotent submission into the preference
store); ``create_app`` exposes it over HTTP+JSON. All submissions funnel
through one lock around the store append, so the store sees a single
writer while reads serve consistent in-memory snapshots.

A task is one image. Its id, and therefore its caption shuffle, is a pure
function of the image id: a re-issued task always presents captions in
the same order, no matter which labeler receives it.
"""

from __future__ import annotations

import random
import threading
import time
from datetime import datetime, timezone
from typing import Callable, Iterable, Optional

from ..errors import (
    CaprankError,
    LeaseExpired,
    UnknownImage,
    UnknownLabeler,
    UnknownTask,
)
from ..store import CriteriaAnnotation, PreferenceDataset, PreferenceRecord
from .leases import LeaseTable
from .schemas import (
    CaptionPayload,
    ErrorResponse,
    LeasePayload,
    ProgressResponse,
    SubmitRequest,
    SubmitResponse,
    TaskResponse,
    PAYLOAD_SCHEMA_VERSION,
)

TASK_PREFIX = "task:"


class NoTasksRemaining:
    """Sentinel result: every eligible task is annotated or leased."""


def task_id_for_image(image_id: str) -> str:
    return f"{TASK_PREFIX}{image_id}"


def image_id_for_task(task_id: str) -> str:
    if not task_id.startswith(TASK_PREFIX):
        raise UnknownTask(task_id)
    return task_id[len(TASK_PREFIX):]


class AnnotationService:
    def __init__(
        self,
        store: PreferenceDataset,
        labelers: Optional[Iterable[str]] = None,
        lease_ttl: float = 1800.0,
        replication: int = 1,
        clock: Callable[[], float] = time.time,
    ):
        """``labelers`` is the registered set; empty/None admits any id.

        ``replication`` is how many distinct labelers must rank an image
        before its task leaves the pool.
        """
        if replication < 1:
            raise ValueError("replication must be >= 1")
        self.store = store
        self.labelers = set(labelers) if labelers else None
        self.replication = replication
        self.clock = clock
        self.leases = LeaseTable(ttl_seconds=lease_ttl, clock=clock)
        self._write_lock = threading.Lock()

    # -- helpers -----------------------------------------------------------

    def _check_labeler(self, labeler_id: str):
        if not labeler_id:
            raise UnknownLabeler("labeler id missing")
        if self.labelers is not None and labeler_id not in self.labelers:
            raise UnknownLabeler(labeler_id)

    def _eligible_images(self) -> list[str]:
        return [
            image_id
            for image_id in sorted(self.store.images)
            if len(self.store.captions[image_id]) >= 2
        ]

    def _annotation_count(self, image_id: str) -> int:
        return len({r.labeler_id for r in self.store.records if r.image_id == image_id})

    def shuffled_captions(self, image_id: str) -> list[CaptionPayload]:
        captions = sorted(self.store.captions_of(image_id).values(), key=lambda c: c.caption_id)
        random.Random(task_id_for_image(image_id)).shuffle(captions)
        return [CaptionPayload(caption_id=c.caption_id, text=c.text) for c in captions]

    # -- operations -----------------------------------------------------------

    def next_task(self, labeler_id: str):
        """Lease the first open task for this labeler, or NoTasksRemaining."""
        self._check_labeler(labeler_id)
        with self._write_lock:
            for image_id in self._eligible_images():
                if self.store.has_record(image_id, labeler_id):
                    continue
                if self._annotation_count(image_id) >= self.replication:
                    continue
                task_id = task_id_for_image(image_id)
                holder = self.leases.holder(task_id)
                if holder is not None and holder.labeler_id != labeler_id:
                    continue
                lease = self.leases.acquire(task_id, labeler_id)
                if lease is None:
                    continue
                return TaskResponse(
                    task_id=task_id,
                    image_id=image_id,
                    image_uri=self.store.images[image_id].uri,
                    captions=self.shuffled_captions(image_id),
                    lease=LeasePayload(labeler_id=labeler_id, expires_at=lease.expires_at),
                )
            return NoTasksRemaining()

    def submit(self, payload: SubmitRequest) -> SubmitResponse:
        """Record a ranking; idempotent per (task, labeler).

        A retry after the store already holds this labeler's record for the
        image returns the original record id without touching the store,
        even if the lease has lapsed in between.
        """
        self._check_labeler(payload.labeler_id)
        image_id = image_id_for_task(payload.task_id)
        if image_id not in self.store.images:
            raise UnknownTask(payload.task_id)

        record_id = f"{image_id}:{payload.labeler_id}"
        with self._write_lock:
            if self.store.has_record(image_id, payload.labeler_id):
                return SubmitResponse(record_id=record_id)
            if not self.leases.is_held_by(payload.task_id, payload.labeler_id):
                raise LeaseExpired(
                    f"no active lease on {payload.task_id} for {payload.labeler_id}"
                )
            record = PreferenceRecord(
                record_id=record_id,
                image_id=image_id,
                labeler_id=payload.labeler_id,
                ranking=[tuple(group) for group in payload.ranking],
                criteria={
                    cid: CriteriaAnnotation(
                        accuracy=c.accuracy,
                        completeness=c.completeness,
                        vividness=c.vividness,
                        context=c.context,
                    )
                    for cid, c in payload.criteria.items()
                },
                timestamp=datetime.fromtimestamp(self.clock(), tz=timezone.utc),
            )
            self.store.append_record(record)
            self.leases.release(payload.task_id, payload.labeler_id)
            return SubmitResponse(record_id=record_id)

    def progress(self) -> ProgressResponse:
        with self._write_lock:
            eligible = self._eligible_images()
            per_labeler: dict[str, int] = {}
            for rec in self.store.records:
                per_labeler[rec.labeler_id] = per_labeler.get(rec.labeler_id, 0) + 1
            annotated = sum(
                1 for img in eligible if self._annotation_count(img) >= self.replication
            )
            return ProgressResponse(
                total_tasks=len(eligible),
                annotated=annotated,
                leased=self.leases.active_count(),
                per_labeler=per_labeler,
            )


_ERROR_STATUS = {
    "UnknownLabeler": 403,
    "UnknownTask": 404,
    "UnknownImage": 404,
    "LeaseExpired": 409,
    "RankingNotPartition": 422,
    "UnknownCaption": 422,
    "DuplicateRecordId": 409,
    "InvalidField": 422,
}


def create_app(service: AnnotationService, ui_dir: Optional[str] = None):
    """Build the FastAPI app around a service instance."""
    from fastapi import FastAPI, Query
    from fastapi.responses import FileResponse, JSONResponse, RedirectResponse
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="caprank annotation service")
    app.state.service = service
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(CaprankError)
    async def caprank_error_handler(request, exc: CaprankError):
        status = _ERROR_STATUS.get(exc.name, 400)
        return JSONResponse(
            status_code=status,
            content=ErrorResponse(error=exc.name, detail=str(exc)).model_dump(),
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "schema_version": PAYLOAD_SCHEMA_VERSION}

    @app.get("/task")
    def get_task(labeler: str = Query(...)):
        result = service.next_task(labeler)
        if isinstance(result, NoTasksRemaining):
            return JSONResponse(
                status_code=404,
                content=ErrorResponse(
                    error="NoTasksRemaining",
                    detail="all tasks are annotated or currently leased",
                ).model_dump(),
            )
        return result

    @app.post("/submit", response_model=SubmitResponse)
    def post_submit(payload: SubmitRequest):
        if payload.schema_version != PAYLOAD_SCHEMA_VERSION:
            return JSONResponse(
                status_code=409,
                content=ErrorResponse(
                    error="SchemaVersionMismatch",
                    detail=f"service speaks schema {PAYLOAD_SCHEMA_VERSION}, "
                    f"payload carries {payload.schema_version}",
                ).model_dump(),
            )
        return service.submit(payload)

    @app.get("/progress", response_model=ProgressResponse)
    def get_progress():
        return service.progress()

    @app.get("/image/{image_id}")
    def get_image(image_id: str):
        if image_id not in service.store.images:
            raise UnknownImage(image_id)
        uri = service.store.images[image_id].uri
        if uri.startswith(("http://", "https://")):
            return RedirectResponse(uri)
        import os

        if os.path.exists(uri):
            return FileResponse(uri)
        return JSONResponse(
            status_code=404,
            content=ErrorResponse(
                error="UnknownImage", detail=f"image uri {uri!r} is not reachable"
            ).model_dump(),
        )

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
