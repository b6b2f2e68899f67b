"""Versioned request/response payloads of the annotation API."""

from __future__ import annotations

from pydantic import BaseModel, Field

PAYLOAD_SCHEMA_VERSION = 1

# The ranking rubric shown to every labeler. The UI renders these strings
# untouched, so service and frontend can never drift apart.
RUBRIC = [
    {
        "name": "accuracy",
        "kind": "boolean",
        "prompt": (
            "Does the caption correctly describe what the image shows? Mark it "
            "inaccurate if it contradicts the image or invents things that are "
            "not there."
        ),
    },
    {
        "name": "completeness",
        "kind": "grade-0-2",
        "prompt": (
            "Does the caption cover the main objects visible in the image, "
            "giving a full overview rather than a fragment? 0 = misses most, "
            "1 = partial, 2 = covers them."
        ),
    },
    {
        "name": "vividness",
        "kind": "grade-0-2",
        "prompt": (
            "Does the caption give detail about the objects it mentions - how "
            "many there are, what they look like, what they are doing, and how "
            "they relate? 0 = none, 1 = some, 2 = rich detail."
        ),
    },
    {
        "name": "context",
        "kind": "grade-0-2",
        "prompt": (
            "Does the caption mention the setting - the background the scene "
            "takes place in, or the mood it conveys? 0 = none, 1 = hinted, "
            "2 = clearly described."
        ),
    },
]


class CaptionPayload(BaseModel):
    caption_id: str
    text: str


class LeasePayload(BaseModel):
    labeler_id: str
    expires_at: float = Field(description="unix seconds")


class TaskResponse(BaseModel):
    schema_version: int = PAYLOAD_SCHEMA_VERSION
    task_id: str
    image_id: str
    image_uri: str
    captions: list[CaptionPayload]
    rubric: list[dict] = Field(default_factory=lambda: [dict(r) for r in RUBRIC])
    lease: LeasePayload


class CriteriaPayload(BaseModel):
    accuracy: bool
    completeness: int = Field(ge=0, le=2)
    vividness: int = Field(ge=0, le=2)
    context: int = Field(ge=0, le=2)


class SubmitRequest(BaseModel):
    schema_version: int = PAYLOAD_SCHEMA_VERSION
    task_id: str
    labeler_id: str
    ranking: list[list[str]]
    criteria: dict[str, CriteriaPayload] = Field(default_factory=dict)


class SubmitResponse(BaseModel):
    schema_version: int = PAYLOAD_SCHEMA_VERSION
    record_id: str


class ProgressResponse(BaseModel):
    schema_version: int = PAYLOAD_SCHEMA_VERSION
    total_tasks: int
    annotated: int
    leased: int
    per_labeler: dict[str, int]


class ErrorResponse(BaseModel):
    schema_version: int = PAYLOAD_SCHEMA_VERSION
    error: str
    detail: str = ""
