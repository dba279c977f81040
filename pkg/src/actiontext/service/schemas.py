"""Request and response models for the action gateway."""

from __future__ import annotations

import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ActRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    session_id: str = Field(min_length=1)
    instruction: str = Field(min_length=1)
    images: list[str] = Field(default_factory=list, description="base64-encoded PNG images")
    state: Optional[list[float]] = None
    timestep: int = Field(ge=0)

    @field_validator("state")
    @classmethod
    def _finite_state(cls, v):
        if v is not None and not all(math.isfinite(x) for x in v):
            raise ValueError("state must be finite")
        return v

    @model_validator(mode="after")
    def _has_observation(self):
        if not self.images and not self.state:
            raise ValueError("request needs at least one image or a state vector")
        if not self.instruction.strip():
            raise ValueError("instruction must not be blank")
        return self


class ActResponse(BaseModel):
    action: list[float]
    raw_text: str
    parse_ok: bool
    clamped: bool
    latency_ms: float = Field(ge=0)


class ResetRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    session_id: str = Field(min_length=1)


class ResetResponse(BaseModel):
    session_id: str
    existed: bool


class HealthResponse(BaseModel):
    status: str
    sessions: int
    backend: str
    horizon: int
    dims: int
    resolution: int
    ensemble_n: int
