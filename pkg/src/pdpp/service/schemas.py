from typing import Annotated, Optional

from pydantic import BaseModel, Field

FiniteFloat = Annotated[float, Field(allow_inf_nan=False)]


class Candidate(BaseModel):
    item_id: str = Field(min_length=1)
    score: FiniteFloat


class RerankRequest(BaseModel):
    user_id: str
    k: int = Field(default=20, ge=1)
    candidates: list[Candidate] = Field(min_length=1)


class RerankResponse(BaseModel):
    items: list[str]
    alpha_used: float
    cold_start: bool
    fallback_fill: int
    latency_micros: int


class RejectedLine(BaseModel):
    line: int
    error: str


class EventAck(BaseModel):
    accepted: int
    ignored: int = 0
    rejected: list[RejectedLine] = []
    dead_lettered: list[RejectedLine] = []
    index_version: int


class RebuildRequest(BaseModel):
    snapshot_path: str
    profiles_path: Optional[str] = None


class IndexInfo(BaseModel):
    version: int
    users: int
    h_min: Optional[float] = None
    h_max: Optional[float] = None


class HealthStatus(BaseModel):
    status: str
    version: str
    index: IndexInfo
