"""Request and response models for the workbench service.

Artifact payloads (worlds, maps, graphs, plans) travel as the canonical
JSON documents produced by the core serializers; the models here define
the request/response envelopes around them.
"""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"


class GenerateWorldRequest(BaseModel):
    seed: int = 7
    n_objects: int = 60
    extent: tuple[float, float] = (100.0, 100.0)


class WorldResponse(BaseModel):
    world: dict[str, Any]


class MapRequest(BaseModel):
    world: dict[str, Any]
    robot: str
    robot_index: int = 0
    waypoints: Optional[list[tuple[float, float]]] = None
    config: dict[str, Any] = Field(default_factory=dict)


class MapResponse(BaseModel):
    map: dict[str, Any]


class FuseRequest(BaseModel):
    maps: list[dict[str, Any]]
    config: dict[str, Any] = Field(default_factory=dict)


class FuseResponse(BaseModel):
    fused: dict[str, Any]


class RelocalizeRequest(BaseModel):
    world: dict[str, Any]
    fused: dict[str, Any]
    robot: str
    robot_index: int = 0
    waypoints: Optional[list[tuple[float, float]]] = None
    config: dict[str, Any] = Field(default_factory=dict)


class RelocalizeResponse(BaseModel):
    result: dict[str, Any]


class GroundRequest(BaseModel):
    graph: dict[str, Any]
    robots: list[str]
    instruction: str
    client: str = "mock"
    mock_records: Optional[list[dict[str, Any]]] = None
    cassette_records: Optional[list[dict[str, Any]]] = None


class GroundResponse(BaseModel):
    instruction: str
    goals: dict[str, str]
    raw_text: str


class PlanRequest(BaseModel):
    graph: dict[str, Any]
    world: dict[str, Any]
    goals: dict[str, str]
    config: dict[str, Any] = Field(default_factory=dict)


class PlanResponse(BaseModel):
    plans: dict[str, Any]


class ExecuteRequest(BaseModel):
    graph: dict[str, Any]
    world: dict[str, Any]
    plans: dict[str, Any]


class ExecuteResponse(BaseModel):
    execution: dict[str, Any]


class EvalFusionRequest(BaseModel):
    world: dict[str, Any]
    maps: list[dict[str, Any]]
    fused: dict[str, Any]


class EvalFusionResponse(BaseModel):
    metrics: dict[str, Any]


class EvalGroundingRequest(BaseModel):
    graph: dict[str, Any]
    robots: list[str]
    trials: list[dict[str, Any]]
    client: str = "replay"
    mock_records: Optional[list[dict[str, Any]]] = None
    cassette_records: Optional[list[dict[str, Any]]] = None


class EvalGroundingResponse(BaseModel):
    scores: dict[str, Any]


class PipelineRequest(BaseModel):
    config: dict[str, Any] = Field(default_factory=dict)
    mock_records: Optional[list[dict[str, Any]]] = None


class PipelineResponse(BaseModel):
    result: dict[str, Any]
