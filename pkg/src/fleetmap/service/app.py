"""FastAPI service exposing the mapping/fusion/planning pipeline.

The service is stateless: every request carries its input artifacts, so
identical requests produce identical responses. The CLI is a thin client
of these endpoints.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import pipeline as pl
from ..config import PipelineConfig
from ..grounding import (
    GroundingTrial,
    MockClient,
    ReplayClient,
    score_trials,
    trial_from_json,
)
from ..scenegraph import graph_from_json
from ..sim import generate_world, world_from_json, world_to_json
from . import schemas

app = FastAPI(
    title="fleetmap",
    description="Multi-robot object map fusion, relocalization, and "
    "language-grounded task planning workbench.",
    version="0.1.0",
)


def _config(overrides: dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(overrides)
    except Exception as exc:
        raise HTTPException(status_code=422, detail=f"bad config: {exc}") from exc


def _domain(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, KeyError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse()


@app.post("/world/generate", response_model=schemas.WorldResponse)
def world_generate(req: schemas.GenerateWorldRequest) -> schemas.WorldResponse:
    world = _domain(generate_world, req.seed, req.n_objects, tuple(req.extent))
    return schemas.WorldResponse(world=world_to_json(world))


@app.post("/map/run", response_model=schemas.MapResponse)
def map_run(req: schemas.MapRequest) -> schemas.MapResponse:
    cfg = _config(req.config)
    world = _domain(world_from_json, req.world)
    waypoints = req.waypoints
    if waypoints is None:
        routes = pl.default_routes(world, cfg.robots if req.robot in cfg.robots else [req.robot])
        waypoints = routes[req.robot]
    robot_map = _domain(pl.map_robot, world, req.robot, waypoints, cfg, req.robot_index)
    return schemas.MapResponse(map=pl.robot_map_to_json(robot_map))


@app.post("/fuse/run", response_model=schemas.FuseResponse)
def fuse_run(req: schemas.FuseRequest) -> schemas.FuseResponse:
    cfg = _config(req.config)
    maps = [_domain(pl.robot_map_from_json, m) for m in req.maps]
    fused = _domain(pl.fuse_maps, maps, cfg)
    return schemas.FuseResponse(fused=pl.fused_map_to_json(fused))


@app.post("/relocalize/run", response_model=schemas.RelocalizeResponse)
def relocalize_run(req: schemas.RelocalizeRequest) -> schemas.RelocalizeResponse:
    cfg = _config(req.config)
    world = _domain(world_from_json, req.world)
    fused = _domain(pl.fused_map_from_json, req.fused)
    waypoints = req.waypoints
    if waypoints is None:
        routes = pl.default_routes(world, cfg.robots if req.robot in cfg.robots else [req.robot])
        waypoints = pl.query_segment(routes[req.robot], cfg.relocalize.segment_fraction)
    result = _domain(
        pl.relocalize_robot, world, fused, req.robot, waypoints, cfg, req.robot_index
    )
    return schemas.RelocalizeResponse(result=result)


def _client_from_request(client: str, mock_records, cassette_records):
    if client == "mock":
        if not mock_records:
            raise HTTPException(status_code=422, detail="mock client needs mock_records")
        return MockClient({r["instruction"]: r["response"] for r in mock_records})
    if client == "replay":
        if not cassette_records:
            raise HTTPException(status_code=422, detail="replay client needs cassette_records")
        return ReplayClient.from_records(cassette_records)
    if client == "live":
        from ..grounding import LiveClient

        return LiveClient()
    raise HTTPException(status_code=422, detail=f"unknown client mode {client!r}")


@app.post("/ground/run", response_model=schemas.GroundResponse)
def ground_run(req: schemas.GroundRequest) -> schemas.GroundResponse:
    graph = _domain(graph_from_json, req.graph)
    client = _client_from_request(req.client, req.mock_records, req.cassette_records)
    out = _domain(pl.ground_instruction, graph, req.robots, req.instruction, client)
    return schemas.GroundResponse(**out)


@app.post("/plan/run", response_model=schemas.PlanResponse)
def plan_run(req: schemas.PlanRequest) -> schemas.PlanResponse:
    cfg = _config(req.config)
    graph = _domain(graph_from_json, req.graph)
    world = _domain(world_from_json, req.world)
    plans = _domain(pl.plan_goals, graph, req.goals, world, cfg)
    return schemas.PlanResponse(plans=plans)


@app.post("/execute/run", response_model=schemas.ExecuteResponse)
def execute_run(req: schemas.ExecuteRequest) -> schemas.ExecuteResponse:
    graph = _domain(graph_from_json, req.graph)
    world = _domain(world_from_json, req.world)
    execution = _domain(pl.execute_plans, graph, req.plans, world)
    return schemas.ExecuteResponse(execution=execution)


@app.post("/eval/fusion", response_model=schemas.EvalFusionResponse)
def eval_fusion(req: schemas.EvalFusionRequest) -> schemas.EvalFusionResponse:
    world = _domain(world_from_json, req.world)
    maps = [_domain(pl.robot_map_from_json, m) for m in req.maps]
    fused = _domain(pl.fused_map_from_json, req.fused)
    metrics = _domain(pl.eval_fusion, world, maps, fused)
    return schemas.EvalFusionResponse(metrics=metrics)


@app.post("/eval/grounding", response_model=schemas.EvalGroundingResponse)
def eval_grounding(req: schemas.EvalGroundingRequest) -> schemas.EvalGroundingResponse:
    graph = _domain(graph_from_json, req.graph)
    trials = [_domain(trial_from_json, t) for t in req.trials]
    client = _client_from_request(req.client, req.mock_records, req.cassette_records)
    bundle = pl.build_bundle(graph, req.robots)
    scores = _domain(score_trials, trials, bundle, client)
    return schemas.EvalGroundingResponse(scores=scores)


@app.post("/pipeline/run", response_model=schemas.PipelineResponse)
def pipeline_run(req: schemas.PipelineRequest) -> schemas.PipelineResponse:
    cfg = _config(req.config)
    result = _domain(pl.run_pipeline, cfg, req.mock_records)
    return schemas.PipelineResponse(result=result)
