"""Pipeline configuration: one schema shared by the CLI and the service."""

from __future__ import annotations

from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WorldConfig(_Strict):
    n_objects: int = 60
    extent: tuple[float, float] = (100.0, 100.0)


class OdometryConfig(_Strict):
    trans_sigma: float = 0.02
    rot_sigma_deg: float = 0.05
    bias_trans: tuple[float, float, float] = (0.01, 0.005, 0.0)
    bias_rot_deg: tuple[float, float, float] = (0.0, 0.0, 0.02)


class SimConfig(_Strict):
    sensor_range: float = 20.0
    centroid_sigma: float = 0.1
    embedding_sigma: float = 0.04
    odometry: OdometryConfig = Field(default_factory=OdometryConfig)


class MappingConfig(_Strict):
    submap_spacing: float = 10.0
    place_spacing: float = 5.0
    mesh_pitch: float = 1.0


class RegistrationConfig(_Strict):
    eps_dist: float = 0.5
    min_cos_sim: float = 0.7
    max_shape_diff: float = 0.4
    min_associations: int = 4
    max_extent_ratio: float = 2.0
    loop_trans_sigma: float = 0.3
    loop_rot_sigma_deg: float = 3.0


class FusionConfig(_Strict):
    huber_delta: float = 1.0
    chi2_gate: float = 16.0
    max_iters: int = 100
    interpolation_k: int = 3
    tau_object: float = 2.0
    # Place merge radius is 1.0 x place spacing unless overridden.
    tau_place: float | None = None


class PlannerConfig(_Strict):
    inspect_range: float = 3.0
    node_budget: int = 100_000


class RelocalizeConfig(_Strict):
    offset_trans: tuple[float, float, float] = (12.0, -7.0, 0.0)
    offset_yaw_deg: float = 35.0
    segment_fraction: float = 0.45
    tol_trans: float = 5.0
    tol_rot_deg: float = 10.0


class GroundingConfig(_Strict):
    client: str = "mock"  # mock | replay | live
    instruction: str | None = None
    mock_fixture: str | None = None  # path to JSONL {instruction, response, truth}
    cassette: str | None = None  # path for replay/record


class PipelineConfig(_Strict):
    seed: int = 7
    robots: list[str] = Field(default_factory=lambda: ["husky", "spot"])
    world: WorldConfig = Field(default_factory=WorldConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    mapping: MappingConfig = Field(default_factory=MappingConfig)
    registration: RegistrationConfig = Field(default_factory=RegistrationConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    planner: PlannerConfig = Field(default_factory=PlannerConfig)
    relocalize: RelocalizeConfig = Field(default_factory=RelocalizeConfig)
    grounding: GroundingConfig = Field(default_factory=GroundingConfig)

    @property
    def tau_place(self) -> float:
        if self.fusion.tau_place is not None:
            return self.fusion.tau_place
        return self.mapping.place_spacing


def load_config(path: str | Path) -> PipelineConfig:
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text) or {}
    return PipelineConfig.model_validate(data)
