"""Synthetic worlds, drifting odometry simulation, and plan execution scoring.

Worlds are deterministic functions of their seed: labeled terrain patches,
semantic regions, and objects with class-prototype embeddings. Simulated
runs emit ground-truth keyframes, noise-integrated keyframes, and per-
keyframe object observations expressed in the robot's odometry frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3
from .objectmap import EMBEDDING_DIM, Observation, build_object
from .places import TerrainMesh
from .planner import GroundedPlan, Inspect, MoveTo, goal_satisfied

DEFAULT_SENSOR_RANGE = 15.0
KEYFRAME_PITCH = 1.0
CENTROID_NOISE_SIGMA = 0.1
EMBEDDING_NOISE_SIGMA = 0.04
MIN_OBJECT_SEPARATION = 2.0

TERRAIN_LABELS = ("grass", "road", "sidewalk", "rocks", "water")
UNTRAVERSABLE_LABELS = {"water"}

# Half-extent (x, y, z) per object class, meters.
OBJECT_CLASSES = {
    "box": (0.6, 0.5, 0.4),
    "sign": (0.5, 0.1, 1.0),
    "trash": (0.4, 0.4, 0.5),
    "pole": (0.1, 0.1, 1.8),
    "barrel": (0.4, 0.4, 0.6),
    "crate": (0.9, 0.7, 0.5),
    "cone": (0.25, 0.25, 0.45),
    "bag": (0.35, 0.25, 0.3),
}


@dataclass(frozen=True)
class WorldObject:
    index: int
    class_label: str
    position: np.ndarray  # meters, z = half height
    size: tuple[float, float, float]
    extents: tuple[float, float, float]
    shape_descriptor: tuple[float, float, float]


@dataclass
class WorldSpec:
    seed: int
    extent: tuple[float, float]
    terrain_patches: list[tuple[str, list[tuple[float, float]]]]  # label, polygon
    objects: list[WorldObject]
    regions: list[tuple[str, list[tuple[float, float]]]]  # label, polygon
    prototypes: dict[str, np.ndarray]


@dataclass(frozen=True)
class OdometryModel:
    trans_sigma: float = 0.0  # meters per step
    rot_sigma_deg: float = 0.0  # degrees per step
    bias_trans: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bias_rot_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.trans_sigma < 0 or self.rot_sigma_deg < 0:
            raise ValueError("noise sigmas must be nonnegative")


@dataclass
class SimRun:
    gt_keyframes: list[Pose3]
    noisy_keyframes: list[Pose3]
    observations: list[list[Observation]]  # parallel to keyframes


@dataclass
class ExecutionReport:
    reached_goal: bool
    trace: list[int]
    inspected: set[int]
    violations: list[str] = field(default_factory=list)


def _point_in_polygon(x: float, y: float, polygon: list[tuple[float, float]]) -> bool:
    inside = False
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xt = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
            if x < xt:
                inside = not inside
    return inside


def _rect(x0: float, y0: float, x1: float, y1: float) -> list[tuple[float, float]]:
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _make_prototypes(rng: np.random.Generator, max_cos: float = 0.5) -> dict[str, np.ndarray]:
    names = sorted(OBJECT_CLASSES)
    for _ in range(100):
        vecs = rng.normal(size=(len(names), EMBEDDING_DIM))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        cosines = vecs @ vecs.T
        np.fill_diagonal(cosines, 0.0)
        if np.max(np.abs(cosines)) < max_cos:
            return {name: vecs[i] for i, name in enumerate(names)}
    raise RuntimeError("could not draw prototype embeddings")


def generate_world(
    seed: int, n_objects: int, extent: tuple[float, float] = (100.0, 100.0)
) -> WorldSpec:
    """Deterministic synthetic world; objects are rejection-sampled >= 2 m apart."""
    if n_objects < 0:
        raise ValueError("n_objects must be nonnegative")
    rng = np.random.default_rng(seed)
    ex, ey = float(extent[0]), float(extent[1])

    patches = [
        ("grass", _rect(0, 0, ex, ey)),
        ("road", _rect(0, 0.45 * ey, ex, 0.55 * ey)),
        ("sidewalk", _rect(0, 0.55 * ey, ex, 0.60 * ey)),
        ("rocks", _rect(0.70 * ex, 0.70 * ey, 0.90 * ex, 0.90 * ey)),
        ("water", _rect(0.05 * ex, 0.05 * ey, 0.20 * ex, 0.20 * ey)),
    ]
    regions = [
        ("south_field", _rect(0, 0, ex, 0.45 * ey)),
        ("roadside", _rect(0, 0.45 * ey, ex, 0.60 * ey)),
        ("north_field", _rect(0, 0.60 * ey, 0.5 * ex, ey)),
        ("parking_lot", _rect(0.5 * ex, 0.60 * ey, ex, ey)),
    ]
    prototypes = _make_prototypes(rng)

    names = sorted(OBJECT_CLASSES)
    objects: list[WorldObject] = []
    positions: list[np.ndarray] = []
    attempts = 0
    max_attempts = 1000 * max(n_objects, 1)
    margin = 2.0
    while len(objects) < n_objects:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError(
                f"extent {extent} too small to place {n_objects} objects "
                f">= {MIN_OBJECT_SEPARATION} m apart"
            )
        xy = rng.uniform([margin, margin], [ex - margin, ey - margin])
        if positions and np.min(
            np.linalg.norm(np.array(positions)[:, :2] - xy, axis=1)
        ) < MIN_OBJECT_SEPARATION:
            continue
        cls = names[len(objects) % len(names)]
        size = OBJECT_CLASSES[cls]
        pos = np.array([xy[0], xy[1], size[2]])
        corners = pos + np.array(
            [[sx * size[0], sy * size[1], sz * size[2]] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
        )
        model = build_object(corners, prototypes[cls], object_id=len(objects), class_label=cls)
        objects.append(
            WorldObject(
                index=len(objects),
                class_label=cls,
                position=pos,
                size=size,
                extents=model.extents,
                shape_descriptor=model.shape_descriptor,
            )
        )
        positions.append(pos)
    return WorldSpec(
        seed=seed,
        extent=(ex, ey),
        terrain_patches=patches,
        objects=objects,
        regions=regions,
        prototypes=prototypes,
    )


def terrain_label(world: WorldSpec, x: float, y: float) -> str:
    label = ""
    for name, polygon in world.terrain_patches:
        if _point_in_polygon(x, y, polygon):
            label = name  # later patches paint over earlier ones
    return label


def region_label(world: WorldSpec, x: float, y: float) -> str:
    label = ""
    for name, polygon in world.regions:
        if _point_in_polygon(x, y, polygon):
            label = name
    return label


def world_mesh(world: WorldSpec, pitch: float = 1.0) -> TerrainMesh:
    """Uniform grid mesh over the extent, labeled by terrain patch."""
    ex, ey = world.extent
    nx = int(np.floor(ex / pitch)) + 1
    ny = int(np.floor(ey / pitch)) + 1
    vertices = []
    labels = []
    for iy in range(ny):
        for ix in range(nx):
            x, y = ix * pitch, iy * pitch
            vertices.append([x, y, 0.0])
            labels.append(terrain_label(world, x, y))
    adjacency = set()
    for iy in range(ny):
        for ix in range(nx):
            v = iy * nx + ix
            if ix + 1 < nx:
                adjacency.add((v, v + 1))
            if iy + 1 < ny:
                adjacency.add((v, v + nx))
    return TerrainMesh(np.array(vertices), labels, adjacency)


def resample_polyline(waypoints: list[tuple[float, float]], pitch: float) -> list[Pose3]:
    """Poses every `pitch` meters along the waypoint polyline, yaw along travel."""
    pts = np.array([[x, y, 0.0] for x, y in waypoints], dtype=float)
    if len(pts) < 2:
        raise ValueError("need at least two waypoints")
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    total = float(seg_len.sum())
    stations = np.arange(0.0, total + 1e-9, pitch)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    poses = []
    for s in stations:
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(seg) - 1)
        f = (s - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
        p = pts[i] + f * seg[i]
        yaw = float(np.arctan2(seg[i][1], seg[i][0]))
        poses.append(Pose3.from_yaw(yaw, p))
    return poses


def simulate_run(
    world: WorldSpec,
    waypoints: list[tuple[float, float]],
    odom: OdometryModel = OdometryModel(),
    sensor_range: float = DEFAULT_SENSOR_RANGE,
    seed: int = 0,
    centroid_sigma: float = CENTROID_NOISE_SIGMA,
    embedding_sigma: float = EMBEDDING_NOISE_SIGMA,
) -> SimRun:
    """Ground-truth keyframes every meter, drift-integrated keyframes, observations."""
    rng = np.random.default_rng(seed)
    gt = resample_polyline(waypoints, KEYFRAME_PITCH)

    bias_t = np.array(odom.bias_trans, dtype=float)
    bias_r = np.radians(np.array(odom.bias_rot_deg, dtype=float))
    noisy = [gt[0]]
    for k in range(1, len(gt)):
        rel = gt[k - 1].inverse().compose(gt[k])
        dt = rng.normal(0.0, odom.trans_sigma, size=3) if odom.trans_sigma > 0 else np.zeros(3)
        dr = (
            rng.normal(0.0, np.radians(odom.rot_sigma_deg), size=3)
            if odom.rot_sigma_deg > 0
            else np.zeros(3)
        )
        perturb = Pose3.from_rotvec(dr + bias_r, dt + bias_t)
        noisy.append(noisy[-1].compose(rel.compose(perturb)))

    positions = (
        np.array([o.position for o in world.objects]) if world.objects else np.zeros((0, 3))
    )
    observations: list[list[Observation]] = []
    for k, pose in enumerate(gt):
        obs_k: list[Observation] = []
        if len(positions):
            dists = np.linalg.norm(positions - pose.trans, axis=1)
            visible = np.nonzero(dists <= sensor_range)[0]
        else:
            visible = []
        for oi in visible:
            obj = world.objects[int(oi)]
            noise = rng.normal(0.0, centroid_sigma, size=3) if centroid_sigma > 0 else np.zeros(3)
            local = pose.inverse().apply(obj.position + noise)
            mapped = noisy[k].apply(local)
            emb = np.array(world.prototypes[obj.class_label])
            if embedding_sigma > 0:
                emb = emb + rng.normal(0.0, embedding_sigma, size=EMBEDDING_DIM)
            emb = emb / np.linalg.norm(emb)
            obs_k.append(
                Observation(
                    track_id=obj.index,
                    position=mapped,
                    embedding=emb,
                    extents=obj.extents,
                    shape_descriptor=obj.shape_descriptor,
                    class_label=obj.class_label,
                )
            )
        observations.append(obs_k)
    return SimRun(gt_keyframes=gt, noisy_keyframes=noisy, observations=observations)


def execute(
    plan: GroundedPlan,
    goal,
    cells: dict[int, np.ndarray],
    start: int,
    avoid: frozenset[int] | set[int] = frozenset(),
) -> ExecutionReport:
    """Walk the plan's paths, marking visited and inspected; referee the goal."""
    if start not in cells:
        raise ValueError(f"unknown cell id {start}")
    trace = [start]
    inspected: set[int] = set()
    violations: list[str] = []
    current = start
    if start in avoid:
        violations.append(f"start place {start} is an avoided place")
    for step in plan.steps:
        if isinstance(step, MoveTo):
            for cid in step.path:
                if cid not in cells:
                    raise ValueError(f"unknown cell id {cid}")
            if not step.path:
                violations.append("move step with empty path")
                continue
            if step.path[0] != current:
                violations.append(f"move path starts at {step.path[0]}, robot at {current}")
            if step.path[-1] != step.place:
                violations.append(f"move path ends at {step.path[-1]}, not {step.place}")
            remaining = step.path[1:] if step.path[0] == current else step.path
            for cid in remaining:
                trace.append(cid)
                if cid in avoid:
                    violations.append(f"entered avoided place {cid}")
            current = step.place
        elif isinstance(step, Inspect):
            if step.from_place != current:
                violations.append(
                    f"inspect of {step.object} from {step.from_place}, robot at {current}"
                )
            inspected.add(step.object)
        else:
            violations.append(f"unknown step {step!r}")
    visited = frozenset(trace)
    reached = not violations and goal_satisfied(goal, visited, frozenset(inspected), current)
    return ExecutionReport(
        reached_goal=reached, trace=trace, inspected=inspected, violations=violations
    )


def world_to_json(world: WorldSpec) -> dict:
    return {
        "seed": world.seed,
        "extent": [world.extent[0], world.extent[1]],
        "terrain_patches": [
            {"label": label, "polygon": [[float(x), float(y)] for x, y in poly]}
            for label, poly in world.terrain_patches
        ],
        "objects": [
            {
                "index": o.index,
                "class": o.class_label,
                "position": [float(v) for v in o.position],
                "size": [float(v) for v in o.size],
                "extents": [float(v) for v in o.extents],
                "shape": [float(v) for v in o.shape_descriptor],
            }
            for o in world.objects
        ],
        "regions": [
            {"label": label, "polygon": [[float(x), float(y)] for x, y in poly]}
            for label, poly in world.regions
        ],
        "prototypes": {k: [float(v) for v in vec] for k, vec in sorted(world.prototypes.items())},
    }


def world_from_json(d: dict) -> WorldSpec:
    return WorldSpec(
        seed=int(d["seed"]),
        extent=(float(d["extent"][0]), float(d["extent"][1])),
        terrain_patches=[
            (p["label"], [tuple(v) for v in p["polygon"]]) for p in d["terrain_patches"]
        ],
        objects=[
            WorldObject(
                index=int(o["index"]),
                class_label=o["class"],
                position=np.array(o["position"], dtype=float),
                size=tuple(o["size"]),
                extents=tuple(o["extents"]),
                shape_descriptor=tuple(o["shape"]),
            )
            for o in d["objects"]
        ],
        regions=[(p["label"], [tuple(v) for v in p["polygon"]]) for p in d["regions"]],
        prototypes={k: np.array(v, dtype=float) for k, v in d["prototypes"].items()},
    )


def dumps_world(world: WorldSpec) -> str:
    return json.dumps(world_to_json(world), indent=2)


def loads_world(text: str) -> WorldSpec:
    return world_from_json(json.loads(text))
