"""Open-set object models and submap segmentation.

Each robot's trajectory is cut into submaps every `spacing` meters of travel;
objects observed inside a submap are expressed in that submap's frame and
merged per track id. Objects carry a PCA shape descriptor
(linearity, planarity, sphericity) and a unit semantic embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3, pose_from_json, pose_to_json

DEFAULT_SUBMAP_SPACING = 10.0
EMBEDDING_DIM = 64


def shape_descriptor_from_eigvals(eigvals: np.ndarray) -> tuple[float, float, float]:
    """(linearity, planarity, sphericity) from descending covariance eigenvalues."""
    l1, l2, l3 = eigvals
    if l1 <= 0:
        return (0.0, 0.0, 0.0)
    return (float((l1 - l2) / l1), float((l2 - l3) / l1), float(l3 / l1))


@dataclass(frozen=True)
class ObjectModel:
    id: int
    centroid: np.ndarray  # submap frame, meters
    extents: tuple[float, float, float]  # descending PCA half-lengths
    shape_descriptor: tuple[float, float, float]
    embedding: np.ndarray  # unit vector
    class_label: str = ""  # ground-truth bookkeeping only

    def __post_init__(self):
        c = np.asarray(self.centroid, dtype=float).copy()
        if c.shape != (3,) or not np.all(np.isfinite(c)):
            raise ValueError("centroid must be a finite 3-vector")
        e = np.asarray(self.embedding, dtype=float).copy()
        n = np.linalg.norm(e)
        if n == 0:
            raise ValueError("embedding must be nonzero")
        if abs(n - 1.0) > 1e-6:
            e = e / n
        ext = tuple(float(v) for v in self.extents)
        if not (ext[0] >= ext[1] >= ext[2] >= 0):
            raise ValueError("extents must be descending and nonnegative")
        sd = tuple(float(v) for v in self.shape_descriptor)
        if sum(sd) > 1 + 1e-6 or any(v < -1e-9 for v in sd):
            raise ValueError("shape descriptor components must be in [0,1] and sum <= 1")
        c.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "embedding", e)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "shape_descriptor", sd)


@dataclass(frozen=True)
class Observation:
    """A single sighting of an object, positioned in the robot's odometry frame."""

    track_id: int
    position: np.ndarray
    embedding: np.ndarray
    extents: tuple[float, float, float] = (0.0, 0.0, 0.0)
    shape_descriptor: tuple[float, float, float] = (0.0, 0.0, 0.0)
    class_label: str = ""


@dataclass
class Submap:
    id: tuple[str, int]  # (robot_id, index)
    center_pose: Pose3
    objects: list[ObjectModel] = field(default_factory=list)
    opened_at_keyframe: int = 0  # keyframe index whose pose is the submap frame

    @property
    def robot(self) -> str:
        return self.id[0]

    @property
    def index(self) -> int:
        return self.id[1]


def build_object(points, embedding, object_id: int = 0, class_label: str = "") -> ObjectModel:
    """Summarize a point cloud: centroid, PCA extents, shape descriptor."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ValueError("empty object")
    if pts.shape[1] != 3:
        raise ValueError("points must be 3-vectors")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / pts.shape[0]
    eigvals = np.linalg.eigvalsh(cov)[::-1]
    eigvals = np.clip(eigvals, 0.0, None)
    extents = tuple(float(np.sqrt(v)) for v in eigvals)
    return ObjectModel(
        id=object_id,
        centroid=centroid,
        extents=extents,
        shape_descriptor=shape_descriptor_from_eigvals(eigvals),
        embedding=np.asarray(embedding, dtype=float),
        class_label=class_label,
    )


def segment_trajectory(
    keyframes: list[tuple[Pose3, list[Observation]]],
    spacing: float = DEFAULT_SUBMAP_SPACING,
    robot: str = "robot",
) -> list[Submap]:
    """Split a keyframe sequence into submaps every `spacing` meters of travel.

    A submap's frame is its opening keyframe's pose. Observations are
    re-expressed in the submap frame; repeated sightings of one track within
    a submap are merged by averaging.
    """
    if not keyframes:
        return []
    submaps: list[Submap] = []
    center: Pose3 | None = None
    # track id -> accumulated [positions, embeddings, extents, shapes, label]
    buckets: dict[int, list] = {}

    def flush(center_pose: Pose3, index: int, opened_at: int):
        objects = []
        inv = center_pose.inverse()
        for tid in sorted(buckets):
            positions, embeddings, extents, shapes, label = buckets[tid]
            local = inv.apply(np.array(positions))
            centroid = local.mean(axis=0)
            emb = np.mean(np.array(embeddings), axis=0)
            n = np.linalg.norm(emb)
            if n == 0:
                emb = np.array(embeddings[0])
                n = np.linalg.norm(emb)
            ext = tuple(np.mean(np.array(extents), axis=0))
            shp = tuple(np.mean(np.array(shapes), axis=0))
            # Averaged shape components keep sum <= 1 (each term does).
            objects.append(
                ObjectModel(
                    id=tid,
                    centroid=centroid,
                    extents=ext,
                    shape_descriptor=shp,
                    embedding=emb / n,
                    class_label=label,
                )
            )
        submaps.append(
            Submap(
                id=(robot, index),
                center_pose=center_pose,
                objects=objects,
                opened_at_keyframe=opened_at,
            )
        )

    opened_at = 0
    for i, (pose, observations) in enumerate(keyframes):
        if center is None or np.linalg.norm(pose.trans - center.trans) > spacing:
            if center is not None:
                flush(center, len(submaps), opened_at)
                buckets = {}
            center = pose
            opened_at = i
        for obs in observations:
            b = buckets.setdefault(obs.track_id, [[], [], [], [], obs.class_label])
            b[0].append(np.asarray(obs.position, dtype=float))
            b[1].append(np.asarray(obs.embedding, dtype=float))
            b[2].append(obs.extents)
            b[3].append(obs.shape_descriptor)
    flush(center, len(submaps), opened_at)
    return submaps


def object_to_json(o: ObjectModel) -> dict:
    return {
        "id": o.id,
        "centroid": [float(v) for v in o.centroid],
        "extents": [float(v) for v in o.extents],
        "shape": [float(v) for v in o.shape_descriptor],
        "embedding": [float(v) for v in o.embedding],
        "class": o.class_label,
    }


def object_from_json(d: dict) -> ObjectModel:
    return ObjectModel(
        id=int(d["id"]),
        centroid=np.array(d["centroid"], dtype=float),
        extents=tuple(d["extents"]),
        shape_descriptor=tuple(d["shape"]),
        embedding=np.array(d["embedding"], dtype=float),
        class_label=d.get("class", ""),
    )


def object_map_to_json(robot: str, submaps: list[Submap]) -> dict:
    return {
        "robot": robot,
        "submaps": [
            {
                "index": sm.index,
                "center": pose_to_json(sm.center_pose),
                "opened_at": sm.opened_at_keyframe,
                "objects": [object_to_json(o) for o in sm.objects],
            }
            for sm in sorted(submaps, key=lambda s: s.index)
        ],
    }


def object_map_from_json(d: dict) -> list[Submap]:
    return [
        Submap(
            id=(d["robot"], int(smd["index"])),
            center_pose=pose_from_json(smd["center"]),
            objects=[object_from_json(od) for od in smd["objects"]],
            opened_at_keyframe=int(smd.get("opened_at", 0)),
        )
        for smd in d["submaps"]
    ]
