"""Single-robot map construction: submaps, object nodes, surface places.

Consumes a simulated run (keyframes plus observations) and produces the
robot's object map and scene graph in its own odometry frame. Sensor
geometry (what is visible from where) comes from the true poses; recorded
positions come from the drifting odometry estimate, so maps inherit drift
exactly the way the downstream fusion expects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose3
from .objectmap import Submap, segment_trajectory
from .places import DEFAULT_PLACE_SPACING, TerrainMesh, partition
from .scenegraph import Layer, SceneGraph, SceneNode
from .sim import DEFAULT_SENSOR_RANGE, SimRun, WorldSpec, region_label, world_mesh


@dataclass
class MapParams:
    submap_spacing: float = 10.0
    place_spacing: float = DEFAULT_PLACE_SPACING
    sensor_range: float = DEFAULT_SENSOR_RANGE
    mesh_pitch: float = 1.0


@dataclass
class RobotMap:
    robot: str
    submaps: list[Submap]
    graph: SceneGraph
    gt_keyframes: list[Pose3] = field(default_factory=list)
    noisy_keyframes: list[Pose3] = field(default_factory=list)


def build_robot_map(
    world: WorldSpec, run: SimRun, robot: str, params: MapParams = MapParams()
) -> RobotMap:
    keyframes = list(zip(run.noisy_keyframes, run.observations))
    submaps = segment_trajectory(keyframes, spacing=params.submap_spacing, robot=robot)

    graph = SceneGraph()
    _add_object_nodes(graph, run, robot)
    place_ids = _add_surface_places(graph, world, run, robot, params)
    _add_region_nodes(graph, world, robot, place_ids)
    _attach_objects_to_places(graph)
    if run.noisy_keyframes:
        graph.add_node(
            SceneNode(
                id=(Layer.AGENT, 0),
                layer=Layer.AGENT,
                class_label=robot,
                position=np.array(run.noisy_keyframes[-1].trans),
                attributes={"robot": robot},
            )
        )
    return RobotMap(
        robot=robot,
        submaps=submaps,
        graph=graph,
        gt_keyframes=list(run.gt_keyframes),
        noisy_keyframes=list(run.noisy_keyframes),
    )


def _add_object_nodes(graph: SceneGraph, run: SimRun, robot: str) -> None:
    sightings: dict[int, list[np.ndarray]] = {}
    labels: dict[int, str] = {}
    for obs_k in run.observations:
        for obs in obs_k:
            sightings.setdefault(obs.track_id, []).append(np.asarray(obs.position))
            labels[obs.track_id] = obs.class_label
    for tid in sorted(sightings):
        pos = np.mean(sightings[tid], axis=0)
        graph.add_node(
            SceneNode(
                id=(Layer.OBJECT, tid),
                layer=Layer.OBJECT,
                class_label=labels[tid],
                position=pos,
                attributes={"robot": robot, "track": tid},
            )
        )


def _visible_vertices(mesh: TerrainMesh, run: SimRun, sensor_range: float) -> dict[int, int]:
    """vertex index -> nearest ground-truth keyframe index, for vertices in range."""
    gt_pos = np.array([p.trans for p in run.gt_keyframes])
    tree = cKDTree(gt_pos)
    dists, nearest = tree.query(mesh.vertices)
    return {
        int(vi): int(nearest[vi]) for vi in np.nonzero(dists <= sensor_range)[0]
    }


def _add_surface_places(
    graph: SceneGraph, world: WorldSpec, run: SimRun, robot: str, params: MapParams
) -> list[int]:
    mesh = world_mesh(world, pitch=params.mesh_pitch)
    visible = _visible_vertices(mesh, run, params.sensor_range)
    if not visible:
        return []
    # Re-express observed vertices through the drifting odometry estimate.
    index_map = {}
    verts = []
    labels = []
    for vi in sorted(visible):
        k = visible[vi]
        corrected = run.noisy_keyframes[k].apply(run.gt_keyframes[k].inverse().apply(mesh.vertices[vi]))
        index_map[vi] = len(verts)
        verts.append(corrected)
        labels.append(mesh.labels[vi])
    adjacency = {
        (index_map[a], index_map[b])
        for a, b in mesh.adjacency
        if a in index_map and b in index_map
    }
    sub = TerrainMesh(np.array(verts), labels, adjacency)
    cells = partition(sub, spacing=params.place_spacing)
    place_ids = []
    keyframe_pos = np.array([p.trans for p in run.noisy_keyframes])
    for cell in cells:
        nearest_kf = int(np.argmin(np.linalg.norm(keyframe_pos - cell.center, axis=1)))
        graph.add_node(
            SceneNode(
                id=(Layer.SURFACE_PLACE, cell.id),
                layer=Layer.SURFACE_PLACE,
                class_label=cell.label,
                position=np.array(cell.center),
                attributes={"robot": robot, "anchor_keyframe": nearest_kf},
            )
        )
        place_ids.append(cell.id)
    for cell in cells:
        for nb in sorted(cell.neighbors):
            if nb > cell.id:
                graph.add_adjacency((Layer.SURFACE_PLACE, cell.id), (Layer.SURFACE_PLACE, nb))
    return place_ids


def _add_region_nodes(
    graph: SceneGraph, world: WorldSpec, robot: str, place_ids: list[int]
) -> None:
    region_members: dict[str, list[np.ndarray]] = {}
    assignment: dict[int, str] = {}
    for pid in place_ids:
        node = graph.nodes[(Layer.SURFACE_PLACE, pid)]
        label = region_label(world, node.position[0], node.position[1])
        if label == "":
            continue
        region_members.setdefault(label, []).append(np.array(node.position))
        assignment[pid] = label
    region_index = {}
    for i, label in enumerate(sorted(region_members)):
        center = np.mean(region_members[label], axis=0)
        graph.add_node(
            SceneNode(
                id=(Layer.REGION, i),
                layer=Layer.REGION,
                class_label=label,
                position=center,
                attributes={"robot": robot},
            )
        )
        region_index[label] = i
    for pid, label in assignment.items():
        graph.set_parent((Layer.SURFACE_PLACE, pid), (Layer.REGION, region_index[label]))


def _attach_objects_to_places(graph: SceneGraph) -> None:
    places = graph.nodes_in_layer(Layer.SURFACE_PLACE)
    if not places:
        return
    centers = np.array([p.position for p in places])
    for obj in graph.nodes_in_layer(Layer.OBJECT):
        d = np.linalg.norm(centers - obj.position, axis=1)
        nearest = places[int(np.argmin(d))]
        graph.set_parent(obj.id, nearest.id)
