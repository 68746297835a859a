"""Pipeline stages: world -> per-robot maps -> fusion -> relocalization ->
grounding -> planning -> execution, plus the evaluation stages.

Every stage is a pure function of its artifacts and the configuration, so
the service endpoints and the CLI wrap the same code and byte-identical
inputs give byte-identical outputs.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from . import fusion as fusion_mod
from . import pddl, planner
from .config import PipelineConfig
from .geometry import (
    BetweenMeasurement,
    Pose3,
    diagonal_information,
    pose_error,
    pose_from_json,
    pose_to_json,
)
from .grounding import (
    DEFAULT_DOMAIN_DESCRIPTION,
    DEFAULT_TASK_DESCRIPTION,
    LiveClient,
    MockClient,
    PromptBundle,
    ReplayClient,
    default_examples,
    ground,
    serialize_scene,
)
from .mapping import MapParams, RobotMap, build_robot_map
from .objectmap import Submap, object_map_from_json, object_map_to_json
from .planner import GroundedPlan, nav_from_scenegraph
from .posegraph import PoseGraph, optimize
from .registration import (
    ConsistencyParams,
    LoopClosure,
    loop_closure_from_json,
    loop_closure_to_json,
    register_submaps,
    relocalize,
)
from .scenegraph import Layer, SceneGraph, SceneNode, graph_from_json, graph_to_json
from .sim import (
    UNTRAVERSABLE_LABELS,
    OdometryModel,
    SimRun,
    WorldSpec,
    execute,
    generate_world,
    simulate_run,
    world_to_json,
)

ROBOT_ID_STRIDE = 10_000

ROBOT_CAPABILITIES = {
    "husky": "wheeled ground robot; can drive to places and inspect objects",
    "spot": "legged robot; can walk to places and inspect objects",
    "jackal": "small wheeled robot; can drive to places and inspect objects",
}


def consistency_params(cfg: PipelineConfig) -> ConsistencyParams:
    r = cfg.registration
    return ConsistencyParams(
        eps_dist=r.eps_dist,
        min_cos_sim=r.min_cos_sim,
        max_shape_diff=r.max_shape_diff,
        min_associations=r.min_associations,
        max_extent_ratio=r.max_extent_ratio,
    )


def odometry_model(cfg: PipelineConfig) -> OdometryModel:
    o = cfg.sim.odometry
    return OdometryModel(
        trans_sigma=o.trans_sigma,
        rot_sigma_deg=o.rot_sigma_deg,
        bias_trans=o.bias_trans,
        bias_rot_deg=o.bias_rot_deg,
    )


def default_routes(
    world: WorldSpec, robots: list[str]
) -> dict[str, list[tuple[float, float]]]:
    """Rectangular loops in horizontal bands with enough overlap for closures."""
    ex, ey = world.extent
    margin = 8.0
    n = len(robots)
    routes = {}
    band = (ey - 2 * margin) * (0.55 if n > 1 else 1.0)
    step = ((ey - 2 * margin) - band) / max(n - 1, 1)
    for i, robot in enumerate(sorted(robots)):
        y0 = margin + i * step
        y1 = y0 + band
        routes[robot] = [
            (margin, y0),
            (ex - margin, y0),
            (ex - margin, y1),
            (margin, y1),
            (margin, y0),
        ]
    return routes


def map_robot(
    world: WorldSpec,
    robot: str,
    waypoints: list[tuple[float, float]],
    cfg: PipelineConfig,
    robot_index: int,
) -> RobotMap:
    run = simulate_run(
        world,
        waypoints,
        odom=odometry_model(cfg),
        sensor_range=cfg.sim.sensor_range,
        seed=cfg.seed * 1000 + robot_index,
        centroid_sigma=cfg.sim.centroid_sigma,
        embedding_sigma=cfg.sim.embedding_sigma,
    )
    params = MapParams(
        submap_spacing=cfg.mapping.submap_spacing,
        place_spacing=cfg.mapping.place_spacing,
        sensor_range=cfg.sim.sensor_range,
        mesh_pitch=cfg.mapping.mesh_pitch,
    )
    return build_robot_map(world, run, robot, params)


def find_loop_closures(maps: list[RobotMap], cfg: PipelineConfig) -> list[LoopClosure]:
    """All-pairs registration: inter-robot pairs plus non-adjacent intra-robot pairs."""
    params = consistency_params(cfg)
    submaps = []
    for m in sorted(maps, key=lambda m: m.robot):
        submaps.extend(m.submaps)
    closures = []
    for i in range(len(submaps)):
        for j in range(i + 1, len(submaps)):
            a, b = submaps[i], submaps[j]
            if a.robot == b.robot and abs(a.index - b.index) < 2:
                continue
            lc = register_submaps(a, b, params)
            if lc is not None:
                closures.append(lc)
    return closures


def build_pose_graph(
    maps: list[RobotMap], closures: list[LoopClosure], cfg: PipelineConfig
) -> PoseGraph:
    nodes = {}
    odom_edges = []
    o = cfg.sim.odometry
    odom_info = diagonal_information(
        max(o.trans_sigma, 1e-3), np.radians(max(o.rot_sigma_deg, 0.05))
    )
    loop_info = diagonal_information(
        cfg.registration.loop_trans_sigma, np.radians(cfg.registration.loop_rot_sigma_deg)
    )
    for m in sorted(maps, key=lambda m: m.robot):
        for k, pose in enumerate(m.noisy_keyframes):
            nodes[(m.robot, k)] = pose
        for k in range(1, len(m.noisy_keyframes)):
            rel = m.noisy_keyframes[k - 1].inverse().compose(m.noisy_keyframes[k])
            odom_edges.append(
                BetweenMeasurement((m.robot, k - 1), (m.robot, k), rel, odom_info)
            )
    anchors = {m.robot: {sm.index: sm.opened_at_keyframe for sm in m.submaps} for m in maps}
    loop_edges = []
    for lc in closures:
        fa = (lc.from_submap[0], anchors[lc.from_submap[0]][lc.from_submap[1]])
        fb = (lc.to_submap[0], anchors[lc.to_submap[0]][lc.to_submap[1]])
        loop_edges.append(BetweenMeasurement(fa, fb, lc.relative, loop_info))
    return PoseGraph(nodes=nodes, odometry_edges=odom_edges, loop_edges=loop_edges)


def _offset_graph(graph: SceneGraph, base: int) -> SceneGraph:
    out = SceneGraph()
    for node in graph.nodes.values():
        out.add_node(
            SceneNode(
                id=(node.layer, node.id[1] + base),
                layer=node.layer,
                class_label=node.class_label,
                position=node.position,
                attributes=dict(node.attributes),
            )
        )
    for child, parent in graph.parent_edges.items():
        out.set_parent((child[0], child[1] + base), (parent[0], parent[1] + base))
    for a, b in graph.adjacency_edges:
        out.add_adjacency((a[0], a[1] + base), (b[0], b[1] + base))
    return out


def combine_graphs(maps: list[RobotMap]) -> SceneGraph:
    combined = SceneGraph()
    for i, m in enumerate(sorted(maps, key=lambda m: m.robot)):
        shifted = _offset_graph(m.graph, (i + 1) * ROBOT_ID_STRIDE)
        combined.nodes.update(shifted.nodes)
        combined.parent_edges.update(shifted.parent_edges)
        combined.adjacency_edges |= shifted.adjacency_edges
    return combined


class FusedMap:
    def __init__(
        self,
        graph: SceneGraph,
        optimized: dict,
        rejected: list,
        closures: list[LoopClosure],
        merge_log: list,
        submaps: list[Submap],
        robots: list[str],
    ):
        self.graph = graph
        self.optimized = optimized
        self.rejected = rejected
        self.closures = closures
        self.merge_log = merge_log
        self.submaps = submaps
        self.robots = robots


def fuse_maps(maps: list[RobotMap], cfg: PipelineConfig) -> FusedMap:
    closures = find_loop_closures(maps, cfg)
    graph = build_pose_graph(maps, closures, cfg)
    optimized, rejected = optimize(
        graph,
        huber_delta=cfg.fusion.huber_delta,
        chi2_gate=cfg.fusion.chi2_gate,
        max_iters=cfg.fusion.max_iters,
    )
    combined = combine_graphs(maps)
    old_keyframes = dict(graph.nodes)
    corrected = fusion_mod.interpolate_nodes(
        combined, old_keyframes, optimized, k=cfg.fusion.interpolation_k
    )
    fused_graph, merge_log = fusion_mod.merge_nodes(
        corrected, tau_object=cfg.fusion.tau_object, tau_place=cfg.tau_place
    )
    corrected_submaps = []
    for m in sorted(maps, key=lambda m: m.robot):
        for sm in m.submaps:
            corrected_submaps.append(
                Submap(
                    id=sm.id,
                    center_pose=optimized[(m.robot, sm.opened_at_keyframe)],
                    objects=sm.objects,
                    opened_at_keyframe=sm.opened_at_keyframe,
                )
            )
    return FusedMap(
        graph=fused_graph,
        optimized=optimized,
        rejected=rejected,
        closures=closures,
        merge_log=merge_log,
        submaps=corrected_submaps,
        robots=sorted(m.robot for m in maps),
    )


def shift_run_frame(run: SimRun, offset_inv: Pose3) -> SimRun:
    """Re-express a run in a different odometry frame (relocalization queries)."""
    from .objectmap import Observation

    new_obs = []
    for obs_k in run.observations:
        new_obs.append(
            [
                Observation(
                    track_id=o.track_id,
                    position=offset_inv.apply(o.position),
                    embedding=o.embedding,
                    extents=o.extents,
                    shape_descriptor=o.shape_descriptor,
                    class_label=o.class_label,
                )
                for o in obs_k
            ]
        )
    return SimRun(
        gt_keyframes=list(run.gt_keyframes),
        noisy_keyframes=[offset_inv.compose(p) for p in run.noisy_keyframes],
        observations=new_obs,
    )


def relocalize_robot(
    world: WorldSpec,
    fused: FusedMap,
    robot: str,
    waypoints: list[tuple[float, float]],
    cfg: PipelineConfig,
    robot_index: int,
) -> dict:
    """Simulate a fresh traversal in an unknown frame and estimate the offset."""
    from .objectmap import segment_trajectory

    rc = cfg.relocalize
    offset = Pose3.from_yaw(np.radians(rc.offset_yaw_deg), np.array(rc.offset_trans))
    run = simulate_run(
        world,
        waypoints,
        odom=odometry_model(cfg),
        sensor_range=cfg.sim.sensor_range,
        seed=cfg.seed * 1000 + 500 + robot_index,
        centroid_sigma=cfg.sim.centroid_sigma,
        embedding_sigma=cfg.sim.embedding_sigma,
    )
    local = shift_run_frame(run, offset.inverse())
    query = segment_trajectory(
        list(zip(local.noisy_keyframes, local.observations)),
        spacing=cfg.mapping.submap_spacing,
        robot=f"{robot}-query",
    )
    estimate = relocalize(
        query,
        fused.submaps,
        consistency_params(cfg),
        cluster_tol=(rc.tol_trans, rc.tol_rot_deg),
    )
    if estimate is None:
        return {"robot": robot, "success": False, "estimate": None, "truth": pose_to_json(offset)}
    te, re = pose_error(estimate, offset)
    return {
        "robot": robot,
        "success": bool(te <= rc.tol_trans and re <= rc.tol_rot_deg),
        "estimate": pose_to_json(estimate),
        "truth": pose_to_json(offset),
        "trans_err": te,
        "rot_err_deg": re,
    }


def query_segment(route: list[tuple[float, float]], fraction: float) -> list[tuple[float, float]]:
    pts = np.array(route, dtype=float)
    seg = np.diff(pts, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    total = lengths.sum()
    target = total * fraction
    out = [tuple(pts[0])]
    walked = 0.0
    for i, L in enumerate(lengths):
        if walked + L >= target:
            f = (target - walked) / L
            out.append(tuple(pts[i] + f * seg[i]))
            break
        walked += L
        out.append(tuple(pts[i + 1]))
    return out


def traversable_labels(world: WorldSpec) -> set[str]:
    labels = {label for label, _ in world.terrain_patches}
    return labels - UNTRAVERSABLE_LABELS


def build_bundle(graph: SceneGraph, robots: list[str], instruction: str = "") -> PromptBundle:
    caps = {
        r: ROBOT_CAPABILITIES.get(r, "ground robot; can move to places and inspect objects")
        for r in sorted(robots)
    }
    return PromptBundle(
        task_description=DEFAULT_TASK_DESCRIPTION,
        domain_description=DEFAULT_DOMAIN_DESCRIPTION,
        capability_descriptions=caps,
        scene_text=serialize_scene(graph),
        in_context_examples=default_examples(sorted(robots)),
        instruction=instruction,
    )


def ground_instruction(
    graph: SceneGraph, robots: list[str], instruction: str, client
) -> dict:
    bundle = build_bundle(graph, robots)
    response = ground(instruction, bundle, client)
    return {
        "instruction": instruction,
        "goals": {
            robot: pddl.print_goal(goal)
            for robot, goal in sorted(response.per_robot_goals.items())
        },
        "raw_text": response.raw_text,
    }


def start_place_for(graph: SceneGraph, robot: str, nav) -> int:
    """Nearest traversable place to the robot's agent node."""
    agent = None
    for node in graph.nodes_in_layer(Layer.AGENT):
        if node.class_label == robot:
            agent = node
            break
    if agent is None:
        raise ValueError(f"no agent node for robot {robot!r}")
    best, best_d = None, np.inf
    for n in sorted(nav.nodes):
        d = float(np.linalg.norm(np.array(nav.nodes[n]["pos"]) - agent.position))
        if d < best_d:
            best, best_d = n, d
    if best is None:
        raise ValueError("fused graph has no traversable places")
    return best


def plan_goals(
    fused_graph: SceneGraph,
    goals: dict[str, str],
    world: WorldSpec,
    cfg: PipelineConfig,
) -> dict[str, dict]:
    nav = nav_from_scenegraph(fused_graph, traversable_labels(world))
    out = {}
    for robot in sorted(goals):
        goal = pddl.parse_goal(goals[robot])
        start = start_place_for(fused_graph, robot, nav)
        result = planner.plan(
            fused_graph,
            nav,
            start,
            goal,
            inspect_range=cfg.planner.inspect_range,
            node_budget=cfg.planner.node_budget,
        )
        entry = {"robot": robot, "start": start, "status": result.status, "goal": goals[robot]}
        if result.plan is not None:
            avoid = planner.avoid_places(goal)
            entry["plan"] = planner.plan_to_json(result.plan)
            entry["valid"] = planner.validate_plan(result.plan, nav, goal, avoid, start=start)
        out[robot] = entry
    return out


def execute_plans(
    fused_graph: SceneGraph, plans: dict[str, dict], world: WorldSpec
) -> dict[str, dict]:
    cells = {
        n.id[1]: np.array(n.position) for n in fused_graph.nodes_in_layer(Layer.SURFACE_PLACE)
    }
    out = {}
    for robot in sorted(plans):
        entry = plans[robot]
        if entry.get("plan") is None:
            out[robot] = {"robot": robot, "reached_goal": False, "error": "no plan"}
            continue
        goal = pddl.parse_goal(entry["goal"])
        plan_obj = planner.plan_from_json(entry["plan"])
        report = execute(
            plan_obj, goal, cells, entry["start"], avoid=planner.avoid_places(goal)
        )
        out[robot] = {
            "robot": robot,
            "reached_goal": report.reached_goal,
            "trace": report.trace,
            "inspected": sorted(report.inspected),
            "violations": report.violations,
        }
    return out


def eval_fusion(world: WorldSpec, maps: list[RobotMap], fused: FusedMap) -> dict:
    est_traj = {}
    gt_traj = {}
    odom_traj = {}
    for m in maps:
        est_traj[m.robot] = [
            fused.optimized[(m.robot, k)].trans for k in range(len(m.noisy_keyframes))
        ]
        gt_traj[m.robot] = [p.trans for p in m.gt_keyframes]
        odom_traj[m.robot] = [p.trans for p in m.noisy_keyframes]
    est_objects = [
        (n.class_label, np.array(n.position))
        for n in fused.graph.nodes_in_layer(Layer.OBJECT)
    ]
    gt_objects = [(o.class_label, np.array(o.position)) for o in world.objects]
    m = fusion_mod.metrics(est_traj, gt_traj, est_objects, gt_objects)
    m["odometry_ate_rmse"] = fusion_mod.ate_rmse(odom_traj, gt_traj)
    m["rejected_loop_edges"] = len(fused.rejected)
    m["loop_closures"] = len(fused.closures)
    return m


# -- JSON artifact conversion -------------------------------------------------

def robot_map_to_json(m: RobotMap) -> dict:
    return {
        "robot": m.robot,
        "object_map": object_map_to_json(m.robot, m.submaps),
        "graph": graph_to_json(m.graph),
        "keyframes": [pose_to_json(p) for p in m.noisy_keyframes],
        "gt_keyframes": [pose_to_json(p) for p in m.gt_keyframes],
    }


def robot_map_from_json(d: dict) -> RobotMap:
    return RobotMap(
        robot=d["robot"],
        submaps=object_map_from_json(d["object_map"]),
        graph=graph_from_json(d["graph"]),
        gt_keyframes=[pose_from_json(p) for p in d["gt_keyframes"]],
        noisy_keyframes=[pose_from_json(p) for p in d["keyframes"]],
    )


def fused_map_to_json(f: FusedMap) -> dict:
    by_robot: dict[str, list] = {r: [] for r in f.robots}
    for (robot, k), pose in sorted(f.optimized.items()):
        by_robot[robot].append({"index": k, "pose": pose_to_json(pose)})
    submaps_by_robot = {
        r: object_map_to_json(r, [s for s in f.submaps if s.robot == r]) for r in f.robots
    }
    return {
        "graph": graph_to_json(f.graph),
        "poses": by_robot,
        "rejected": [
            {"from": list(e.from_key), "to": list(e.to_key)} for e in f.rejected
        ],
        "loop_closures": [loop_closure_to_json(lc) for lc in f.closures],
        "merge_log": [
            [[a[0].value, a[1]], [b[0].value, b[1]]] for a, b in f.merge_log
        ],
        "submaps": submaps_by_robot,
        "robots": f.robots,
    }


def fused_map_from_json(d: dict) -> FusedMap:
    optimized = {}
    for robot, entries in d["poses"].items():
        for e in entries:
            optimized[(robot, int(e["index"]))] = pose_from_json(e["pose"])
    submaps = []
    for r in d["robots"]:
        submaps.extend(object_map_from_json(d["submaps"][r]))
    return FusedMap(
        graph=graph_from_json(d["graph"]),
        optimized=optimized,
        rejected=list(d.get("rejected", [])),
        closures=[loop_closure_from_json(x) for x in d["loop_closures"]],
        merge_log=list(d.get("merge_log", [])),
        submaps=submaps,
        robots=list(d["robots"]),
    )


# -- fixtures and clients ------------------------------------------------------

def packaged_data(name: str) -> Path:
    return Path(str(resources.files("fleetmap").joinpath("data", name)))


def load_mock_records(path: str | Path | None = None) -> list[dict]:
    p = Path(path) if path else packaged_data("pipeline_mock.jsonl")
    records = []
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def make_client(cfg: PipelineConfig, mock_records: list[dict] | None = None):
    mode = cfg.grounding.client
    if mode == "mock":
        records = mock_records or load_mock_records(cfg.grounding.mock_fixture)
        return MockClient({r["instruction"]: r["response"] for r in records})
    if mode == "replay":
        cassette = cfg.grounding.cassette or str(packaged_data("pipeline_cassette.jsonl"))
        return ReplayClient(cassette)
    if mode == "live":
        return LiveClient()
    raise ValueError(f"unknown client mode {mode!r}")


def run_pipeline(cfg: PipelineConfig, mock_records: list[dict] | None = None) -> dict:
    """All stages in order; the returned dict holds every artifact plus the
    per-robot Ground/Plan/Execute summary."""
    world = generate_world(cfg.seed, cfg.world.n_objects, cfg.world.extent)
    robots = sorted(cfg.robots)
    routes = default_routes(world, robots)
    maps = [map_robot(world, r, routes[r], cfg, i) for i, r in enumerate(robots)]
    fused = fuse_maps(maps, cfg)

    reloc = {
        r: relocalize_robot(
            world,
            fused,
            r,
            query_segment(routes[r], cfg.relocalize.segment_fraction),
            cfg,
            i,
        )
        for i, r in enumerate(robots)
    }

    if cfg.grounding.client == "mock":
        records = mock_records or load_mock_records(cfg.grounding.mock_fixture)
    else:
        records = mock_records or []
    instruction = cfg.grounding.instruction
    if instruction is None:
        if not records:
            raise ValueError("no instruction configured and no fixture records available")
        instruction = records[0]["instruction"]
    client = make_client(cfg, records if cfg.grounding.client == "mock" else None)
    ground_out = ground_instruction(fused.graph, robots, instruction, client)

    truth = {}
    for rec in records:
        if rec["instruction"] == instruction and "truth" in rec:
            truth = {r: pddl.parse_goal(s) for r, s in rec["truth"].items()}
            break
    ground_ok = {}
    for robot in robots:
        got = pddl.parse_goal(ground_out["goals"][robot])
        want = truth.get(robot, pddl.And(()))
        ground_ok[robot] = pddl.goal_equivalent(got, want)

    plans = plan_goals(fused.graph, ground_out["goals"], world, cfg)
    execs = execute_plans(fused.graph, plans, world)
    metrics = eval_fusion(world, maps, fused)

    summary = {
        robot: {
            "ground": bool(ground_ok[robot]),
            "plan": bool(plans[robot]["status"] == "plan" and plans[robot].get("valid", False)),
            "execute": bool(execs[robot]["reached_goal"]),
            "relocalized": bool(reloc[robot]["success"]),
        }
        for robot in robots
    }
    return {
        "seed": cfg.seed,
        "world": world_to_json(world),
        "maps": {m.robot: robot_map_to_json(m) for m in maps},
        "fused": fused_map_to_json(fused),
        "relocalization": reloc,
        "grounding": {**ground_out, "correct": ground_ok},
        "plans": plans,
        "execution": execs,
        "fusion_metrics": metrics,
        "summary": summary,
    }
