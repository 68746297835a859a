"""Scene-graph fusion: drift correction, node merging, and evaluation metrics.

After pose graph optimization, node positions are corrected by blending the
rigid corrections of their nearest mapping-time keyframes; overlapping
same-class nodes are then merged. Metrics mirror the standard multi-robot
map evaluation: ATE RMSE after global alignment and object precision /
recall / IoU under a distance tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3
from .posegraph import NodeKey
from .scenegraph import Layer, SceneGraph, SceneNode, validate_graph

INTERPOLATION_NEIGHBORS = 3
DEFAULT_TAU_OBJECT = 2.0
DEFAULT_TAU_PLACE = 10.0
OBJECT_MATCH_TOLERANCE = 5.0


@dataclass
class FusionResult:
    optimized_poses: dict[NodeKey, Pose3]
    rejected_edges: list
    fused_graph: SceneGraph
    merge_log: list[tuple] = field(default_factory=list)

    def __post_init__(self):
        violations = validate_graph(self.fused_graph)
        if violations:
            raise ValueError(f"fused graph invalid: {violations[:3]}")


def interpolate_nodes(
    graph: SceneGraph,
    old_keyframes: dict[NodeKey, Pose3],
    new_keyframes: dict[NodeKey, Pose3],
    k: int = INTERPOLATION_NEIGHBORS,
) -> SceneGraph:
    """Re-express node positions through blended keyframe corrections.

    Each node blends the rigid corrections (new ∘ old^-1) of its k nearest
    mapping-time keyframes from its robot of origin, weighted by inverse
    distance.
    """
    missing = set(old_keyframes) ^ set(new_keyframes)
    if missing:
        raise ValueError(f"keyframe sets differ on {sorted(missing)[:3]}")
    by_robot: dict[str, list[NodeKey]] = {}
    for key in sorted(old_keyframes):
        by_robot.setdefault(key[0], []).append(key)

    corrections = {
        key: new_keyframes[key].compose(old_keyframes[key].inverse()) for key in old_keyframes
    }

    out = SceneGraph()
    for node in sorted(graph.nodes.values(), key=lambda n: (n.layer.value, n.id[1])):
        robot = node.attributes.get("robot")
        if robot is None:
            out.add_node(node)  # nodes without provenance stay put
            continue
        keys = by_robot.get(robot, [])
        if not keys:
            raise ValueError(f"node {node.id} originates from {robot!r} which has no keyframes")
        p = np.array(node.position)
        dists = np.array([np.linalg.norm(p - old_keyframes[key].trans) for key in keys])
        nearest = np.argsort(dists, kind="stable")[: max(1, k)]
        weights = 1.0 / (dists[nearest] + 1e-6)
        weights = weights / weights.sum()
        corrected = np.zeros(3)
        for w, idx in zip(weights, nearest):
            corrected += w * corrections[keys[idx]].apply(p)
        out.add_node(
            SceneNode(
                id=node.id,
                layer=node.layer,
                class_label=node.class_label,
                position=corrected,
                attributes=dict(node.attributes),
            )
        )
    out.parent_edges = dict(graph.parent_edges)
    out.adjacency_edges = set(graph.adjacency_edges)
    return out


_MERGE_TAUS = {
    Layer.OBJECT: "tau_object",
    Layer.SURFACE_PLACE: "tau_place",
    Layer.REGION: "tau_place",
}


def merge_nodes(
    graph: SceneGraph,
    tau_object: float = DEFAULT_TAU_OBJECT,
    tau_place: float = DEFAULT_TAU_PLACE,
) -> tuple[SceneGraph, list[tuple]]:
    """Greedily merge same-layer, same-class nodes closer than the layer radius.

    The surviving node (lower id) moves to the count-weighted centroid; edges
    re-target the survivor; repeats until no pair merges.
    """
    taus = {"tau_object": tau_object, "tau_place": tau_place}
    nodes = {nid: n for nid, n in graph.nodes.items()}
    counts = {nid: int(n.attributes.get("merge_count", 1)) for nid, n in graph.nodes.items()}
    positions = {nid: np.array(n.position) for nid, n in graph.nodes.items()}
    redirect: dict = {}
    merge_log: list[tuple] = []

    def resolve(nid):
        while nid in redirect:
            nid = redirect[nid]
        return nid

    changed = True
    while changed:
        changed = False
        ids = sorted(nodes, key=lambda i: (i[0].value, i[1]))
        for ai in range(len(ids)):
            a = ids[ai]
            if a not in nodes:
                continue
            for bi in range(ai + 1, len(ids)):
                b = ids[bi]
                if b not in nodes or a not in nodes:
                    continue
                na, nb = nodes[a], nodes[b]
                if na.layer != nb.layer or na.class_label != nb.class_label:
                    continue
                tau_name = _MERGE_TAUS.get(na.layer)
                if tau_name is None:
                    continue
                if np.linalg.norm(positions[a] - positions[b]) >= taus[tau_name]:
                    continue
                ca, cb = counts[a], counts[b]
                positions[a] = (ca * positions[a] + cb * positions[b]) / (ca + cb)
                counts[a] = ca + cb
                del nodes[b]
                redirect[b] = a
                merge_log.append((b, a))
                changed = True
        # positions updated in place; loop again until a full pass is quiet

    out = SceneGraph()
    for nid in sorted(nodes, key=lambda i: (i[0].value, i[1])):
        n = nodes[nid]
        attrs = dict(n.attributes)
        if counts[nid] > 1:
            attrs["merge_count"] = counts[nid]
        out.add_node(
            SceneNode(
                id=nid,
                layer=n.layer,
                class_label=n.class_label,
                position=positions[nid],
                attributes=attrs,
            )
        )
    for child, parent in sorted(graph.parent_edges.items(), key=lambda e: (e[0][0].value, e[0][1])):
        c, p = resolve(child), resolve(parent)
        if c == p or c in out.parent_edges:
            continue
        out.set_parent(c, p)
    for a, b in sorted(graph.adjacency_edges, key=lambda e: (e[0][0].value, e[0][1], e[1][0].value, e[1][1])):
        ra, rb = resolve(a), resolve(b)
        if ra != rb:
            out.add_adjacency(ra, rb)
    return out, merge_log


def umeyama_alignment(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid (no scale) alignment src -> dst; falls back to translation-only
    when the points do not constrain rotation."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    cs, cd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(cs, compute_uv=False) if len(src) >= 3 else np.zeros(3)
    if len(src) < 3 or sv[1] <= 1e-12 + 1e-9 * sv[0]:
        return np.eye(3), mu_d - mu_s
    H = cs.T @ cd
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, mu_d - R @ mu_s


def _positions(traj) -> np.ndarray:
    pts = []
    for item in traj:
        if isinstance(item, Pose3):
            pts.append(item.trans)
        else:
            pts.append(np.asarray(item, dtype=float))
    return np.array(pts).reshape(-1, 3)


def ate_rmse(
    est_trajectories: dict[str, list],
    gt_trajectories: dict[str, list],
    per_robot: bool = False,
) -> float:
    """RMSE of absolute trajectory error after rigid alignment to ground truth."""
    robots = sorted(est_trajectories)
    if robots != sorted(gt_trajectories):
        raise ValueError("estimate and ground truth must cover the same robots")
    if not robots or all(len(est_trajectories[r]) == 0 for r in robots):
        raise ValueError("empty trajectories")
    groups = [[r] for r in robots] if per_robot else [robots]
    sq_sum, count = 0.0, 0
    for group in groups:
        est = np.vstack([_positions(est_trajectories[r]) for r in group])
        gt = np.vstack([_positions(gt_trajectories[r]) for r in group])
        if est.shape != gt.shape:
            raise ValueError("trajectories must be index-aligned")
        R, t = umeyama_alignment(est, gt)
        aligned = est @ R.T + t
        sq_sum += float(np.sum((aligned - gt) ** 2))
        count += len(est)
    return float(np.sqrt(sq_sum / count))


def match_objects(
    est_objects: list[tuple[str, np.ndarray]],
    gt_objects: list[tuple[str, np.ndarray]],
    tol: float = OBJECT_MATCH_TOLERANCE,
) -> list[tuple[int, int]]:
    """Greedy nearest-first one-to-one matching of same-class objects within tol."""
    candidates = []
    for i, (ce, pe) in enumerate(est_objects):
        for j, (cg, pg) in enumerate(gt_objects):
            if ce != cg:
                continue
            d = float(np.linalg.norm(np.asarray(pe, dtype=float) - np.asarray(pg, dtype=float)))
            if d <= tol:
                candidates.append((d, i, j))
    candidates.sort()
    used_e: set[int] = set()
    used_g: set[int] = set()
    matches = []
    for d, i, j in candidates:
        if i in used_e or j in used_g:
            continue
        used_e.add(i)
        used_g.add(j)
        matches.append((i, j))
    return matches


def metrics(
    est_trajectories: dict[str, list],
    gt_trajectories: dict[str, list],
    est_objects: list[tuple[str, np.ndarray]],
    gt_objects: list[tuple[str, np.ndarray]],
    tol: float = OBJECT_MATCH_TOLERANCE,
    per_robot: bool = False,
) -> dict[str, float]:
    """{ate_rmse, precision, recall, iou} against ground truth."""
    rmse = ate_rmse(est_trajectories, gt_trajectories, per_robot=per_robot)
    tp = len(match_objects(est_objects, gt_objects, tol))
    fp = len(est_objects) - tp
    fn = len(gt_objects) - tp
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    iou = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    return {
        "ate_rmse": rmse,
        "precision": float(precision),
        "recall": float(recall),
        "iou": float(iou),
    }
