"""Object association between submaps, loop closures, and relocalization.

Candidate object pairs are gated by semantic, shape, and size similarity,
then the pairwise distance-preserving subset with the greatest total
affinity is selected (maximum-weight clique on the consistency graph,
solved exactly at desk scale). Enough associations yield a loop closure;
loop closures against a prior map feed robust transformation averaging
for relocalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3, pose_error, pose_from_json, pose_to_json
from .objectmap import ObjectModel, Submap

EXACT_CLIQUE_LIMIT = 60
GREEDY_RESTARTS = 10
# Keeps the per-axis extent ratio finite for near-degenerate objects.
EXTENT_RATIO_EPS = 0.05


@dataclass(frozen=True)
class ConsistencyParams:
    eps_dist: float = 0.5  # meters, pairwise distance preservation
    min_cos_sim: float = 0.7
    max_shape_diff: float = 0.4  # L1 on shape descriptors
    min_associations: int = 4
    max_extent_ratio: float = 2.0

    def __post_init__(self):
        if self.eps_dist <= 0:
            raise ValueError("eps_dist must be positive")
        if not -1.0 <= self.min_cos_sim <= 1.0:
            raise ValueError("min_cos_sim must be in [-1, 1]")
        if self.max_shape_diff < 0:
            raise ValueError("max_shape_diff must be nonnegative")
        if self.min_associations < 1:
            raise ValueError("min_associations must be >= 1")
        if self.max_extent_ratio < 1.0:
            raise ValueError("max_extent_ratio must be >= 1")


@dataclass(frozen=True)
class LoopClosure:
    from_submap: tuple[str, int]
    to_submap: tuple[str, int]
    relative: Pose3  # pose of to_submap's frame expressed in from_submap's frame
    num_associations: int
    associations: tuple = ()


def candidate_pairs(
    a: Submap, b: Submap, p: ConsistencyParams
) -> list[tuple[int, int, float]]:
    """All (index into a.objects, index into b.objects, affinity) passing the gates."""
    pairs = []
    for i, oa in enumerate(a.objects):
        for k, ob in enumerate(b.objects):
            cos = float(np.dot(oa.embedding, ob.embedding))
            if cos < p.min_cos_sim:
                continue
            shape_diff = float(
                np.sum(np.abs(np.array(oa.shape_descriptor) - np.array(ob.shape_descriptor)))
            )
            if shape_diff > p.max_shape_diff:
                continue
            if not _extents_compatible(oa, ob, p.max_extent_ratio):
                continue
            affinity = (1.0 + cos) / 2.0  # maps gated cosine into (0, 1]
            pairs.append((i, k, affinity))
    return pairs


def _extents_compatible(a: ObjectModel, b: ObjectModel, max_ratio: float) -> bool:
    ea = np.array(a.extents) + EXTENT_RATIO_EPS
    eb = np.array(b.extents) + EXTENT_RATIO_EPS
    ratio = np.maximum(ea, eb) / np.minimum(ea, eb)
    return bool(np.all(ratio <= max_ratio))


def _compatibility_matrix(
    pairs: list[tuple[int, int, float]], a: Submap, b: Submap, eps_dist: float
) -> np.ndarray:
    """adj[u, v] true iff associations u and v can coexist: one-to-one and
    preserving pairwise centroid distance within eps_dist."""
    n = len(pairs)
    ca = np.array([a.objects[i].centroid for i, _, _ in pairs])
    cb = np.array([b.objects[k].centroid for _, k, _ in pairs])
    da = np.linalg.norm(ca[:, None, :] - ca[None, :, :], axis=2)
    db = np.linalg.norm(cb[:, None, :] - cb[None, :, :], axis=2)
    adj = np.abs(da - db) <= eps_dist
    ia = np.array([i for i, _, _ in pairs])
    ib = np.array([k for _, k, _ in pairs])
    distinct = (ia[:, None] != ia[None, :]) & (ib[:, None] != ib[None, :])
    adj &= distinct
    np.fill_diagonal(adj, False)
    return adj


def _pair_sort_key(pairs, selection):
    return tuple(sorted((pairs[u][0], pairs[u][1]) for u in selection))


def _exact_max_weight_clique(
    weights: np.ndarray, adj: np.ndarray
) -> list[int]:
    """Branch-and-bound maximum-weight clique; deterministic tie-breaks."""
    n = len(weights)
    order = sorted(range(n), key=lambda u: (-weights[u], u))
    best: list[int] = []
    best_weight = 0.0

    def expand(current: list[int], cand: list[int], weight: float):
        nonlocal best, best_weight
        if not cand:
            if weight > best_weight + 1e-12:
                best, best_weight = list(current), weight
            return
        remaining = weight + sum(weights[u] for u in cand)
        if remaining < best_weight - 1e-12:
            return
        for idx, u in enumerate(cand):
            bound = weight + sum(weights[v] for v in cand[idx:])
            if bound < best_weight - 1e-12:
                return
            current.append(u)
            new_cand = [v for v in cand[idx + 1 :] if adj[u, v]]
            expand(current, new_cand, weight + weights[u])
            current.pop()
        if weight > best_weight + 1e-12:
            best, best_weight = list(current), weight

    expand([], order, 0.0)
    return best


def _greedy_max_weight_clique(
    weights: np.ndarray, adj: np.ndarray, restarts: int = GREEDY_RESTARTS
) -> list[int]:
    """Greedy clique expansion from rotating seeds plus seeded random restarts."""
    n = len(weights)
    rng = np.random.default_rng(0)
    seeds = list(np.argsort(-weights)[: max(1, restarts // 2)])
    seeds += [int(rng.integers(0, n)) for _ in range(restarts - len(seeds))]
    best: list[int] = []
    best_weight = -1.0
    for seed in seeds:
        clique = [int(seed)]
        cand = [v for v in range(n) if adj[seed, v]]
        while cand:
            u = max(cand, key=lambda v: (weights[v], -v))
            clique.append(u)
            cand = [v for v in cand if adj[u, v]]
        w = float(sum(weights[u] for u in clique))
        if w > best_weight + 1e-12:
            best, best_weight = sorted(clique), w
    return best


def max_consistent_set(
    pairs: list[tuple[int, int, float]], a: Submap, b: Submap, p: ConsistencyParams
) -> list[tuple[int, int]]:
    """Largest-affinity one-to-one association subset preserving pairwise distances."""
    if not pairs:
        return []
    adj = _compatibility_matrix(pairs, a, b, p.eps_dist)
    weights = np.array([aff for _, _, aff in pairs])
    if len(pairs) <= EXACT_CLIQUE_LIMIT:
        chosen = _exact_max_weight_clique(weights, adj)
        # Among equal-weight optima prefer the lexicographically lowest id set.
        chosen = _canonical_equal_weight(chosen, weights, adj, pairs)
    else:
        chosen = _greedy_max_weight_clique(weights, adj)
    return sorted((pairs[u][0], pairs[u][1]) for u in chosen)


def _canonical_equal_weight(chosen, weights, adj, pairs):
    """Deterministic tie-break: re-run restricted to ties is overkill; instead
    swap any member for an equal-weight lower-id alternative that keeps the
    clique property."""
    chosen = sorted(chosen, key=lambda u: (pairs[u][0], pairs[u][1]))
    n = len(weights)
    improved = True
    while improved:
        improved = False
        for pos, u in enumerate(chosen):
            others = [v for v in chosen if v != u]
            for w in range(n):
                if w == u or w in chosen:
                    continue
                if abs(weights[w] - weights[u]) > 1e-12:
                    continue
                if (pairs[w][0], pairs[w][1]) >= (pairs[u][0], pairs[u][1]):
                    continue
                if all(adj[w, v] for v in others):
                    chosen[pos] = w
                    chosen.sort(key=lambda x: (pairs[x][0], pairs[x][1]))
                    improved = True
                    break
            if improved:
                break
    return chosen


def estimate_transform(
    associations: list[tuple[int, int]], a: Submap, b: Submap
) -> Pose3:
    """Least-squares rigid transform T minimizing sum ||T(c_a) - c_b||^2."""
    if len(associations) < 3:
        raise ValueError("degenerate alignment: need at least 3 associations")
    pa = np.array([a.objects[i].centroid for i, _ in associations])
    pb = np.array([b.objects[k].centroid for _, k in associations])
    return fit_rigid_transform(pa, pb)


def fit_rigid_transform(src: np.ndarray, dst: np.ndarray) -> Pose3:
    """Kabsch/SVD alignment of matched point sets (no scale), with reflection fix."""
    if src.shape[0] < 3:
        raise ValueError("degenerate alignment: need at least 3 points")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cs = src - mu_s
    cd = dst - mu_d
    sv = np.linalg.svd(cs, compute_uv=False)
    if sv[1] <= 1e-12 + 1e-9 * sv[0]:
        raise ValueError("degenerate alignment: points are collinear")
    H = cs.T @ cd
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = mu_d - R @ mu_s
    return Pose3.from_matrix(R, t)


def register_submaps(a: Submap, b: Submap, p: ConsistencyParams) -> LoopClosure | None:
    """Candidate gating, consistency clique, alignment; None when evidence is thin."""
    pairs = candidate_pairs(a, b, p)
    assoc_idx = max_consistent_set(pairs, a, b, p)
    if len(assoc_idx) < p.min_associations:
        return None
    try:
        t_ab = estimate_transform(assoc_idx, a, b)
    except ValueError:
        return None
    associations = tuple(
        (a.objects[i].id, b.objects[k].id) for i, k in assoc_idx
    )
    # estimate_transform maps a-frame coords into b-frame; the between
    # measurement wants the pose of b's frame expressed in a's frame.
    return LoopClosure(
        from_submap=a.id,
        to_submap=b.id,
        relative=t_ab.inverse(),
        num_associations=len(assoc_idx),
        associations=associations,
    )


def average_poses(poses: list[Pose3]) -> Pose3:
    """Chordal mean: sign-aligned quaternion average plus arithmetic translation mean."""
    quats = np.array([p.quat for p in poses])
    ref = quats[0]
    for i in range(len(quats)):
        if np.dot(quats[i], ref) < 0:
            quats[i] = -quats[i]
    mean_q = quats.mean(axis=0)
    mean_q = mean_q / np.linalg.norm(mean_q)
    mean_t = np.mean([p.trans for p in poses], axis=0)
    return Pose3(mean_q, mean_t)


def relocalize(
    query_submaps: list[Submap],
    map_submaps: list[Submap],
    p: ConsistencyParams,
    cluster_tol: tuple[float, float] = (5.0, 10.0),
) -> Pose3 | None:
    """Estimate the query robot's local->map frame transform.

    Registers every query x map submap pair, converts each loop closure into
    a candidate frame transform, keeps the largest mutually agreeing cluster
    and returns its average.
    """
    candidates: list[Pose3] = []
    for q in sorted(query_submaps, key=lambda s: s.id):
        for m in sorted(map_submaps, key=lambda s: s.id):
            lc = register_submaps(q, m, p)
            if lc is None:
                continue
            # X_map_submap = T ∘ X_query_submap ∘ Z  =>  T = X_m ∘ Z^-1 ∘ X_q^-1
            t = m.center_pose.compose(lc.relative.inverse()).compose(
                q.center_pose.inverse()
            )
            candidates.append(t)
    if not candidates:
        return None
    best: list[int] = []
    for i, ti in enumerate(candidates):
        members = [j for j, tj in enumerate(candidates) if _agree(ti, tj, cluster_tol)]
        if len(members) > len(best):  # ties keep the lowest seed index
            best = members
    if len(candidates) >= 3 and len(best) < 2:
        return None
    return average_poses([candidates[j] for j in best])


def _agree(a: Pose3, b: Pose3, tol: tuple[float, float]) -> bool:
    te, re = pose_error(a, b)
    return te <= tol[0] and re <= tol[1]


def loop_closure_to_json(lc: LoopClosure) -> dict:
    return {
        "from": [lc.from_submap[0], lc.from_submap[1]],
        "to": [lc.to_submap[0], lc.to_submap[1]],
        "pose": pose_to_json(lc.relative),
        "n": lc.num_associations,
        "associations": [[int(x), int(y)] for x, y in lc.associations],
    }


def loop_closure_from_json(d: dict) -> LoopClosure:
    return LoopClosure(
        from_submap=(d["from"][0], int(d["from"][1])),
        to_submap=(d["to"][0], int(d["to"][1])),
        relative=pose_from_json(d["pose"]),
        num_associations=int(d["n"]),
        associations=tuple((int(x), int(y)) for x, y in d.get("associations", [])),
    )
