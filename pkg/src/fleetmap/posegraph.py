"""Sparse Levenberg-Marquardt pose graph optimization with robust loop edges.

Between-factor residuals live in the 6-dof tangent space (translation,
rotation log). Odometry edges are quadratic; loop edges carry a Huber
kernel, and after convergence any loop edge whose chi-square exceeds the
gate is dropped and the problem re-solved once. The first keyframe of the
lowest robot id is held fixed as the gauge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .geometry import (
    BetweenMeasurement,
    Pose3,
    matrix_to_rotvec,
    rotvec_to_matrix,
    skew,
)

NodeKey = tuple[str, int]


@dataclass
class PoseGraph:
    nodes: dict[NodeKey, Pose3]
    odometry_edges: list[BetweenMeasurement] = field(default_factory=list)
    loop_edges: list[BetweenMeasurement] = field(default_factory=list)

    def validate(self) -> None:
        for e in self.odometry_edges + self.loop_edges:
            if e.from_key not in self.nodes or e.to_key not in self.nodes:
                raise ValueError(f"edge {e.from_key}->{e.to_key} references a missing node")
        per_robot: dict[str, list[int]] = {}
        for robot, idx in self.nodes:
            per_robot.setdefault(robot, []).append(idx)
        chains: dict[str, set[tuple[int, int]]] = {r: set() for r in per_robot}
        for e in self.odometry_edges:
            if e.from_key[0] != e.to_key[0]:
                raise ValueError("odometry edge must stay within one robot")
            chains[e.from_key[0]].add((e.from_key[1], e.to_key[1]))
        for robot, indices in per_robot.items():
            indices = sorted(indices)
            expected = {(a, b) for a, b in zip(indices, indices[1:])}
            if chains[robot] != expected:
                raise ValueError(f"odometry edges for {robot} do not form one chain")


def connected_components(graph: PoseGraph) -> list[list[NodeKey]]:
    parent = {k: k for k in graph.nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    for e in graph.odometry_edges + graph.loop_edges:
        union(e.from_key, e.to_key)
    comps: dict[NodeKey, list[NodeKey]] = {}
    for k in graph.nodes:
        comps.setdefault(find(k), []).append(k)
    return sorted((sorted(c) for c in comps.values()), key=lambda c: c[0])


def _jr_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3)."""
    theta = np.linalg.norm(phi)
    W = skew(phi)
    if theta < 1e-9:
        return np.eye(3) + 0.5 * W + W @ W / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + coef * (W @ W)


def _edge_residual(e: BetweenMeasurement, xi: Pose3, xj: Pose3):
    """Residual and Jacobian blocks w.r.t. right perturbations of both nodes."""
    Ri = xi.rotation_matrix
    Rj = xj.rotation_matrix
    Rz = e.relative.rotation_matrix
    tz = e.relative.trans
    u = Ri.T @ (xj.trans - xi.trans)
    Re = Rz.T @ Ri.T @ Rj
    te = Rz.T @ (u - tz)
    r_rot = matrix_to_rotvec(Re)
    r = np.concatenate([te, r_rot])

    Jri = _jr_inv(r_rot)
    Ji = np.zeros((6, 6))
    Ji[:3, :3] = -Rz.T
    Ji[:3, 3:] = Rz.T @ skew(u)
    Ji[3:, 3:] = -Jri @ (Rj.T @ Ri)
    Jj = np.zeros((6, 6))
    Jj[:3, :3] = Re
    Jj[3:, 3:] = Jri
    return r, Ji, Jj


def _apply_delta(pose: Pose3, delta: np.ndarray) -> Pose3:
    R = pose.rotation_matrix
    Rn = R @ rotvec_to_matrix(delta[3:])
    tn = pose.trans + R @ delta[:3]
    return Pose3.from_matrix(Rn, tn)


def _huber_weight(s: float, delta: float) -> float:
    n = np.sqrt(max(s, 0.0))
    return 1.0 if n <= delta else delta / n


def _huber_cost(s: float, delta: float) -> float:
    n = np.sqrt(max(s, 0.0))
    return s if n <= delta else 2.0 * delta * n - delta * delta


class DisconnectedGraphError(ValueError):
    def __init__(self, components: list[list[NodeKey]]):
        names = "; ".join(
            f"component {i}: {c[0]}..{c[-1]} ({len(c)} nodes)" for i, c in enumerate(components)
        )
        super().__init__(f"pose graph is disconnected: {names}")
        self.components = components


def optimize(
    graph: PoseGraph,
    huber_delta: float = 1.0,
    chi2_gate: float = 16.0,
    max_iters: int = 100,
) -> tuple[dict[NodeKey, Pose3], list[BetweenMeasurement]]:
    """LM optimization; returns optimized poses and the rejected loop edges."""
    graph.validate()
    comps = connected_components(graph)
    if len(comps) > 1:
        raise DisconnectedGraphError(comps)

    poses = dict(graph.nodes)
    loop_edges = list(graph.loop_edges)
    poses = _solve(poses, graph.odometry_edges, loop_edges, huber_delta, max_iters)

    rejected = []
    kept = []
    for e in loop_edges:
        r, _, _ = _edge_residual(e, poses[e.from_key], poses[e.to_key])
        chi2 = float(r @ e.info @ r)
        (kept if chi2 <= chi2_gate else rejected).append(e)
    if rejected:
        # Outliers biased the first solve; redo once without them.
        sub = PoseGraph(dict(graph.nodes), list(graph.odometry_edges), kept)
        if len(connected_components(sub)) > 1:
            raise DisconnectedGraphError(connected_components(sub))
        poses = _solve(dict(graph.nodes), graph.odometry_edges, kept, huber_delta, max_iters)
    return poses, rejected


def _solve(
    poses: dict[NodeKey, Pose3],
    odometry_edges: list[BetweenMeasurement],
    loop_edges: list[BetweenMeasurement],
    huber_delta: float,
    max_iters: int,
) -> dict[NodeKey, Pose3]:
    keys = sorted(poses)
    fixed = keys[0]  # first keyframe of the lowest robot id
    free = [k for k in keys if k != fixed]
    index = {k: i for i, k in enumerate(free)}
    n = len(free)
    if n == 0:
        return poses

    edges = [(e, False) for e in odometry_edges] + [(e, True) for e in loop_edges]

    def total_cost(current: dict[NodeKey, Pose3]) -> float:
        c = 0.0
        for e, robust in edges:
            r, _, _ = _edge_residual(e, current[e.from_key], current[e.to_key])
            s = float(r @ e.info @ r)
            c += _huber_cost(s, huber_delta) if robust else s
        return c

    lam = 1e-6
    cost = total_cost(poses)
    grid_r, grid_c = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
    grid_r, grid_c = grid_r.ravel(), grid_c.ravel()
    for _ in range(max_iters):
        rows, cols, vals = [], [], []
        g = np.zeros(6 * n)
        diag = np.zeros(6 * n)
        for e, robust in edges:
            xi, xj = poses[e.from_key], poses[e.to_key]
            r, Ji, Jj = _edge_residual(e, xi, xj)
            s = float(r @ e.info @ r)
            w = _huber_weight(s, huber_delta) if robust else 1.0
            omega = w * e.info
            blocks = []
            if e.from_key != fixed:
                blocks.append((index[e.from_key], Ji))
            if e.to_key != fixed:
                blocks.append((index[e.to_key], Jj))
            for bi, Jb in blocks:
                g[6 * bi : 6 * bi + 6] -= Jb.T @ omega @ r
            for bi, Jb in blocks:
                for bj, Jc in blocks:
                    H = Jb.T @ omega @ Jc
                    rows.append(6 * bi + grid_r)
                    cols.append(6 * bj + grid_c)
                    vals.append(H.ravel())
                    if bi == bj:
                        diag[6 * bi : 6 * bi + 6] += np.diag(H)
        Hmat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(6 * n, 6 * n),
        )

        accepted = False
        for _try in range(8):
            damped = Hmat + sp.diags(np.maximum(diag, 1e-12) * lam)
            try:
                delta = spsolve(damped.tocsc(), g)
            except RuntimeError:
                lam *= 10
                continue
            if not np.all(np.isfinite(delta)):
                lam *= 10
                continue
            trial = dict(poses)
            for k, i in index.items():
                trial[k] = _apply_delta(poses[k], delta[6 * i : 6 * i + 6])
            new_cost = total_cost(trial)
            if new_cost < cost:
                poses = trial
                rel_change = (cost - new_cost) / max(cost, 1e-300)
                cost = new_cost
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel_change < 1e-9:
                    return poses
                break
            lam *= 10
        if not accepted:
            break
        if cost < 1e-18:
            break
    return poses
