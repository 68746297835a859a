"""Surface places: Lloyd-style partition of a labeled terrain mesh.

Vertices are grouped into label-pure, evenly spaced cells around generating
centers; neighboring cells (sharing a mesh edge) form the navigation graph
used for path planning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

DEFAULT_PLACE_SPACING = 5.0
SPLIT_FACTOR = 1.5  # cells wider than this times spacing get split

UNLABELED = ""


@dataclass
class TerrainMesh:
    vertices: np.ndarray  # (N, 3)
    labels: list[str]
    adjacency: set[tuple[int, int]]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        if len(self.labels) != len(self.vertices):
            raise ValueError("labels length must equal vertex count")
        norm = set()
        n = len(self.vertices)
        for a, b in self.adjacency:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"adjacency references invalid vertex ({a}, {b})")
            if a != b:
                norm.add((min(a, b), max(a, b)))
        self.adjacency = norm


@dataclass
class SurfacePlaceCell:
    id: int
    center: np.ndarray
    vertex_ids: set[int]
    label: str
    neighbors: set[int] = field(default_factory=set)


def _label_components(mesh: TerrainMesh) -> list[list[int]]:
    """Connected components of same-label vertices, unlabeled excluded."""
    g = nx.Graph()
    labeled = [i for i, lb in enumerate(mesh.labels) if lb != UNLABELED]
    g.add_nodes_from(labeled)
    for a, b in mesh.adjacency:
        if (
            mesh.labels[a] != UNLABELED
            and mesh.labels[a] == mesh.labels[b]
        ):
            g.add_edge(a, b)
    return sorted((sorted(c) for c in nx.connected_components(g)), key=lambda c: c[0])


def _farthest_point_seeds(vertices: np.ndarray, members: list[int], spacing: float) -> list[int]:
    seeds = [members[0]]
    pts = vertices[members]
    dist = np.linalg.norm(pts - vertices[seeds[0]], axis=1)
    while dist.max() > spacing:
        nxt = members[int(np.argmax(dist))]
        seeds.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - vertices[nxt], axis=1))
    return seeds


def partition(
    mesh: TerrainMesh, spacing: float = DEFAULT_PLACE_SPACING, max_iters: int = 50
) -> list[SurfacePlaceCell]:
    """Partition labeled vertices into evenly spaced, label-pure cells.

    Greedy farthest-point seeding per label component, then Lloyd-style
    rounds: assign to nearest same-label center, recenter on the member
    centroid (snapped to a member vertex), split overly wide cells, drop
    empty ones, until assignments are stable.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    labeled = [i for i, lb in enumerate(mesh.labels) if lb != UNLABELED]
    if not labeled:
        return []
    centers: list[int] = []  # center vertex index per cell
    for comp in _label_components(mesh):
        centers.extend(_farthest_point_seeds(mesh.vertices, comp, spacing))

    labels_arr = np.array(mesh.labels)
    labeled_idx = np.array(labeled)
    for _ in range(max_iters):
        assign = _assign_vertices(mesh.vertices, labels_arr, labeled_idx, centers)
        new_centers = []
        split_happened = False
        for ci in range(len(centers)):
            members = assign.get(ci, [])
            if not members:
                continue  # empty cell removed
            pts = mesh.vertices[members]
            centroid = pts.mean(axis=0)
            d_centroid = np.linalg.norm(pts - centroid, axis=1)
            snapped = members[int(np.argmin(d_centroid))]
            new_centers.append(snapped)
            d_center = np.linalg.norm(pts - mesh.vertices[snapped], axis=1)
            if d_center.max() > SPLIT_FACTOR * spacing:
                new_centers.append(members[int(np.argmax(d_center))])
                split_happened = True
        if not split_happened and new_centers == centers:
            break  # assignments are a fixpoint of these centers
        centers = new_centers
    assign = _assign_vertices(mesh.vertices, labels_arr, labeled_idx, centers)

    cells = []
    for ci, center_vertex in enumerate(centers):
        members = assign.get(ci, [])
        if not members:
            continue
        cells.append(
            SurfacePlaceCell(
                id=len(cells),
                center=mesh.vertices[center_vertex].copy(),
                vertex_ids=set(members),
                label=str(labels_arr[center_vertex]),
            )
        )
    _fill_neighbors(cells, mesh)
    return cells


def _assign_vertices(vertices, labels_arr, labeled_idx, centers) -> dict[int, list[int]]:
    """Nearest same-label center per vertex; ties break to the lowest cell id."""
    assign: dict[int, list[int]] = {}
    center_pos = vertices[centers]
    center_labels = labels_arr[centers]
    for label in sorted(set(labels_arr[labeled_idx])):
        cid = np.nonzero(center_labels == label)[0]
        vid = labeled_idx[labels_arr[labeled_idx] == label]
        if len(cid) == 0 or len(vid) == 0:
            continue
        # (v, c) distances; argmin takes the first (lowest cell id) on ties.
        d = np.linalg.norm(vertices[vid][:, None, :] - center_pos[cid][None, :, :], axis=2)
        nearest = cid[np.argmin(d, axis=1)]
        for v, ci in zip(vid, nearest):
            assign.setdefault(int(ci), []).append(int(v))
    return assign


def _fill_neighbors(cells: list[SurfacePlaceCell], mesh: TerrainMesh) -> None:
    vertex_cell: dict[int, int] = {}
    for cell in cells:
        for v in cell.vertex_ids:
            vertex_cell[v] = cell.id
    for a, b in mesh.adjacency:
        ca, cb = vertex_cell.get(a), vertex_cell.get(b)
        if ca is None or cb is None or ca == cb:
            continue
        cells[ca].neighbors.add(cb)
        cells[cb].neighbors.add(ca)


def nav_graph(cells: list[SurfacePlaceCell], traversable_labels: set[str]) -> nx.Graph:
    """Weighted graph over traversable cells; weights are center distances."""
    g = nx.Graph()
    by_id = {c.id: c for c in cells}
    for cell in cells:
        if cell.label in traversable_labels:
            g.add_node(cell.id, pos=tuple(float(v) for v in cell.center), label=cell.label)
    for cell in cells:
        if cell.label not in traversable_labels:
            continue
        for nb in sorted(cell.neighbors):
            if nb <= cell.id or by_id[nb].label not in traversable_labels:
                continue
            w = float(np.linalg.norm(cell.center - by_id[nb].center))
            g.add_edge(cell.id, nb, weight=w)
    return g
