"""Layered scene graph: objects, surface places, regions, and agents.

Node ids are (layer, index) pairs. Parent edges express containment
(object -> surface place -> region); adjacency edges connect nodes within
one layer. Instances are treated as immutable: editing operations return
new graphs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Layer(str, Enum):
    OBJECT = "OBJECT"
    SURFACE_PLACE = "SURFACE_PLACE"
    REGION = "REGION"
    AGENT = "AGENT"


NodeId = tuple[Layer, int]

# Containment is only allowed along these (child layer, parent layer) pairs.
ALLOWED_PARENT_LAYERS = {
    (Layer.OBJECT, Layer.SURFACE_PLACE),
    (Layer.SURFACE_PLACE, Layer.REGION),
}


@dataclass(frozen=True)
class SceneNode:
    id: NodeId
    layer: Layer
    class_label: str
    position: np.ndarray
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ValueError(f"node {self.id}: position must be a finite 3-vector")
        pos = pos.copy()
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "id", (Layer(self.id[0]), int(self.id[1])))
        object.__setattr__(self, "layer", Layer(self.layer))


def _norm_pair(a: NodeId, b: NodeId) -> tuple[NodeId, NodeId]:
    return (a, b) if _id_key(a) <= _id_key(b) else (b, a)


def _id_key(node_id: NodeId):
    return (node_id[0].value, node_id[1])


class SceneGraph:
    def __init__(
        self,
        nodes: dict[NodeId, SceneNode] | None = None,
        parent_edges: dict[NodeId, NodeId] | None = None,
        adjacency_edges: set[tuple[NodeId, NodeId]] | None = None,
    ):
        self.nodes: dict[NodeId, SceneNode] = dict(nodes or {})
        self.parent_edges: dict[NodeId, NodeId] = dict(parent_edges or {})
        self.adjacency_edges: set[tuple[NodeId, NodeId]] = {
            _norm_pair(a, b) for a, b in (adjacency_edges or set())
        }

    def add_node(self, node: SceneNode) -> None:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id}")
        self.nodes[node.id] = node

    def set_parent(self, child: NodeId, parent: NodeId) -> None:
        self.parent_edges[child] = parent

    def add_adjacency(self, a: NodeId, b: NodeId) -> None:
        self.adjacency_edges.add(_norm_pair(a, b))

    def nodes_in_layer(self, layer: Layer) -> list[SceneNode]:
        return sorted(
            (n for n in self.nodes.values() if n.layer == layer), key=lambda n: _id_key(n.id)
        )

    def parent_of(self, node_id: NodeId) -> NodeId | None:
        return self.parent_edges.get(node_id)

    def copy(self) -> "SceneGraph":
        return SceneGraph(self.nodes, self.parent_edges, self.adjacency_edges)

    def __eq__(self, other):
        if not isinstance(other, SceneGraph):
            return NotImplemented
        if set(self.nodes) != set(other.nodes):
            return False
        for nid, node in self.nodes.items():
            o = other.nodes[nid]
            if node.layer != o.layer or node.class_label != o.class_label:
                return False
            if not np.array_equal(node.position, o.position):
                return False
            if node.attributes != o.attributes:
                return False
        return (
            self.parent_edges == other.parent_edges
            and self.adjacency_edges == other.adjacency_edges
        )


def validate_graph(g: SceneGraph) -> list[str]:
    """Check all scene-graph invariants; returns one message per violation."""
    violations = []
    for nid, node in g.nodes.items():
        if nid != node.id:
            violations.append(f"node keyed {nid} carries id {node.id}")
        if nid[0] != node.layer:
            violations.append(f"node {nid}: key layer differs from node layer {node.layer}")
    for child, parent in g.parent_edges.items():
        if child not in g.nodes:
            violations.append(f"parent edge {child}->{parent}: missing child")
            continue
        if parent not in g.nodes:
            violations.append(f"parent edge {child}->{parent}: missing parent")
            continue
        pair = (g.nodes[child].layer, g.nodes[parent].layer)
        if pair not in ALLOWED_PARENT_LAYERS:
            violations.append(
                f"parent edge {child}->{parent}: layer pair {pair[0].value}->{pair[1].value} not allowed"
            )
    for a, b in sorted(g.adjacency_edges, key=lambda e: (_id_key(e[0]), _id_key(e[1]))):
        if a not in g.nodes or b not in g.nodes:
            violations.append(f"adjacency edge {a}--{b}: missing endpoint")
            continue
        if g.nodes[a].layer != g.nodes[b].layer:
            violations.append(f"adjacency edge {a}--{b}: endpoints in different layers")
        if a == b:
            violations.append(f"adjacency edge {a}--{b}: self loop")
    return violations


def _jsonable_attrs(attrs: dict) -> dict:
    out = {}
    for k in sorted(attrs):
        v = attrs[k]
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        elif isinstance(v, (list, tuple)):
            v = [float(x) if isinstance(x, (np.floating, float)) else x for x in v]
        out[k] = v
    return out


def graph_to_json(g: SceneGraph) -> dict:
    """Canonical JSON form; node and edge order is sorted for reproducibility."""
    nodes = []
    for node in sorted(g.nodes.values(), key=lambda n: _id_key(n.id)):
        nodes.append(
            {
                "id": [node.id[0].value, node.id[1]],
                "layer": node.layer.value,
                "class": node.class_label,
                "pos": [float(v) for v in node.position],
                "attrs": _jsonable_attrs(node.attributes),
            }
        )
    parents = sorted(
        (
            [[child[0].value, child[1]], [parent[0].value, parent[1]]]
            for child, parent in g.parent_edges.items()
        ),
        key=lambda e: (e[0][0], e[0][1]),
    )
    adjacency = sorted(
        (
            [[a[0].value, a[1]], [b[0].value, b[1]]]
            for a, b in g.adjacency_edges
        ),
        key=lambda e: (e[0][0], e[0][1], e[1][0], e[1][1]),
    )
    return {"nodes": nodes, "parents": parents, "adjacency": adjacency}


def _id_from_json(v) -> NodeId:
    return (Layer(v[0]), int(v[1]))


def graph_from_json(d: dict) -> SceneGraph:
    g = SceneGraph()
    for nd in d["nodes"]:
        g.add_node(
            SceneNode(
                id=_id_from_json(nd["id"]),
                layer=Layer(nd["layer"]),
                class_label=nd["class"],
                position=np.array(nd["pos"], dtype=float),
                attributes=dict(nd.get("attrs", {})),
            )
        )
    for child, parent in d.get("parents", []):
        g.set_parent(_id_from_json(child), _id_from_json(parent))
    for a, b in d.get("adjacency", []):
        g.add_adjacency(_id_from_json(a), _id_from_json(b))
    return g


def dumps_graph(g: SceneGraph) -> str:
    return json.dumps(graph_to_json(g), indent=2)


def loads_graph(text: str) -> SceneGraph:
    return graph_from_json(json.loads(text))
