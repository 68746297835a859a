"""Hierarchical task planner over the surface-places navigation graph.

Task search runs best-first over (place, visited, inspected) states with
optimistic straight-line move costs; every expanded move is validated
on demand by the shortest-path stream, and states whose optimistic cost
was wrong are re-queued with the true cost. Places negated in the goal
are avoided throughout: no returned plan ever enters one.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from . import pddl
from .scenegraph import Layer, SceneGraph

DEFAULT_INSPECT_RANGE = 3.0
DEFAULT_NODE_BUDGET = 100_000


@dataclass(frozen=True)
class MoveTo:
    place: int
    path: tuple[int, ...]
    cost: float


@dataclass(frozen=True)
class Inspect:
    object: int
    from_place: int


@dataclass
class GroundedPlan:
    steps: list
    total_cost: float


@dataclass
class PlanResult:
    status: str  # "plan" | "infeasible" | "budget_exhausted"
    plan: GroundedPlan | None = None

    @property
    def feasible(self) -> bool:
        return self.status == "plan"


def nav_from_scenegraph(graph: SceneGraph, traversable_labels: set[str] | None = None) -> nx.Graph:
    """Navigation graph from the SURFACE_PLACE layer of a scene graph."""
    g = nx.Graph()
    for node in graph.nodes_in_layer(Layer.SURFACE_PLACE):
        if traversable_labels is not None and node.class_label not in traversable_labels:
            continue
        g.add_node(node.id[1], pos=tuple(float(v) for v in node.position), label=node.class_label)
    for a, b in graph.adjacency_edges:
        if a[0] != Layer.SURFACE_PLACE:
            continue
        ia, ib = a[1], b[1]
        if ia in g.nodes and ib in g.nodes:
            pa = np.array(g.nodes[ia]["pos"])
            pb = np.array(g.nodes[ib]["pos"])
            g.add_edge(ia, ib, weight=float(np.linalg.norm(pa - pb)))
    return g


def path_stream(
    nav: nx.Graph, start: int, goal: int, avoid: frozenset[int] | set[int] = frozenset()
) -> tuple[list[int], float] | None:
    """A* shortest path avoiding the given cells; None when disconnected."""
    if start not in nav.nodes:
        raise ValueError(f"unknown cell id {start}")
    if goal not in nav.nodes:
        raise ValueError(f"unknown cell id {goal}")
    if start in avoid or goal in avoid:
        return None
    if start == goal:
        return [start], 0.0
    pos = {n: np.array(nav.nodes[n]["pos"]) for n in nav.nodes}

    def h(n: int) -> float:
        return float(np.linalg.norm(pos[n] - pos[goal]))

    open_heap: list[tuple[float, float, int]] = [(h(start), 0.0, start)]
    g_cost = {start: 0.0}
    parent: dict[int, int] = {}
    closed: set[int] = set()
    while open_heap:
        f, g, node = heapq.heappop(open_heap)
        if node in closed:
            continue
        closed.add(node)
        if node == goal:
            path = [node]
            while path[-1] in parent:
                path.append(parent[path[-1]])
            return path[::-1], g
        for nb in sorted(nav.neighbors(node)):
            if nb in avoid or nb in closed:
                continue
            ng = g + nav.edges[node, nb]["weight"]
            if nb not in g_cost or ng < g_cost[nb] - 1e-12:
                g_cost[nb] = ng
                parent[nb] = node
                heapq.heappush(open_heap, (ng + h(nb), ng, nb))
    return None


def avoid_places(goal: pddl.GoalExpr) -> frozenset[int]:
    """Place indices whose visited/at atoms appear under an odd negation depth."""
    out: set[int] = set()

    def walk(expr, neg: bool):
        if isinstance(expr, pddl.Atom):
            if neg and expr.predicate in ("visited", "at"):
                out.add(_symbol_index(expr.argument))
        elif isinstance(expr, pddl.Not):
            walk(expr.child, not neg)
        else:
            for c in expr.children:
                walk(c, neg)

    walk(goal, False)
    return frozenset(out)


def _symbol_index(symbol: str) -> int:
    return int(symbol.rsplit("_", 1)[1])


def _goal_atoms_true(visited: frozenset[int], inspected: frozenset[int], current: int) -> set:
    atoms = {pddl.Atom("visited", f"place_{p}") for p in visited}
    atoms |= {pddl.Atom("inspected", f"object_{o}") for o in inspected}
    atoms.add(pddl.Atom("at", f"place_{current}"))
    return atoms


def goal_satisfied(
    goal: pddl.GoalExpr, visited: frozenset[int], inspected: frozenset[int], current: int
) -> bool:
    return pddl.evaluate(goal, _goal_atoms_true(visited, inspected, current))


@dataclass(frozen=True)
class _State:
    current: int
    visited: frozenset[int]  # restricted to goal-relevant places
    inspected: frozenset[int]


@dataclass(order=True)
class _QueueEntry:
    priority: float
    seq: int
    state: _State = field(compare=False)
    steps: tuple = field(compare=False)
    pending_move: int | None = field(compare=False, default=None)


def plan(
    graph: SceneGraph,
    nav: nx.Graph,
    start_place: int,
    goal: pddl.GoalExpr,
    inspect_range: float = DEFAULT_INSPECT_RANGE,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> PlanResult:
    """Search for a grounded plan reaching the goal without entering avoided places."""
    pddl.resolve_goal_symbols(graph, goal)
    if start_place not in nav.nodes:
        raise ValueError(f"unknown cell id {start_place}")
    avoid = avoid_places(goal)

    relevant_places: set[int] = set()
    relevant_objects: set[int] = set()
    for atom in pddl.atoms_of(goal):
        idx = _symbol_index(atom.argument)
        if atom.predicate in ("visited", "at"):
            relevant_places.add(idx)
        else:
            relevant_objects.add(idx)

    object_pos = {
        n.id[1]: np.array(n.position)
        for n in graph.nodes_in_layer(Layer.OBJECT)
        if n.id[1] in relevant_objects
    }
    cell_pos = {n: np.array(nav.nodes[n]["pos"]) for n in nav.nodes}
    # Staging cells: anywhere a goal object can be inspected from.
    staging: dict[int, set[int]] = {o: set() for o in sorted(relevant_objects)}
    for o, opos in sorted(object_pos.items()):
        for c, cpos in cell_pos.items():
            if np.linalg.norm(opos - cpos) <= inspect_range:
                staging[o].add(c)
    move_targets = sorted(
        (relevant_places | set().union(*staging.values())) - avoid
    )

    def in_range_objects(cell: int) -> list[int]:
        return sorted(o for o, cells in staging.items() if cell in cells)

    if start_place in avoid:
        return PlanResult("infeasible")

    start_state = _State(
        current=start_place,
        visited=frozenset({start_place} & relevant_places),
        inspected=frozenset(),
    )
    counter = itertools.count()
    heap: list[_QueueEntry] = [_QueueEntry(0.0, next(counter), start_state, ())]
    best_g: dict[_State, float] = {start_state: 0.0}
    pops = 0

    while heap:
        entry = heapq.heappop(heap)
        pops += 1
        if pops > node_budget:
            return PlanResult("budget_exhausted")
        state, g = entry.state, entry.priority
        if entry.pending_move is not None:
            # Validate the optimistic move that produced this state.
            prior = entry.steps[:-1]
            if prior:
                prev_place = prior[-1][1] if prior[-1][0] == "move" else prior[-1][2]
            else:
                prev_place = start_place
            res = path_stream(nav, prev_place, entry.pending_move, avoid)
            if res is None:
                continue
            path, cost = res
            optimistic = float(
                np.linalg.norm(cell_pos[prev_place] - cell_pos[entry.pending_move])
            )
            true_g = g - optimistic + cost
            crossed = frozenset(path) & relevant_places
            true_state = _State(
                current=state.current,
                visited=state.visited | crossed,
                inspected=state.inspected,
            )
            steps = entry.steps[:-1] + (("move", entry.pending_move, tuple(path), cost),)
            if true_state not in best_g or true_g < best_g[true_state] - 1e-12:
                best_g[true_state] = true_g
                heapq.heappush(
                    heap, _QueueEntry(true_g, next(counter), true_state, steps, None)
                )
            continue
        if g > best_g.get(state, np.inf) + 1e-12:
            continue
        if goal_satisfied(goal, state.visited, state.inspected, state.current):
            return PlanResult("plan", _assemble(entry.steps, g))
        # Inspect actions, zero cost.
        for o in in_range_objects(state.current):
            if o in state.inspected:
                continue
            ns = _State(state.current, state.visited, state.inspected | {o})
            if ns not in best_g or g < best_g[ns] - 1e-12:
                best_g[ns] = g
                steps = entry.steps + (("inspect", o, state.current),)
                heapq.heappush(heap, _QueueEntry(g, next(counter), ns, steps, None))
        # Optimistic moves; validated when popped. Pruning against the best
        # known cost of the optimistic state is safe: the true cost is never
        # lower, and any state reachable via path crossings is also reachable
        # by decomposed moves at no greater cost.
        for target in move_targets:
            if target == state.current:
                continue
            optimistic = g + float(np.linalg.norm(cell_pos[state.current] - cell_pos[target]))
            ns = _State(
                current=target,
                visited=state.visited | ({target} & relevant_places),
                inspected=state.inspected,
            )
            if ns in best_g and optimistic >= best_g[ns] - 1e-12:
                continue
            steps = entry.steps + (("move", target, (), 0.0),)
            heapq.heappush(
                heap, _QueueEntry(optimistic, next(counter), ns, steps, target)
            )
    return PlanResult("infeasible")


def _assemble(steps: tuple, total_cost: float) -> GroundedPlan:
    out = []
    for step in steps:
        if step[0] == "move":
            _, place, path, cost = step
            out.append(MoveTo(place=place, path=tuple(path), cost=cost))
        else:
            _, obj, from_place = step
            out.append(Inspect(object=obj, from_place=from_place))
    move_cost = sum(s.cost for s in out if isinstance(s, MoveTo))
    return GroundedPlan(steps=out, total_cost=float(move_cost))


def validate_plan(
    plan_: GroundedPlan,
    nav: nx.Graph,
    goal: pddl.GoalExpr,
    avoid: frozenset[int] | set[int],
    start: int | None = None,
) -> bool:
    """Replay a plan: chained paths, nav-feasible edges, avoid places untouched,
    and the goal formula satisfied by the final trace."""
    current = start
    visited: set[int] = set()
    inspected: set[int] = set()
    if current is not None:
        if current not in nav.nodes or current in avoid:
            return False
        visited.add(current)
    for step in plan_.steps:
        if isinstance(step, MoveTo):
            if not step.path:
                return False
            if current is not None and step.path[0] != current:
                return False
            if step.path[-1] != step.place:
                return False
            for a, b in zip(step.path, step.path[1:]):
                if not nav.has_edge(a, b):
                    return False
            if any(c in avoid for c in step.path):
                return False
            if current is None:
                visited.add(step.path[0])
            visited.update(step.path)
            current = step.place
        elif isinstance(step, Inspect):
            if current is None:
                current = step.from_place
                if current not in nav.nodes or current in avoid:
                    return False
                visited.add(current)
            elif step.from_place != current:
                return False
            inspected.add(step.object)
        else:
            return False
    if current is None:
        return False
    return goal_satisfied(goal, frozenset(visited), frozenset(inspected), current)


def plan_to_json(p: GroundedPlan) -> dict:
    steps = []
    for s in p.steps:
        if isinstance(s, MoveTo):
            steps.append(
                {"type": "move", "to": s.place, "path": list(s.path), "cost": s.cost}
            )
        else:
            steps.append({"type": "inspect", "object": s.object, "from": s.from_place})
    return {"steps": steps, "cost": p.total_cost}


def plan_from_json(d: dict) -> GroundedPlan:
    steps = []
    for s in d["steps"]:
        if s["type"] == "move":
            steps.append(MoveTo(place=int(s["to"]), path=tuple(s["path"]), cost=float(s["cost"])))
        else:
            steps.append(Inspect(object=int(s["object"]), from_place=int(s["from"])))
    return GroundedPlan(steps=steps, total_cost=float(d["cost"]))
