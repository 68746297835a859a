"""Goal formula AST, s-expression parser/printer, and PDDL domain generation.

The goal grammar is a typed-STRIPS subset over three unary predicates:
visited/at (surface places) and inspected (objects). And/Or/Not nest
arbitrarily. The canonical printed form lowercases symbols and sorts
And/Or children by their printed text.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .scenegraph import Layer, SceneGraph

PREDICATES = {"visited", "inspected", "at"}

PREDICATE_LAYER = {
    "visited": Layer.SURFACE_PLACE,
    "at": Layer.SURFACE_PLACE,
    "inspected": Layer.OBJECT,
}

SYMBOL_PREFIX = {
    Layer.OBJECT: "object",
    Layer.SURFACE_PLACE: "place",
    Layer.REGION: "region",
    Layer.AGENT: "agent",
}


class GoalParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class Atom:
    predicate: str
    argument: str

    def __post_init__(self):
        if self.predicate not in PREDICATES:
            raise ValueError(f"unknown predicate {self.predicate!r}")
        object.__setattr__(self, "predicate", self.predicate.lower())
        object.__setattr__(self, "argument", self.argument.lower())


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


@dataclass(frozen=True)
class Not:
    child: "GoalExpr"


GoalExpr = Union[Atom, And, Or, Not]


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str | None:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else None

    def expect(self, ch: str):
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            raise GoalParseError(f"expected {ch!r}", self.pos)
        self.pos += 1

    def word(self) -> tuple[str, int]:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos] not in "() " and not self.text[self.pos].isspace()
        ):
            self.pos += 1
        if start == self.pos:
            raise GoalParseError("expected a symbol", start)
        return self.text[start : self.pos].lower(), start


def parse_goal(text: str) -> GoalExpr:
    tok = _Tokenizer(text)
    expr = _parse_expr(tok)
    tok.skip_ws()
    if tok.pos != len(tok.text):
        raise GoalParseError("trailing input", tok.pos)
    return expr


def _parse_expr(tok: _Tokenizer) -> GoalExpr:
    tok.skip_ws()
    open_pos = tok.pos
    tok.expect("(")
    head, head_pos = tok.word()
    if head in ("and", "or"):
        children = []
        while tok.peek() != ")":
            if tok.peek() is None:
                raise GoalParseError("unbalanced parentheses", open_pos)
            children.append(_parse_expr(tok))
        tok.expect(")")
        return And(tuple(children)) if head == "and" else Or(tuple(children))
    if head == "not":
        child = _parse_expr(tok)
        tok.expect(")")
        return Not(child)
    if head in PREDICATES:
        arg, _ = tok.word()
        tok.skip_ws()
        if tok.peek() != ")":
            raise GoalParseError(f"predicate {head} takes exactly one argument", tok.pos)
        tok.expect(")")
        return Atom(head, arg)
    raise GoalParseError(f"unknown predicate {head!r}", head_pos)


def print_goal(goal: GoalExpr) -> str:
    """Canonical text: lowercase, single spaces, And/Or children sorted."""
    if isinstance(goal, Atom):
        return f"({goal.predicate} {goal.argument})"
    if isinstance(goal, Not):
        return f"(not {print_goal(goal.child)})"
    if isinstance(goal, (And, Or)):
        head = "and" if isinstance(goal, And) else "or"
        parts = sorted(print_goal(c) for c in goal.children)
        if not parts:
            return f"({head})"
        return f"({head} " + " ".join(parts) + ")"
    raise TypeError(f"not a goal expression: {goal!r}")


def canonicalize(goal: GoalExpr) -> GoalExpr:
    """Structural normal form matching parse(print(goal))."""
    if isinstance(goal, Atom):
        return goal
    if isinstance(goal, Not):
        return Not(canonicalize(goal.child))
    ctor = And if isinstance(goal, And) else Or
    children = sorted((canonicalize(c) for c in goal.children), key=print_goal)
    return ctor(tuple(children))


def atoms_of(goal: GoalExpr) -> set[Atom]:
    if isinstance(goal, Atom):
        return {goal}
    if isinstance(goal, Not):
        return atoms_of(goal.child)
    out: set[Atom] = set()
    for c in goal.children:
        out |= atoms_of(c)
    return out


def evaluate(goal: GoalExpr, true_atoms: set[Atom]) -> bool:
    if isinstance(goal, Atom):
        return goal in true_atoms
    if isinstance(goal, Not):
        return not evaluate(goal.child, true_atoms)
    if isinstance(goal, And):
        return all(evaluate(c, true_atoms) for c in goal.children)
    if isinstance(goal, Or):
        return any(evaluate(c, true_atoms) for c in goal.children)
    raise TypeError(f"not a goal expression: {goal!r}")


MAX_EQUIVALENCE_ATOMS = 20


def goal_equivalent(g1: GoalExpr, g2: GoalExpr) -> bool:
    """True iff both formulas share a truth table over their atom union."""
    atoms = sorted(atoms_of(g1) | atoms_of(g2), key=lambda a: (a.predicate, a.argument))
    if len(atoms) > MAX_EQUIVALENCE_ATOMS:
        raise ValueError(
            f"too many atoms for exhaustive check ({len(atoms)} > {MAX_EQUIVALENCE_ATOMS})"
        )
    for bits in range(1 << len(atoms)):
        true_atoms = {a for i, a in enumerate(atoms) if bits >> i & 1}
        if evaluate(g1, true_atoms) != evaluate(g2, true_atoms):
            return False
    return True


def node_symbol(node_id) -> str:
    layer, idx = node_id
    return f"{SYMBOL_PREFIX[layer]}_{idx}"


def symbol_table(graph: SceneGraph) -> dict[str, tuple]:
    return {node_symbol(nid): nid for nid in graph.nodes}


DOMAIN_NAME = "fleetmap"

DOMAIN_TEXT = """(define (domain fleetmap)
  (:requirements :strips :typing)
  (:types place object)
  (:predicates
    (at ?p - place)
    (visited ?p - place)
    (inspected ?o - object))
  (:action move
    :parameters (?from - place ?to - place)
    :precondition (at ?from)
    :effect (and (not (at ?from)) (at ?to) (visited ?to)))
  (:action inspect
    :parameters (?o - object ?from - place)
    :precondition (at ?from)
    :effect (inspected ?o)))
"""


def emit_domain() -> str:
    return DOMAIN_TEXT


def resolve_goal_symbols(graph: SceneGraph, goal: GoalExpr) -> dict[str, tuple]:
    """Map every goal atom's symbol to a node id; type-checked per predicate."""
    table = symbol_table(graph)
    resolved = {}
    for atom in sorted(atoms_of(goal), key=lambda a: (a.predicate, a.argument)):
        nid = table.get(atom.argument)
        if nid is None:
            raise ValueError(f"unresolved symbol {atom.argument}")
        want = PREDICATE_LAYER[atom.predicate]
        if nid[0] != want:
            raise ValueError(
                f"symbol {atom.argument} names a {nid[0].value} node; "
                f"{atom.predicate} needs {want.value}"
            )
        resolved[atom.argument] = nid
    return resolved


def emit_problem(graph: SceneGraph, start_place, goal: GoalExpr) -> str:
    """PDDL problem text for the scene graph; raises on unresolved goal symbols."""
    resolve_goal_symbols(graph, goal)
    start_symbol = node_symbol(start_place)
    if start_place not in graph.nodes or start_place[0] != Layer.SURFACE_PLACE:
        raise ValueError(f"unresolved symbol {start_symbol}")
    places = [node_symbol(n.id) for n in graph.nodes_in_layer(Layer.SURFACE_PLACE)]
    objects = [node_symbol(n.id) for n in graph.nodes_in_layer(Layer.OBJECT)]
    lines = [f"(define (problem fleetmap-task) (:domain {DOMAIN_NAME})"]
    lines.append("  (:objects")
    if places:
        lines.append("    " + " ".join(places) + " - place")
    if objects:
        lines.append("    " + " ".join(objects) + " - object")
    lines.append("  )")
    lines.append(f"  (:init (at {start_symbol}) (visited {start_symbol}))")
    lines.append(f"  (:goal {print_goal(goal)})")
    lines.append(")")
    return "\n".join(lines) + "\n"
