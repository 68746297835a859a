#!/usr/bin/env python3
"""Regenerate the bundled grounding fixtures and the pipeline mock fixture.

Outputs land in src/fleetmap/data/. Rerun after changing the prompt format,
the scene serializer, or the default pipeline configuration.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "fleetmap" / "data"

from fleetmap import pddl, pipeline as pl, planner
from fleetmap.config import PipelineConfig
from fleetmap.grounding import prompt_hash
from fleetmap.scenegraph import Layer, SceneGraph, SceneNode, graph_to_json
from fleetmap.sim import generate_world

ROBOTS = ["husky", "spot"]


# --- fixture scene for the grounding evaluation -------------------------------

def build_scene() -> SceneGraph:
    g = SceneGraph()
    regions = [
        (0, "parking_lot", (10.0, 10.0, 0.0)),
        (1, "north_field", (10.0, 40.0, 0.0)),
        (2, "shore", (40.0, 25.0, 0.0)),
    ]
    for idx, label, pos in regions:
        g.add_node(SceneNode((Layer.REGION, idx), Layer.REGION, label, np.array(pos)))
    places = [
        (0, "road", (5.0, 5.0, 0.0), 0),
        (1, "road", (15.0, 5.0, 0.0), 0),
        (2, "sidewalk", (10.0, 15.0, 0.0), 0),
        (3, "grass", (5.0, 35.0, 0.0), 1),
        (4, "grass", (15.0, 40.0, 0.0), 1),
        (5, "grass", (10.0, 45.0, 0.0), 1),
        (6, "rocks", (35.0, 20.0, 0.0), 2),
        (7, "grass", (45.0, 25.0, 0.0), 2),
        (8, "sidewalk", (40.0, 30.0, 0.0), 2),
    ]
    for idx, label, pos, region in places:
        g.add_node(SceneNode((Layer.SURFACE_PLACE, idx), Layer.SURFACE_PLACE, label, np.array(pos)))
        g.set_parent((Layer.SURFACE_PLACE, idx), (Layer.REGION, region))
    for a, b in [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5), (4, 6), (6, 7), (7, 8), (6, 8)]:
        g.add_adjacency((Layer.SURFACE_PLACE, a), (Layer.SURFACE_PLACE, b))
    objects = [
        (0, "box", (5.5, 6.0, 0.4), 0),
        (1, "box", (14.0, 6.5, 0.4), 1),   # closest box to the bag (object 10)
        (2, "box", (44.0, 24.0, 0.4), 7),
        (3, "sign", (6.0, 4.0, 1.0), 0),   # parking lot sign
        (4, "sign", (16.0, 4.5, 1.0), 1),  # parking lot sign
        (5, "sign", (11.0, 44.0, 1.0), 5),  # north field sign
        (6, "trash", (9.0, 14.0, 0.5), 2),  # unique trash
        (7, "pole", (4.0, 34.0, 1.8), 3),
        (8, "pole", (36.0, 21.0, 1.8), 6),
        (9, "window", (14.5, 39.0, 1.2), 4),  # unique window
        (10, "bag", (13.5, 7.5, 0.3), 1),     # unique bag
        (11, "barrel", (6.5, 36.0, 0.6), 3),
        (12, "barrel", (46.0, 26.0, 0.6), 7),
        (13, "cone", (10.5, 16.0, 0.45), 2),
        (14, "cone", (41.0, 31.0, 0.45), 8),
    ]
    for idx, label, pos, place in objects:
        g.add_node(SceneNode((Layer.OBJECT, idx), Layer.OBJECT, label, np.array(pos)))
        g.set_parent((Layer.OBJECT, idx), (Layer.SURFACE_PLACE, place))
    return g


def A(pred, arg):
    return f"({pred} {arg})"


def AND(*xs):
    return "(and " + " ".join(xs) + ")" if xs else "(and)"


def OR(*xs):
    return "(or " + " ".join(xs) + ")"


def NOT(x):
    return f"(not {x})"


INS = lambda i: A("inspected", f"object_{i}")
VIS = lambda i: A("visited", f"place_{i}")
AT = lambda i: A("at", f"place_{i}")


def build_trials() -> list[dict]:
    """70 trials: 7 categories x 10. `response` is what the cassette replays;
    `correct` marks whether that response should score as correct."""
    t = []

    def trial(category, instruction, truth, response=None, correct=True):
        t.append(
            {
                "category": category,
                "instruction": instruction,
                "truth": truth,
                "response": response,
                "correct": correct,
            }
        )

    # -- direct scene graph concepts (10/10 correct) --
    trial("direct_concepts", "spot, inspect objects 0, 3, and 7.",
          {"spot": AND(INS(0), INS(3), INS(7))})
    trial("direct_concepts", "husky, inspect objects 1 and 2.",
          {"husky": AND(INS(1), INS(2))})
    trial("direct_concepts", "spot, visit places 2 and 4.",
          {"spot": AND(VIS(2), VIS(4))})
    trial("direct_concepts", "husky, go to place 6.", {"husky": VIS(6)})
    trial("direct_concepts", "spot, inspect object 9.", {"spot": INS(9)})
    trial("direct_concepts", "husky, inspect objects 11, 12, and 13.",
          {"husky": AND(INS(11), INS(12), INS(13))})
    trial("direct_concepts", "spot, visit place 1 and inspect object 10.",
          {"spot": AND(VIS(1), INS(10))})
    trial("direct_concepts", "husky, visit place 3 but avoid place 2.",
          {"husky": AND(VIS(3), NOT(VIS(2)))})
    trial("direct_concepts", "spot, inspect object 5; husky, inspect object 8.",
          {"spot": INS(5), "husky": INS(8)})
    trial("direct_concepts", "husky, end at place 8.", {"husky": AT(8)})

    # -- unambiguous action command (9/10; one response inspects the wrong object) --
    trial("unambiguous_action_command", "spot, inspect the trash.", {"spot": INS(6)})
    trial("unambiguous_action_command", "husky, inspect the window.", {"husky": INS(9)})
    trial("unambiguous_action_command", "spot, check out the bag.", {"spot": INS(10)})
    trial("unambiguous_action_command", "husky, inspect every sign.",
          {"husky": AND(INS(3), INS(4), INS(5))})
    trial("unambiguous_action_command", "spot, inspect all the boxes.",
          {"spot": AND(INS(0), INS(1), INS(2))})
    trial("unambiguous_action_command", "husky, inspect both barrels.",
          {"husky": AND(INS(11), INS(12))})
    trial("unambiguous_action_command", "spot, look over each cone.",
          {"spot": AND(INS(13), INS(14))},
          response={"spot": AND(INS(13), INS(12))}, correct=False)
    trial("unambiguous_action_command", "husky, inspect the two poles.",
          {"husky": AND(INS(7), INS(8))})
    trial("unambiguous_action_command", "spot, take a look at the window.", {"spot": INS(9)})
    trial("unambiguous_action_command", "husky, examine the trash.", {"husky": INS(6)})

    # -- unambiguous goal command (9/10; one response picks a neighboring place) --
    trial("unambiguous_goal_command", "spot, be by the window.", {"spot": AT(4)})
    trial("unambiguous_goal_command", "husky, end up next to the trash.", {"husky": AT(2)})
    trial("unambiguous_goal_command", "spot, finish at the rocks.", {"spot": AT(6)})
    trial("unambiguous_goal_command", "husky, wait by the bag.", {"husky": AT(1)})
    trial("unambiguous_goal_command", "spot, make sure the sidewalk near the shore gets visited.",
          {"spot": VIS(8)})
    trial("unambiguous_goal_command", "husky, be at the grass nearest the pole in the north field.",
          {"husky": AT(3)},
          response={"husky": AT(5)}, correct=False)
    trial("unambiguous_goal_command", "spot, stand by the parking lot sign at place 0.",
          {"spot": AT(0)})
    trial("unambiguous_goal_command", "husky, never enter place 6 while getting to place 7.",
          {"husky": AND(VIS(7), NOT(VIS(6)))})
    trial("unambiguous_goal_command", "spot, reach the far grass in the shore area.", {"spot": AT(7)})
    trial("unambiguous_goal_command", "husky, visit the sidewalk in the parking lot.", {"husky": VIS(2)})

    # -- co-reference resolution (8/10) --
    trial("coreference_resolution", "The boxes are unsafe. spot, inspect one of them.",
          {"spot": OR(INS(0), INS(1), INS(2))})
    trial("coreference_resolution", "The signs need reading. husky, check them all.",
          {"husky": AND(INS(3), INS(4), INS(5))})
    trial("coreference_resolution", "There is a window on the grass. spot, look at it.",
          {"spot": INS(9)})
    trial("coreference_resolution", "The barrels worry me. husky, inspect both of them.",
          {"husky": AND(INS(11), INS(12))})
    trial("coreference_resolution", "Cones mark the hazards. spot, inspect either of them.",
          {"spot": OR(INS(13), INS(14))})
    trial("coreference_resolution", "The trash bin smells. husky, go inspect it.",
          {"husky": INS(6)},
          response={"husky": INS(10)}, correct=False)
    trial("coreference_resolution", "Two poles hold the wires. spot, inspect them.",
          {"spot": AND(INS(7), INS(8))})
    trial("coreference_resolution", "A bag was left out. husky, check it.",
          {"husky": INS(10)})
    trial("coreference_resolution", "The boxes again. spot, inspect all of them this time.",
          {"spot": AND(INS(0), INS(1), INS(2))},
          response={"spot": AND(INS(0), INS(1))}, correct=False)
    trial("coreference_resolution", "Those rocks look loose. husky, go stand on them.",
          {"husky": VIS(6)})

    # -- spatial relation disambiguation (6/10, incl. the move-vs-inspect failure) --
    trial("spatial_relation_disambiguation", "spot, inspect the box closest to the bag.",
          {"spot": INS(1)})
    trial("spatial_relation_disambiguation", "husky, inspect the pole nearest the rocks.",
          {"husky": INS(8)})
    trial("spatial_relation_disambiguation", "spot, inspect the sign closest to the window.",
          {"spot": INS(5)},
          response={"spot": INS(4)}, correct=False)
    trial("spatial_relation_disambiguation", "husky, visit the place closest to the trash.",
          {"husky": VIS(2)})
    trial("spatial_relation_disambiguation", "spot, inspect the barrel nearest the shore grass.",
          {"spot": INS(12)})
    trial("spatial_relation_disambiguation",
          "spot, either visit the four closest signs or checkout two nearby boxes.",
          {"spot": OR(AND(VIS(0), VIS(1), VIS(5)), AND(INS(0), INS(1)))},
          # The failure mode: object references resolve, but the robot is sent
          # to the boxes instead of inspecting them.
          response={"spot": OR(AND(VIS(0), VIS(1), VIS(5)), AND(VIS(0), VIS(1)))},
          correct=False)
    trial("spatial_relation_disambiguation", "husky, inspect the cone closest to the trash.",
          {"husky": INS(13)})
    trial("spatial_relation_disambiguation", "spot, inspect the box farthest from the parking lot.",
          {"spot": INS(2)},
          response={"spot": INS(0)}, correct=False)
    trial("spatial_relation_disambiguation", "husky, inspect the sign nearest place 0.",
          {"husky": INS(3)})
    trial("spatial_relation_disambiguation", "spot, go to the grass next to the window.",
          {"spot": VIS(4)},
          response={"spot": VIS(7)}, correct=False)

    # -- region-level disambiguation (7/10) --
    trial("region_level_disambiguation", "spot, checkout both signs in the parking lot.",
          {"spot": AND(INS(3), INS(4))})
    trial("region_level_disambiguation", "husky, inspect the box in the north field.",
          {"husky": INS(1)})
    trial("region_level_disambiguation", "spot, inspect everything labeled barrel at the shore.",
          {"spot": INS(12)})
    trial("region_level_disambiguation", "husky, inspect the pole in the north field.",
          {"husky": INS(7)},
          response={"husky": INS(8)}, correct=False)
    trial("region_level_disambiguation", "spot, visit every place in the parking lot.",
          {"spot": AND(VIS(0), VIS(1), VIS(2))})
    trial("region_level_disambiguation", "husky, inspect the sign outside the parking lot.",
          {"husky": INS(5)})
    trial("region_level_disambiguation", "spot, inspect the cone at the shore.",
          {"spot": INS(14)},
          response={"spot": INS(13)}, correct=False)
    trial("region_level_disambiguation", "husky, inspect the box at the shore.",
          {"husky": INS(2)})
    trial("region_level_disambiguation", "spot, inspect the bag in the north field.",
          {"spot": INS(10)},
          response={"spot": AND()}, correct=False)
    trial("region_level_disambiguation", "husky, visit the rocks in the shore region.",
          {"husky": VIS(6)})

    # -- ambiguous role assignment (9/10); both assignments are acceptable --
    both = lambda a, b: [{"husky": a, "spot": b}, {"husky": b, "spot": a}]
    trial("ambiguous_role_assignment",
          "One of you go to the window. The other should inspect the trash.",
          both(AT(4), INS(6)))
    trial("ambiguous_role_assignment",
          "Someone inspect the bag; someone else inspect the box near it.",
          both(INS(10), INS(1)))
    trial("ambiguous_role_assignment",
          "One robot visits the rocks, the other visits the parking lot sidewalk.",
          both(VIS(6), VIS(2)))
    trial("ambiguous_role_assignment",
          "Split up: cover the two barrels, one each.",
          both(INS(11), INS(12)))
    trial("ambiguous_role_assignment",
          "One of you inspect the window, the other stay at place 0.",
          both(INS(9), AT(0)))
    trial("ambiguous_role_assignment",
          "Someone check the trash and someone check the bag.",
          both(INS(6), INS(10)))
    trial("ambiguous_role_assignment",
          "Each of you inspect one pole.",
          both(INS(7), INS(8)))
    trial("ambiguous_role_assignment",
          "One robot to the shore grass, the other to the north grass at place 5.",
          both(VIS(7), VIS(5)),
          response={"husky": VIS(7), "spot": VIS(7)}, correct=False)
    trial("ambiguous_role_assignment",
          "Somebody has to look at the cones; the rest keep clear of the rocks.",
          both(AND(INS(13), INS(14)), NOT(VIS(6))))
    trial("ambiguous_role_assignment",
          "One of you visit place 3; the other must not enter place 3.",
          both(VIS(3), NOT(VIS(3))))

    return t


def response_text(goals: dict[str, str]) -> str:
    lines = [f"ROBOT {robot}: GOAL {goals[robot]}" for robot in sorted(goals)]
    return "\n".join(lines)


def write_grounding_fixtures() -> None:
    from fleetmap.grounding import CATEGORIES

    scene = build_scene()
    trials = build_trials()
    per_cat = {}
    for tr in trials:
        per_cat.setdefault(tr["category"], []).append(tr)
    assert sorted(per_cat) == sorted(CATEGORIES), sorted(per_cat)
    assert all(len(v) == 10 for v in per_cat.values()), {k: len(v) for k, v in per_cat.items()}

    (DATA_DIR / "grounding_scene.json").write_text(
        json.dumps(graph_to_json(scene), indent=2, sort_keys=True) + "\n"
    )

    bundle = pl.build_bundle(scene, ROBOTS)
    trial_lines = []
    cassette_lines = []
    expected = {}
    for tr in trials:
        truth = tr["truth"]
        alts = truth if isinstance(truth, list) else [truth]
        record = {
            "category": tr["category"],
            "instruction": tr["instruction"],
            "truth": alts[0] if len(alts) == 1 else alts,
        }
        trial_lines.append(json.dumps(record, sort_keys=True))
        resp_goals = tr["response"] if tr["response"] is not None else alts[0]
        raw = response_text(resp_goals)
        cassette_lines.append(
            json.dumps(
                {"prompt_hash": prompt_hash(bundle.render(tr["instruction"])), "response": raw},
                sort_keys=True,
            )
        )
        cat = expected.setdefault(tr["category"], [0, 0])
        cat[1] += 1
        if tr["correct"]:
            cat[0] += 1
    (DATA_DIR / "grounding_trials.jsonl").write_text("\n".join(trial_lines) + "\n")
    (DATA_DIR / "grounding_cassette.jsonl").write_text("\n".join(cassette_lines) + "\n")
    total_ok = sum(v[0] for v in expected.values())
    total = sum(v[1] for v in expected.values())
    (DATA_DIR / "grounding_expected.json").write_text(
        json.dumps(
            {"per_category": dict(sorted(expected.items())), "total": [total_ok, total]},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(f"grounding fixtures: {total_ok}/{total} expected correct")


# --- pipeline mock fixture ------------------------------------------------------

def write_pipeline_fixture() -> None:
    cfg = PipelineConfig()
    world = generate_world(cfg.seed, cfg.world.n_objects, cfg.world.extent)
    robots = sorted(cfg.robots)
    routes = pl.default_routes(world, robots)
    maps = [pl.map_robot(world, r, routes[r], cfg, i) for i, r in enumerate(robots)]
    fused = pl.fuse_maps(maps, cfg)
    nav = planner.nav_from_scenegraph(fused.graph, pl.traversable_labels(world))
    cellpos = {n: np.array(nav.nodes[n]["pos"]) for n in nav.nodes}

    # Robot 0 inspects two objects that sit close to traversable cells.
    inspectable = []
    for node in fused.graph.nodes_in_layer(Layer.OBJECT):
        d = min(np.linalg.norm(cellpos[c] - node.position) for c in nav.nodes)
        if d <= cfg.planner.inspect_range - 1.0:
            inspectable.append(node.id[1])
        if len(inspectable) >= 2:
            break
    assert len(inspectable) >= 2, "no inspectable objects in the fused map"
    o1, o2 = inspectable[:2]

    # Robot 1 visits a place while avoiding another that is not on the way.
    start1 = pl.start_place_for(fused.graph, robots[1], nav)
    target = avoid = None
    cells_sorted = sorted(nav.nodes)
    for cand in cells_sorted:
        if cand == start1:
            continue
        for av in cells_sorted:
            if av in (cand, start1):
                continue
            goal = pddl.parse_goal(f"(and (visited place_{cand}) (not (visited place_{av})))")
            res = planner.plan(fused.graph, nav, start1, goal, cfg.planner.inspect_range, 20000)
            if res.status == "plan":
                target, avoid = cand, av
                break
        if target is not None:
            break
    assert target is not None, "no feasible visit/avoid pair"

    instruction = (
        f"{robots[0]}, inspect object {o1 % pl.ROBOT_ID_STRIDE} and object "
        f"{o2 % pl.ROBOT_ID_STRIDE} (ids object_{o1}, object_{o2}). "
        f"{robots[1]}, go to place_{target} but stay out of place_{avoid}."
    )
    goals = {
        robots[0]: f"(and (inspected object_{o1}) (inspected object_{o2}))",
        robots[1]: f"(and (not (visited place_{avoid})) (visited place_{target}))",
    }
    record = {
        "instruction": instruction,
        "response": response_text(goals),
        "truth": goals,
    }
    (DATA_DIR / "pipeline_mock.jsonl").write_text(json.dumps(record, sort_keys=True) + "\n")

    # Matching cassette for --client replay runs of the same pipeline.
    bundle = pl.build_bundle(fused.graph, robots)
    cassette = {
        "prompt_hash": prompt_hash(bundle.render(instruction)),
        "response": record["response"],
    }
    (DATA_DIR / "pipeline_cassette.jsonl").write_text(json.dumps(cassette, sort_keys=True) + "\n")

    # Verify the full pipeline goes green with this fixture before freezing it.
    result = pl.run_pipeline(cfg, [record])
    summary = result["summary"]
    print("pipeline summary:", json.dumps(summary))
    assert all(
        s["ground"] and s["plan"] and s["execute"] and s["relocalized"] for s in summary.values()
    ), summary
    print("pipeline fixture verified")


if __name__ == "__main__":
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    write_grounding_fixtures()
    write_pipeline_fixture()
    print("fixtures written to", DATA_DIR)
    sys.exit(0)
