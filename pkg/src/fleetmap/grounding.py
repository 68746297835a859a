"""Natural-language instruction grounding against the fused scene graph.

Assembles a prompt (task, domain, robot capabilities, scene text,
in-context examples, instruction), sends it to a language-model client,
and parses per-robot goal blocks of the form `ROBOT <name>: GOAL <sexpr>`.
Scoring compares responses against ground-truth goals by logical
equivalence, per linguistic category.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import pddl
from .scenegraph import Layer, SceneGraph

log = logging.getLogger(__name__)

CATEGORIES = (
    "direct_concepts",
    "unambiguous_action_command",
    "unambiguous_goal_command",
    "coreference_resolution",
    "spatial_relation_disambiguation",
    "region_level_disambiguation",
    "ambiguous_role_assignment",
)

LIVE_API_KEY_ENV = "FLEETMAP_LLM_API_KEY"
LIVE_BASE_URL_ENV = "FLEETMAP_LLM_BASE_URL"
LIVE_MODEL_ENV = "FLEETMAP_LLM_MODEL"


class TransportError(RuntimeError):
    """Retriable client failure (network, HTTP 5xx)."""


class ResponseFormatError(ValueError):
    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


def serialize_scene(graph: SceneGraph) -> str:
    """Deterministic text listing of objects (with region membership) and regions."""
    lines = ["objects:"]
    for node in graph.nodes_in_layer(Layer.OBJECT):
        x, y, z = (f"{v:.1f}" for v in node.position)
        line = f"object_{node.id[1]}: {node.class_label} at ({x}, {y}, {z})"
        place = graph.parent_of(node.id)
        region = graph.parent_of(place) if place is not None else None
        if region is not None:
            line += f" in region_{region[1]}"
        lines.append(line)
    lines.append("regions:")
    for node in graph.nodes_in_layer(Layer.REGION):
        lines.append(f"region_{node.id[1]}: {node.class_label}")
    return "\n".join(lines) + "\n"


DEFAULT_TASK_DESCRIPTION = (
    "Translate the operator instruction into one goal per robot, using only "
    "symbols from the scene listing."
)
DEFAULT_DOMAIN_DESCRIPTION = (
    "Goals are s-expressions over (visited place_N), (at place_N), and "
    "(inspected object_N), combined with and/or/not. Respond with one line "
    "per robot: ROBOT <name>: GOAL <s-expression>. Omit robots with no task."
)


@dataclass
class PromptBundle:
    task_description: str
    domain_description: str
    capability_descriptions: dict[str, str]
    scene_text: str
    in_context_examples: list[tuple[str, str]]
    instruction: str = ""

    def __post_init__(self):
        if not self.in_context_examples:
            raise ValueError("at least one in-context example is required")

    def render(self, instruction: str | None = None) -> str:
        parts = [self.task_description, self.domain_description]
        for robot in sorted(self.capability_descriptions):
            parts.append(f"robot {robot}: {self.capability_descriptions[robot]}")
        parts.append("scene:")
        parts.append(self.scene_text.rstrip("\n"))
        parts.append("examples:")
        for instr, resp in self.in_context_examples:
            parts.append(f"instruction: {instr}")
            parts.append(resp)
        parts.append(f"instruction: {instruction if instruction is not None else self.instruction}")
        return "\n".join(parts) + "\n"


def default_examples(robots: list[str]) -> list[tuple[str, str]]:
    r = robots[0] if robots else "spot"
    examples = [
        (
            f"{r}, inspect object 3 and then wait at place 5.",
            f"ROBOT {r}: GOAL (and (inspected object_3) (at place_5))",
        ),
        (
            f"{r}, visit place 1 but keep out of place 2.",
            f"ROBOT {r}: GOAL (and (visited place_1) (not (visited place_2)))",
        ),
    ]
    if len(robots) > 1:
        r2 = robots[1]
        examples.append(
            (
                f"{r}, look at object 7 while {r2} goes to place 4.",
                f"ROBOT {r}: GOAL (inspected object_7)\nROBOT {r2}: GOAL (visited place_4)",
            )
        )
    return examples


@dataclass
class GroundingResponse:
    per_robot_goals: dict[str, pddl.GoalExpr]
    raw_text: str


@dataclass
class GroundingTrial:
    category: str
    instruction: str
    # Each alternative is an acceptable robot->goal assignment.
    truth_alternatives: list[dict[str, pddl.GoalExpr]]

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if not self.truth_alternatives:
            raise ValueError("trial needs at least one ground-truth assignment")


class MockClient:
    """Deterministic fixture: exact instruction text -> canned response."""

    def __init__(self, fixture: dict[str, str]):
        self.fixture = dict(fixture)

    def complete(self, prompt: str, instruction: str) -> str:
        if instruction not in self.fixture:
            raise KeyError(f"mock fixture has no response for instruction {instruction!r}")
        return self.fixture[instruction]


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ReplayClient:
    """Replays recorded responses keyed by prompt hash."""

    def __init__(self, cassette_path: str | Path):
        records = []
        with open(cassette_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        self.responses = {r["prompt_hash"]: r["response"] for r in records}

    @classmethod
    def from_records(cls, records: list[dict]) -> "ReplayClient":
        client = cls.__new__(cls)
        client.responses = {r["prompt_hash"]: r["response"] for r in records}
        return client

    def complete(self, prompt: str, instruction: str) -> str:
        key = prompt_hash(prompt)
        if key not in self.responses:
            raise KeyError(f"cassette has no response for prompt hash {key}")
        return self.responses[key]


class RecordingClient:
    """Wraps another client and appends every exchange to a cassette."""

    def __init__(self, inner, cassette_path: str | Path):
        self.inner = inner
        self.cassette_path = Path(cassette_path)

    def complete(self, prompt: str, instruction: str) -> str:
        response = self.inner.complete(prompt, instruction)
        with open(self.cassette_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"prompt_hash": prompt_hash(prompt), "response": response}) + "\n")
        return response


class LiveClient:
    """Chat-completions endpoint; base URL and key come from the environment."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        timeout: float = 60.0,
    ):
        self.base_url = base_url or os.environ.get(LIVE_BASE_URL_ENV, "")
        self.api_key = api_key or os.environ.get(LIVE_API_KEY_ENV, "")
        self.model = model or os.environ.get(LIVE_MODEL_ENV, "gpt-4.1")
        self.timeout = timeout
        if not self.base_url:
            raise ValueError(f"live client needs a base URL ({LIVE_BASE_URL_ENV})")

    def complete(self, prompt: str, instruction: str) -> str:
        import httpx

        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
        }
        log.info("live request: %s", json.dumps(body)[:2000])
        try:
            resp = httpx.post(
                self.base_url.rstrip("/") + "/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}")
        if resp.status_code != 200:
            raise ResponseFormatError(f"HTTP {resp.status_code}: {resp.text[:500]}", resp.text)
        log.info("live response: %s", resp.text[:2000])
        return resp.json()["choices"][0]["message"]["content"]


def parse_response(raw_text: str, known_robots: set[str]) -> dict[str, pddl.GoalExpr]:
    goals: dict[str, pddl.GoalExpr] = {}
    for line in raw_text.splitlines():
        line = line.strip()
        if not line.upper().startswith("ROBOT "):
            continue
        rest = line[len("ROBOT ") :]
        if ":" not in rest:
            raise ResponseFormatError(f"malformed robot block: {line!r}", raw_text)
        name, _, tail = rest.partition(":")
        name = name.strip().lower()
        tail = tail.strip()
        if not tail.upper().startswith("GOAL "):
            raise ResponseFormatError(f"missing GOAL marker: {line!r}", raw_text)
        sexpr = tail[len("GOAL ") :].strip()
        if name not in known_robots:
            raise ResponseFormatError(f"unknown robot {name!r} in response", raw_text)
        try:
            goals[name] = pddl.parse_goal(sexpr)
        except ValueError as exc:
            raise ResponseFormatError(f"goal for {name} does not parse: {exc}", raw_text) from exc
    if not goals:
        raise ResponseFormatError("no ROBOT blocks found", raw_text)
    return goals


def ground(instruction: str, bundle: PromptBundle, client) -> GroundingResponse:
    """One prompt round-trip; robots absent from the response get a no-op goal."""
    prompt = bundle.render(instruction)
    raw = client.complete(prompt, instruction)
    robots = {r.lower() for r in bundle.capability_descriptions}
    goals = parse_response(raw, robots)
    for robot in sorted(robots):
        goals.setdefault(robot, pddl.And(()))
    return GroundingResponse(per_robot_goals=goals, raw_text=raw)


def _assignment_correct(
    response: dict[str, pddl.GoalExpr], truth: dict[str, pddl.GoalExpr], robots: set[str]
) -> bool:
    for robot in robots:
        got = response.get(robot, pddl.And(()))
        want = truth.get(robot, pddl.And(()))
        if not pddl.goal_equivalent(got, want):
            return False
    return True


def score_trials(trials: list[GroundingTrial], bundle: PromptBundle, client) -> dict:
    """Per-category and total correct counts, Table-style."""
    if not trials:
        raise ValueError("no trials given")
    robots = {r.lower() for r in bundle.capability_descriptions}
    per_category: dict[str, list[int]] = {}
    failures = []
    for idx, trial in enumerate(trials):
        counts = per_category.setdefault(trial.category, [0, 0])
        counts[1] += 1
        try:
            response = ground(trial.instruction, bundle, client)
        except Exception as exc:
            log.warning("trial %d errored: %s", idx, exc)
            failures.append({"index": idx, "instruction": trial.instruction, "error": str(exc)})
            continue
        ok = any(
            _assignment_correct(response.per_robot_goals, alt, robots)
            for alt in trial.truth_alternatives
        )
        if ok:
            counts[0] += 1
        else:
            failures.append(
                {
                    "index": idx,
                    "instruction": trial.instruction,
                    "response": response.raw_text,
                }
            )
    total_correct = sum(c for c, _ in per_category.values())
    total = sum(n for _, n in per_category.values())
    return {
        "per_category": {k: list(v) for k, v in sorted(per_category.items())},
        "total": [total_correct, total],
        "total_str": f"{total_correct} / {total}",
        "failures": failures,
    }


def trial_to_json(trial: GroundingTrial) -> dict:
    alts = [
        {robot: pddl.print_goal(goal) for robot, goal in sorted(alt.items())}
        for alt in trial.truth_alternatives
    ]
    record = {"category": trial.category, "instruction": trial.instruction}
    record["truth"] = alts[0] if len(alts) == 1 else alts
    return record


def trial_from_json(d: dict) -> GroundingTrial:
    raw = d["truth"]
    alts = raw if isinstance(raw, list) else [raw]
    return GroundingTrial(
        category=d["category"],
        instruction=d["instruction"],
        truth_alternatives=[
            {robot: pddl.parse_goal(sexpr) for robot, sexpr in alt.items()} for alt in alts
        ],
    )


def load_trials(path: str | Path) -> list[GroundingTrial]:
    trials = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trials.append(trial_from_json(json.loads(line)))
    return trials
