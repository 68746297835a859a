"""Command-line pipeline: a thin client of the workbench service.

Every subcommand builds a request, sends it through the service layer
(in-process by default, or to a remote `--server` URL), and writes the
returned JSON artifacts. Exit codes: 0 success, 1 domain error, 2 usage
error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

from .config import PipelineConfig, load_config

EXIT_DOMAIN_ERROR = 1


class StageError(click.ClickException):
    exit_code = EXIT_DOMAIN_ERROR

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")


class ServiceClient:
    """HTTP client for the workbench service; runs the ASGI app in-process
    when no --server URL is given, so the CLI always talks the same wire
    format."""

    def __init__(self, server: str | None = None):
        self.server = server

    def _post(self, path: str, payload: dict) -> httpx.Response:
        if self.server:
            with httpx.Client(base_url=self.server, timeout=None) as client:
                return client.post(path, json=payload)
        import asyncio

        from .service import app

        async def go() -> httpx.Response:
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://fleetmap.internal", timeout=None
            ) as client:
                return await client.post(path, json=payload)

        return asyncio.run(go())

    def post(self, stage: str, path: str, payload: dict) -> dict:
        try:
            resp = self._post(path, payload)
        except httpx.HTTPError as exc:
            raise StageError(stage, f"service unreachable: {exc}") from exc
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", resp.text)
            except Exception:
                detail = resp.text
            raise StageError(stage, str(detail))
        return resp.json()


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(stage: str, path: str | Path):
    p = Path(path)
    if not p.exists():
        raise StageError(stage, f"input file does not exist: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def read_jsonl(stage: str, path: str | Path) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise StageError(stage, f"input file does not exist: {p}")
    return [json.loads(line) for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def graph_of(doc: dict) -> dict:
    """Accept either a raw scene-graph JSON or a fused artifact containing one."""
    return doc["graph"] if "graph" in doc and "nodes" not in doc else doc


def _load_cfg(config_path: str | None, seed: int | None, client: str | None) -> PipelineConfig:
    if config_path:
        p = Path(config_path)
        if not p.exists():
            raise click.UsageError(f"config file does not exist: {p}")
        cfg = load_config(p)
    else:
        cfg = PipelineConfig()
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    if client is not None:
        cfg.grounding.client = client
    return cfg


@click.group()
@click.option("--server", default=None, help="Remote service URL; in-process when omitted.")
@click.pass_context
def main(ctx, server):
    """Multi-robot mapping, fusion, grounding, and planning workbench."""
    ctx.obj = ServiceClient(server)


common_options = [
    click.option("--config", "config_path", default=None, help="YAML config file."),
    click.option("--seed", type=int, default=None, help="Override config seed."),
    click.option("--out", default="out", show_default=True, help="Artifact directory."),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@main.command("gen-world")
@with_common
@click.option("--n-objects", type=int, default=None)
@click.pass_obj
def gen_world(svc, config_path, seed, out, n_objects):
    """Generate a synthetic world with ground truth."""
    cfg = _load_cfg(config_path, seed, None)
    n = n_objects if n_objects is not None else cfg.world.n_objects
    resp = svc.post(
        "gen-world",
        "/world/generate",
        {"seed": cfg.seed, "n_objects": n, "extent": list(cfg.world.extent)},
    )
    write_json(Path(out) / "world.json", resp["world"])
    click.echo(f"gen-world: wrote {out}/world.json ({n} objects, seed {cfg.seed})")


@main.command("map")
@with_common
@click.option("--world", "world_path", required=True)
@click.option("--robot", required=True)
@click.option("--waypoints", "waypoints_path", default=None, help="JSON array of [x, y].")
@click.pass_obj
def map_cmd(svc, config_path, seed, out, world_path, robot, waypoints_path):
    """Build one robot's object map and scene graph."""
    cfg = _load_cfg(config_path, seed, None)
    world = read_json("map", world_path)
    robots = sorted(cfg.robots)
    robot_index = robots.index(robot) if robot in robots else 0
    payload = {
        "world": world,
        "robot": robot,
        "robot_index": robot_index,
        "config": cfg.model_dump(mode="json"),
    }
    if waypoints_path:
        payload["waypoints"] = read_json("map", waypoints_path)
    resp = svc.post("map", "/map/run", payload)
    write_json(Path(out) / f"map_{robot}.json", resp["map"])
    n_submaps = len(resp["map"]["object_map"]["submaps"])
    click.echo(f"map: wrote {out}/map_{robot}.json ({n_submaps} submaps)")


@main.command("fuse")
@with_common
@click.option("--map", "map_paths", multiple=True, required=True)
@click.pass_obj
def fuse(svc, config_path, seed, out, map_paths):
    """Register, optimize, and merge the per-robot maps."""
    cfg = _load_cfg(config_path, seed, None)
    maps = [read_json("fuse", p) for p in map_paths]
    resp = svc.post("fuse", "/fuse/run", {"maps": maps, "config": cfg.model_dump(mode="json")})
    fused = resp["fused"]
    write_json(Path(out) / "fused.json", fused)
    closures_path = Path(out) / "loop_closures.jsonl"
    closures_path.parent.mkdir(parents=True, exist_ok=True)
    with open(closures_path, "w", encoding="utf-8") as fh:
        for lc in fused["loop_closures"]:
            fh.write(json.dumps(lc, sort_keys=True) + "\n")
    click.echo(
        f"fuse: wrote {out}/fused.json ({len(fused['loop_closures'])} closures, "
        f"{len(fused['rejected'])} rejected)"
    )


@main.command("relocalize")
@with_common
@click.option("--world", "world_path", required=True)
@click.option("--fused", "fused_path", required=True)
@click.option("--robot", required=True)
@click.option("--waypoints", "waypoints_path", default=None)
@click.pass_obj
def relocalize_cmd(svc, config_path, seed, out, world_path, fused_path, robot, waypoints_path):
    """Estimate a robot's frame offset against the fused map."""
    cfg = _load_cfg(config_path, seed, None)
    robots = sorted(cfg.robots)
    payload = {
        "world": read_json("relocalize", world_path),
        "fused": read_json("relocalize", fused_path),
        "robot": robot,
        "robot_index": robots.index(robot) if robot in robots else 0,
        "config": cfg.model_dump(mode="json"),
    }
    if waypoints_path:
        payload["waypoints"] = read_json("relocalize", waypoints_path)
    resp = svc.post("relocalize", "/relocalize/run", payload)
    result = resp["result"]
    write_json(Path(out) / f"relocalization_{robot}.json", result)
    verdict = "success" if result["success"] else "failure"
    err = (
        f" ({result['trans_err']:.2f} m, {result['rot_err_deg']:.2f} deg)"
        if result.get("estimate")
        else ""
    )
    click.echo(f"relocalize: {robot} {verdict}{err}")


@main.command("ground")
@with_common
@click.option("--graph", "graph_path", required=True, help="Fused artifact or scene-graph JSON.")
@click.option("--instruction", default=None)
@click.option(
    "--client",
    "client_mode",
    type=click.Choice(["mock", "replay", "live"]),
    default=None,
)
@click.option("--fixture", "fixture_path", default=None, help="Mock fixture JSONL.")
@click.option("--cassette", "cassette_path", default=None, help="Replay cassette JSONL.")
@click.pass_obj
def ground_cmd(
    svc, config_path, seed, out, graph_path, instruction, client_mode, fixture_path, cassette_path
):
    """Ground a natural-language instruction into per-robot goals."""
    from .pipeline import load_mock_records, packaged_data

    cfg = _load_cfg(config_path, seed, client_mode)
    doc = read_json("ground", graph_path)
    payload = {
        "graph": graph_of(doc),
        "robots": sorted(cfg.robots),
        "client": cfg.grounding.client,
    }
    if cfg.grounding.client == "mock":
        try:
            records = load_mock_records(fixture_path or cfg.grounding.mock_fixture)
        except FileNotFoundError as exc:
            raise StageError("ground", f"mock fixture not found: {exc}") from exc
        payload["mock_records"] = records
        if instruction is None:
            instruction = cfg.grounding.instruction or records[0]["instruction"]
    elif cfg.grounding.client == "replay":
        path = cassette_path or cfg.grounding.cassette or str(packaged_data("pipeline_cassette.jsonl"))
        payload["cassette_records"] = read_jsonl("ground", path)
    if instruction is None:
        instruction = cfg.grounding.instruction
    if instruction is None:
        raise click.UsageError("--instruction is required for this client mode")
    payload["instruction"] = instruction
    resp = svc.post("ground", "/ground/run", payload)
    write_json(Path(out) / "goals.json", resp)
    click.echo(f"ground: wrote {out}/goals.json ({len(resp['goals'])} robots)")


@main.command("plan")
@with_common
@click.option("--graph", "graph_path", required=True)
@click.option("--world", "world_path", required=True)
@click.option("--goals", "goals_path", required=True)
@click.pass_obj
def plan_cmd(svc, config_path, seed, out, graph_path, world_path, goals_path):
    """Plan per-robot action sequences for grounded goals."""
    cfg = _load_cfg(config_path, seed, None)
    goals_doc = read_json("plan", goals_path)
    goals = goals_doc.get("goals", goals_doc)
    resp = svc.post(
        "plan",
        "/plan/run",
        {
            "graph": graph_of(read_json("plan", graph_path)),
            "world": read_json("plan", world_path),
            "goals": goals,
            "config": cfg.model_dump(mode="json"),
        },
    )
    write_json(Path(out) / "plans.json", resp["plans"])
    statuses = {r: p["status"] for r, p in resp["plans"].items()}
    click.echo(f"plan: wrote {out}/plans.json {statuses}")


@main.command("execute")
@with_common
@click.option("--graph", "graph_path", required=True)
@click.option("--world", "world_path", required=True)
@click.option("--plans", "plans_path", required=True)
@click.pass_obj
def execute_cmd(svc, config_path, seed, out, graph_path, world_path, plans_path):
    """Execute plans in the simulator and referee goal satisfaction."""
    resp = svc.post(
        "execute",
        "/execute/run",
        {
            "graph": graph_of(read_json("execute", graph_path)),
            "world": read_json("execute", world_path),
            "plans": read_json("execute", plans_path),
        },
    )
    write_json(Path(out) / "execution.json", resp["execution"])
    reached = {r: e["reached_goal"] for r, e in resp["execution"].items()}
    click.echo(f"execute: wrote {out}/execution.json {reached}")


@main.command("eval-fusion")
@with_common
@click.option("--world", "world_path", required=True)
@click.option("--map", "map_paths", multiple=True, required=True)
@click.option("--fused", "fused_path", required=True)
@click.pass_obj
def eval_fusion_cmd(svc, config_path, seed, out, world_path, map_paths, fused_path):
    """ATE RMSE and object precision/recall/IoU against ground truth."""
    resp = svc.post(
        "eval-fusion",
        "/eval/fusion",
        {
            "world": read_json("eval-fusion", world_path),
            "maps": [read_json("eval-fusion", p) for p in map_paths],
            "fused": read_json("eval-fusion", fused_path),
        },
    )
    write_json(Path(out) / "fusion_metrics.json", resp["metrics"])
    m = resp["metrics"]
    click.echo(
        "eval-fusion: ate_rmse={ate_rmse:.3f} precision={precision:.3f} "
        "recall={recall:.3f} iou={iou:.3f}".format(**m)
    )


@main.command("eval-grounding")
@with_common
@click.option("--graph", "graph_path", default=None, help="Defaults to the bundled fixture scene.")
@click.option("--trials", "trials_path", default=None)
@click.option("--cassette", "cassette_path", default=None)
@click.option(
    "--client", "client_mode", type=click.Choice(["mock", "replay", "live"]), default="replay"
)
@click.pass_obj
def eval_grounding_cmd(
    svc, config_path, seed, out, graph_path, trials_path, cassette_path, client_mode
):
    """Score instruction grounding per linguistic category."""
    from .pipeline import packaged_data

    cfg = _load_cfg(config_path, seed, client_mode)
    graph_doc = (
        graph_of(read_json("eval-grounding", graph_path))
        if graph_path
        else read_json("eval-grounding", packaged_data("grounding_scene.json"))
    )
    trials = read_jsonl(
        "eval-grounding", trials_path or packaged_data("grounding_trials.jsonl")
    )
    payload = {
        "graph": graph_doc,
        "robots": sorted(cfg.robots),
        "trials": trials,
        "client": cfg.grounding.client,
    }
    if cfg.grounding.client == "replay":
        payload["cassette_records"] = read_jsonl(
            "eval-grounding", cassette_path or packaged_data("grounding_cassette.jsonl")
        )
    resp = svc.post("eval-grounding", "/eval/grounding", payload)
    write_json(Path(out) / "grounding_scores.json", resp["scores"])
    scores = resp["scores"]
    for cat, (n_ok, n) in scores["per_category"].items():
        click.echo(f"  {cat}: {n_ok}/{n}")
    click.echo(f"eval-grounding: total {scores['total_str']}")


@main.command("pipeline")
@with_common
@click.option(
    "--client",
    "client_mode",
    type=click.Choice(["mock", "replay", "live"]),
    default=None,
)
@click.pass_obj
def pipeline_cmd(svc, config_path, seed, out, client_mode):
    """Run every stage: map, fuse, relocalize, ground, plan, execute."""
    cfg = _load_cfg(config_path, seed, client_mode)
    payload = {"config": cfg.model_dump(mode="json")}
    if cfg.grounding.client == "mock":
        from .pipeline import load_mock_records

        try:
            payload["mock_records"] = load_mock_records(cfg.grounding.mock_fixture)
        except FileNotFoundError as exc:
            raise StageError("pipeline", f"mock fixture not found: {exc}") from exc
    resp = svc.post("pipeline", "/pipeline/run", payload)
    result = resp["result"]
    out_dir = Path(out)
    write_json(out_dir / "world.json", result["world"])
    for robot, m in result["maps"].items():
        write_json(out_dir / f"map_{robot}.json", m)
    write_json(out_dir / "fused.json", result["fused"])
    write_json(out_dir / "relocalization.json", result["relocalization"])
    write_json(out_dir / "goals.json", result["grounding"])
    write_json(out_dir / "plans.json", result["plans"])
    write_json(out_dir / "execution.json", result["execution"])
    write_json(out_dir / "fusion_metrics.json", result["fusion_metrics"])
    write_json(out_dir / "summary.json", result["summary"])
    click.echo(f"pipeline: artifacts in {out_dir}/")
    click.echo("robot        ground  plan    execute relocalized")
    for robot, s in sorted(result["summary"].items()):
        click.echo(
            f"{robot:<12} {str(s['ground']):<7} {str(s['plan']):<7} "
            f"{str(s['execute']):<7} {str(s['relocalized'])}"
        )


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the workbench as an HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
