import functools
import json
import math
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np
import pydantic
import typer
from pydantic import BaseModel, ConfigDict
from rich.console import Console
from rich.table import Table

from wrsn_charging.action import plan_action
from wrsn_charging.controllers import Controller, ControllerManager
from wrsn_charging.env import Ablation, ChargingEnv, EnvConfig
from wrsn_charging.errors import ConfigError, WRSNError
from wrsn_charging.export import write_csv, write_jsonl, write_observation, write_pgm
from wrsn_charging.lifetime import BS_NODE, LifetimeGraph, connection_times
from wrsn_charging.log import logger
from wrsn_charging.observation import ObservationMask, render
from wrsn_charging.runner import evaluate_many, lifetime_improvement, play_episode
from wrsn_charging.scenario import EnergyParams, generate_instance, load_instance, save_instance
from wrsn_charging.settings import Settings
from wrsn_charging.trainer import Algorithm, TrainerConfig, train

app = typer.Typer()
console = Console()


class RunConfig(BaseModel):
    """Fully resolved command configuration, echoed into every run directory."""

    model_config = ConfigDict(extra="forbid")

    command: str
    options: dict[str, Any]
    env: EnvConfig | None = None
    trainer: TrainerConfig | None = None
    output_dir: Path


class GraphFile(BaseModel):
    class Node(BaseModel):
        id: int
        weight: float

    nodes: list[Node]
    edges: list[tuple[int, int]]


def handle_errors(func):
    """Map package errors onto exit codes: 2 config, 3 validation, 4 invariant."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except WRSNError as e:
            logger.exception(f"{type(e).__name__}: {e}")
            console.print(f"[bold red]{type(e).__name__}:[/bold red] {e}")
            raise typer.Exit(code=e.exit_code) from e
        except pydantic.ValidationError as e:
            console.print(f"[bold red]Invalid configuration:[/bold red] {e}")
            raise typer.Exit(code=ConfigError.exit_code) from e

    return wrapper


def _run_dir(command: str) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    path = Settings().wrsn_out / f"{stamp}-{command}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(config: RunConfig) -> None:
    (config.output_dir / "run_config.json").write_text(config.model_dump_json(indent=2) + "\n")


def _parse_area(area: str) -> tuple[float, float]:
    try:
        width, height = (float(x) for x in area.lower().split("x"))
    except ValueError as e:
        raise ConfigError(f"area must look like 1000x1000, got {area!r}") from e
    return width, height


def _create_controller(spec: str) -> Controller | None:
    return None if spec == "none" else ControllerManager().create(spec)


def _env_config(controller: Controller | None, **overrides: Any) -> EnvConfig:
    """Env settings, taking grid size, charger count and ablation from a checkpoint when one is used."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    manifest = getattr(controller, "manifest", None)
    if manifest is not None:
        overrides.setdefault("grid_size", manifest.grid_size)
        overrides.setdefault("n_chargers", manifest.n_agents)
        overrides["ablation"] = manifest.ablation
    overrides.setdefault("n_chargers", Settings().wrsn_chargers)
    return EnvConfig(**overrides)


@app.command()
@handle_errors
def generate(
    seed: int = typer.Option(0, help="Generator seed"),
    targets: int = typer.Option(5, help="Number of targets"),
    sensors: int = typer.Option(20, help="Number of sensors before repair"),
    area: str = typer.Option("1000x1000", help="Deployment area, WIDTHxHEIGHT in meters"),
    b_packet: float | None = typer.Option(None, help="Bits per packet (raises traffic for short lifetimes)"),
    packet_period: float | None = typer.Option(None, help="Seconds between two packets of a sensor"),
    output: Path | None = typer.Option(None, "--output", "-o", help="Scenario file, default inside the run dir"),
):
    out_dir = _run_dir("generate")
    param_overrides = {k: v for k, v in {"b_packet": b_packet, "packet_period": packet_period}.items() if v}
    params = EnergyParams(**param_overrides)
    instance = generate_instance(seed, _parse_area(area), targets, sensors, params=params)
    path = save_instance(instance, output or out_dir / "scenario.json")
    _echo_config(
        RunConfig(
            command="generate",
            options={"seed": seed, "targets": targets, "sensors": sensors, "area": area, **param_overrides},
            output_dir=out_dir,
        )
    )
    console.print(f"[bold green]Scenario written to[/bold green] {path.absolute().as_posix()}")


@app.command()
@handle_errors
def simulate(
    scenario: Path = typer.Argument(..., help="Scenario JSON file"),
    controller: str = typer.Option("none", help="none, random, idle or checkpoint:<path>"),
    seed: int = typer.Option(0),
    dt: float = typer.Option(1.0, help="Simulator step (s)"),
    t_max: float | None = typer.Option(None, help="Lifetime cap (s), default t_sm"),
    chargers: int | None = typer.Option(None, help="Number of chargers"),
    grid_size: int | None = typer.Option(None, help="Observation grid size T"),
    events: bool = typer.Option(False, help="Write the simulation event log"),
    frames: bool = typer.Option(False, help="Write the transition frames"),
):
    out_dir = _run_dir("simulate")
    instance = load_instance(scenario)
    ctrl = _create_controller(controller)
    config = _env_config(ctrl, dt=dt, t_max=t_max, n_chargers=chargers, grid_size=grid_size)
    _echo_config(
        RunConfig(
            command="simulate",
            options={"scenario": str(scenario), "controller": controller, "seed": seed},
            env=config,
            output_dir=out_dir,
        )
    )

    result = lifetime_improvement(instance, ctrl, seed=seed, config=config)
    report = {"F_B": result.F_B, "F0": result.F0, "improvement": result.improvement}
    (out_dir / "lifetime.json").write_text(json.dumps(report, indent=2) + "\n")
    if ctrl is not None and (events or frames):
        env = play_episode(ChargingEnv(instance, config), ctrl, seed)
        if events:
            write_jsonl(out_dir / "events.jsonl", env.events)
        if frames:
            write_jsonl(out_dir / "frames.jsonl", (f.to_record() for f in env.frames))
    console.print_json(json.dumps(report))


@app.command(name="train")
@handle_errors
def train_(
    scenario: Path = typer.Argument(..., help="Scenario JSON file"),
    algo: Algorithm = typer.Option(Algorithm.AMAPPO, help="Training algorithm"),
    ablation: Ablation = typer.Option(Ablation.FULL, help="Ablation variant"),
    max_frames: int = typer.Option(3_000_000, help="Stop after collecting this many transition frames"),
    seed: int = typer.Option(0),
    workers: int | None = typer.Option(None, help="Parallel rollout workers"),
    chargers: int | None = typer.Option(None, help="Number of chargers"),
    grid_size: int = typer.Option(100, help="Observation grid size T"),
    buffer_size: int = typer.Option(512, help="Frames per agent buffer before an update"),
    minibatch_size: int = typer.Option(64),
    epochs: int = typer.Option(5),
    lr: float = typer.Option(3e-4),
    dt: float = typer.Option(1.0, help="Simulator step (s)"),
    t_max: float | None = typer.Option(None, help="Episode cap (s), default t_sm"),
    checkpoint_every: int = typer.Option(10, help="Checkpoint every K updates"),
):
    settings = Settings()
    out_dir = _run_dir("train")
    instance = load_instance(scenario)
    config = TrainerConfig(
        algorithm=algo,
        env=EnvConfig(
            dt=dt,
            n_chargers=chargers or settings.wrsn_chargers,
            grid_size=grid_size,
            ablation=ablation,
            t_max=t_max,
        ),
        buffer_size=buffer_size,
        minibatch_size=minibatch_size,
        epochs=epochs,
        lr=lr,
        max_frames=max_frames,
        checkpoint_every=checkpoint_every,
        seed=seed,
        workers=workers or settings.wrsn_workers,
    )
    _echo_config(RunConfig(command="train", options={"scenario": str(scenario)}, trainer=config, output_dir=out_dir))

    with console.status("[bold blue]Training...[/bold blue]"):
        result = train(instance, config, out_dir)
    console.print(f"[bold green]Updates:[/bold green] {len(result.log)}")
    console.print(f"[bold green]Checkpoint:[/bold green] {result.checkpoint.absolute().as_posix()}")


@app.command()
@handle_errors
def inspect(
    scenario: Path = typer.Argument(..., help="Scenario JSON file"),
    checkpoint: Path | None = typer.Option(None, help="Checkpoint directory for the probability map"),
    mask: ObservationMask = typer.Option(ObservationMask.FULL, help="Observation channel mask"),
    agent: int = typer.Option(0, help="Deciding charger"),
    seed: int = typer.Option(0),
    chargers: int | None = typer.Option(None),
    grid_size: int | None = typer.Option(None),
):
    out_dir = _run_dir("inspect")
    instance = load_instance(scenario)
    ctrl = _create_controller(f"checkpoint:{checkpoint}") if checkpoint else None
    config = _env_config(ctrl, n_chargers=chargers, grid_size=grid_size)
    _echo_config(
        RunConfig(
            command="inspect",
            options={"scenario": str(scenario), "checkpoint": str(checkpoint), "mask": mask.value, "agent": agent},
            env=config,
            output_dir=out_dir,
        )
    )

    env = ChargingEnv(instance, config)
    env.reset(seed)
    if not 0 <= agent < env.n_agents:
        raise ConfigError(f"agent {agent} outside 0..{env.n_agents - 1}")
    observation = render(env.state, agent, env.grid, mask, config.f4_anchor)
    write_observation(out_dir, observation)

    if ctrl is not None:
        ctrl.reset(env, seed)
        event = next(e for e in iter(env.run_until_next_decision, None) if e.agent_id == agent)
        decision = ctrl.decide(event, env)
        if config.ablation.direct_action:
            overlay = {"action": [decision.action.a, decision.action.b, decision.action.c]}
        else:
            pr = np.exp(decision.latent.astype(float) - float(decision.latent.max()))
            pr /= pr.sum()
            write_pgm(out_dir / "probability_map.pgm", pr)
            write_csv(out_dir / "probability_map.csv", pr)
            plan = plan_action(pr, env.state, env.grid)
            overlay = {
                "cell": list(plan.cell),
                "p_max": plan.p_max,
                "region": [plan.region.a_lo, plan.region.a_hi, plan.region.b_lo, plan.region.b_hi],
                "point": plan.location.point.tolist(),
                "zero_gain": plan.location.zero_gain,
                "c": plan.action.c,
            }
        (out_dir / "overlay.json").write_text(json.dumps(overlay, indent=2) + "\n")
    console.print(f"[bold green]Observation written to[/bold green] {out_dir.absolute().as_posix()}")


@app.command()
@handle_errors
def evaluate(
    scenarios: list[Path] = typer.Argument(..., help="Scenario JSON files"),
    controller: str = typer.Option("random", help="none, random, idle or checkpoint:<path>"),
    seeds: str = typer.Option("0,1,2,3,4", help="Comma separated seeds"),
    dt: float = typer.Option(1.0),
    t_max: float | None = typer.Option(None),
    chargers: int | None = typer.Option(None),
    grid_size: int | None = typer.Option(None),
):
    out_dir = _run_dir("evaluate")
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"seeds must be comma separated integers, got {seeds!r}") from e
    if not seed_list:
        raise ConfigError("at least one seed is required")
    instances = {p.stem: load_instance(p) for p in scenarios}
    ctrl = _create_controller(controller)
    config = _env_config(ctrl, dt=dt, t_max=t_max, n_chargers=chargers, grid_size=grid_size)
    _echo_config(
        RunConfig(
            command="evaluate",
            options={"scenarios": [str(p) for p in scenarios], "controller": controller, "seeds": seed_list},
            env=config,
            output_dir=out_dir,
        )
    )

    evaluation = evaluate_many(instances, ctrl, seed_list, config=config)
    (out_dir / "evaluation.json").write_text(evaluation.model_dump_json(indent=2) + "\n")

    table = Table(title=f"Lifetime improvement ({evaluation.controller})")
    table.add_column("scenario")
    table.add_column("mean improvement", justify="right")
    for name, value in evaluation.per_scenario.items():
        table.add_row(name, f"{value:.3f}")
    table.add_row("[bold]overall[/bold]", f"[bold]{evaluation.overall:.3f}[/bold]")
    console.print(table)


@app.command()
@handle_errors
def lifetime(graph: Path = typer.Argument(..., help='JSON graph {"nodes": [{"id", "weight"}], "edges": [[i, j]]}')):
    """Connection times of every node; node 0 is the base station and is printed as null."""
    try:
        data = GraphFile.model_validate_json(graph.read_text())
    except (OSError, pydantic.ValidationError) as e:
        raise ConfigError(f"cannot read graph {graph}: {e}") from e
    weights = {n.id: n.weight for n in data.nodes}
    weights.setdefault(BS_NODE, math.inf)
    missing = {i for edge in data.edges for i in edge} - set(weights)
    if missing:
        raise ConfigError(f"edges reference unknown nodes {sorted(missing)}")
    ct = connection_times(LifetimeGraph.from_edges(weights, data.edges))
    console.print_json(json.dumps({str(k): (None if math.isinf(v) else v) for k, v in sorted(ct.items())}))
