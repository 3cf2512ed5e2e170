"""Asynchronous multi-agent PPO and its shared / independent baselines."""

from __future__ import annotations

import csv
import enum
import functools
from dataclasses import dataclass, field
from pathlib import Path

import anyio
import anyio.to_thread
import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from wrsn_charging.controllers.builtin.policy import PolicyController
from wrsn_charging.env import ChargingEnv, EnvConfig, TransitionFrame
from wrsn_charging.errors import DegenerateScenarioError, NonFiniteRatioError
from wrsn_charging.log import logger
from wrsn_charging.neural import (
    Actor,
    CheckpointManifest,
    CriticNet,
    backward_and_step,
    build_actor,
    log_prob,
    make_optimizer,
    save_checkpoint,
)
from wrsn_charging.runner import play_episode, simulate_lifetime
from wrsn_charging.scenario import RoutingTable, ScenarioInstance, build_routing

LOG_COLUMNS = (
    "update",
    "frames",
    "mean_lifetime_s",
    "lifetime_improvement",
    "actor_loss",
    "critic_loss",
    "mean_ratio",
    "clip_fraction",
)


class Algorithm(str, enum.Enum):
    AMAPPO = "amappo"
    """Per-agent actors and buffers, one critic over the union of all buffers."""
    PPO = "ppo"
    """One actor and one critic shared by every agent."""
    IPPO = "ippo"
    """Independent learners: per-agent actor and critic."""


class TrainerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    algorithm: Algorithm = Algorithm.AMAPPO
    env: EnvConfig = Field(default_factory=EnvConfig)
    clip_eps: float = Field(0.2, gt=0, lt=1)
    gamma: float = Field(0.99, gt=0, le=1)
    epochs: int = Field(5, ge=1)
    lr: float = Field(3e-4, gt=0)
    clip_norm: float | None = Field(0.5, gt=0)
    buffer_size: int = Field(512, ge=1)
    minibatch_size: int = Field(64, ge=1)
    max_frames: int = Field(3_000_000, ge=1)
    normalize_advantages: bool = True
    entropy_coef: float = Field(0.0, ge=0)
    checkpoint_every: int = Field(10, ge=1)
    seed: int = 0
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_grid(self) -> TrainerConfig:
        # the U-Net pools twice
        if not self.env.ablation.direct_action and self.env.grid_size % 4:
            raise ValueError(f"grid_size must be divisible by 4 for map actions, got {self.env.grid_size}")
        return self


@dataclass
class AgentBuffer:
    agent_id: int
    capacity: int = 512
    frames: list[TransitionFrame] = field(default_factory=list)

    @property
    def full(self) -> bool:
        return len(self.frames) >= self.capacity

    def extend(self, frames: list[TransitionFrame]) -> None:
        for frame in frames:
            if frame.agent_id != self.agent_id:
                raise ValueError(f"frame of agent {frame.agent_id} offered to buffer {self.agent_id}")
        self.frames.extend(frames)

    def clear(self) -> None:
        self.frames = []


@dataclass
class PolicySet:
    algorithm: Algorithm
    n_agents: int
    actors: list[Actor]
    critics: list[CriticNet]
    actor_optimizers: list[torch.optim.Optimizer]
    critic_optimizers: list[torch.optim.Optimizer]

    @classmethod
    def create(cls, algorithm: Algorithm, n_agents: int, config: TrainerConfig) -> PolicySet:
        n_actors = 1 if algorithm == Algorithm.PPO else n_agents
        n_critics = n_agents if algorithm == Algorithm.IPPO else 1
        actors = [build_actor(config.env.ablation) for _ in range(n_actors)]
        critics = [CriticNet() for _ in range(n_critics)]
        return cls(
            algorithm=algorithm,
            n_agents=n_agents,
            actors=actors,
            critics=critics,
            actor_optimizers=[make_optimizer(a, config.lr) for a in actors],
            critic_optimizers=[make_optimizer(c, config.lr) for c in critics],
        )

    def actor_index(self, agent: int) -> int:
        return 0 if len(self.actors) == 1 else agent

    def critic_index(self, agent: int) -> int:
        return 0 if len(self.critics) == 1 else agent


@dataclass
class EpisodeResult:
    seed: int
    frames: list[TransitionFrame]
    lifetime: float
    censored: bool


@dataclass
class CollectStats:
    episodes: list[EpisodeResult]

    @property
    def frames(self) -> int:
        return sum(len(e.frames) for e in self.episodes)

    @property
    def mean_lifetime(self) -> float:
        return float(np.mean([e.lifetime for e in self.episodes])) if self.episodes else 0.0


class UpdateMetrics(BaseModel):
    actor_loss: float
    critic_loss: float
    mean_ratio: float
    clip_fraction: float


def episode_seed(root: int, index: int) -> int:
    return int(np.random.SeedSequence(root, spawn_key=(index,)).generate_state(1)[0])


def _observations(frames: list[TransitionFrame], attr: str) -> torch.Tensor:
    return torch.from_numpy(np.stack([getattr(f, attr).tensor for f in frames])).float()


def compute_advantages(frames: list[TransitionFrame], policies: PolicySet, gamma: float) -> None:
    """One-step advantage ``R + gamma V(o_end) - V(o_start)`` with the current critic; death frames bootstrap 0."""
    by_critic: dict[int, list[TransitionFrame]] = {}
    for frame in frames:
        by_critic.setdefault(policies.critic_index(frame.agent_id), []).append(frame)
    with torch.no_grad():
        for index, group in by_critic.items():
            critic = policies.critics[index]
            v_start = critic(_observations(group, "o_start")).double()
            v_end = critic(_observations(group, "o_end")).double()
            for i, frame in enumerate(group):
                bootstrap = 0.0 if frame.terminal else gamma * float(v_end[i])
                frame.advantage = frame.reward + bootstrap - float(v_start[i])


def run_episode(
    instance: ScenarioInstance,
    config: TrainerConfig,
    policies: PolicySet,
    seed: int,
    routing: RoutingTable | None = None,
) -> EpisodeResult:
    env = ChargingEnv(instance, config.env, routing=routing)
    controller = PolicyController(policies.actors, config.env.ablation, seed=seed)
    play_episode(env, controller, seed)
    if not env.frames:
        raise DegenerateScenarioError(f"episode with seed {seed} produced no transition frames")
    return EpisodeResult(seed=seed, frames=env.frames, lifetime=env.clock, censored=env.truncated)


async def _run_parallel(
    instance: ScenarioInstance,
    config: TrainerConfig,
    policies: PolicySet,
    seeds: list[int],
    routing: RoutingTable,
) -> list[EpisodeResult]:
    limiter = anyio.CapacityLimiter(config.workers)
    results: list[EpisodeResult | None] = [None] * len(seeds)

    async def _one(i: int, seed: int) -> None:
        results[i] = await anyio.to_thread.run_sync(
            functools.partial(run_episode, instance, config, policies, seed, routing), limiter=limiter
        )

    async with anyio.create_task_group() as tg:
        for i, seed in enumerate(seeds):
            tg.start_soon(_one, i, seed)
    return [r for r in results if r is not None]


def collect(
    instance: ScenarioInstance,
    policies: PolicySet,
    buffers: list[AgentBuffer],
    config: TrainerConfig,
    *,
    first_episode: int = 0,
) -> CollectStats:
    """Roll out episodes until every buffer holds at least its capacity.

    Episode ``i`` is seeded from ``(config.seed, i)``. With several workers a
    round of episodes runs concurrently and is merged in episode order.
    """
    routing = build_routing(instance)
    episodes: list[EpisodeResult] = []
    index = first_episode
    while not all(b.full for b in buffers):
        batch = max(config.workers, 1)
        seeds = [episode_seed(config.seed, index + i) for i in range(batch)]
        if config.workers > 1:
            results = anyio.run(_run_parallel, instance, config, policies, seeds, routing)
        else:
            results = [run_episode(instance, config, policies, seeds[0], routing)]
        index += batch
        for result in results:
            compute_advantages(result.frames, policies, config.gamma)
            for buffer in buffers:
                buffer.extend([f for f in result.frames if f.agent_id == buffer.agent_id])
            episodes.append(result)
            logger.debug(f"Episode seed={result.seed}: {len(result.frames)} frames, lifetime {result.lifetime}s")
    return CollectStats(episodes=episodes)


def actor_loss(
    new_log_probs: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    clip_eps: float = 0.2,
    *,
    normalize: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Clipped surrogate (to be maximized) and the ratios it used."""
    ratio = torch.exp(new_log_probs - old_log_probs)
    finite = torch.isfinite(ratio)
    if not finite.all():
        raise NonFiniteRatioError(int((~finite).nonzero()[0, 0]))
    if normalize and advantages.numel() > 1:
        advantages = (advantages - advantages.mean()) / advantages.std(unbiased=False).clamp_min(1e-8)
    unclipped = ratio * advantages
    clipped = ratio.clamp(1 - clip_eps, 1 + clip_eps) * advantages
    return torch.min(unclipped, clipped).mean(), ratio


def critic_loss(
    v_start: torch.Tensor,
    v_end: torch.Tensor,
    rewards: torch.Tensor,
    terminal: torch.Tensor,
    gamma: float = 0.99,
) -> torch.Tensor:
    """Mean squared one-step TD error. Callers pass a detached ``v_end`` for the semi-gradient."""
    target = rewards + gamma * v_end * (~terminal).to(v_end.dtype)
    return ((target - v_start) ** 2).mean()


def _minibatches(n: int, size: int, generator: torch.Generator) -> list[torch.Tensor]:
    order = torch.randperm(n, generator=generator)
    return [order[i : i + size] for i in range(0, n, size)]


def _entropy(log_std: torch.Tensor) -> torch.Tensor:
    """Gaussian entropy per latent element."""
    return (0.5 + 0.5 * np.log(2 * np.pi) + log_std).mean()


def update(
    buffers: list[AgentBuffer],
    policies: PolicySet,
    config: TrainerConfig,
    generator: torch.Generator,
) -> UpdateMetrics:
    """Optimize actors and critics on the filled buffers, then clear them."""
    actor_groups: dict[int, list[TransitionFrame]] = {}
    critic_groups: dict[int, list[TransitionFrame]] = {}
    for buffer in buffers:
        actor_groups.setdefault(policies.actor_index(buffer.agent_id), []).extend(buffer.frames)
        critic_groups.setdefault(policies.critic_index(buffer.agent_id), []).extend(buffer.frames)

    actor_losses, critic_losses, ratios, clipped = [], [], [], []
    for _ in range(config.epochs):
        for index, frames in actor_groups.items():
            actor = policies.actors[index]
            obs = _observations(frames, "o_start")
            latent = torch.from_numpy(np.stack([f.latent for f in frames])).float()
            old = torch.tensor([f.log_prob for f in frames], dtype=torch.float32)
            adv = torch.tensor([f.advantage for f in frames], dtype=torch.float32)
            for idx in _minibatches(len(frames), config.minibatch_size, generator):
                mean, log_std = actor(obs[idx])
                new = log_prob(mean, log_std, latent[idx])
                surrogate, ratio = actor_loss(
                    new, old[idx], adv[idx], config.clip_eps, normalize=config.normalize_advantages
                )
                objective = surrogate + config.entropy_coef * _entropy(log_std)
                backward_and_step(-objective, actor, policies.actor_optimizers[index], config.clip_norm)
                actor_losses.append(-float(surrogate))
                ratios.append(ratio.detach())
                clipped.append(((ratio.detach() - 1).abs() > config.clip_eps).float())

        for index, frames in critic_groups.items():
            critic = policies.critics[index]
            o_start = _observations(frames, "o_start")
            o_end = _observations(frames, "o_end")
            rewards = torch.tensor([f.reward for f in frames], dtype=torch.float32)
            terminal = torch.tensor([f.terminal for f in frames], dtype=torch.bool)
            for idx in _minibatches(len(frames), config.minibatch_size, generator):
                with torch.no_grad():
                    v_end = critic(o_end[idx])
                loss = critic_loss(critic(o_start[idx]), v_end, rewards[idx], terminal[idx], config.gamma)
                backward_and_step(loss, critic, policies.critic_optimizers[index], config.clip_norm)
                critic_losses.append(float(loss))

    for buffer in buffers:
        buffer.clear()
    all_ratios = torch.cat(ratios)
    return UpdateMetrics(
        actor_loss=float(np.mean(actor_losses)),
        critic_loss=float(np.mean(critic_losses)),
        mean_ratio=float(all_ratios.mean()),
        clip_fraction=float(torch.cat(clipped).mean()),
    )


@dataclass
class TrainResult:
    policies: PolicySet
    log: list[dict[str, float]]
    checkpoint: Path | None = None


def _manifest(instance: ScenarioInstance, policies: PolicySet, config: TrainerConfig, update_i: int):
    return CheckpointManifest(
        algorithm=config.algorithm.value,
        ablation=config.env.ablation,
        grid_size=config.env.grid_size,
        bounds=instance.bounds,
        n_agents=policies.n_agents,
        gamma=config.gamma,
        clip_eps=config.clip_eps,
        seed=config.seed,
        update=update_i,
        actors=[f"actor_{i}.pt" for i in range(len(policies.actors))],
        critics=[f"critic_{i}.pt" for i in range(len(policies.critics))],
    )


def train(instance: ScenarioInstance, config: TrainerConfig, out_dir: Path | str | None = None) -> TrainResult:
    """Alternate collection and updates until ``max_frames`` frames were collected.

    With ``out_dir`` the per-update log is written to ``training_log.csv``
    and checkpoints to ``checkpoints/``.
    """
    torch.manual_seed(config.seed)
    n_agents = config.env.n_chargers
    policies = PolicySet.create(config.algorithm, n_agents, config)
    buffers = [AgentBuffer(agent_id=k, capacity=config.buffer_size) for k in range(n_agents)]
    generator = torch.Generator().manual_seed(config.seed)
    baseline = simulate_lifetime(instance, None, seed=config.seed, config=config.env).F0

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = (out_dir / "training_log.csv").open("w", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_COLUMNS)
        writer.writeheader()

    log: list[dict[str, float]] = []
    frames_total = 0
    update_i = 0
    episodes = 0
    checkpoint = None
    try:
        while frames_total < config.max_frames:
            stats = collect(instance, policies, buffers, config, first_episode=episodes)
            episodes += len(stats.episodes)
            frames_total += stats.frames
            metrics = update(buffers, policies, config, generator)
            update_i += 1
            row = {
                "update": update_i,
                "frames": frames_total,
                "mean_lifetime_s": stats.mean_lifetime,
                "lifetime_improvement": stats.mean_lifetime / baseline if baseline > 0 else 1.0,
                **metrics.model_dump(),
            }
            log.append(row)
            logger.info(
                f"Update {update_i}: frames={frames_total} lifetime={row['mean_lifetime_s']:.0f}s "
                f"improvement={row['lifetime_improvement']:.3f} actor={metrics.actor_loss:.4f} "
                f"critic={metrics.critic_loss:.4f}"
            )
            if writer is not None:
                writer.writerow(row)
                log_file.flush()
            if out_dir is not None and update_i % config.checkpoint_every == 0:
                checkpoint = save_checkpoint(
                    out_dir / "checkpoints" / f"update_{update_i:05d}",
                    _manifest(instance, policies, config, update_i),
                    policies.actors,
                    policies.critics,
                )
    finally:
        if log_file is not None:
            log_file.close()

    if out_dir is not None:
        checkpoint = save_checkpoint(
            out_dir / "checkpoints" / "final",
            _manifest(instance, policies, config, update_i),
            policies.actors,
            policies.critics,
        )
    return TrainResult(policies=policies, log=log, checkpoint=checkpoint)
