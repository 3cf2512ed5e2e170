"""Critic CNN, U-Net actor, Gaussian map sampling, optimizer steps and checkpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict
from torch import nn
from torch.distributions import Normal

from wrsn_charging.env import Ablation
from wrsn_charging.errors import CheckpointMismatchError, ConfigError, NonFiniteGradientError
from wrsn_charging.log import logger
from wrsn_charging.observation import N_CHANNELS

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
CHECKPOINT_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class TensorSpec:
    shape: tuple[int, ...]
    dtype: torch.dtype = torch.float32

    def check(self, tensor: torch.Tensor) -> torch.Tensor:
        if tuple(tensor.shape[-len(self.shape) :]) != self.shape:
            raise ValueError(f"expected trailing shape {self.shape}, got {tuple(tensor.shape)}")
        return tensor.to(self.dtype)


def as_batch(obs: np.ndarray | torch.Tensor, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Observation(s) as a ``(B, 4, T, T)`` tensor."""
    tensor = torch.as_tensor(obs, dtype=dtype)
    if tensor.dim() == 3:
        tensor = tensor.unsqueeze(0)
    if tensor.dim() != 4 or tensor.shape[1] != N_CHANNELS:
        raise ValueError(f"expected observation of shape (B, {N_CHANNELS}, T, T), got {tuple(tensor.shape)}")
    return tensor


def _he_init(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        nn.init.zeros_(module.bias)


def _conv_trunk() -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(N_CHANNELS, 16, kernel_size=5, stride=2, padding=2),
        nn.ReLU(),
        nn.Conv2d(16, 32, kernel_size=5, stride=2, padding=2),
        nn.ReLU(),
        nn.Conv2d(32, 64, kernel_size=5, stride=2, padding=2),
        nn.ReLU(),
        nn.AdaptiveAvgPool2d(8),
        nn.Flatten(),
        nn.Linear(64 * 8 * 8, 100),
        nn.ReLU(),
    )


class CriticNet(nn.Module):
    """Observation -> scalar value. The adaptive pool makes the flatten size 4096 for any T."""

    def __init__(self):
        super().__init__()
        self.trunk = _conv_trunk()
        self.value = nn.Linear(100, 1)
        self.apply(_he_init)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.value(self.trunk(obs)).squeeze(-1)


class _Down(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.pool = nn.MaxPool2d(2)
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.conv(self.pool(x)))


class _Up(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, size=skip.shape[-2:], mode="nearest")
        return F.relu(self.conv(torch.cat([x, skip], dim=1)))


class UNetActor(nn.Module):
    """Observation -> (mean map, scalar log-std)."""

    def __init__(self):
        super().__init__()
        self.inc = nn.Conv2d(N_CHANNELS, 64, kernel_size=3, padding=1)
        self.down1 = _Down(64, 128)
        self.down2 = _Down(128, 256)
        self.up1 = _Up(256 + 128, 128)
        self.up2 = _Up(128 + 64, 64)
        self.out_mean = nn.Conv2d(64, 1, kernel_size=1)
        self.log_std = nn.Parameter(torch.zeros(()))
        self.apply(_he_init)

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if obs.shape[-1] % 4 or obs.shape[-2] % 4:
            raise ValueError(f"grid size must be divisible by 4, got {tuple(obs.shape[-2:])}")
        x1 = F.relu(self.inc(obs))
        x2 = self.down1(x1)
        x3 = self.down2(x2)
        x = self.up1(x3, x2)
        x = self.up2(x, x1)
        mean = self.out_mean(x).squeeze(1)
        return mean, self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)


class DirectActor(nn.Module):
    """Observation -> Gaussian over a normalized (a, b, c) vector; one log-std per component."""

    def __init__(self):
        super().__init__()
        self.trunk = _conv_trunk()
        self.out_mean = nn.Linear(100, 3)
        self.log_std = nn.Parameter(torch.zeros(3))
        self.apply(_he_init)

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.out_mean(self.trunk(obs)), self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)


Actor = UNetActor | DirectActor


def build_actor(ablation: Ablation) -> Actor:
    return DirectActor() if ablation.direct_action else UNetActor()


def critic_forward(critic: CriticNet, obs: np.ndarray | torch.Tensor) -> torch.Tensor:
    return critic(as_batch(obs, next(critic.parameters()).dtype))


def actor_forward(actor: Actor, obs: np.ndarray | torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    return actor(as_batch(obs, next(actor.parameters()).dtype))


def _event_dims(log_std: torch.Tensor) -> tuple[int, ...]:
    """Dimensions of one latent action: the whole map under a scalar log-std, else the 3-vector."""
    return (-2, -1) if log_std.dim() == 0 else (-1,)


def log_prob(mean: torch.Tensor, log_std: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Gaussian log-density of ``x`` summed over the cells of each latent action."""
    dist = Normal(mean, log_std.exp().expand_as(mean))
    return dist.log_prob(x).sum(dim=_event_dims(log_std))


def sample_map(
    mean: torch.Tensor, log_std: torch.Tensor, generator: torch.Generator | None = None
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Draw ``x ~ N(mean, std)``; return ``(x, softmax of x over all cells, log_prob of x)``."""
    with torch.no_grad():
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        x = mean + log_std.exp() * noise
        flat = x.reshape(*x.shape[:-2], -1)
        pr = torch.softmax(flat, dim=-1).reshape(x.shape)
        return x, pr, log_prob(mean, log_std, x)


def sample_vector(
    mean: torch.Tensor, log_std: torch.Tensor, generator: torch.Generator | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    with torch.no_grad():
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        x = mean + log_std.exp() * noise
        return x, log_prob(mean, log_std, x)


def make_optimizer(module: nn.Module, lr: float = 3e-4) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def backward_and_step(
    loss: torch.Tensor,
    module: nn.Module,
    optimizer: torch.optim.Optimizer,
    clip_norm: float | None = 0.5,
) -> float:
    """Backpropagate ``loss``, clip the global gradient norm and take one optimizer step.

    Returns the gradient norm before clipping. A non-finite gradient leaves
    the parameters untouched and names the offending block.
    """
    if not torch.isfinite(loss):
        raise NonFiniteGradientError("loss")
    optimizer.zero_grad()
    loss.backward()
    for name, param in module.named_parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            optimizer.zero_grad()
            raise NonFiniteGradientError(name)
    if clip_norm is None:
        norm = math.sqrt(sum(float(p.grad.pow(2).sum()) for p in module.parameters() if p.grad is not None))
    else:
        norm = float(nn.utils.clip_grad_norm_(module.parameters(), clip_norm))
    optimizer.step()
    return norm


class CheckpointManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = CHECKPOINT_VERSION
    algorithm: str
    ablation: Ablation
    grid_size: int
    bounds: tuple[float, float, float, float]
    n_agents: int
    gamma: float
    clip_eps: float
    seed: int
    update: int = 0
    actors: list[str]
    critics: list[str]


def save_checkpoint(
    directory: Path | str,
    manifest: CheckpointManifest,
    actors: list[Actor],
    critics: list[CriticNet],
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if len(actors) != len(manifest.actors) or len(critics) != len(manifest.critics):
        raise ValueError("manifest and network lists differ in length")
    for name, net in [*zip(manifest.actors, actors), *zip(manifest.critics, critics)]:
        torch.save(net.state_dict(), directory / name)
    (directory / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.info(f"Checkpoint written to {directory}")
    return directory


def load_checkpoint(directory: Path | str) -> tuple[CheckpointManifest, list[Actor], list[CriticNet]]:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.is_file():
        raise ConfigError(f"no checkpoint manifest at {path}")
    manifest = CheckpointManifest.model_validate_json(path.read_text())
    if manifest.version != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(f"checkpoint version {manifest.version}, expected {CHECKPOINT_VERSION}")

    actors: list[Actor] = []
    for name in manifest.actors:
        actor = build_actor(manifest.ablation)
        actor.load_state_dict(torch.load(directory / name, weights_only=True))
        actors.append(actor.eval())
    critics: list[CriticNet] = []
    for name in manifest.critics:
        critic = CriticNet()
        critic.load_state_dict(torch.load(directory / name, weights_only=True))
        critics.append(critic.eval())
    return manifest, actors, critics


def check_compatible(
    manifest: CheckpointManifest,
    bounds: tuple[float, float, float, float],
    grid_size: int,
) -> None:
    if manifest.grid_size != grid_size:
        raise CheckpointMismatchError(f"checkpoint grid size {manifest.grid_size}, scenario uses {grid_size}")
    if not np.allclose(manifest.bounds, bounds, rtol=0, atol=1e-6):
        raise CheckpointMismatchError(f"checkpoint bounds {manifest.bounds}, scenario bounds {bounds}")
