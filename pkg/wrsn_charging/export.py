"""Artifact writers: greyscale heatmaps, CSV matrices and newline-delimited JSON."""

from __future__ import annotations

import json
from collections.abc import Iterable
from pathlib import Path
from typing import Any

import imageio.v3 as iio
import numpy as np
from pydantic import BaseModel

from wrsn_charging.observation import Observation

CHANNEL_NAMES = ("f1_sensors", "f2_self", "f3_charging", "f4_moving")


def to_grey(channel: np.ndarray) -> np.ndarray:
    """Scale a non-negative map to 0..255 by its maximum; an all-zero map stays black."""
    channel = np.asarray(channel, dtype=float)
    peak = float(channel.max()) if channel.size else 0.0
    if peak <= 0:
        return np.zeros(channel.shape, dtype=np.uint8)
    return np.round(channel / peak * 255).astype(np.uint8)


def write_pgm(path: Path | str, channel: np.ndarray) -> Path:
    path = Path(path)
    iio.imwrite(path, to_grey(channel), extension=".pgm")
    return path


def write_csv(path: Path | str, matrix: np.ndarray) -> Path:
    """Row-major, 6 significant digits."""
    path = Path(path)
    np.savetxt(path, np.atleast_2d(matrix), fmt="%.6g", delimiter=",")
    return path


def write_observation(directory: Path | str, observation: Observation, prefix: str = "") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, channel in zip(CHANNEL_NAMES, observation.tensor):
        stem = f"{prefix}{name}"
        paths.append(write_pgm(directory / f"{stem}.pgm", channel))
        paths.append(write_csv(directory / f"{stem}.csv", channel))
    return paths


def _record(item: BaseModel | dict[str, Any]) -> dict[str, Any]:
    return item.model_dump(mode="json") if isinstance(item, BaseModel) else item


def write_jsonl(path: Path | str, records: Iterable[BaseModel | dict[str, Any]]) -> Path:
    path = Path(path)
    with path.open("w") as f:
        for item in records:
            f.write(json.dumps(_record(item), sort_keys=True) + "\n")
    return path
