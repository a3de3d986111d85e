"""Driving noise: Brownian increments on a dyadic grid plus exact compound Poisson jumps.

Random streams are counter based. Each ``(master_seed, path_index)`` pair maps
to a Philox4x64 generator with key ``(master_seed, 0)`` and starting counter
``(0, 0, stream, path_index)``, so any path can be regenerated without touching
the others. Stream 0 feeds the Brownian increments (ziggurat normals), stream 1
the jump count, jump times and marks.

Jumps are simulated exactly: ``N ~ Poisson(lambda (t1 - t0))``, then ``N``
sorted uniform positions ``u`` in ``(0, 1]`` give the times ``t0 + u (t1 - t0)``.
A jump at position ``u`` belongs to fine step ``ceil(u * steps) - 1``, i.e. to the
half-open interval ``(t_k, t_{k+1}]``; coarser views derive their bucket by
integer division of that index, so every resolution agrees on the assignment.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .model import Horizon, LevyModel

BROWNIAN_STREAM = 0
JUMP_STREAM = 1
DUMP_FORMAT_VERSION = 1
_U64 = 2**64


def is_power_of_two(k: int) -> bool:
    return int(k) == k and k >= 1 and (int(k) & (int(k) - 1)) == 0


@dataclass(frozen=True)
class PathSeed:
    master_seed: int
    path_index: int

    def __post_init__(self):
        if not 0 <= self.master_seed < _U64:
            raise ValueError(f"master seed must be an unsigned 64-bit integer, got {self.master_seed}")
        if not 0 <= self.path_index < _U64:
            raise ValueError(f"path index must be a nonnegative 64-bit integer, got {self.path_index}")


def derive_stream(seed: PathSeed, stream: int = BROWNIAN_STREAM) -> np.random.Generator:
    counter = np.array([0, 0, stream, seed.path_index], dtype=np.uint64)
    key = np.array([seed.master_seed, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


@dataclass(frozen=True, eq=False)
class DrivingPath:
    """One realisation of the noise on ``steps`` equal steps of the horizon.

    ``dW`` has shape ``(steps, m)``; ``jump_times`` ``(J,)`` is strictly
    increasing; ``jump_marks`` is ``(J, q)``; ``jump_steps[j]`` is the step whose
    interval ``(t_k, t_{k+1}]`` contains jump ``j``.
    """

    horizon: Horizon
    dW: np.ndarray
    jump_times: np.ndarray
    jump_marks: np.ndarray
    jump_steps: np.ndarray

    def __post_init__(self):
        for name in ("dW", "jump_times", "jump_marks", "jump_steps"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.dW.ndim != 2:
            raise ValueError(f"dW must be 2-d (steps, m), got shape {self.dW.shape}")
        if len(self.jump_times) != len(self.jump_marks) or len(self.jump_times) != len(self.jump_steps):
            raise ValueError("jump arrays disagree in length")

    @property
    def steps(self) -> int:
        return self.dW.shape[0]

    fine_steps = steps

    @property
    def m(self) -> int:
        return self.dW.shape[1]

    @property
    def h(self) -> float:
        return self.horizon.length / self.steps

    def marks_in_step(self, k: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.jump_steps, [k, k + 1])
        return self.jump_marks[lo:hi]

    @classmethod
    def quiet(cls, horizon: Horizon, steps: int, m: int = 1, mark_dim: int = 1) -> "DrivingPath":
        """Zero Brownian increments and no jumps."""
        return cls(horizon, np.zeros((steps, m)), np.zeros(0), np.zeros((0, mark_dim)),
                   np.zeros(0, dtype=np.int64))


def sample_path(seed: PathSeed, model: LevyModel, horizon: Horizon, m: int,
                fine_steps: int) -> DrivingPath:
    if not is_power_of_two(fine_steps):
        raise ValueError(f"fine_steps must be a power of two, got {fine_steps}")
    fine_steps = int(fine_steps)
    h = horizon.length / fine_steps
    gauss = derive_stream(seed, BROWNIAN_STREAM)
    dW = np.sqrt(h) * gauss.standard_normal((fine_steps, m))

    rng = derive_stream(seed, JUMP_STREAM)
    count = int(rng.poisson(model.intensity * horizon.length))
    u = np.sort(1.0 - rng.random(count))
    marks = model.sample_marks(rng, count)
    times = horizon.t0 + horizon.length * u
    steps = np.ceil(u * fine_steps).astype(np.int64) - 1
    np.clip(steps, 0, fine_steps - 1, out=steps)
    return DrivingPath(horizon, dW, times, marks, steps)


def coarsen_increments(dW: np.ndarray, factor: int, axis: int = 0) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments, strictly left to right."""
    n = dW.shape[axis]
    if factor < 1 or n % factor:
        raise ValueError(f"factor {factor} does not divide {n} steps")
    moved = np.moveaxis(dW, axis, 0)
    blocks = moved.reshape((n // factor, factor) + moved.shape[1:])
    acc = blocks[:, 0].copy()
    for j in range(1, factor):
        acc += blocks[:, j]
    return np.moveaxis(acc, 0, axis)


def coarsen(path: DrivingPath, factor: int) -> DrivingPath:
    if not is_power_of_two(factor) or path.steps % factor:
        raise ValueError(f"coarsening factor must be a power of two dividing {path.steps}, got {factor}")
    factor = int(factor)
    if factor == 1:
        return path
    return DrivingPath(path.horizon, coarsen_increments(path.dW, factor), path.jump_times,
                       path.jump_marks, path.jump_steps // factor)


def save_path(path: DrivingPath, target: Union[str, Path, io.IOBase]) -> None:
    """Write a path as an ``.npz`` archive (keys documented in README)."""
    np.savez(target, version=DUMP_FORMAT_VERSION, horizon=[path.horizon.t0, path.horizon.t1],
             dW=path.dW, jump_times=path.jump_times, jump_marks=path.jump_marks,
             jump_steps=path.jump_steps)


def load_path(source) -> DrivingPath:
    with np.load(source) as data:
        if int(data["version"]) != DUMP_FORMAT_VERSION:
            raise ValueError(f"unsupported path dump version {int(data['version'])}")
        t0, t1 = data["horizon"]
        return DrivingPath(Horizon(float(t0), float(t1)), data["dW"], data["jump_times"],
                           data["jump_marks"], data["jump_steps"])
