"""Explicit tamed Euler-type integrator for Levy-driven SDEs and SDDEs.

One step from grid time ``t`` with state ``x`` is

    x + b^n(t, x) h + sigma^n(t, x) dW + sum_j gamma(t, x, z_j) - h * compensator(t, x)

with every coefficient evaluated at the left grid point. The single-path and
batched integrators perform the same floating-point operations in the same
order, so a path gives bit-identical results whichever route integrates it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, TextIO

import numpy as np

from .driving import DrivingPath, coarsen_increments
from .model import DelaySpec, SddeProblem, SdeProblem
from .taming import TamingConfig, TamingMode, tame, tamed_coefficients


@dataclass(frozen=True)
class StepInputs:
    t: float
    x_left: np.ndarray
    dW: np.ndarray
    jump_marks: np.ndarray
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step size must be positive, got {self.h}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Scheme states on the grid. States after the first non-finite one are NaN."""

    n: int
    times: np.ndarray
    states: np.ndarray
    overflow_flag: bool
    overflow_step: Optional[int] = None

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def steps_for(n: int, length: float) -> int:
    """Number of scheme steps for ``n`` steps per unit time over an interval of ``length``."""
    steps = round(n * length)
    if steps < 1 or not math.isclose(steps, n * length, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError(f"n={n} does not give a whole number of steps over length {length}")
    return int(steps)


def _matvec(diffusion, dW):
    return np.sum(diffusion * dW[..., None, :], axis=-1)


def _advance(x, drift, h, noise, jumps, compensator):
    return x + drift * h + noise + jumps - h * compensator


def step(problem: SdeProblem, config: TamingConfig, n: int, inputs: StepInputs) -> np.ndarray:
    x = np.asarray(inputs.x_left, dtype=float)
    t = inputs.t
    with np.errstate(all="ignore"):
        drift, diff = tamed_coefficients(problem, config, n)(t, x)
        jumps = np.zeros_like(x)
        for z in np.asarray(inputs.jump_marks, dtype=float).reshape(-1, problem.jump_model.mark_dim):
            jumps = jumps + problem.jump_coeff(t, x, z)
        return _advance(x, drift, inputs.h, _matvec(diff, np.asarray(inputs.dW, float)), jumps,
                        problem.compensator(t, x))


# ---------------------------------------------------------------- batches


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Several driving paths stacked for vectorised integration.

    ``dW`` is ``(B, steps, m)``; jumps are flattened and sorted by
    ``(step, path, time)``.
    """

    horizon: object
    dW: np.ndarray
    jump_step: np.ndarray
    jump_path: np.ndarray
    jump_marks: np.ndarray

    @classmethod
    def from_paths(cls, paths: Sequence[DrivingPath]) -> "PathBatch":
        if not paths:
            raise ValueError("empty path batch")
        dW = np.stack([p.dW for p in paths])
        steps = np.concatenate([p.jump_steps for p in paths])
        owner = np.concatenate([np.full(len(p.jump_steps), i, dtype=np.int64)
                                for i, p in enumerate(paths)])
        marks = np.concatenate([p.jump_marks for p in paths])
        order = np.lexsort((owner, steps))  # stable: keeps time order within a path
        return cls(paths[0].horizon, dW, steps[order], owner[order], marks[order])

    @property
    def size(self) -> int:
        return self.dW.shape[0]

    @property
    def steps(self) -> int:
        return self.dW.shape[1]

    @property
    def h(self) -> float:
        return self.horizon.length / self.steps

    def coarsen(self, factor: int) -> "PathBatch":
        if factor == 1:
            return self
        steps = self.jump_step // factor
        order = np.lexsort((self.jump_path, steps))
        return PathBatch(self.horizon, coarsen_increments(self.dW, factor, axis=1),
                         steps[order], self.jump_path[order], self.jump_marks[order])


@dataclass(frozen=True, eq=False)
class BatchResult:
    final: np.ndarray
    flagged: np.ndarray
    states: Optional[np.ndarray] = None


def integrate_batch(problem: SdeProblem, config: TamingConfig, n: int, batch: PathBatch,
                    record: bool = False) -> BatchResult:
    """Integrate every path of ``batch``; ``record`` keeps all grid states ``(B, steps+1, d)``."""
    steps = batch.steps
    if steps != steps_for(n, problem.horizon.length):
        raise ValueError(f"path has {steps} steps but n={n} needs {steps_for(n, problem.horizon.length)}")
    h = problem.horizon.length / steps
    t0 = problem.horizon.t0
    coeffs = tamed_coefficients(problem, config, n)
    x = np.tile(problem.initial_value, (batch.size, 1))
    states = np.empty((batch.size, steps + 1, problem.d)) if record else None
    bounds = np.searchsorted(batch.jump_step, np.arange(steps + 1))
    with np.errstate(all="ignore"):
        for k in range(steps):
            if record:
                states[:, k] = x
            t = t0 + k * h
            drift, diff = coeffs(t, x)
            noise = _matvec(diff, batch.dW[:, k])
            jumps = np.zeros_like(x)
            lo, hi = bounds[k], bounds[k + 1]
            if hi > lo:
                owner = batch.jump_path[lo:hi]
                np.add.at(jumps, owner, problem.jump_coeff(t, x[owner], batch.jump_marks[lo:hi]))
            x = _advance(x, drift, h, noise, jumps, problem.compensator(t, x))
    # non-finite values never return to finite under these updates, so the end state decides
    flagged = ~np.all(np.isfinite(x), axis=1)
    if record:
        states[:, steps] = x
        _invalidate_after_overflow(states)
    return BatchResult(np.where(flagged[:, None], np.nan, x), flagged, states)


def _first_bad(states):
    bad = ~np.all(np.isfinite(states), axis=-1)
    first = np.where(bad.any(axis=-1), bad.argmax(axis=-1), -1)
    return first


def _invalidate_after_overflow(states):
    for i, k in enumerate(_first_bad(states)):
        if k >= 0:
            states[i, k:] = np.nan


def integrate(problem: SdeProblem, config: TamingConfig, n: int, path: DrivingPath) -> Trajectory:
    res = integrate_batch(problem, config, n, PathBatch.from_paths([path]), record=True)
    states = res.states[0]
    first = int(_first_bad(res.states)[0])
    times = problem.horizon.t0 + np.arange(path.steps + 1) * path.h
    return Trajectory(n, times, states, bool(res.flagged[0]), first if first >= 0 else None)


# ---------------------------------------------------------------- delays


def _lattice_index(value: float, t0: float, h: float) -> int:
    q = (value - t0) / h
    r = round(q)
    return int(r) if abs(q - r) < 1e-9 else math.floor(q)


def integrate_sdde(problem: SddeProblem, delay_spec: DelaySpec, config: TamingConfig, n: int,
                   path: DrivingPath) -> Trajectory:
    """Tamed scheme for an SDDE.

    Delay values are floored to the scheme lattice ``t0 + j h``; indices
    ``j <= 0`` read the initial segment at ``j h`` (``j = 0`` is the initial
    value), positive indices read already computed states. Taming uses the
    delayed states only in SDDE mode; other modes tame on ``x`` alone.
    """
    steps = path.steps
    if steps != steps_for(n, problem.horizon.length):
        raise ValueError(f"path has {steps} steps but n={n} needs {steps_for(n, problem.horizon.length)}")
    h = problem.horizon.length / steps
    t0 = problem.horizon.t0
    lowest = _lattice_index(t0 - delay_spec.H, t0, h)
    if lowest * h < -delay_spec.H - 1e-12:
        lowest += 1
    x0 = np.asarray(delay_spec.initial_segment(0.0), dtype=float).reshape(problem.d)
    segment = {}

    def past(j, states):
        if j > 0:
            return states[j]
        if j == 0:
            return x0
        if j not in segment:
            segment[j] = np.asarray(delay_spec.initial_segment(j * h), dtype=float).reshape(problem.d)
        return segment[j]

    states = np.full((steps + 1, problem.d), np.nan)
    states[0] = x0
    prev = [None] * delay_spec.k
    bounds = np.searchsorted(path.jump_steps, np.arange(steps + 1))
    overflow = None
    with np.errstate(all="ignore"):
        for k in range(steps):
            t = t0 + k * h
            idx = []
            for i, fn in enumerate(delay_spec.delays):
                value = float(fn(t))
                if value < t0 - delay_spec.H - 1e-12:
                    raise ValueError(f"delay {i} at t={t} is {value}, beyond lookback H={delay_spec.H}")
                j = _lattice_index(value, t0, h)
                if j > k:
                    raise ValueError(f"delay {i} at t={t} is {value}, ahead of the current grid point")
                if prev[i] is not None and j < prev[i]:
                    raise ValueError(f"delay {i} is not monotone at t={t}")
                prev[i] = j
                idx.append(max(j, lowest))
            x = states[k]
            y = np.stack([past(j, states) for j in idx])
            if config.mode is TamingMode.SDDE:
                drift, diff = tame(config, n, x, problem.drift(t, y, x), problem.diffusion(t, y, x), y)
            else:
                drift, diff = tame(config, n, x, problem.drift(t, y, x), problem.diffusion(t, y, x))
            jumps = np.zeros_like(x)
            for z in path.jump_marks[bounds[k]:bounds[k + 1]]:
                jumps = jumps + problem.jump_coeff(t, y, x, z)
            nxt = _advance(x, drift, h, _matvec(diff, path.dW[k]), jumps, problem.compensator(t, y, x))
            if not np.all(np.isfinite(nxt)):
                overflow = k + 1
                break
            states[k + 1] = nxt
    times = t0 + np.arange(steps + 1) * h
    return Trajectory(n, times, states, overflow is not None, overflow)


# ---------------------------------------------------------------- output


def write_trajectory_csv(traj: Trajectory, out: TextIO, header: Sequence[str] = ()) -> None:
    """CSV with columns ``k,t,x_1..x_d``; invalid states are written as ``nan``."""
    for line in header:
        out.write(f"# {line}\n")
    d = traj.states.shape[1]
    out.write(",".join(["k", "t"] + [f"x_{i + 1}" for i in range(d)]) + "\n")
    for k, (t, row) in enumerate(zip(traj.times, traj.states)):
        out.write(",".join([str(k), repr(float(t))] + [repr(float(v)) for v in row]) + "\n")
    if traj.overflow_flag:
        out.write(f"# overflow at step {traj.overflow_step}\n")
