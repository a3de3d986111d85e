"""Monte Carlo strong-error estimation, rate fits and moment probes.

All estimators sample one driving path per path index at the finest
resolution they need and coarsen it for every other step size, so errors
between resolutions are pathwise. Paths are processed in fixed-size batches
and per-path results are combined in path-index order, which keeps the
output independent of the number of worker threads.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .driving import DrivingPath, PathSeed, is_power_of_two, sample_path
from .model import Horizon, SdeProblem
from .scheme import PathBatch, Trajectory, integrate, integrate_batch, steps_for
from .taming import TamingConfig, tamed_coefficients

log = logging.getLogger(__name__)

BATCH_SIZE = 256


class ConfigurationError(ValueError):
    """Inconsistent resolution or sampling parameters."""


@dataclass(frozen=True)
class ErrorRow:
    h: float
    rms_error: float
    std_error: float
    n_paths: int
    flagged: int


@dataclass
class ErrorTable:
    rows: list = field(default_factory=list)
    p: float = 2.0

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: -r.h)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def h(self) -> np.ndarray:
        return np.array([r.h for r in self.rows])

    @property
    def rms(self) -> np.ndarray:
        return np.array([r.rms_error for r in self.rows])

    @property
    def std_error(self) -> np.ndarray:
        return np.array([r.std_error for r in self.rows])

    def row(self, h: float) -> ErrorRow:
        for r in self.rows:
            if r.h == h:
                return r
        raise KeyError(h)

    def without_zero_rows(self) -> "ErrorTable":
        return ErrorTable([r for r in self.rows if r.rms_error > 0], self.p)

    def to_csv(self) -> str:
        lines = ["h,rms_error,std_error,n_paths,flagged"]
        for r in self.rows:
            lines.append(f"{r.h!r},{r.rms_error!r},{r.std_error!r},{r.n_paths},{r.flagged}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float


def fit_rate(table: ErrorTable) -> RateFit:
    """Least-squares fit of ``log(rms_error)`` against ``log(h)``."""
    if len(table) < 3:
        raise ValueError(f"rate fit needs at least 3 rows, got {len(table)}")
    zero = [r.h for r in table if not r.rms_error > 0]
    if zero:
        raise ValueError(f"rate fit rejects rows with zero error (h={zero}); drop degenerate rows first")
    lx, ly = np.log(table.h), np.log(table.rms)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    sst = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)


# ---------------------------------------------------------------- plumbing


def _dyadic_steps(exponent: int, length: float) -> int:
    steps = steps_for(2**exponent, length)
    if not is_power_of_two(steps):
        raise ConfigurationError(f"h=2^-{exponent} gives {steps} steps over the horizon; need a power of two")
    return steps


def _paths(problem: SdeProblem, master_seed: int, indices: Iterable[int], steps: int) -> list:
    return [sample_path(PathSeed(master_seed, i), problem.jump_model, problem.horizon, problem.m, steps)
            for i in indices]


def _map_batches(fn: Callable, n_paths: int, threads: int) -> list:
    """Apply ``fn(range_of_indices)`` over fixed batches, returning results in batch order."""
    if n_paths < 1:
        raise ConfigurationError(f"need at least one path, got {n_paths}")
    chunks = [range(lo, min(lo + BATCH_SIZE, n_paths)) for lo in range(0, n_paths, BATCH_SIZE)]
    if threads <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _moment_stats(values: np.ndarray, p: float):
    """``(mean^(1/p), delta-method standard error)`` of per-path ``|e|^p`` values."""
    count = len(values)
    if count == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / count
    if mean == 0.0:
        return 0.0, 0.0
    with np.errstate(over="ignore"):
        sd = math.sqrt(math.fsum((values - mean) ** 2) / (count - 1)) if count > 1 else 0.0
    rms = mean ** (1.0 / p)
    return rms, rms / (p * mean) * sd / math.sqrt(count)


# ---------------------------------------------------------------- strong error


def strong_error(problem: SdeProblem, config: TamingConfig, h_exponents: Sequence[int],
                 ref_exponent: int, n_paths: int, master_seed: int, p: float = 2.0,
                 threads: int = 1) -> ErrorTable:
    """Strong ``L^p`` error at ``h = 2^-e`` against the scheme at ``h = 2^-ref_exponent``.

    Each path contributes ``|X_T^ref - X_T^h|^p``; paths flagged at either
    resolution, or whose error term overflows, are excluded and counted. The standard error of
    ``mean^(1/p)`` uses the delta method.
    """
    if p < 1:
        raise ConfigurationError(f"moment order p must be >= 1, got {p}")
    exps = sorted(set(int(e) for e in h_exponents))
    if not exps:
        raise ConfigurationError("no step sizes requested")
    if ref_exponent < exps[-1]:
        raise ConfigurationError(f"reference exponent {ref_exponent} is coarser than h=2^-{exps[-1]}")
    length = problem.horizon.length
    fine = _dyadic_steps(ref_exponent, length)
    factors = {e: fine // _dyadic_steps(e, length) for e in exps}

    def run(indices):
        batch = PathBatch.from_paths(_paths(problem, master_seed, indices, fine))
        ref = integrate_batch(problem, config, 2**ref_exponent, batch)
        out = {}
        for e in exps:
            if factors[e] == 1:
                res = ref
            else:
                res = integrate_batch(problem, config, 2**e, batch.coarsen(factors[e]))
            diff = ref.final - res.final
            with np.errstate(over="ignore"):
                err = np.sum(diff * diff, axis=1) ** (0.5 * p)
            # finite states whose error term is not representable count as flagged too
            out[e] = (err, ref.flagged | res.flagged | ~np.isfinite(err))
        return out

    parts = _map_batches(run, n_paths, threads)
    rows = []
    for e in exps:
        err = np.concatenate([part[e][0] for part in parts])
        flags = np.concatenate([part[e][1] for part in parts])
        rms, se = _moment_stats(err[~flags], p)
        rows.append(ErrorRow(2.0**-e, rms, se, int(np.sum(~flags)), int(np.sum(flags))))
    table = ErrorTable(rows, p)
    flagged = max(r.flagged for r in rows)
    if flagged and config.tames:
        warnings.warn(f"{flagged} paths overflowed under {config.mode.value} taming", RuntimeWarning)
    return table


def per_path_errors(problem: SdeProblem, config: TamingConfig, h_exponent: int, ref_exponent: int,
                    n_paths: int, master_seed: int) -> np.ndarray:
    """Raw ``|X_T^ref - X_T^h|`` for each path index (NaN for flagged paths)."""
    length = problem.horizon.length
    fine = _dyadic_steps(ref_exponent, length)
    factor = fine // _dyadic_steps(h_exponent, length)

    def run(indices):
        batch = PathBatch.from_paths(_paths(problem, master_seed, indices, fine))
        ref = integrate_batch(problem, config, 2**ref_exponent, batch)
        res = integrate_batch(problem, config, 2**h_exponent, batch.coarsen(factor))
        return np.sqrt(np.sum((ref.final - res.final) ** 2, axis=1))

    return np.concatenate(_map_batches(run, n_paths, 1))


# ---------------------------------------------------------------- probes


@dataclass(frozen=True)
class MomentProbe:
    n_list: tuple
    p: float
    values: tuple
    flagged: tuple
    n_paths: int

    @property
    def ratio(self) -> float:
        vals = np.asarray(self.values)
        if np.any(~np.isfinite(vals)) or np.min(vals) <= 0:
            return math.inf
        return float(np.max(vals) / np.min(vals))

    @property
    def overflowed(self) -> bool:
        return any(self.flagged)


def _check_n_list(n_list, length):
    steps = []
    for n in n_list:
        s = steps_for(int(n), length)
        if not is_power_of_two(s):
            raise ConfigurationError(f"n={n} gives {s} steps; need a power of two")
        steps.append(s)
    return steps


def moment_probe(problem: SdeProblem, config: TamingConfig, n_list: Sequence[int], p: float,
                 n_paths: int, master_seed: int, threads: int = 1) -> MomentProbe:
    """Sup over grid times of the empirical mean of ``|x_t^n|^p``, for each ``n``.

    Flagged paths are excluded from the mean and counted.
    """
    if p < 2:
        raise ConfigurationError(f"moment probe needs p >= 2, got {p}")
    n_list = tuple(int(n) for n in n_list)
    steps = _check_n_list(n_list, problem.horizon.length)
    fine = max(steps)

    def run(indices):
        batch = PathBatch.from_paths(_paths(problem, master_seed, indices, fine))
        out = []
        for n, s in zip(n_list, steps):
            res = integrate_batch(problem, config, n, batch.coarsen(fine // s), record=True)
            ok = ~res.flagged
            with np.errstate(over="ignore"):
                mom = np.sum(res.states[ok] ** 2, axis=-1) ** (0.5 * p)
            out.append((mom.sum(axis=0), int(ok.sum()), int(res.flagged.sum())))
        return out

    parts = _map_batches(run, n_paths, threads)
    values, flagged = [], []
    for j in range(len(n_list)):
        total = np.sum([part[j][0] for part in parts], axis=0)
        good = sum(part[j][1] for part in parts)
        values.append(float(np.max(total / good)) if good else math.inf)
        flagged.append(sum(part[j][2] for part in parts))
    if any(flagged) and config.tames:
        log.warning("moment probe: %s paths overflowed under %s", flagged, config.mode.value)
    return MomentProbe(n_list, p, tuple(values), tuple(flagged), n_paths)


@dataclass(frozen=True)
class IncrementProbe:
    n: int
    rho: float
    value: float
    flagged: int
    n_paths: int


def increment_probe(problem: SdeProblem, config: TamingConfig, n: int, rho: float, n_paths: int,
                    master_seed: int, threads: int = 1) -> IncrementProbe:
    """Sup over steps of the empirical ``E|x_t^n - x_kappa(n,t)^n|^rho`` at step midpoints.

    The noise is sampled at twice the scheme resolution; the first half-step
    increment and the jumps of the first half-step give the scheme's
    continuous-time value at each midpoint.
    """
    if rho < 1:
        raise ConfigurationError(f"rho must be >= 1, got {rho}")
    steps = _check_n_list([n], problem.horizon.length)[0]
    fine = 2 * steps
    h = problem.horizon.length / steps
    times = problem.horizon.t0 + np.arange(steps) * h
    coeffs = tamed_coefficients(problem, config, n)

    def run(indices):
        paths = _paths(problem, master_seed, indices, fine)
        batch = PathBatch.from_paths(paths)
        res = integrate_batch(problem, config, n, batch.coarsen(2), record=True)
        x = res.states[:, :-1]
        with np.errstate(all="ignore"):
            drift, diff = coeffs(times, x)
            dev = drift * (0.5 * h) + np.sum(diff * batch.dW[:, 0::2, None, :], axis=-1)
            first_half = batch.jump_step % 2 == 0
            owner = batch.jump_path[first_half]
            k = batch.jump_step[first_half] // 2
            if len(owner):
                g = problem.jump_coeff(times[k], x[owner, k], batch.jump_marks[first_half])
                np.add.at(dev, (owner, k), g)
            dev = dev - (0.5 * h) * problem.compensator(times, x)
        ok = ~res.flagged
        mom = np.sum(dev[ok] ** 2, axis=-1) ** (0.5 * rho)
        return mom.sum(axis=0), int(ok.sum()), int(res.flagged.sum())

    parts = _map_batches(run, n_paths, threads)
    total = np.sum([part[0] for part in parts], axis=0)
    good = sum(part[1] for part in parts)
    value = float(np.max(total / good)) if good else math.inf
    return IncrementProbe(n, rho, value, sum(part[2] for part in parts), n_paths)


def increment_decay(problem: SdeProblem, config: TamingConfig, n_list: Sequence[int], rho: float,
                    n_paths: int, master_seed: int, threads: int = 1):
    """Increment probes over ``n_list`` plus the ratios between successive values."""
    probes = [increment_probe(problem, config, n, rho, n_paths, master_seed, threads) for n in n_list]
    ratios = [a.value / b.value for a, b in zip(probes, probes[1:])]
    return probes, ratios


def deterministic_iteration(problem: SdeProblem, config: TamingConfig, n: int, steps: int) -> Trajectory:
    """Integrate with all noise switched off (zero increments, no jumps)."""
    horizon = Horizon(problem.horizon.t0, problem.horizon.t0 + steps / n)
    quiet_problem = dataclasses.replace(problem, horizon=horizon)
    path = DrivingPath.quiet(horizon, steps, problem.m, problem.jump_model.mark_dim)
    return integrate(quiet_problem, config, n, path)
