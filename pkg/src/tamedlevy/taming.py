"""Taming of drift and diffusion coefficients, and the left grid-point map."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import AssumptionReport, SampleSet, SdeProblem, _violations, monotonicity_check


class TamingMode(str, enum.Enum):
    GENERIC_2CHI = "generic-2chi"
    DETERMINISTIC_CHI = "deterministic-chi"
    SDDE = "sdde"
    UNTAMED = "untamed"


@dataclass(frozen=True)
class TamingConfig:
    mode: TamingMode = TamingMode.GENERIC_2CHI
    chi: float = 0.0
    chi1: float = 0.0
    chi2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", TamingMode(self.mode))
        for key in ("chi", "chi1", "chi2"):
            value = getattr(self, key)
            if not (value >= 0.0 and math.isfinite(value)):
                raise ValueError(f"taming.{key} must be a nonnegative real, got {value}")

    @property
    def tames(self) -> bool:
        return self.mode is not TamingMode.UNTAMED


@dataclass(frozen=True)
class GridMap:
    n: int
    t0: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid map needs a positive integer n, got {self.n}")

    def point(self, k: int) -> float:
        return k / self.n + self.t0


def kappa(grid: GridMap, t: float) -> float:
    """Left grid point ``floor(n (t - t0)) / n + t0``.

    The floor index is corrected against rounding so that the returned grid
    point never exceeds ``t`` and the next grid point does; this makes the map
    idempotent in floating point.
    """
    if t < grid.t0:
        raise ValueError(f"kappa needs t >= t0, got t={t} < t0={grid.t0}")
    k = math.floor(grid.n * (t - grid.t0))
    while k > 0 and grid.point(k) > t:
        k -= 1
    while grid.point(k + 1) <= t:
        k += 1
    return grid.point(k)


def _sq_norm(v, axes=-1):
    return np.sum(v * v, axis=axes)


def taming_denominator(config: TamingConfig, n: int, x, delay_state=None):
    """The per-point divisor applied to drift and diffusion (1 when untamed)."""
    x = np.asarray(x, dtype=float)
    if config.mode is TamingMode.UNTAMED:
        return np.ones(x.shape[:-1])
    scale = 1.0 / math.sqrt(n)
    x2 = _sq_norm(x)
    if config.mode is TamingMode.GENERIC_2CHI:
        excess = x2**config.chi
    elif config.mode is TamingMode.DETERMINISTIC_CHI:
        excess = x2 ** (0.5 * config.chi)
    else:
        if delay_state is None:
            raise ValueError("SDDE taming needs the delayed state y")
        y2 = _sq_norm(np.asarray(delay_state, dtype=float), axes=(-2, -1))
        excess = y2**config.chi1 + x2**config.chi2
    return 1.0 + scale * excess


def tame(config: TamingConfig, n: int, x, raw_drift, raw_diffusion, delay_state=None):
    """Divide raw drift ``(..., d)`` and diffusion ``(..., d, m)`` by the taming denominator."""
    if config.mode is TamingMode.SDDE and delay_state is None:
        raise ValueError("SDDE taming needs the delayed state y")
    if config.mode is TamingMode.UNTAMED:
        return raw_drift, raw_diffusion
    den = taming_denominator(config, n, x, delay_state)
    return raw_drift / den[..., None], raw_diffusion / den[..., None, None]


def tamed_coefficients(problem: SdeProblem, config: TamingConfig, n: int):
    """Return ``(t, x) -> (tamed drift, tamed diffusion)`` for a non-delay problem."""
    if config.mode is TamingMode.SDDE:
        raise ValueError("SDDE taming applies to delay problems only")

    def coeffs(t, x):
        return tame(config, n, x, problem.drift(t, x), problem.diffusion(t, x))

    return coeffs


def verify_taming_growth(config: TamingConfig, problem: SdeProblem, n: int, samples: SampleSet,
                         which: str = "B-4", L: float = 2.0, M: float = 1.0,
                         p0: Optional[float] = None, rtol: float = 1e-12) -> AssumptionReport:
    """Audit the tamed coefficients at a fixed ``n``.

    B-4 checks ``|b^n|^2, |sigma^n|^2 <= L n^(1/2) (M + |x|^2)``; in
    DETERMINISTIC_CHI mode the drift part uses ``|b^n| <= L n^(1/2) (1 + |x|)``
    instead. B-5 checks ``|b^n| <= L (M + |x|^(chi+1))``. B-2 is the monotonicity
    condition for the tamed pair and needs ``p0``.
    """
    if len(samples) == 0:
        raise ValueError("empty sample set")
    t, x = samples.t, samples.x
    b, s = tamed_coefficients(problem, config, n)(t, x)
    x2 = _sq_norm(x)
    root_n = math.sqrt(n)
    consts = {"n": n, "L": L, "M": M}
    if which == "B-4":
        s2 = _sq_norm(s, axes=(-2, -1))
        bad = ~(s2 <= L * root_n * (M + x2) * (1 + rtol))
        if config.mode is TamingMode.DETERMINISTIC_CHI:
            bad |= ~(np.sqrt(_sq_norm(b)) <= L * root_n * (1.0 + np.sqrt(x2)) * (1 + rtol))
        else:
            bad |= ~(_sq_norm(b) <= L * root_n * (M + x2) * (1 + rtol))
    elif which == "B-5":
        chi = config.chi
        bad = ~(np.sqrt(_sq_norm(b)) <= L * (M + x2 ** (0.5 * (chi + 1.0))) * (1 + rtol))
        consts["chi"] = chi
    elif which == "B-2":
        if p0 is None or p0 < 2:
            raise ValueError("B-2 needs p0 >= 2")
        jump, _ = problem.jump_integral(t, x, p=2.0)
        bad = monotonicity_check(b, s, jump, x, p0, L, M, rtol)
        consts["p0"] = p0
    else:
        raise ValueError(f"unsupported assumption id {which!r}; expected B-2, B-4 or B-5")
    return AssumptionReport(which, len(samples), _violations(bad, samples), consts, samples.box)
