"""Problem definitions for Levy-driven SDEs/SDDEs and numerical assumption audits.

Coefficient functions are vectorised over leading axes:

* ``drift(t, x)``: ``x`` has shape ``(..., d)``, returns ``(..., d)``
* ``diffusion(t, x)``: returns ``(..., d, m)``
* ``jump_coeff(t, x, z)``: ``z`` has shape ``(..., q)``, returns ``(..., d)``
* ``compensator(t, x)``: ``int_Z jump_coeff(t, x, z) nu(dz)``, returns ``(..., d)``

``t`` is either a float or an array broadcastable against ``x[..., 0]``.
The jump measure is always finite activity: ``nu = intensity * (mark law)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray
MarkSampler = Callable[[np.random.Generator, int], Array]

ASSUMPTION_IDS = ("A-2", "A-3", "A-7", "A-8", "A-9", "B-2", "B-4", "B-5")


class AuditError(ValueError):
    """Raised for malformed audit requests (not for failed inequalities)."""


@dataclass(frozen=True)
class Horizon:
    t0: float
    t1: float

    def __post_init__(self):
        if not (0.0 <= self.t0 < self.t1) or not math.isfinite(self.t1):
            raise ValueError(f"horizon needs 0 <= t0 < t1, got [{self.t0}, {self.t1}]")

    @property
    def length(self) -> float:
        return self.t1 - self.t0


@dataclass(frozen=True)
class LevyModel:
    """Compound Poisson jump model: Poisson(intensity) arrivals with i.i.d. marks.

    ``mark_sampler(rng, size)`` must return an array of shape ``(size, q)``.
    ``mark_abs_moment(p)``, if given, returns ``E|z|^p`` in closed form.
    """

    intensity: float
    mark_sampler: MarkSampler
    mark_mean: tuple
    mark_second_moment: float
    mark_abs_moment: Optional[Callable[[float], float]] = None
    label: str = "custom"

    def __post_init__(self):
        if not (self.intensity > 0.0) or not math.isfinite(self.intensity):
            raise ValueError(f"jump intensity must be positive and finite, got {self.intensity}")
        object.__setattr__(self, "mark_mean", tuple(float(v) for v in np.atleast_1d(self.mark_mean)))

    @property
    def mark_dim(self) -> int:
        return len(self.mark_mean)

    def sample_marks(self, rng: np.random.Generator, size: int) -> Array:
        z = np.asarray(self.mark_sampler(rng, size), dtype=float)
        return z.reshape(size, self.mark_dim)


def uniform_marks(low: float, high: float, intensity: float) -> LevyModel:
    """Scalar marks ``z ~ U(low, high)`` arriving at rate ``intensity``."""
    if not low < high:
        raise ValueError(f"uniform mark law needs low < high, got ({low}, {high})")
    width = high - low

    def sampler(rng, size):
        return low + width * rng.random((size, 1))

    def abs_moment(p):
        # E|z|^p for z ~ U(low, high), p > -1
        def prim(v):
            return math.copysign(abs(v) ** (p + 1.0), v) / (p + 1.0)

        if low >= 0.0 or high <= 0.0:
            return abs(prim(high) - prim(low)) / width
        return (prim(high) - prim(low)) / width

    return LevyModel(
        intensity=float(intensity),
        mark_sampler=sampler,
        mark_mean=(0.5 * (low + high),),
        mark_second_moment=(low * low + low * high + high * high) / 3.0,
        mark_abs_moment=abs_moment,
        label=f"uniform({low!r}, {high!r})",
    )


def normal_marks(mean: float, sd: float, intensity: float) -> LevyModel:
    """Scalar Gaussian marks; no closed-form absolute moments, so audits use Monte Carlo."""
    if not sd > 0:
        raise ValueError(f"normal mark law needs sd > 0, got {sd}")

    def sampler(rng, size):
        return mean + sd * rng.standard_normal((size, 1))

    return LevyModel(float(intensity), sampler, (float(mean),), mean * mean + sd * sd,
                     label=f"normal({mean!r}, {sd!r})")


@dataclass(frozen=True)
class SdeProblem:
    """Coefficients, jump model, horizon and initial value of a Levy-driven SDE.

    ``jump_moment(t, x, xbar, p)``, when supplied, returns the closed form of
    ``int_Z |jump_coeff(t, x, z) - jump_coeff(t, xbar, z)|^p nu(dz)``
    (``xbar=None`` means the difference term is absent). Without it the audits
    fall back to Monte Carlo over the mark law.
    """

    d: int
    m: int
    drift: Callable
    diffusion: Callable
    jump_coeff: Callable
    jump_model: LevyModel
    compensator: Callable
    initial_value: Array
    horizon: Horizon
    chi: float = 0.0
    jump_moment: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ValueError(f"need d >= 1 and m >= 1, got d={self.d}, m={self.m}")
        if self.chi < 0:
            raise ValueError(f"chi must be nonnegative, got {self.chi}")
        x0 = np.asarray(self.initial_value, dtype=float).reshape(-1)
        if x0.shape != (self.d,):
            raise ValueError(f"initial value has shape {x0.shape}, expected ({self.d},)")
        x0.setflags(write=False)
        object.__setattr__(self, "initial_value", x0)

        t = self.horizon.t0
        z = np.zeros(self.jump_model.mark_dim)
        shapes = {
            "drift": (np.shape(self.drift(t, x0)), (self.d,)),
            "diffusion": (np.shape(self.diffusion(t, x0)), (self.d, self.m)),
            "jump_coeff": (np.shape(self.jump_coeff(t, x0, z)), (self.d,)),
            "compensator": (np.shape(self.compensator(t, x0)), (self.d,)),
        }
        for key, (got, want) in shapes.items():
            if got != want:
                raise ValueError(f"{key} returned shape {got}, expected {want}")

    def jump_integral(self, t, x: Array, xbar: Optional[Array] = None, p: float = 2.0,
                      mc_samples: int = 4096, seed: int = 0) -> tuple[Array, Optional[Array]]:
        """``int_Z |gamma(t,x,z) - gamma(t,xbar,z)|^p nu(dz)`` at each row of ``x``.

        Returns ``(values, stderr)``; ``stderr`` is None for closed forms.
        """
        x = np.asarray(x, dtype=float)
        if self.jump_moment is not None:
            return np.asarray(self.jump_moment(t, x, xbar, p), dtype=float), None
        return _mc_jump_integral(self, t, x, xbar, p, mc_samples, seed)


def _mc_jump_integral(problem, t, x, xbar, p, mc_samples, seed):
    rng = np.random.default_rng(seed)
    marks = problem.jump_model.sample_marks(rng, mc_samples)
    lam = problem.jump_model.intensity
    npts = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (npts,))
    mean = np.empty(npts)
    se = np.empty(npts)
    chunk = max(1, 2**20 // mc_samples)
    for lo in range(0, npts, chunk):
        sl = slice(lo, lo + chunk)
        tt = t[sl, None]
        g = problem.jump_coeff(tt, x[sl, None, :], marks[None, :, :])
        if xbar is not None:
            g = g - problem.jump_coeff(tt, xbar[sl, None, :], marks[None, :, :])
        vals = np.sum(g * g, axis=-1) ** (0.5 * p)
        mean[sl] = lam * vals.mean(axis=1)
        se[sl] = lam * vals.std(axis=1, ddof=1) / math.sqrt(mc_samples)
    return mean, se


@dataclass(frozen=True)
class DelaySpec:
    """Delay structure of an SDDE.

    ``delays`` are nondecreasing functions ``d_i(t)`` with values in ``[-H, t]``;
    ``initial_segment(s)`` gives the state for ``s`` in ``[-H, 0]`` (relative to t0).
    """

    delays: Sequence[Callable[[float], float]]
    H: float
    initial_segment: Callable[[float], Array]

    def __post_init__(self):
        if not self.H > 0:
            raise ValueError(f"lookback bound H must be positive, got {self.H}")
        if len(self.delays) < 1:
            raise ValueError("need at least one delay function")
        object.__setattr__(self, "delays", tuple(self.delays))

    @property
    def k(self) -> int:
        return len(self.delays)


@dataclass(frozen=True)
class SddeProblem:
    """SDE with delays; coefficients take the delayed states ``y`` of shape ``(..., k, d)``.

    ``drift(t, y, x)``, ``diffusion(t, y, x)``, ``jump_coeff(t, y, x, z)`` and
    ``compensator(t, y, x)`` follow the same shape conventions as SdeProblem.
    The initial value is the initial segment at 0.
    """

    d: int
    m: int
    drift: Callable
    diffusion: Callable
    jump_coeff: Callable
    jump_model: LevyModel
    compensator: Callable
    horizon: Horizon
    name: str = "custom-sdde"


@dataclass
class AssumptionReport:
    assumption: str
    sample_count: int
    violations: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    box: str = ""
    jump_stderr: Optional[float] = None

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        consts = ", ".join(f"{k}={v:g}" for k, v in self.constants.items())
        status = "PASS" if self.passed else f"FAIL ({len(self.violations)} violations)"
        line = f"{self.assumption:<5} {status:<24} samples={self.sample_count} {consts}"
        if self.box:
            line += f" box={self.box}"
        return line


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class SampleSet:
    """Audit points: times ``t`` (N,), states ``x`` (N, d) and optional partners ``xbar``."""

    t: Array
    x: Array
    xbar: Optional[Array] = None
    box: str = ""

    def __len__(self):
        return self.x.shape[0]


def sample_box(horizon: Horizon, d: int, R: float, count: int, seed: int = 0,
               pairs: bool = False) -> SampleSet:
    """Uniform samples from ``[t0, t1] x [-R, R]^d`` plus the origin and box corners.

    With ``pairs=True`` every point gets an independent partner ``xbar``; the
    appended deterministic points then include ``x == xbar`` pairs.
    """
    if count < 1:
        raise AuditError("sample count must be positive")
    rng = np.random.default_rng(seed)
    t = horizon.t0 + horizon.length * rng.random(count)
    x = rng.uniform(-R, R, size=(count, d))
    fixed = [np.zeros(d)]
    if d <= 6:
        corners = np.array(np.meshgrid(*[[-R, R]] * d, indexing="ij")).reshape(d, -1).T
        fixed.extend(corners)
    fixed = np.array(fixed)
    t = np.concatenate([t, np.full(len(fixed), horizon.t0)])
    x = np.concatenate([x, fixed])
    xbar = None
    if pairs:
        xbar = rng.uniform(-R, R, size=(count, d))
        xbar = np.concatenate([xbar, fixed[::-1]])
        # identical-argument pairs
        x = np.concatenate([x, fixed])
        xbar = np.concatenate([xbar, fixed])
        t = np.concatenate([t, np.full(len(fixed), horizon.t0)])
    return SampleSet(t=t, x=x, xbar=xbar, box=f"[-{R:g},{R:g}]^{d}")


def _require(samples: SampleSet, pairs=False):
    if len(samples) == 0:
        raise AuditError("empty sample set")
    if pairs and samples.xbar is None:
        raise AuditError("this audit needs sample pairs (x, xbar)")


def _norm2(v, axes=-1):
    return np.sum(v * v, axis=axes)


def _violations(mask, samples: SampleSet, pairs=False):
    idx = np.flatnonzero(mask)
    out = []
    for i in idx:
        pt = (float(samples.t[i]), tuple(float(v) for v in samples.x[i]))
        if pairs:
            pt = pt + (tuple(float(v) for v in samples.xbar[i]),)
        out.append(pt)
    return sorted(out)


def _max_se(se):
    return None if se is None else float(np.max(se))


# ---------------------------------------------------------------- audits


def monotonicity_check(drift_vals, diff_vals, jump_vals, x, p0, L, M, rtol):
    """Vectorised A-2/B-2 inequality; returns the boolean violation mask."""
    xb = 2.0 * np.sum(x * drift_vals, axis=-1)
    s2 = (p0 - 1.0) * _norm2(diff_vals, axes=(-2, -1))
    lhs = np.maximum(xb + s2, jump_vals)
    rhs = L * (M + _norm2(x))
    slack = rtol * (np.abs(xb) + s2 + np.abs(jump_vals) + np.abs(rhs))
    return ~(lhs <= rhs + slack)


def audit_monotonicity(problem: SdeProblem, p0: float, constants: tuple, samples: SampleSet,
                       rtol: float = 1e-12) -> AssumptionReport:
    """A-2: ``max(2x.b + (p0-1)|sigma|^2, int |gamma|^2 dnu) <= L (M + |x|^2)``.

    The comparison allows a relative slack ``rtol`` times the magnitude of the
    summed terms to absorb floating-point cancellation.
    """
    if p0 < 2:
        raise AuditError(f"p0 must be >= 2, got {p0}")
    _require(samples)
    L, M = constants
    t, x = samples.t, samples.x
    jump, se = problem.jump_integral(t, x, p=2.0)
    bad = monotonicity_check(problem.drift(t, x), problem.diffusion(t, x), jump, x, p0, L, M, rtol)
    return AssumptionReport("A-2", len(samples), _violations(bad, samples),
                            {"p0": p0, "L": L, "M": M}, samples.box, _max_se(se))


def audit_jump_growth(problem: SdeProblem, p0: float, constants: tuple, samples: SampleSet,
                      rtol: float = 1e-12) -> AssumptionReport:
    """A-3: ``int |gamma|^p0 dnu <= L (N + |x|^p0)``."""
    if p0 < 2:
        raise AuditError(f"p0 must be >= 2, got {p0}")
    _require(samples)
    L, N = constants
    jump, se = problem.jump_integral(samples.t, samples.x, p=p0)
    rhs = L * (N + _norm2(samples.x) ** (0.5 * p0))
    bad = ~(jump <= rhs * (1.0 + rtol))
    return AssumptionReport("A-3", len(samples), _violations(bad, samples),
                            {"p0": p0, "L": L, "N": N}, samples.box, _max_se(se))


def audit_lipschitz_family(problem: SdeProblem, which: str, samples: SampleSet, *, C: float,
                           p: float = 2.0, chi: Optional[float] = None,
                           rtol: float = 1e-12) -> AssumptionReport:
    """Two-point conditions A-7, A-8 and A-9 on sample pairs.

    ``p`` is p1 for A-7 and the moment order for A-8; ``chi`` defaults to the
    problem's drift exponent for A-9.
    """
    if which not in ("A-7", "A-8", "A-9"):
        raise AuditError(f"unsupported assumption id {which!r}; expected A-7, A-8 or A-9")
    if not C > 0:
        raise AuditError(f"C must be positive, got {C}")
    _require(samples, pairs=True)
    t, x, xb = samples.t, samples.x, samples.xbar
    dist2 = _norm2(x - xb)
    se = None
    if which == "A-9":
        chi = problem.chi if chi is None else chi
        if chi < 0:
            raise AuditError(f"chi must be nonnegative, got {chi}")
        bx, bxb = problem.drift(t, x), problem.drift(t, xb)
        lhs = np.sqrt(_norm2(bx - bxb))
        rhs = C * (1.0 + _norm2(x) ** (0.5 * chi) + _norm2(xb) ** (0.5 * chi)) * np.sqrt(dist2)
        slack = rtol * np.sqrt(_norm2(bx) + _norm2(bxb))
        consts = {"C": C, "chi": chi}
    elif which == "A-7":
        db = problem.drift(t, x) - problem.drift(t, xb)
        ds = problem.diffusion(t, x) - problem.diffusion(t, xb)
        mono = 2.0 * np.sum((x - xb) * db, axis=-1)
        s2 = (p - 1.0) * _norm2(ds, axes=(-2, -1))
        jump, se = problem.jump_integral(t, x, xb, p=2.0)
        lhs = np.maximum(mono + s2, jump)
        rhs = C * dist2
        slack = rtol * (np.abs(mono) + s2 + jump + rhs
                        + np.sqrt(_norm2(problem.drift(t, x)) * dist2))
        consts = {"p1": p, "C": C}
    else:
        jump, se = problem.jump_integral(t, x, xb, p=p)
        lhs = jump
        rhs = C * dist2 ** (0.5 * p)
        slack = rtol * rhs
        consts = {"p": p, "C": C}
    bad = ~(lhs <= rhs + slack)
    return AssumptionReport(which, len(samples), _violations(bad, samples, pairs=True), consts,
                            samples.box, _max_se(se))


@dataclass(frozen=True)
class CompensatorCheck:
    passed: bool
    discrepancy: float
    stderr: float
    probe: tuple

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"compensator {status:<6} worst |MC - declared|={self.discrepancy:.3g} "
                f"(stderr {self.stderr:.3g}) at t={self.probe[0]:g}, x={list(self.probe[1])}")


def audit_compensator(problem: SdeProblem, mc_samples: int = 20000, tolerance: float = 4.0,
                      probes: Optional[SampleSet] = None, seed: int = 0) -> CompensatorCheck:
    """Compare the declared compensator with a Monte Carlo estimate of ``lambda E[gamma(t,x,Z)]``.

    A probe fails when the discrepancy exceeds ``tolerance`` standard errors.
    """
    if mc_samples < 1000:
        raise AuditError(f"mc_samples must be >= 1000, got {mc_samples}")
    if probes is None:
        probes = sample_box(problem.horizon, problem.d, 2.0, 8, seed=seed)
        probes = SampleSet(np.append(probes.t, problem.horizon.t0),
                           np.vstack([probes.x, problem.initial_value]))
    rng = np.random.default_rng(seed)
    marks = problem.jump_model.sample_marks(rng, mc_samples)
    lam = problem.jump_model.intensity
    worst = (-1.0, 0.0, None)
    passed = True
    for t, x in zip(probes.t, probes.x):
        g = problem.jump_coeff(t, np.broadcast_to(x, (mc_samples, problem.d)), marks)
        est = lam * g.mean(axis=0)
        se = lam * g.std(axis=0, ddof=1) / math.sqrt(mc_samples)
        gap = np.abs(est - np.asarray(problem.compensator(t, x), dtype=float))
        if np.any(gap > tolerance * se + 1e-12 * (1.0 + np.abs(est))):
            passed = False
        score = float(np.max(gap))
        if worst[2] is None or score > worst[0]:
            worst = (score, float(np.max(se)), (float(t), tuple(float(v) for v in x)))
    return CompensatorCheck(passed, worst[0], worst[1], worst[2])


def audit_marks(model: LevyModel, mc_samples: int = 100000, tolerance: float = 4.0,
                seed: int = 0) -> bool:
    """Check declared mark mean and second moment against the sampler."""
    z = model.sample_marks(np.random.default_rng(seed), mc_samples)
    root = math.sqrt(mc_samples)
    mean_ok = np.all(np.abs(z.mean(axis=0) - np.asarray(model.mark_mean))
                     <= tolerance * z.std(axis=0, ddof=1) / root + 1e-15)
    sq = np.sum(z * z, axis=1)
    second_ok = abs(sq.mean() - model.mark_second_moment) <= tolerance * sq.std(ddof=1) / root + 1e-15
    return bool(mean_ok and second_ok)


# ---------------------------------------------------------------- built-ins


def cubic_jump(x0: float = 1.0, jump_model: Optional[LevyModel] = None,
               horizon: Horizon = Horizon(0.0, 1.0)) -> SdeProblem:
    """``dx = (x - x^3) dt + x^2 dw + x int z N~(dt, dz)``.

    Default marks: ``U(-1/4, 1/4)`` arriving at rate 2. The compensator is zero,
    which is only right for zero-mean marks (``audit_compensator`` catches the rest).
    """
    return _cubic(x0, jump_model, horizon, lambda x: (x * x)[..., None], "cubic-jump")


def cubic_jump_mild(x0: float = 1.0, jump_model: Optional[LevyModel] = None,
                    horizon: Horizon = Horizon(0.0, 1.0)) -> SdeProblem:
    """Cubic drift with diffusion ``x |x|^(1/2)``; A-2 then holds for every p0."""
    return _cubic(x0, jump_model, horizon, lambda x: (x * np.sqrt(np.abs(x)))[..., None],
                  "cubic-jump-mild")


def _cubic(x0, marks, horizon, sigma, name):
    marks = uniform_marks(-0.25, 0.25, 2.0) if marks is None else marks
    if marks.mark_dim != 1:
        raise ValueError("cubic problems need scalar marks")

    def drift(t, x):
        return x - x**3

    def diffusion(t, x):
        return sigma(x)

    def jump(t, x, z):
        return x * z

    def compensator(t, x):
        return np.zeros_like(x)

    jump_moment = None
    if marks.mark_abs_moment is not None:
        def jump_moment(t, x, xbar, p):
            diff = x if xbar is None else x - xbar
            return marks.intensity * marks.mark_abs_moment(p) * np.abs(diff[..., 0]) ** p

    return SdeProblem(d=1, m=1, drift=drift, diffusion=diffusion, jump_coeff=jump,
                      jump_model=marks, compensator=compensator,
                      initial_value=np.array([float(x0)]), horizon=horizon, chi=2.0,
                      jump_moment=jump_moment, name=name)


def zero_problem(d: int = 1, m: int = 1, x0=None, horizon: Horizon = Horizon(0.0, 1.0)) -> SdeProblem:
    """All coefficients identically zero."""
    marks = uniform_marks(-0.25, 0.25, 2.0)

    def drift(t, x):
        return np.zeros_like(x)

    def diffusion(t, x):
        return np.zeros(np.shape(x) + (m,))

    def jump(t, x, z):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(z)[:-1] + (d,)))

    def jump_moment(t, x, xbar, p):
        return np.zeros(np.shape(x)[:-1])

    x0 = np.ones(d) if x0 is None else x0
    return SdeProblem(d=d, m=m, drift=drift, diffusion=diffusion, jump_coeff=jump,
                      jump_model=marks, compensator=drift, initial_value=np.asarray(x0, float),
                      horizon=horizon, chi=0.0, jump_moment=jump_moment, name="zero")


def pure_drift(x0: float = 0.0, horizon: Horizon = Horizon(0.0, 1.0)) -> SdeProblem:
    """``dx = dt``; no diffusion, no jumps."""
    base = zero_problem(1, 1, [x0], horizon)

    def drift(t, x):
        return np.ones_like(x)

    return SdeProblem(d=1, m=1, drift=drift, diffusion=base.diffusion, jump_coeff=base.jump_coeff,
                      jump_model=base.jump_model, compensator=base.compensator,
                      initial_value=base.initial_value, horizon=horizon, chi=0.0,
                      jump_moment=base.jump_moment, name="pure-drift")


BUILTIN_PROBLEMS = {
    "cubic-jump": cubic_jump,
    "cubic-jump-mild": cubic_jump_mild,
    "zero": zero_problem,
    "pure-drift": pure_drift,
}


def builtin_problem(name: str, **kwargs) -> SdeProblem:
    try:
        factory = BUILTIN_PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown builtin problem {name!r}; known: {sorted(BUILTIN_PROBLEMS)}") from None
    return factory(**kwargs)
