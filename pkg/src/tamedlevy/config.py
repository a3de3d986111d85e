"""Run configuration: a flat ``key = value`` text format with dotted keys.

Grammar, one entry per line::

    line    := blank | "#" comment | key "=" value
    key     := name ("." name)*
    value   := rest of the line, surrounding whitespace stripped

Lists are comma separated; ``a..b`` expands to the integers ``a`` to ``b``.
Numeric values may be constant arithmetic (``1/24``, ``2**-3``). Inline
problems (``problem = inline``) are scalar (``d = m = 1``, scalar marks) and
take their coefficients as expressions in ``t``, ``x`` and ``z`` built from
numbers, ``+ - * / **``, parentheses and the functions ``abs``, ``sqrt``,
``exp``, ``log``, ``sin``, ``cos``, ``sign`` and ``norm``.
"""
from __future__ import annotations

import ast
import dataclasses
import hashlib
import math
import operator
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .driving import is_power_of_two
from .model import BUILTIN_PROBLEMS, Horizon, SdeProblem, builtin_problem, normal_marks, uniform_marks
from .taming import TamingConfig, TamingMode

DEFAULT_SEED = 20160523


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# ---------------------------------------------------------------- expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"abs": np.abs, "sqrt": np.sqrt, "exp": np.exp, "log": np.log, "sin": np.sin,
          "cos": np.cos, "sign": np.sign, "norm": np.abs}
_CONSTS = {"pi": math.pi, "e": math.e}


def compile_expression(text: str, variables=("t", "x", "z"), key: str = "expression") -> Callable:
    """Compile ``text`` into ``f(**vars)`` evaluated with numpy broadcasting."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(key, f"cannot parse expression {text!r}: {exc.msg}") from None

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            value = float(node.value)
            return lambda env: value
        if isinstance(node, ast.Name):
            if node.id in variables:
                name = node.id
                return lambda env: env[name]
            if node.id in _CONSTS:
                value = _CONSTS[node.id]
                return lambda env: value
            raise ConfigError(key, f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, left, right = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda env: op(left(env), right(env))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            op, inner = _UNARY[type(node.op)], build(node.operand)
            return lambda env: op(inner(env))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
            fn, inner = _FUNCS[node.func.id], build(node.args[0])
            return lambda env: fn(inner(env))
        raise ConfigError(key, f"unsupported syntax in {text!r}")

    body = build(tree)
    return lambda **env: body(env)


def parse_number(text: str, key: str) -> float:
    value = compile_expression(text, variables=(), key=key)()
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(key, f"not a finite number: {text!r}")
    return value


def parse_int(text: str, key: str) -> int:
    value = parse_number(text, key)
    if value != int(value):
        raise ConfigError(key, f"expected an integer, got {text!r}")
    return int(value)


def parse_int_list(text: str, key: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            lo, hi = parse_int(lo, key), parse_int(hi, key)
            if hi < lo:
                raise ConfigError(key, f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(parse_int(part, key))
    if not out:
        raise ConfigError(key, "empty list")
    return out


def parse_bool(text: str, key: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {text!r}")


def parse_marks(text: str, intensity: float, key: str = "jump.marks"):
    try:
        call = ast.parse(text.strip(), mode="eval").body
    except SyntaxError:
        call = None
    if not (isinstance(call, ast.Call) and isinstance(call.func, ast.Name)):
        raise ConfigError(key, f"expected uniform(a, b) or normal(mean, sd), got {text!r}")
    args = [parse_number(ast.unparse(a), key) for a in call.args]
    try:
        if call.func.id == "uniform" and len(args) == 2:
            return uniform_marks(args[0], args[1], intensity)
        if call.func.id == "normal" and len(args) == 2:
            return normal_marks(args[0], args[1], intensity)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    raise ConfigError(key, f"unknown mark law {text!r}")


# ---------------------------------------------------------------- text format


def parse_text(text: str, source: str = "<config>") -> dict:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}", "missing key")
        if key in entries:
            raise ConfigError(key, f"duplicate key (line {lineno})")
        entries[key] = value
    return entries


def load_file(path) -> dict:
    path = Path(path)
    return parse_text(path.read_text(), str(path))


PRESETS = {
    "table1-desk": {
        "problem": "cubic-jump",
        "taming.mode": "deterministic-chi",
        "taming.chi": "2",
        "h_exponents": "6..12",
        "ref_exponent": "15",
        "n_paths": "10000",
        "seed": str(DEFAULT_SEED),
        "p": "2",
        "moments.n_exponents": "6..12",
        "simulate.n": "64",
    },
    "table1-full": {
        "problem": "cubic-jump",
        "taming.mode": "deterministic-chi",
        "taming.chi": "2",
        "h_exponents": "6..20",
        "ref_exponent": "21",
        "n_paths": "60000",
        "seed": str(DEFAULT_SEED),
        "p": "2",
        "moments.n_exponents": "6..12",
        "simulate.n": "64",
    },
    "untamed-demo": {
        "problem": "cubic-jump",
        "x0": "4",
        "horizon.t1": "4",
        "taming.mode": "untamed",
        "h_exponents": "2..4",
        "ref_exponent": "6",
        "n_paths": "1000",
        "seed": str(DEFAULT_SEED),
        "moments.n_exponents": "2..3",
        "simulate.n": "4",
        "simulate.zero_noise": "true",
    },
}

KNOWN_KEYS = {
    "problem", "drift", "diffusion", "jump", "compensator", "chi", "x0",
    "horizon.t0", "horizon.t1", "jump.intensity", "jump.marks",
    "taming.mode", "taming.chi", "taming.chi1", "taming.chi2",
    "h_exponents", "ref_exponent", "n_paths", "seed", "p", "output",
    "simulate.n", "simulate.path_index", "simulate.zero_noise",
    "moments.n_exponents", "moments.p",
    "audit.p0", "audit.L", "audit.M", "audit.N", "audit.R", "audit.samples", "audit.seed",
    "audit.p1", "audit.C7", "audit.p8", "audit.C8", "audit.C9", "audit.chi", "audit.n",
}


@dataclass(frozen=True)
class AuditSettings:
    p0: float = 3.0
    L: float = 2.0
    M: float = 1.0
    N: float = 1.0
    R: float = 10.0
    samples: int = 2000
    seed: int = 0
    p1: float = 2.0
    C7: float = 2.0
    p8: float = 2.0
    C8: float = 1.0 / 24.0
    C9: float = 4.0
    chi: Optional[float] = None
    n: int = 1024


@dataclass(frozen=True)
class RunConfig:
    entries: dict
    problem: SdeProblem
    taming: TamingConfig
    h_exponents: tuple
    ref_exponent: int
    n_paths: int
    seed: int
    p: float
    output: Optional[str]
    simulate_n: int
    path_index: int
    zero_noise: bool
    moment_exponents: tuple
    moment_p: float
    audit: AuditSettings

    def digest(self) -> str:
        """SHA-256 over the canonical ``key=value`` listing (output path excluded)."""
        body = "\n".join(f"{k}={v}" for k, v in sorted(self.entries.items()) if k != "output")
        return hashlib.sha256(body.encode()).hexdigest()


def _get(entries, key, parse, default):
    if key not in entries:
        return default
    return parse(entries[key], key)


def _problem(entries) -> SdeProblem:
    name = entries.get("problem", "cubic-jump")
    t0 = _get(entries, "horizon.t0", parse_number, 0.0)
    t1 = _get(entries, "horizon.t1", parse_number, 1.0)
    try:
        horizon = Horizon(t0, t1)
    except ValueError as exc:
        raise ConfigError("horizon", str(exc)) from None

    jump_model = None
    if "jump.intensity" in entries or "jump.marks" in entries or name == "inline":
        if "jump.intensity" not in entries:
            raise ConfigError("jump.intensity", "missing jump intensity")
        lam = parse_number(entries["jump.intensity"], "jump.intensity")
        if not lam > 0:
            raise ConfigError("jump.intensity", f"must be positive, got {lam}")
        jump_model = parse_marks(entries.get("jump.marks", "uniform(-0.25, 0.25)"), lam)

    if name == "inline":
        return _inline_problem(entries, jump_model, horizon)
    if name not in BUILTIN_PROBLEMS:
        raise ConfigError("problem", f"unknown problem {name!r}; known: inline, {', '.join(sorted(BUILTIN_PROBLEMS))}")
    for key in ("drift", "diffusion", "jump", "compensator", "chi"):
        if key in entries:
            raise ConfigError(key, "coefficient keys are only valid with problem = inline")
    kwargs = {"horizon": horizon}
    if "x0" in entries:
        x0 = parse_number(entries["x0"], "x0")
        kwargs["x0"] = x0 if name.startswith("cubic") or name == "pure-drift" else [x0]
    if jump_model is not None:
        if not name.startswith("cubic"):
            raise ConfigError("jump", f"builtin {name!r} has a fixed jump model")
        kwargs["jump_model"] = jump_model
    return builtin_problem(name, **kwargs)


def _inline_problem(entries, jump_model, horizon) -> SdeProblem:
    exprs = {}
    for key in ("drift", "diffusion", "jump", "compensator"):
        if key not in entries:
            raise ConfigError(key, "required for problem = inline")
        exprs[key] = compile_expression(entries[key], key=key)
    if jump_model.mark_dim != 1:
        raise ConfigError("jump.marks", "inline problems need scalar marks")

    def scalar(expr, t, x, z=0.0):
        x1 = x[..., 0]
        value = expr(t=t, x=x1, z=z)
        shape = np.broadcast_shapes(np.shape(x1), np.shape(z), np.shape(t))
        return np.broadcast_to(np.asarray(value, dtype=float), shape)

    def drift(t, x):
        return scalar(exprs["drift"], t, x)[..., None]

    def diffusion(t, x):
        return scalar(exprs["diffusion"], t, x)[..., None, None]

    def jump(t, x, z):
        return scalar(exprs["jump"], t, x, z[..., 0])[..., None]

    def compensator(t, x):
        return scalar(exprs["compensator"], t, x)[..., None]

    try:
        return SdeProblem(d=1, m=1, drift=drift, diffusion=diffusion, jump_coeff=jump,
                          jump_model=jump_model, compensator=compensator,
                          initial_value=[_get(entries, "x0", parse_number, 1.0)], horizon=horizon,
                          chi=_get(entries, "chi", parse_number, 0.0), name="inline")
    except ValueError as exc:
        raise ConfigError("problem", str(exc)) from None


def build_config(entries: dict) -> RunConfig:
    """Validate every key and build the run configuration; raises ConfigError."""
    entries = dict(entries)
    for key in entries:
        if key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown key")
    problem = _problem(entries)

    try:
        mode = TamingMode(entries.get("taming.mode", "deterministic-chi"))
    except ValueError:
        raise ConfigError("taming.mode", f"unknown mode {entries['taming.mode']!r}; "
                          f"expected one of {[m.value for m in TamingMode]}") from None
    if mode is TamingMode.SDDE:
        raise ConfigError("taming.mode", "sdde taming needs a delay problem (library API only)")
    chi = _get(entries, "taming.chi", parse_number, problem.chi)
    try:
        taming = TamingConfig(mode, chi, _get(entries, "taming.chi1", parse_number, 0.0),
                              _get(entries, "taming.chi2", parse_number, 0.0))
    except ValueError as exc:
        raise ConfigError("taming.chi", str(exc)) from None
    if mode is not TamingMode.UNTAMED and chi == 0.0 and problem.chi > 0.0:
        raise ConfigError("taming.chi", f"taming with chi = 0 on a problem with drift exponent {problem.chi}")

    length = problem.horizon.length
    h_exps = tuple(_get(entries, "h_exponents", parse_int_list, [6, 7, 8, 9, 10]))
    ref = _get(entries, "ref_exponent", parse_int, max(h_exps) + 3)
    if ref < max(h_exps):
        raise ConfigError("ref_exponent", f"{ref} is coarser than the finest requested h=2^-{max(h_exps)}")
    for key, exps in (("h_exponents", h_exps), ("ref_exponent", (ref,))):
        for e in exps:
            steps = 2.0**e * length
            if e < 0 or steps != round(steps) or not is_power_of_two(int(round(steps))):
                raise ConfigError(key, f"h=2^-{e} does not give a power-of-two step count over [{problem.horizon.t0}, {problem.horizon.t1}]")

    n_paths = _get(entries, "n_paths", parse_int, 1000)
    if n_paths < 1:
        raise ConfigError("n_paths", f"must be positive, got {n_paths}")
    seed = _get(entries, "seed", parse_int, DEFAULT_SEED)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    p = _get(entries, "p", parse_number, 2.0)
    if p < 1:
        raise ConfigError("p", f"must be >= 1, got {p}")

    sim_n = _get(entries, "simulate.n", parse_int, 2 ** min(h_exps))
    if sim_n < 1 or sim_n * length != round(sim_n * length):
        raise ConfigError("simulate.n", f"n={sim_n} does not give a whole number of steps")
    path_index = _get(entries, "simulate.path_index", parse_int, 0)
    if path_index < 0:
        raise ConfigError("simulate.path_index", "must be nonnegative")
    mom_exps = tuple(_get(entries, "moments.n_exponents", parse_int_list, list(h_exps)))
    for e in mom_exps:
        steps = 2.0**e * length
        if e < 0 or steps != round(steps) or not is_power_of_two(int(round(steps))):
            raise ConfigError("moments.n_exponents", f"n=2^{e} does not give a power-of-two step count")
    mom_p = _get(entries, "moments.p", parse_number, 2.0)
    if mom_p < 2:
        raise ConfigError("moments.p", f"must be >= 2, got {mom_p}")

    audit_kwargs = {}
    for field_ in dataclasses.fields(AuditSettings):
        key = f"audit.{field_.name}"
        if key in entries:
            parse = parse_int if field_.name in ("samples", "seed", "n") else parse_number
            audit_kwargs[field_.name] = parse(entries[key], key)
    audit = AuditSettings(**audit_kwargs)
    if audit.p0 < 2:
        raise ConfigError("audit.p0", f"must be >= 2, got {audit.p0}")
    if audit.samples < 1:
        raise ConfigError("audit.samples", "must be positive")

    return RunConfig(entries, problem, taming, h_exps, ref, n_paths, seed, p, entries.get("output"),
                     sim_n, path_index, _get(entries, "simulate.zero_noise", parse_bool, False),
                     mom_exps, mom_p, audit)


def resolve(preset: Optional[str] = None, path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge preset, file and override entries (later wins) and validate."""
    entries = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        entries.update(PRESETS[preset])
    if path is not None:
        entries.update(load_file(path))
    if overrides:
        entries.update({k: str(v) for k, v in overrides.items()})
    return build_config(entries)
