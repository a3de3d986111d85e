"""Command-line front end: ``tamedlevy {converge,simulate,moments,audit}``.

Exit codes: 0 ok, 1 invalid configuration or failed audit, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import io
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .analysis import ConfigurationError, fit_rate, moment_probe, strong_error
from .config import ConfigError, RunConfig, resolve
from .driving import DrivingPath, PathSeed, is_power_of_two, sample_path
from .model import (audit_compensator, audit_jump_growth, audit_lipschitz_family, audit_monotonicity,
                    sample_box)
from .scheme import integrate, steps_for, write_trajectory_csv
from .taming import verify_taming_growth

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("tamedlevy")


def _header(command: str, cfg: RunConfig) -> list:
    return [f"tamedlevy {__version__} {command}", f"config_sha256={cfg.digest()}", f"seed={cfg.seed}"]


@contextlib.contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        # newline="" keeps bytes identical across platforms
        with open(path, "w", newline="") as fh:
            yield fh


def cmd_converge(cfg: RunConfig, threads: int = 1, out=None) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        table = strong_error(cfg.problem, cfg.taming, cfg.h_exponents, cfg.ref_exponent, cfg.n_paths,
                             cfg.seed, cfg.p, threads=threads)
    lines = [f"# {line}" for line in _header("converge", cfg)]
    lines.append(f"# problem={cfg.problem.name} taming={cfg.taming.mode.value} chi={cfg.taming.chi:g} "
                 f"ref_h=2^-{cfg.ref_exponent} p={cfg.p:g}")
    body = table.to_csv()
    usable = table.without_zero_rows()
    notes = []
    dropped = [r.h for r in table if not r.rms_error > 0]
    if dropped:
        notes.append(f"dropped zero-error rows h={dropped} from the rate fit (step size equals the reference)")
    try:
        fit = fit_rate(usable)
        notes.append(f"slope={fit.slope!r} intercept={fit.intercept!r} r2={fit.r2!r}")
    except ValueError as exc:
        fit = None
        notes.append(f"rate fit unavailable: {exc}")
    flagged = max(r.flagged for r in table)
    notes.append(f"flagged_paths={flagged}")
    text = "\n".join(lines) + "\n" + body + "".join(f"# {n}\n" for n in notes)
    with _output(out or cfg.output) as fh:
        fh.write(text)
    for n in notes:
        print(n, file=sys.stderr)
    if flagged and cfg.taming.tames:
        print(f"error: {flagged} paths overflowed under {cfg.taming.mode.value} taming", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out=None) -> int:
    problem = cfg.problem
    n = cfg.simulate_n
    steps = steps_for(n, problem.horizon.length)
    if cfg.zero_noise:
        path = DrivingPath.quiet(problem.horizon, steps, problem.m, problem.jump_model.mark_dim)
    else:
        if not is_power_of_two(steps):
            raise ConfigError("simulate.n", f"n={n} gives {steps} steps; sampled noise needs a power of two")
        path = sample_path(PathSeed(cfg.seed, cfg.path_index), problem.jump_model, problem.horizon,
                           problem.m, steps)
    traj = integrate(problem, cfg.taming, n, path)
    header = _header("simulate", cfg) + [
        f"problem={problem.name} taming={cfg.taming.mode.value} n={n} path_index={cfg.path_index} "
        f"zero_noise={str(cfg.zero_noise).lower()}"]
    with _output(out or cfg.output) as fh:
        write_trajectory_csv(traj, fh, header)
    if traj.overflow_flag:
        print(f"trajectory overflowed at step {traj.overflow_step}", file=sys.stderr)
        if cfg.taming.tames:
            return EXIT_NUMERIC
    return EXIT_OK


def cmd_moments(cfg: RunConfig, threads: int = 1, out=None) -> int:
    n_list = [2**e for e in cfg.moment_exponents]
    probe = moment_probe(cfg.problem, cfg.taming, n_list, cfg.moment_p, cfg.n_paths, cfg.seed,
                         threads=threads)
    buf = io.StringIO()
    for line in _header("moments", cfg):
        buf.write(f"# {line}\n")
    buf.write("n,sup_mean_abs_x_pow_p,flagged\n")
    for n, v, f in zip(probe.n_list, probe.values, probe.flagged):
        buf.write(f"{n},{v!r},{f}\n")
    buf.write(f"# p={probe.p:g} max_over_min={probe.ratio!r}\n")
    with _output(out or cfg.output) as fh:
        fh.write(buf.getvalue())
    if probe.overflowed:
        print(f"overflow: flagged paths per n = {dict(zip(probe.n_list, probe.flagged))}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"moment ratio max/min across n = {probe.ratio:.4f}", file=sys.stderr)
    return EXIT_OK


def run_audits(cfg: RunConfig) -> list:
    a = cfg.audit
    problem = cfg.problem
    points = sample_box(problem.horizon, problem.d, a.R, a.samples, seed=a.seed)
    pairs = sample_box(problem.horizon, problem.d, a.R, a.samples, seed=a.seed + 1, pairs=True)
    return [
        audit_compensator(problem, seed=a.seed),
        audit_monotonicity(problem, a.p0, (a.L, a.M), points),
        audit_jump_growth(problem, a.p0, (a.L, a.N), points),
        audit_lipschitz_family(problem, "A-7", pairs, C=a.C7, p=a.p1),
        audit_lipschitz_family(problem, "A-8", pairs, C=a.C8, p=a.p8),
        audit_lipschitz_family(problem, "A-9", pairs, C=a.C9, chi=a.chi),
        verify_taming_growth(cfg.taming, problem, a.n, points, "B-2", a.L, a.M, p0=a.p0),
        verify_taming_growth(cfg.taming, problem, a.n, points, "B-4", a.L, a.M),
        verify_taming_growth(cfg.taming, problem, a.n, points, "B-5", a.L, a.M),
    ]


def cmd_audit(cfg: RunConfig, out=None) -> int:
    reports = run_audits(cfg)
    buf = io.StringIO()
    for line in _header("audit", cfg):
        buf.write(f"# {line}\n")
    buf.write(f"# problem={cfg.problem.name} taming={cfg.taming.mode.value} "
              "(sampled checks: a pass is evidence, not proof)\n")
    failed = False
    for rep in reports:
        buf.write(rep.summary() + "\n")
        if not rep.passed:
            failed = True
            for v in getattr(rep, "violations", [])[:10]:
                buf.write(f"    violation at {v}\n")
    with _output(out or cfg.output) as fh:
        fh.write(buf.getvalue())
    return EXIT_INVALID if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key = value configuration file")
    common.add_argument("--preset", metavar="NAME", help="table1-desk, table1-full or untamed-demo")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed")
    common.add_argument("--paths", type=int, metavar="N", help="number of Monte Carlo paths")
    common.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads (results do not depend on it)")
    common.add_argument("--out", metavar="PATH", help="output file (default: config 'output' or stdout)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    parser = argparse.ArgumentParser(prog="tamedlevy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tamedlevy {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("converge", parents=[common], help="strong error table and rate fit")
    sim = sub.add_parser("simulate", parents=[common], help="dump one trajectory as CSV")
    sim.add_argument("--n", type=int, help="steps per unit time")
    sim.add_argument("--path-index", type=int, help="path index within the seed")
    sim.add_argument("--zero-noise", action="store_true", help="integrate with dW = 0 and no jumps")
    sub.add_parser("moments", parents=[common], help="sup-over-grid moment probe")
    sub.add_parser("audit", parents=[common], help="sampled assumption audits")
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.paths is not None:
        out["n_paths"] = str(args.paths)
    if getattr(args, "n", None) is not None:
        out["simulate.n"] = str(args.n)
    if getattr(args, "path_index", None) is not None:
        out["simulate.path_index"] = str(args.path_index)
    if getattr(args, "zero_noise", False):
        out["simulate.zero_noise"] = "true"
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.config is not None and not Path(args.config).is_file():
            raise ConfigError("--config", f"no such file {args.config!r}")
        cfg = resolve(args.preset, args.config, _overrides(args))
        if args.command == "converge":
            return cmd_converge(cfg, args.threads, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "moments":
            return cmd_moments(cfg, args.threads, args.out)
        return cmd_audit(cfg, args.out)
    except (ConfigError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
