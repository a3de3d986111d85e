"""End-to-end acceptance criteria, one test each, at the stated tolerances.

Every test appends a PASS/FAIL line that the terminal summary prints
(see ``conftest.pytest_terminal_summary``).
"""
import math
import os

import numpy as np
import pytest

from tamedlevy.analysis import (
    deterministic_iteration, increment_decay, moment_probe, per_path_errors, strong_error,
)
from tamedlevy.cli import main
from tamedlevy.config import resolve
from tamedlevy.driving import PathSeed, coarsen, sample_path
from tamedlevy.model import (
    DelaySpec, Horizon, SddeProblem, audit_compensator, audit_jump_growth, audit_lipschitz_family,
    audit_monotonicity, cubic_jump, cubic_jump_mild, sample_box, uniform_marks,
)
from tamedlevy.scheme import integrate, integrate_sdde
from tamedlevy.taming import GridMap, TamingConfig, TamingMode, kappa, tame, verify_taming_growth

THREADS = os.cpu_count() or 1
DET = TamingConfig(TamingMode.DETERMINISTIC_CHI, 2.0)
GEN = TamingConfig(TamingMode.GENERIC_2CHI, 2.0)
UNTAMED = TamingConfig(TamingMode.UNTAMED)
H = Horizon(0.0, 1.0)


def record(log, name, ok, detail):
    log.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


@pytest.mark.slow
def test_c01_table1_desk(acceptance_log):
    cfg = resolve("table1-desk")
    table = strong_error(cfg.problem, cfg.taming, cfg.h_exponents, cfg.ref_exponent, cfg.n_paths,
                         cfg.seed, cfg.p, threads=THREADS)
    from tamedlevy.analysis import fit_rate
    fit = fit_rate(table)
    e6, e10 = table.row(2.0**-6).rms_error, table.row(2.0**-10).rms_error
    slope_ok = 0.35 <= fit.slope <= 0.65
    mag_ok = 0.5 <= e6 / 0.12921045 <= 2 and 0.5 <= e10 / 0.04841924 <= 2
    rows = list(table)
    mono_ok = all(b.rms_error <= a.rms_error + 2 * math.hypot(a.std_error, b.std_error)
                  for a, b in zip(rows, rows[1:]))
    flagged = max(r.flagged for r in rows)
    record(acceptance_log, "1 desk-scale rate reproduction",
           slope_ok and mag_ok and mono_ok and flagged == 0,
           f"slope={fit.slope:.4f} r2={fit.r2:.4f} err(2^-6)={e6:.5f} err(2^-10)={e10:.5f} "
           f"monotone={mono_ok} flagged={flagged}")


def test_c02_divergence(acceptance_log):
    untamed = deterministic_iteration(cubic_jump(x0=4.0), UNTAMED, 4, 10)
    head = [float(v) for v in untamed.states[:3, 0]]
    tamed = deterministic_iteration(cubic_jump(x0=4.0), DET, 4, 10**4)
    bound = float(np.max(np.abs(tamed.states)))
    ok = (head == [4.0, -11.0, 319.0] and untamed.overflow_flag and untamed.overflow_step <= 10
          and not tamed.overflow_flag and bound <= 10)
    record(acceptance_log, "2 divergence demonstration", ok,
           f"untamed {head} overflow at step {untamed.overflow_step}; tamed max |x| = {bound} over 10^4 steps")


def test_c03_taming_oracle(acceptance_log):
    x = np.array([2.0])
    b, s = x - x**3, (x * x)[:, None]
    det = float(tame(DET, 16, x, b, s)[0][0])
    gen = float(tame(GEN, 16, x, b, s)[0][0])
    exact = det == -3.0 and abs(gen - (-1.2)) <= np.spacing(1.2)

    rng = np.random.default_rng(2024)
    violations = 0
    # 50 groups of 20,000 states, each group with its own random n: 10^6 samples per mode
    for _ in range(50):
        n = int(rng.integers(1, 2**20))
        xs = rng.standard_normal((20000, 2)) * 10.0 ** rng.uniform(-3, 4, (20000, 1))
        raw_b = xs - xs * np.sum(xs * xs, axis=1, keepdims=True)
        raw_s = xs[:, :, None] * xs[:, None, :]
        for cfg in (DET, GEN, TamingConfig(TamingMode.SDDE, 0.0, 1.0, 2.0), UNTAMED):
            y = xs[:, None, :] if cfg.mode is TamingMode.SDDE else None
            tb, ts = tame(cfg, n, xs, raw_b, raw_s, y)
            violations += int(np.sum(np.linalg.norm(tb, axis=1) > np.linalg.norm(raw_b, axis=1)))
            violations += int(np.sum(np.linalg.norm(ts, axis=(1, 2)) > np.linalg.norm(raw_s, axis=(1, 2))))
    record(acceptance_log, "3 taming unit oracle", exact and violations == 0,
           f"deterministic-chi={det!r} generic-2chi={gen!r}; {violations} violations on 10^6 samples x 4 modes")


def test_c04_kappa(acceptance_log):
    rng = np.random.default_rng(7)
    ns = rng.integers(1, 10**6, 10**5)
    t0s = rng.uniform(0, 100, 10**5)
    dts = rng.uniform(0, 100, 10**5)
    bad = 0
    for n, t0, dt in zip(ns.tolist(), t0s.tolist(), dts.tolist()):
        grid = GridMap(n, t0)
        t = t0 + dt
        k = kappa(grid, t)
        if not (t - 1.0 / n < k <= t) or kappa(grid, k) != k:
            bad += 1
        j = int(dt * n) // 2
        if kappa(grid, grid.point(j)) != grid.point(j):
            bad += 1
    record(acceptance_log, "4 kappa property suite", bad == 0, f"{bad} failures over 10^5 draws")


def test_c05_driving_noise(acceptance_log):
    model = cubic_jump().jump_model
    counts = np.empty(10**5)
    marks = []
    for i in range(10**5):
        p = sample_path(PathSeed(99, i), model, H, 1, 1)
        counts[i] = len(p.jump_times)
        marks.append(p.jump_marks[:, 0])
    z2 = np.concatenate(marks) ** 2
    se_count = counts.std(ddof=1) / math.sqrt(len(counts))
    se_z2 = z2.std(ddof=1) / math.sqrt(len(z2))
    count_ok = abs(counts.mean() - 2.0) <= 3 * se_count
    z2_ok = abs(z2.mean() - 1 / 48) <= 3 * se_z2
    fine = sample_path(PathSeed(99, 0), model, H, 1, 4096)
    exact = True
    for factor in (2, 16, 4096):
        direct = np.array([_left_sum(fine.dW[k * factor:(k + 1) * factor, 0])
                           for k in range(4096 // factor)])
        exact &= np.array_equal(coarsen(fine, factor).dW[:, 0], direct)
    record(acceptance_log, "5 driving-noise statistics", count_ok and z2_ok and exact,
           f"mean count {counts.mean():.4f} (se {se_count:.4f}); E z^2 {z2.mean():.6f} vs {1 / 48:.6f} "
           f"(se {se_z2:.2g}); coarsen bit-exact={exact}")


def _left_sum(values):
    acc = values[0]
    for v in values[1:]:
        acc = acc + v
    return acc


def test_c06_coupling_zero_error(acceptance_log):
    errs = per_path_errors(cubic_jump(), DET, 8, 8, 1000, 31)
    table = strong_error(cubic_jump(), DET, [6, 8], 8, 1000, 31, threads=THREADS)
    ok = bool(np.all(errs == 0.0)) and table.row(2.0**-8).rms_error == 0.0
    record(acceptance_log, "6 coupling zero-error", ok,
           f"max per-path error {float(np.max(errs))!r} over 1000 paths; rms at h_ref {table.row(2.0**-8).rms_error!r}")


def test_c07_moment_bound(acceptance_log):
    probe = moment_probe(cubic_jump(), DET, [2**e for e in range(6, 13)], 2.0, 5000, 20160523,
                         threads=THREADS)
    ok = probe.ratio < 2 and not probe.overflowed
    record(acceptance_log, "7 moment boundedness", ok,
           f"sup E|x|^2 per n = {[round(v, 4) for v in probe.values]}, max/min={probe.ratio:.4f}, "
           f"flagged={sum(probe.flagged)}")


def test_c08_increment_decay(acceptance_log):
    probes, ratios = increment_decay(cubic_jump_mild(), DET, [64, 256, 1024], 2.0, 5000, 20160523,
                                     threads=THREADS)
    ok = all(4 / 1.5 <= r <= 4 * 1.5 for r in ratios) and not any(p.flagged for p in probes)
    record(acceptance_log, "8 increment decay", ok,
           f"values {[f'{p.value:.3e}' for p in probes]}, ratios {[round(r, 3) for r in ratios]} (target 4)")


def test_c09_audits(acceptance_log):
    cubic = cubic_jump()
    pts = sample_box(H, 1, 10.0, 2000, seed=0)
    pairs = sample_box(H, 1, 10.0, 2000, seed=1, pairs=True)
    reports = [
        audit_compensator(cubic),
        audit_monotonicity(cubic, 3.0, (2.0, 1.0), pts),
        audit_jump_growth(cubic, 3.0, (2.0, 1.0), pts),
        audit_lipschitz_family(cubic, "A-7", pairs, C=2.0, p=2.0),
        audit_lipschitz_family(cubic, "A-8", pairs, C=1 / 24, p=2.0),
        audit_lipschitz_family(cubic, "A-9", pairs, C=4.0, chi=2.0),
        verify_taming_growth(DET, cubic, 1024, pts, "B-4", 2.0, 1.0),
        verify_taming_growth(DET, cubic, 1024, pts, "B-5", 2.0, 1.0),
        verify_taming_growth(GEN, cubic, 1024, pts, "B-4", 2.0, 1.0),
        verify_taming_growth(GEN, cubic, 1024, pts, "B-5", 2.0, 1.0),
    ]
    p5 = audit_monotonicity(cubic, 5.0, (2.0, 1.0), pts)
    ok = all(r.passed for r in reports) and not p5.passed
    record(acceptance_log, "9 assumption audits", ok,
           f"{sum(r.passed for r in reports)}/{len(reports)} pass at p0=3; p0=5 A-2 violations={len(p5.violations)}")


def test_c10_reproducibility(acceptance_log, tmp_path):
    small = ["--preset", "table1-desk", "--set", "h_exponents=3..5", "--set", "ref_exponent=8",
             "--paths", "600", "--set", "moments.n_exponents=3..6"]
    outputs = {}
    for command in ("converge", "simulate", "moments", "audit"):
        for tag, threads in (("a", 1), ("b", 1), ("c", 3)):
            out = tmp_path / f"{command}-{tag}.csv"
            assert main([command] + small + ["--threads", str(threads), "--out", str(out)]) == 0
            outputs[command, tag] = out.read_bytes()
    same = all(outputs[c, "a"] == outputs[c, "b"] == outputs[c, "c"]
               for c in ("converge", "simulate", "moments", "audit"))
    record(acceptance_log, "10 reproducibility", same,
           "converge/simulate/moments/audit byte-identical across reruns and --threads 1 vs 3")


def test_c11_sdde_smoke(acceptance_log):
    cubic = cubic_jump()
    sdde = SddeProblem(1, 1, lambda t, y, x: cubic.drift(t, x), lambda t, y, x: cubic.diffusion(t, x),
                       lambda t, y, x, z: cubic.jump_coeff(t, x, z), cubic.jump_model,
                       lambda t, y, x: cubic.compensator(t, x), H)
    spec = DelaySpec((lambda t: t,), 1.0, lambda s: np.array([1.0]))
    degenerate = True
    for i in range(20):
        path = sample_path(PathSeed(41, i), cubic.jump_model, H, 1, 256)
        degenerate &= np.array_equal(integrate(cubic, DET, 256, path).states,
                                     integrate_sdde(sdde, spec, DET, 256, path).states)

    n, a, c, s = 64, -0.7, 0.4, 0.3
    h = 1 / n
    lag = SddeProblem(1, 1, lambda t, y, x: a * x + c * y[0], lambda t, y, x: (s * y[0])[..., None],
                      lambda t, y, x, z: 0.5 * y[0] * z, uniform_marks(-0.25, 0.25, 2.0),
                      lambda t, y, x: np.zeros_like(x), H)
    worst = 0.0
    for i in range(20):
        path = sample_path(PathSeed(43, i), lag.jump_model, H, 1, n)
        traj = integrate_sdde(lag, DelaySpec((lambda t: t - h,), h, lambda u: np.array([1.0 + u])),
                              UNTAMED, n, path)
        xs = [1.0]
        for k in range(n):
            y = xs[k - 1] if k >= 1 else 1.0 - h
            jumps = sum(0.5 * y * z[0] for z in path.marks_in_step(k))
            xs.append(xs[k] + (a * xs[k] + c * y) * h + s * y * path.dW[k, 0] + jumps)
        worst = max(worst, float(np.max(np.abs(traj.states[:, 0] - xs))))
    record(acceptance_log, "11 SDDE smoke", degenerate and worst <= 1e-12,
           f"degenerate delay bit-exact={degenerate}; lag-recurrence max diff={worst:.2e}")
