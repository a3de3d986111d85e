import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tamedlevy.model import Horizon, SampleSet, cubic_jump, sample_box
from tamedlevy.taming import (
    GridMap, TamingConfig, TamingMode, kappa, tame, taming_denominator, verify_taming_growth,
)

H = Horizon(0.0, 1.0)
MODES = [TamingConfig(TamingMode.GENERIC_2CHI, 2.0), TamingConfig(TamingMode.DETERMINISTIC_CHI, 2.0),
         TamingConfig(TamingMode.SDDE, 0.0, 1.0, 2.0), TamingConfig(TamingMode.UNTAMED)]


def raw(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return x - x**3, (x * x)[..., None]


@pytest.mark.parametrize("n, t0, t, expected", [(4, 0.0, 0.3, 0.25), (7, 0.5, 0.5, 0.5),
                                                (10, 0.0, 1.0, 1.0), (3, 1.0, 2.0, 2.0)])
def test_kappa_examples(n, t0, t, expected):
    assert kappa(GridMap(n, t0), t) == expected


def test_kappa_rejects_early_time():
    with pytest.raises(ValueError):
        kappa(GridMap(4, 1.0), 0.5)
    with pytest.raises(ValueError):
        GridMap(0)


@given(st.integers(1, 10**6), st.floats(0, 100), st.floats(0, 100))
def test_kappa_properties(n, t0, dt):
    grid = GridMap(n, t0)
    t = t0 + dt
    k = kappa(grid, t)
    assert t - 1.0 / n < k <= t
    assert kappa(grid, k) == k


@given(st.integers(1, 4096), st.integers(0, 10**5))
def test_kappa_piecewise_constant(n, j):
    grid = GridMap(n, 0.0)
    left, right = grid.point(j), grid.point(j + 1)
    assert kappa(grid, left) == left
    assert kappa(grid, left + 0.5 * (right - left)) == left
    assert kappa(grid, right) == right


def test_tame_oracles():
    b, s = raw(2.0)
    d, _ = tame(TamingConfig(TamingMode.DETERMINISTIC_CHI, 2.0), 16, np.array([2.0]), b, s)
    g, _ = tame(TamingConfig(TamingMode.GENERIC_2CHI, 2.0), 16, np.array([2.0]), b, s)
    # 1 + 16^-1/2 * 2^2 = 2 and 1 + 16^-1/2 * 2^4 = 5
    assert d[0] == -3.0
    assert g[0] == -1.2


@pytest.mark.parametrize("config", MODES)
def test_tame_at_origin_is_identity(config):
    b, s = raw(0.0)
    y = np.zeros((1, 1)) if config.mode is TamingMode.SDDE else None
    tb, ts = tame(config, 9, np.zeros(1), b, s, y)
    assert np.array_equal(tb, b) and np.array_equal(ts, s)


def test_sdde_needs_delay_state():
    b, s = raw(1.0)
    with pytest.raises(ValueError):
        tame(TamingConfig(TamingMode.SDDE, 0, 1, 1), 4, np.ones(1), b, s)


def test_sdde_denominator():
    cfg = TamingConfig(TamingMode.SDDE, chi1=1.0, chi2=0.5)
    y = np.array([[1.0], [2.0]])
    den = taming_denominator(cfg, 4, np.array([3.0]), y)
    # 1 + 1/2 (|y|^2 + |x|) with |y|^2 = 5
    assert den == pytest.approx(1 + 0.5 * (5 + 3))


@settings(max_examples=300)
@given(st.sampled_from(MODES), st.integers(1, 2**20),
       st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2))
def test_taming_never_increases_magnitude(config, n, xs):
    x = np.array(xs)
    b = x - x**3
    s = np.outer(x, x)
    y = np.array([x]) if config.mode is TamingMode.SDDE else None
    tb, ts = tame(config, n, x, b, s, y)
    assert np.linalg.norm(tb) <= np.linalg.norm(b)
    assert np.linalg.norm(ts) <= np.linalg.norm(s)


@given(st.integers(1, 2**20), st.floats(-1e3, 1e3))
def test_consistency_bound(n, x):
    cfg = TamingConfig(TamingMode.GENERIC_2CHI, 2.0)
    xv = np.array([x])
    b, s = raw(x)
    tb, _ = tame(cfg, n, xv, b, s)
    excess = taming_denominator(cfg, n, xv) - 1.0
    assert abs(b[0] - tb[0]) <= abs(b[0]) * excess * (1 + 1e-12) + 1e-300


def test_pointwise_decay_rate():
    # |b - b^n| = |b| D / (1 + D), D = n^-1/2 |x|^2: halves per 4x n for small D
    cfg = TamingConfig(TamingMode.DETERMINISTIC_CHI, 2.0)
    x = np.linspace(-0.5, 0.5, 101)[:, None]
    b, s = x - x**3, (x * x)[..., None]
    sups = []
    for n in (2**4, 2**6, 2**8):
        tb, _ = tame(cfg, n, x, b, s)
        sups.append(np.max(np.abs(b - tb)))
    for a, c in zip(sups, sups[1:]):
        assert 2 / 1.2 <= a / c <= 2 * 1.2


def test_b4_b5_cubic_generic():
    cubic = cubic_jump()
    samples = sample_box(H, 1, 100.0, 5000, seed=3)
    cfg = TamingConfig(TamingMode.GENERIC_2CHI, 2.0)
    for n in (1, 16, 1024):
        assert verify_taming_growth(cfg, cubic, n, samples, "B-4", 2.0, 1.0).passed
        assert verify_taming_growth(cfg, cubic, n, samples, "B-5", 2.0, 1.0).passed
        assert verify_taming_growth(cfg, cubic, n, samples, "B-2", 2.0, 1.0, p0=3.0).passed


def test_b4_cubic_deterministic_uses_linear_bound():
    cubic = cubic_jump()
    samples = sample_box(H, 1, 100.0, 5000, seed=3)
    cfg = TamingConfig(TamingMode.DETERMINISTIC_CHI, 2.0)
    for n in (1, 16, 1024):
        assert verify_taming_growth(cfg, cubic, n, samples, "B-4", 2.0, 1.0).passed


def test_b4_untamed_fails():
    cubic = cubic_jump()
    x100 = SampleSet(np.zeros(1), np.array([[100.0]]))
    rep = verify_taming_growth(TamingConfig(TamingMode.UNTAMED), cubic, 2**10, x100, "B-4")
    assert not rep.passed
    origin = SampleSet(np.zeros(1), np.zeros((1, 1)))
    assert verify_taming_growth(TamingConfig(TamingMode.UNTAMED), cubic, 2**10, origin, "B-4").passed


def test_taming_config_validation():
    with pytest.raises(ValueError):
        TamingConfig(TamingMode.GENERIC_2CHI, -1.0)
    assert TamingConfig("untamed").mode is TamingMode.UNTAMED
