import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from polyhazard.oracle import SpikeSlabToy
from polyhazard.zigzag import (
    AdaptState,
    BoundKind,
    BoundSegment,
    StickyZigZag,
    ZigZagDiagnostics,
    build_bound,
    flip_rate,
    interval_length,
    next_sticking_time,
    sample_event_time,
    thin_and_flip,
    unstick_rate,
)


def gaussian_grad(x):
    return np.asarray(x, dtype=float)


def test_flip_rate_examples():
    assert flip_rate(np.array([1.0]), np.array([1.0]))[0] == 1.0
    assert flip_rate(np.array([1.0]), np.array([-1.0]))[0] == 0.0


@given(st.lists(st.tuples(st.floats(-10, 10), st.sampled_from([-1.0, 0.0, 1.0])), min_size=1, max_size=12))
def test_total_flip_rate_is_sum(pairs):
    g = np.array([p[0] for p in pairs])
    v = np.array([p[1] for p in pairs])
    total, per = flip_rate(g, v)
    assert total == pytest.approx(per.sum())
    assert np.all(per >= 0)
    assert np.all(per[v == 0] == 0)


def test_constant_rate_gives_flat_linear_bound():
    seg = build_bound(lambda t: 3.0, 0.0, AdaptState(initial=0.2), offset=0.1)
    assert seg.kind is BoundKind.LINEAR
    assert seg.slope == 0.0 and seg.intercept == 3.0


def test_linear_rate_bound_is_exact():
    seg = build_bound(lambda t: t, 0.0, AdaptState(initial=1.0), offset=0.0)
    assert seg.kind is BoundKind.LINEAR
    assert seg.intercept == pytest.approx(0.0) and seg.slope == pytest.approx(1.0) and seg.t_b == 1.0
    rng = np.random.default_rng(0)
    for tau in np.linspace(0.05, 0.95, 10):
        # acceptance probability rate/bound is one on an exact chord
        assert thin_and_flip(np.array([tau]), seg, tau, rng) == 0


def test_interval_length_rule():
    assert interval_length(4.0, 0.5) == pytest.approx(0.25)
    assert interval_length(1.0, 0.5) == pytest.approx(0.5)
    assert interval_length(0.0, 0.5) == pytest.approx(0.5)


def test_bound_kinds():
    ad = AdaptState(initial=1.0)
    diag = ZigZagDiagnostics()
    assert build_bound(lambda t: math.exp(t), 0.0, ad, diag=diag).kind is BoundKind.LINEAR
    assert build_bound(lambda t: math.sqrt(t + 0.1), 0.0, ad, diag=diag).kind is BoundKind.CONSTANT
    seg = build_bound(lambda t: 1.0 - (t - 0.3) ** 2, 0.0, ad, diag=diag)
    assert seg.kind is BoundKind.BRENT
    assert seg.intercept == pytest.approx(1.0, abs=1e-4)
    assert diag.n_segments == 3


@given(st.floats(0.0, 5.0), st.floats(-3.0, 3.0), st.floats(0.0, 3.0), st.floats(0.05, 2.0))
def test_linear_bound_on_monotone_convex_rates(a, b, c, t_star):
    # a + b t + c t^2 on t >= 0 is convex; keep it monotone and nonnegative
    b = abs(b)
    f = lambda t: a + b * t + c * t * t
    seg = build_bound(f, 0.0, AdaptState(initial=t_star), offset=0.0)
    assert seg.kind is BoundKind.LINEAR
    grid = np.linspace(seg.t0, seg.end, 101)
    assert all(seg.rate(t) >= f(t) - 1e-9 * (1 + f(t)) for t in grid)
    # the chord never exceeds the constant bound at the larger endpoint
    assert all(seg.rate(t) <= max(f(seg.t0), f(seg.end)) + 1e-9 for t in grid)


def test_zero_rate_never_fires():
    rng = np.random.default_rng(1)
    seg = BoundSegment(0.0, 1.0, 0.0, 0.0, BoundKind.LINEAR, 0.0)
    assert all(sample_event_time(seg, rng) is None for _ in range(1000))
    assert thin_and_flip(np.zeros(3), BoundSegment(0.0, 1.0, 1.0, 0.0, BoundKind.LINEAR), 0.5, rng) is None


def test_constant_rate_arrival_moments():
    rng = np.random.default_rng(2)
    r, T = 1.5, 2.0
    seg = BoundSegment(0.0, T, r, 0.0, BoundKind.LINEAR, 0.0)
    draws = [sample_event_time(seg, rng) for _ in range(100_000)]
    hits = np.array([d for d in draws if d is not None])
    p_hit = 1 - math.exp(-r * T)
    assert hits.size / len(draws) == pytest.approx(p_hit, abs=4 * math.sqrt(p_hit * (1 - p_hit) / len(draws)))
    mean = 1 / r - T * math.exp(-r * T) / p_hit
    assert hits.mean() == pytest.approx(mean, rel=0.01)


def test_linear_rate_arrival_distribution():
    rng = np.random.default_rng(3)
    a, b, T = 0.5, 2.0, 3.0
    seg = BoundSegment(0.0, T, a, b, BoundKind.LINEAR, 0.0)
    draws = np.array([sample_event_time(seg, rng) for _ in range(100_000)], dtype=object)
    t = np.array([np.inf if d is None else d for d in draws])
    cdf = lambda s: 1 - np.exp(-(a * s + 0.5 * b * s * s))
    grid = np.linspace(0, T, 400)[1:]
    emp = np.searchsorted(np.sort(t), grid, side="right") / t.size
    assert np.max(np.abs(emp - cdf(grid))) < 0.01


def test_thinning_picks_single_active_coordinate():
    rng = np.random.default_rng(4)
    seg = BoundSegment(0.0, 1.0, 2.0, 0.0, BoundKind.LINEAR, 0.0)
    rates = np.array([0.0, 2.0, 0.0])
    assert all(thin_and_flip(rates, seg, 0.5, rng) == 1 for _ in range(200))


def test_exceedance_is_counted():
    diag = ZigZagDiagnostics()
    seg = BoundSegment(0.0, 1.0, 1.0, 0.0, BoundKind.LINEAR, 0.0)
    thin_and_flip(np.array([2.0]), seg, 0.5, np.random.default_rng(0), diag)
    assert diag.exceedances == 1 and diag.exceedance_fraction == 1.0


def test_sticking_time_examples():
    sticky = np.array([False, False, True])
    assert next_sticking_time(np.array([0.5, 0.5, 1.0]), np.array([-1.0, -1.0, -1.0]), sticky) == (2, 1.0)
    assert next_sticking_time(np.array([0.5, 0.5, 1.0]), np.array([-1.0, -1.0, 1.0]), sticky) is None


def test_unstick_rate_examples():
    assert unstick_rate(0.5, 1 / math.sqrt(2 * math.pi)) == pytest.approx(1.0)
    assert unstick_rate(1e-12, 1.0) < 1e-11
    with pytest.raises(ValueError):
        unstick_rate(0.0, 1.0)
    with pytest.raises(ValueError):
        unstick_rate(1.0, 1.0)
    with pytest.raises(ValueError):
        unstick_rate(0.5, 1.0, "other")


def test_one_dimensional_gaussian():
    zz = StickyZigZag(gaussian_grad, [0.0], np.random.default_rng(5))
    tr = zz.run(1e5)
    bm = tr.batch_means()[:, 0]
    se = bm.std(ddof=1) / math.sqrt(bm.size)
    assert abs(tr.mean()[0]) < 3 * se
    assert 0.9 <= tr.cov()[0, 0] <= 1.1


def test_sticky_toy_inclusion():
    toy = SpikeSlabToy(omega=0.3)
    zz = StickyZigZag(toy.grad, [0.5], np.random.default_rng(6), sticky=[True],
                      kappa=unstick_rate(toy.omega, toy.slab_sd))
    tr = zz.run(2e4)
    assert tr.inclusion()[0] == pytest.approx(toy.inclusion_probability(), abs=0.02)


def test_skeleton_reconstructs_path():
    zz = StickyZigZag(gaussian_grad, [0.3, -0.2], np.random.default_rng(7), record_skeleton=True)
    zz.run(50.0, n_batches=1)
    sk = zz.skeleton
    for (t0, _, x0, v0), (t1, _, x1, _) in zip(sk, sk[1:]):
        np.testing.assert_allclose(x0 + v0 * (t1 - t0), x1, atol=1e-9)
    assert np.all(np.abs(sk[-1][3]) == 1)
