import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyhazard.engine import SamplerConfig, run_chain
from polyhazard.jumps import JumpRates
from polyhazard.model import PriorConfig
from polyhazard.postprocess import (
    adaptive_simpson,
    apply_ordering,
    default_grid,
    hazard_curve,
    hazard_matrix,
    hazard_ratio_curve,
    k_probabilities,
    mean_survival,
    mean_survival_difference,
    quartile_contrast,
    snapshot_probabilities,
    submodel_occupancy,
    submodel_probabilities,
    survival_function,
    total_variation,
)
from polyhazard.survdist import DistKind, hazard


def weibull(nu, mu, beta=()):
    return {"dists": ["W"], "alpha": [math.log(nu)], "beta0": [math.log(mu)], "beta": [list(beta)], "gamma": [[1] * len(beta)]}


def combine(*samples):
    out = {k: [] for k in ("dists", "alpha", "beta0", "beta", "gamma")}
    for s in samples:
        for k in out:
            out[k] += s[k]
    return out


rows = st.tuples(st.sampled_from(["W", "L"]), st.floats(-1.0, 1.0), st.floats(-1.5, 1.5), st.floats(-1, 1))


def make_sample(rs):
    return {
        "dists": [r[0] for r in rs],
        "alpha": [r[1] for r in rs],
        "beta0": [r[2] for r in rs],
        "beta": [[r[3]] for r in rs],
        "gamma": [[1] for _ in rs],
    }


def test_ordering_examples():
    s = weibull(1.0, 2.0)
    assert apply_ordering(s) == s
    two = combine(weibull(2.0, 1.0, [0.3]), weibull(0.5, 3.0, [-0.2]))
    o = apply_ordering(two)
    assert o["alpha"] == [math.log(0.5), math.log(2.0)]
    assert o["beta0"] == [math.log(3.0), math.log(1.0)] and o["beta"] == [[-0.2], [0.3]]


@given(st.lists(rows, min_size=1, max_size=4), st.randoms())
def test_ordering_idempotent_and_permutation_invariant(rs, rnd):
    s = make_sample(rs)
    perm = list(rs)
    rnd.shuffle(perm)
    o = apply_ordering(s)
    assert apply_ordering(o) == o
    assert apply_ordering(make_sample(perm)) == o
    assert [DistKind.parse(d) for d in o["dists"]] == sorted(DistKind.parse(d) for d in o["dists"])
    y = np.array([0.3, 1.0, 4.0])
    np.testing.assert_allclose(survival_function(make_sample(perm), [0.4], y), survival_function(s, [0.4], y), rtol=1e-12)


def test_mean_survival_closed_forms():
    assert mean_survival([weibull(1.0, 0.5)], [], 200.0).mean == pytest.approx(2.0, abs=1e-4)
    assert mean_survival([weibull(2.0, 1.0)], [], 50.0).mean == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-4)


def test_inactive_subhazard_leaves_mean_unchanged():
    base = weibull(1.3, 0.7)
    extra = combine(base, {"dists": ["W"], "alpha": [0.0], "beta0": [-900.0], "beta": [[]], "gamma": [[]]})
    a = mean_survival([base], [], 100.0).mean
    b = mean_survival([extra], [], 100.0).mean
    assert abs(a - b) < 1e-6


@given(st.lists(rows, min_size=1, max_size=3))
def test_mean_survival_matches_fine_quadrature(rs):
    s = make_sample(rs)
    h = 30.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        got = mean_survival([s], [0.5], h, tol=1e-8).values[0]
    from scipy import integrate
    ref, _ = integrate.quad(lambda y: float(survival_function(s, [0.5], y)), 0, h, limit=500, epsabs=1e-10)
    assert got == pytest.approx(ref, abs=1e-5)


def test_mean_survival_flags_heavy_tails():
    ll = {"dists": ["L"], "alpha": [math.log(0.8)], "beta0": [0.0], "beta": [[]], "gamma": [[]]}
    with pytest.warns(RuntimeWarning):
        ms = mean_survival([ll], [], 100.0)
    assert ms.divergent[0] and ms.truncated[0]
    with pytest.raises(ValueError):
        mean_survival([], [], 1.0)


def test_mean_survival_difference_identical_profiles():
    samples = [weibull(1.2, 0.5, [0.4]), weibull(0.9, 0.8, [-0.3])]
    d = mean_survival_difference(samples, [1.0], [1.0], 100.0)
    assert all(v == 0.0 for v in d.values())


def test_adaptive_simpson_vectorised():
    f = lambda owner, y: np.where(owner == 0, np.sin(y), y**2)
    out = adaptive_simpson(f, 0.0, math.pi, 1e-9, m=2)
    np.testing.assert_allclose(out, [2.0, math.pi**3 / 3], rtol=1e-8)


def test_hazard_curve_single_point_mass():
    grid = default_grid(5.0, 20)
    c = hazard_curve([weibull(1.5, 0.4)] * 5, [], grid)
    np.testing.assert_allclose(c["mean"], hazard(DistKind.WEIBULL, 1.5, 0.4, grid))
    np.testing.assert_allclose(c["lower"], c["upper"])


@given(st.lists(st.lists(rows, min_size=1, max_size=3), min_size=2, max_size=6))
def test_bands_contain_mean_and_hazards_add(samples):
    samples = [make_sample(rs) for rs in samples]
    grid = np.array([0.1, 0.5, 1.0, 3.0])
    c = hazard_curve(samples, [0.2], grid)
    assert np.all(c["lower"] <= c["upper"])
    mat = hazard_matrix(samples, [0.2], grid)
    for s, row in zip(samples, mat):
        parts = sum(hazard_matrix([make_sample([r])], [0.2], grid)[0]
                    for r in zip(s["dists"], s["alpha"], s["beta0"], (b[0] for b in s["beta"])))
        np.testing.assert_allclose(row, parts, rtol=1e-12)


def test_mean_inside_band_for_concentrated_posterior():
    rng = np.random.default_rng(0)
    samples = [weibull(1.2 + 0.01 * rng.standard_normal(), 0.5) for _ in range(200)]
    c = hazard_curve(samples, [], default_grid(4.0))
    assert np.all((c["lower"] <= c["mean"]) & (c["mean"] <= c["upper"]))


def test_hazard_ratio_examples():
    grid = default_grid(10.0, 30)
    s = [weibull(1.3, 0.6, [0.7])]
    np.testing.assert_allclose(hazard_ratio_curve(s, [0.4], [0.4], grid)["mean"], 1.0)
    np.testing.assert_allclose(hazard_ratio_curve(s, [1.0], [-0.5], grid)["mean"], math.exp(0.7 * 1.5))
    # the steeper subhazard dominates at large times
    two = [combine(weibull(0.5, 1.0, [0.2]), weibull(2.0, 0.1, [-0.6]))]
    r = hazard_ratio_curve(two, [1.0], [0.0], np.array([0.01, 1.0, 1e6]))["mean"]
    assert abs(r[0] - r[1]) > 0.05
    assert r[2] == pytest.approx(math.exp(-0.6), rel=1e-3)


def test_quartile_contrast_direction():
    X = np.column_stack([np.arange(1.0, 9.0), np.ones(8)])
    x1, x0 = quartile_contrast(X, 0)
    assert x1[0] == pytest.approx(np.quantile(X[:, 0], 0.75)) and x0[0] == pytest.approx(np.quantile(X[:, 0], 0.25))
    assert x1[1] == x0[1] == 1.0


def test_submodel_table_helpers():
    sk = {
        "initial_model": "W",
        "initial": {"anchor": 0.0},
        "events": [{"clock": 2.0, "model": "W-L"}, {"clock": 5.0, "model": "W"}],
        "end_clock": 10.0,
        "burn_in": 1.0,
    }
    assert submodel_occupancy(sk) == pytest.approx({"W": 6.0, "W-L": 3.0})
    p = submodel_probabilities([sk, sk])
    assert list(p) == ["W", "W-L"] and p["W"] == pytest.approx(2 / 3)
    np.testing.assert_allclose(k_probabilities(p, 3), [2 / 3, 1 / 3, 0.0])
    assert total_variation({"W": 1.0}, {"L": 1.0}) == 1.0


def test_single_submodel_without_jumps():
    cfg = SamplerConfig(total_time=20.0, rates=JumpRates(0.0, 0.0, 0.0), init_dists=["L", "W"])
    from polyhazard.model import Dataset
    assert submodel_probabilities(run_chain(cfg, PriorConfig(), Dataset.empty(0))) == {"W-L": 1.0}


def test_snapshot_frequencies_approach_occupancy(small_data):
    cfg = SamplerConfig(total_time=200.0, sample_rate=100.0, rates=JumpRates(birth_death=5.0, swap=5.0), seed=9)
    sk = run_chain(cfg, PriorConfig(), small_data)
    assert total_variation(snapshot_probabilities(sk.samples), submodel_probabilities(sk)) < 0.01


@given(st.lists(rows, min_size=1, max_size=4))
def test_ordering_preserves_likelihood(rs):
    from polyhazard.model import Dataset, log_likelihood, new_state

    data = Dataset.from_arrays([0.4, 1.3, 2.2, 0.9], [1, 0, 1, 1], [[0.5], [-1.0], [0.2], [1.5]], standardize=False)

    def ll(sample):
        theta = [[a, b0, b[0]] for a, b0, b in zip(sample["alpha"], sample["beta0"], sample["beta"])]
        return log_likelihood(new_state(sample["dists"], 1, theta=theta, gamma=sample["gamma"]), data)

    s = make_sample(rs)
    assert ll(apply_ordering(s)) == pytest.approx(ll(s), rel=1e-12, abs=1e-12)


@given(st.lists(st.lists(rows, min_size=1, max_size=3), min_size=1, max_size=5))
def test_probabilities_sum_to_one_and_mean_survival_monotone(samples):
    samples = [make_sample(rs) for rs in samples]
    assert sum(snapshot_probabilities(samples).values()) == pytest.approx(1.0, abs=1e-12)
    # a larger location raises every hazard, so survival and its mean fall
    worse = [dict(s, beta0=[b + 0.5 for b in s["beta0"]]) for s in samples]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = mean_survival(samples, [0.1], 20.0).values
        b = mean_survival(worse, [0.1], 20.0).values
    # log-logistic location is a scale, so raising it lengthens survival instead
    for s, x, y in zip(samples, a, b):
        if all(d == "W" for d in s["dists"]):
            assert y <= x + 1e-9
        elif all(d == "L" for d in s["dists"]):
            assert y >= x - 1e-9
