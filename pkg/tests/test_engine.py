import json
import math

import numpy as np
import pytest

from polyhazard.engine import (
    PolyhazardSampler,
    SamplerConfig,
    chain_rng,
    diagnostics,
    format_acceptance,
    run,
    run_chain,
)
from polyhazard.jumps import JumpRates
from polyhazard.model import Dataset, ModelState, PriorConfig, new_state
from polyhazard.postprocess import submodel_probabilities, total_variation

NO_JUMPS = JumpRates(birth_death=0.0, swap=0.0, hyper=0.0)

# posterior submodel masses of the six-observation toy below, by tensor
# Gauss-Hermite quadrature at 24 nodes per axis (20 nodes agree to 2e-6)
TOY_TIME = [0.3, 0.8, 1.1, 2.5, 0.05, 1.7]
TOY_EVENT = [1, 1, 0, 1, 1, 0]
TOY_EXACT = {"L": 0.43089, "W": 0.33164, "L-L": 0.10903, "W-L": 0.10524, "W-W": 0.02320}


def toy_problem():
    return Dataset.from_arrays(TOY_TIME, TOY_EVENT), PriorConfig(k_max=2, sigma_alpha=0.5, sigma_beta0=0.5)


def test_equal_seeds_are_bit_identical(small_data):
    cfg = SamplerConfig(total_time=30.0, seed=11, chains=2)
    a = run(cfg, PriorConfig(), small_data)
    b = run(cfg, PriorConfig(), small_data)
    dump = lambda sks: json.dumps([s.samples for s in sks] + [diagnostics(sks)], sort_keys=True)
    assert dump(a) == dump(b)
    assert a[0].samples != a[1].samples


def test_sample_count_is_poisson(small_data):
    cfg = SamplerConfig(total_time=500.0, sample_rate=4.0, seed=1)
    n = len(run_chain(cfg, PriorConfig(), small_data).samples)
    assert abs(n - 2000) < 3 * math.sqrt(2000)


def test_long_run_sample_rate():
    cfg = SamplerConfig(total_time=10_000.0, sample_rate=4.0, rates=NO_JUMPS, seed=2, init_dists=["W"])
    n = len(run_chain(cfg, PriorConfig(), Dataset.empty(0)).samples)
    assert abs(n - 40_000) < 3 * math.sqrt(40_000)


def test_null_jump_rates_reduce_to_plain_zigzag():
    prior = PriorConfig(sigma_alpha=1.0, sigma_beta0=1.0)
    cfg = SamplerConfig(total_time=5000.0, sample_rate=2.0, rates=NO_JUMPS, seed=3, init_dists=["L"])
    sk = run_chain(cfg, prior, Dataset.empty(0))
    assert set(sk.occupancy) == {"L"} and not any(e.kind in ("birth", "death", "swap") for e in sk.events)
    x = np.array([[s["alpha"][0], s["beta0"][0]] for s in sk.samples])
    x = x[: x.shape[0] // 50 * 50]
    se = x.reshape(50, -1, 2).mean(axis=1).std(axis=0, ddof=1) / math.sqrt(50)
    assert np.all(np.abs(x.mean(axis=0)) < 3 * se + 1e-12)
    np.testing.assert_allclose(x.var(axis=0), 1.0, atol=0.1)
    # linear flip rates of a Gaussian are bounded exactly by the chord
    assert diagnostics(sk)["bound"]["exceedances"] == 0


def test_stick_precedes_later_arrivals():
    prior = PriorConfig()
    cfg = SamplerConfig(total_time=1.0, sample_rate=1e-9, rates=NO_JUMPS)
    s = new_state(["W"], 1, theta=[[0.0, 0.0, 0.01]], gamma=[[True]], v=[[1, 1, -1]])
    smp = PolyhazardSampler(Dataset.empty(1), prior, cfg, np.random.default_rng(0), state=s)
    kinds = []
    while smp.state.clock < 0.5 and "stick" not in kinds:
        kinds.append(smp.step(1.0))
    assert kinds[-1] == "stick" and smp.state.clock == pytest.approx(0.01)
    assert smp.state.gamma[0, 0] == False and smp.state.v[0, 2] == 0


def test_constant_event_frequencies_match_rates():
    rates = JumpRates(birth_death=2.0, swap=1.0, hyper=1.0)
    cfg = SamplerConfig(total_time=3000.0, sample_rate=4.0, rates=rates, seed=4)
    sk = run_chain(cfg, PriorConfig(), Dataset.empty(0))
    d = sk.diagnostics
    counts = np.array([
        len(sk.samples),
        d["moves"]["birth"]["attempts"] + d["moves"]["death"]["attempts"],
        d["moves"]["swap"]["attempts"],
        d["hyper_updates"],
    ], dtype=float)
    np.testing.assert_allclose(counts / counts.sum(), [0.5, 0.25, 0.125, 0.125], atol=0.01)


def test_state_invariants_and_continuity(small_data):
    prior = PriorConfig()
    cfg = SamplerConfig(total_time=200.0, rates=JumpRates(birth_death=3.0, swap=3.0, hyper=1.0), seed=5)
    smp = PolyhazardSampler(small_data, prior, cfg, chain_rng(5, 0))
    seen = set()
    while smp.state.clock < 200.0:
        old = smp.state.copy()
        kind = smp.step(200.0)
        seen.add(kind)
        smp.state.check(prior)
        assert np.all(np.abs(smp.state.v[:, :2]) == 1)
        if kind not in ("birth", "death", "swap"):
            # the path is continuous; only velocities and discrete parts jump
            np.testing.assert_allclose(smp.state.position(), old.position(smp.state.clock), atol=1e-9)
    assert {"flip", "stick", "unstick", "birth", "death", "swap"} <= seen


def test_skeleton_reconstructs_snapshots(small_data):
    cfg = SamplerConfig(total_time=100.0, emit_skeleton=True, seed=6)
    sk = run_chain(cfg, PriorConfig(), small_data)
    anchors = [(0.0, ModelState.from_full_dict(sk.initial))]
    anchors += [(e.clock, ModelState.from_full_dict(e.state)) for e in sk.events]
    clocks = np.array([a[0] for a in anchors])
    assert np.all(np.diff(clocks) >= 0)
    for s in sk.samples:
        i = int(np.searchsorted(clocks, s["clock"], side="right")) - 1
        rebuilt = anchors[i][1].to_dict(s["clock"])
        for key in ("dists", "gamma", "omega", "z1", "z2"):
            assert rebuilt[key] == s[key]
        for key in ("alpha", "beta0", "beta"):
            np.testing.assert_allclose(rebuilt[key], s[key], atol=1e-12)


def test_diagnostics_without_attempts():
    cfg = SamplerConfig(total_time=20.0, rates=NO_JUMPS, init_dists=["W"])
    rep = diagnostics(run_chain(cfg, PriorConfig(), Dataset.empty(0)))
    assert rep["acceptance_rates"] == {"birth": None, "death": None, "swap": None}
    assert format_acceptance(rep) == "birth n/a, death n/a, swap n/a"
    assert json.loads(json.dumps(rep)) == rep


def test_burn_in_discards_early_samples(small_data):
    cfg = SamplerConfig(total_time=50.0, burn_in=20.0, seed=7)
    sk = run_chain(cfg, PriorConfig(), small_data)
    assert min(s["clock"] for s in sk.samples) >= 20.0
    assert sum(sk.occupancy.values()) == pytest.approx(30.0)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        SamplerConfig(total_time=0)
    with pytest.raises(ValueError):
        SamplerConfig(balancing="greedy")
    with pytest.raises(ValueError):
        SamplerConfig.from_dict({"unknown": 1})
    cfg = SamplerConfig(total_time=7.0, rates=JumpRates(birth_death=2.0))
    assert SamplerConfig.from_dict(cfg.to_dict()) == cfg
    comb = SamplerConfig.from_dict({"rates": {"combined": 6.0}})
    assert comb.rates.birth_death == pytest.approx(2.0)


@pytest.mark.slow
def test_toy_occupancy_matches_enumeration():
    data, prior = toy_problem()
    # without swaps, changing type at K = 1 needs a birth and a death, so the run is longer
    runs = {}
    for swap, T in ((10.0, 3000.0), (0.0, 12000.0)):
        cfg = SamplerConfig(total_time=T, sample_rate=0.1, rates=JumpRates(birth_death=10.0, swap=swap, hyper=1.0), seed=3)
        runs[swap] = submodel_probabilities(run_chain(cfg, prior, data))
        assert total_variation(runs[swap], TOY_EXACT) < 0.02
    assert total_variation(runs[0.0], runs[10.0]) < 0.05
