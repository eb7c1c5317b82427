"""Event loop of the polyhazard sampler.

Every event source is a clock competing for the next event: the thinned
flip process inside the current bound segment, deterministic sticking
times, and one exponential clock for the superposed constant-rate events
(unsticking, hyperparameter updates, swaps, birth-death and sampling),
whose type is then drawn in proportion to its rate.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .jumps import Balancing, JumpRates, SigmaAdapter, birth_death_event, gibbs_omega, rwm_sigma, swap_event
from .model import (
    Dataset,
    ModelState,
    NumericalError,
    PriorConfig,
    effective_omega,
    effective_sigma_beta,
    model_key,
    new_state,
)
from .survdist import CANDIDATES, DistKind
from .zigzag import (
    AdaptState,
    ZigZagDiagnostics,
    build_bound,
    next_sticking_time,
    sample_event_time,
    thin_and_flip,
    unstick_rate,
)

log = logging.getLogger(__name__)

MOVES = ("birth", "death", "swap")


@dataclass
class SamplerConfig:
    total_time: float = 1000.0
    sample_rate: float = 4.0
    rates: JumpRates = field(default_factory=JumpRates)
    offset: float = 0.1
    seed: int = 0
    chains: int = 1
    emit_skeleton: bool = False
    balancing: str = "metropolis"
    swap_mode: str = "median"
    unstick: str = "slab"
    init_dists: Optional[list] = None
    adapt_window: int = 512
    initial_t_star: float = 1.0
    rwm_steps: int = 1
    burn_in: float = 0.0

    def __post_init__(self):
        if not self.total_time > 0:
            raise ValueError("total_time must be positive")
        if not 0.0 <= self.burn_in < self.total_time:
            raise ValueError("burn_in must lie in [0, total_time)")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.offset < 0:
            raise ValueError("offset must be nonnegative")
        if self.chains < 1:
            raise ValueError("chains must be at least 1")
        if isinstance(self.rates, dict):
            self.rates = JumpRates(**self.rates)
        Balancing(self.balancing)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["rates"] = self.rates.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        rates = d.pop("rates", None)
        if isinstance(rates, dict) and "combined" in rates:
            rates = JumpRates.from_combined(rates["combined"], rates.get("probs", (1 / 3, 1 / 3, 1 / 3)))
        elif isinstance(rates, dict):
            rates = JumpRates(**rates)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sampler settings: {sorted(unknown)}")
        return cls(rates=rates or JumpRates(), **d)


@dataclass
class Event:
    clock: float
    kind: str
    model: str
    n_included: int
    state: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {"clock": self.clock, "kind": self.kind, "model": self.model, "n_included": self.n_included}
        if self.state is not None:
            out["state"] = self.state
        return out


@dataclass
class SampleSkeleton:
    """Output of one chain: structural events, snapshots and occupancy."""

    chain: int
    initial: dict
    initial_model: str
    events: list
    samples: list
    end_clock: float
    occupancy: dict
    inclusion_time: float
    diagnostics: dict
    burn_in: float = 0.0

    def to_dict(self) -> dict:
        return {
            "chain": self.chain,
            "initial": self.initial,
            "initial_model": self.initial_model,
            "end_clock": self.end_clock,
            "burn_in": self.burn_in,
            "occupancy": self.occupancy,
            "inclusion_time": self.inclusion_time,
        }


class ChainFailure(RuntimeError):
    def __init__(self, message: str, last_state: dict):
        super().__init__(message)
        self.last_state = last_state


def initial_state(data: Dataset, prior: PriorConfig, config: SamplerConfig, rng: np.random.Generator) -> ModelState:
    if config.init_dists:
        dists = [DistKind.parse(d) for d in config.init_dists]
    else:
        dists = [CANDIDATES[int(rng.integers(len(CANDIDATES)))]]
    if len(dists) > prior.k_max:
        raise ValueError("more initial subhazards than k_max")
    K, p = len(dists), data.p
    theta = np.zeros((K, p + 2))
    n_events = int(data.event.sum())
    for k, d in enumerate(dists):
        if d is DistKind.WEIBULL:
            exposure = float(data.time.sum())
            theta[k, 1] = math.log(n_events / exposure) if n_events and exposure > 0 else 0.0
        else:
            observed = data.time[data.events]
            theta[k, 1] = math.log(float(np.median(observed))) if observed.size else 0.0
    omega = prior.fixed_omega if prior.fixed_omega is not None else float(rng.beta(prior.a, prior.b))
    v = rng.choice((-1.0, 1.0), size=(K, p + 2))
    return new_state(dists, p, theta=theta, v=v, omega=omega, z1=1.0, z2=1.0)


class PolyhazardSampler:
    """Single-chain piecewise-deterministic sampler over the polyhazard posterior."""

    def __init__(
        self,
        data: Dataset,
        prior: PriorConfig,
        config: SamplerConfig,
        rng: np.random.Generator,
        state: Optional[ModelState] = None,
        chain: int = 0,
    ):
        self.data = data
        self.prior = prior
        self.config = config
        self.rng = rng
        self.chain = chain
        self.state = state if state is not None else initial_state(data, prior, config, rng)
        self.state.check(prior)
        self.balancing = Balancing(config.balancing)
        self.adapt = AdaptState(window=config.adapt_window, initial=config.initial_t_star)
        self.sigma_adapter = SigmaAdapter()
        self.zz = ZigZagDiagnostics()
        self.moves = {m: [0, 0] for m in MOVES}
        self.hyper_updates = 0
        self.event_counts = Counter()
        self.events: list = []
        self.samples: list = []
        self.occupancy = defaultdict(float)
        self.inclusion_time = 0.0
        self.seg = None
        self._rate0 = None
        self._last_flip = self.state.clock
        self._burn_end = self.state.clock + config.burn_in
        self._refresh_structure()
        self.initial = self.state.to_full_dict()
        self.initial_model = self.state.model_key

    # -- rates -------------------------------------------------------------

    def _refresh_structure(self):
        st = self.state
        self._kinds = st.kinds
        self._sticky = np.zeros(st.v.shape, dtype=bool)
        self._sticky[:, 2:] = True
        self._key = st.model_key

    def _rates(self, t: float):
        st, prior = self.state, self.prior
        ll, total, r = _kernels.flip_rates(
            self._kinds,
            st.theta,
            st.v,
            t - st.anchor,
            st.gamma,
            self.data.X,
            self.data.logy,
            self.data.events,
            prior.sigma_alpha,
            prior.sigma_beta0,
            effective_sigma_beta(st, prior),
        )
        if not math.isfinite(ll) or not math.isfinite(total):
            raise NumericalError("non-finite log-likelihood along trajectory")
        return total, r

    def rates_at(self, t: float) -> np.ndarray:
        return self._rates(t)[1]

    def rate_at(self, t: float) -> float:
        return self._rates(t)[0]

    def constant_rates(self) -> dict:
        st, prior, rates = self.state, self.prior, self.config.rates
        n_stuck = int(st.gamma.size - st.gamma.sum())
        out = {}
        if n_stuck:
            omega = effective_omega(st, prior)
            out["unstick"] = n_stuck * unstick_rate(omega, effective_sigma_beta(st, prior), self.config.unstick)
        if rates.hyper > 0 and (prior.fixed_omega is None or prior.fixed_sigma_beta is None):
            out["hyper"] = rates.hyper
        if rates.swap > 0:
            out["swap"] = rates.swap
        if rates.birth_death > 0:
            out["birth_death"] = rates.birth_death
        out["sample"] = self.config.sample_rate
        return out

    # -- bookkeeping -------------------------------------------------------

    def _record(self, kind: str, structural: bool = True):
        st = self.state
        self.event_counts[kind] += 1
        if structural or self.config.emit_skeleton:
            snap = st.to_full_dict() if self.config.emit_skeleton else None
            self.events.append(Event(st.clock, kind, self._key, int(st.gamma.sum()), snap))

    def _invalidate(self):
        self.seg = None
        self._rate0 = None

    def _advance(self, t_new: float):
        st = self.state
        dt = t_new - max(st.clock, self._burn_end)
        st.clock = t_new
        if dt <= 0.0:
            return
        self.occupancy[self._key] += dt
        self.inclusion_time += dt * float(st.gamma.sum())

    # -- events ------------------------------------------------------------

    def step(self, t_max: float = math.inf) -> str:
        """Advance to and apply the next event; returns its kind."""
        st, rng = self.state, self.rng
        t = st.clock
        if self.seg is None:
            self.seg = build_bound(self.rate_at, t, self.adapt, self.config.offset, self._rate0, self.zz)
        seg = self.seg
        tau = sample_event_time(seg, rng, t)
        t_next, kind = (seg.end, "segment_end") if tau is None else (tau, "flip_proposal")
        stick = next_sticking_time(st.position(t), st.v, self._sticky)
        if stick is not None and t + stick[1] < t_next:
            t_next, kind = t + stick[1], "stick"
        crates = self.constant_rates()
        total = sum(crates.values())
        t_const = t + rng.exponential(1.0 / total)
        if t_const < t_next:
            t_next, kind = t_const, "constant"
        if t_next >= t_max:
            self._advance(t_max)
            return "end"
        self._advance(t_next)
        t = t_next

        if kind == "segment_end":
            self._rate0 = seg.end_rate
            self.seg = None
            return kind
        if kind == "flip_proposal":
            i = thin_and_flip(self.rates_at(t), seg, t, rng, self.zz)
            if i is None:
                return "flip_rejected"
            st.sync(t)
            st.v.reshape(-1)[i] *= -1.0
            self.zz.flips += 1
            self.adapt.record(t - self._last_flip)
            self._last_flip = t
            self._invalidate()
            self._record("flip", structural=False)
            return "flip"
        if kind == "stick":
            st.sync(t)
            k, c = divmod(stick[0], st.v.shape[1])
            st.theta[k, c] = 0.0
            st.v[k, c] = 0.0
            st.gamma[k, c - 2] = False
            self._invalidate()
            self._record("stick")
            return "stick"

        names = list(crates)
        cum = np.cumsum(np.fromiter(crates.values(), float))
        which = names[min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(names) - 1)]
        if which == "sample":
            if t < self._burn_end:
                return "sample"
            self.samples.append({"chain": self.chain, **st.to_dict(t)})
            self.event_counts["sample"] += 1
            return "sample"
        if which == "unstick":
            st.sync(t)
            stuck = np.flatnonzero(~st.gamma.reshape(-1))
            j = int(stuck[int(rng.integers(stuck.size))])
            k, c = divmod(j, st.p)
            st.gamma[k, c] = True
            st.v[k, c + 2] = rng.choice((-1.0, 1.0))
            self._invalidate()
            self._record("unstick")
            return "unstick"
        if which == "hyper":
            st.sync(t)
            if self.prior.fixed_omega is None:
                st.omega = gibbs_omega(st, self.prior, rng)
            if self.prior.fixed_sigma_beta is None:
                for _ in range(self.config.rwm_steps):
                    st.z1, st.z2 = rwm_sigma(st, self.sigma_adapter, rng)
            self.hyper_updates += 1
            self._invalidate()
            self._record("hyper", structural=False)
            return "hyper"
        current = st.at(t)
        if which == "swap":
            out = swap_event(current, self.data, self.prior, self.config.rates, rng, self.balancing, self.config.swap_mode)
        else:
            out = birth_death_event(current, self.data, self.prior, self.config.rates, rng, self.balancing)
        self.moves[out.move][0] += 1
        if not out.accepted:
            return out.move + "_rejected"
        self.moves[out.move][1] += 1
        self.state = out.state
        self.state.clock = t
        self._refresh_structure()
        self._invalidate()
        self._record(out.move)
        return out.move

    def run(self, total_time: Optional[float] = None) -> SampleSkeleton:
        end = self.state.clock + (self.config.total_time if total_time is None else total_time)
        trace_every = (end - self.state.clock) / 100.0
        next_trace = self.state.clock + trace_every
        try:
            while self.state.clock < end:
                self.step(end)
                if self.state.clock >= next_trace:
                    self.zz.t_star_trace.append(self.adapt.t_star)
                    next_trace += trace_every
        except (NumericalError, FloatingPointError, ValueError) as exc:
            raise ChainFailure(f"chain {self.chain} failed at clock {self.state.clock:.6g}: {exc}", self.state.to_full_dict()) from exc
        return self.skeleton()

    def skeleton(self) -> SampleSkeleton:
        return SampleSkeleton(
            chain=self.chain,
            initial=self.initial,
            initial_model=self.initial_model,
            events=self.events,
            samples=self.samples,
            end_clock=self.state.clock,
            occupancy=dict(self.occupancy),
            inclusion_time=self.inclusion_time,
            diagnostics=self.raw_diagnostics(),
            burn_in=self._burn_end,
        )

    def raw_diagnostics(self) -> dict:
        return {
            "moves": {m: {"attempts": a, "accepted": c} for m, (a, c) in self.moves.items()},
            "events": dict(self.event_counts),
            "zigzag": self.zz.to_dict(),
            "hyper_updates": self.hyper_updates,
            "sigma_adapter": self.sigma_adapter.to_dict(),
            "t_star": self.adapt.t_star,
        }


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain)]))


def run_chain(config: SamplerConfig, prior: PriorConfig, data: Dataset, chain: int = 0, state=None) -> SampleSkeleton:
    sampler = PolyhazardSampler(data, prior, config, chain_rng(config.seed, chain), state=state, chain=chain)
    return sampler.run()


def _worker_count(chains: int) -> int:
    cap = os.environ.get("POLYHAZ_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, chains))


def run(config: SamplerConfig, prior: PriorConfig, data: Dataset) -> list:
    """Run ``config.chains`` independent chains; deterministic given the seed."""
    workers = _worker_count(config.chains)
    if workers == 1:
        return [run_chain(config, prior, data, c) for c in range(config.chains)]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_chain, config, prior, data, c) for c in range(config.chains)]
        return [f.result() for f in futures]


def _rate(attempts: int, accepted: int):
    return accepted / attempts if attempts else None


def diagnostics(skeletons) -> dict:
    """Summary report: acceptance rates, bound health, event counts."""
    if isinstance(skeletons, SampleSkeleton):
        skeletons = [skeletons]
    moves = {m: [0, 0] for m in MOVES}
    events = Counter()
    zz_keys = ("thinning_evals", "exceedances", "flips", "brent_failures")
    zz = Counter()
    bounds = Counter()
    seg_total = 0.0
    per_chain = []
    for sk in skeletons:
        d = sk.diagnostics
        for m in MOVES:
            moves[m][0] += d["moves"][m]["attempts"]
            moves[m][1] += d["moves"][m]["accepted"]
        events.update(d["events"])
        z = d["zigzag"]
        for key in zz_keys:
            zz[key] += z[key]
        bounds.update(z["bounds"])
        if z["mean_segment_length"] is not None:
            seg_total += z["mean_segment_length"] * sum(z["bounds"].values())
        per_chain.append(
            {
                "chain": sk.chain,
                "end_clock": sk.end_clock,
                "t_star_trace": z["t_star_trace"],
                "sigma_adapter": d["sigma_adapter"],
            }
        )
    n_seg = sum(bounds.values())
    return {
        "acceptance_rates": {m: _rate(*moves[m]) for m in MOVES},
        "move_counts": {m: {"attempts": moves[m][0], "accepted": moves[m][1]} for m in MOVES},
        "bound": {
            "segments": n_seg,
            "by_kind": dict(bounds),
            "linear_fraction": bounds["linear"] / n_seg if n_seg else None,
            "mean_segment_length": seg_total / n_seg if n_seg else None,
            "thinning_evals": zz["thinning_evals"],
            "exceedances": zz["exceedances"],
            "exceedance_fraction": zz["exceedances"] / zz["thinning_evals"] if zz["thinning_evals"] else None,
            "brent_failures": zz["brent_failures"],
        },
        "flips": zz["flips"],
        "event_counts": dict(sorted(events.items())),
        "chains": per_chain,
    }


def format_acceptance(report: dict) -> str:
    """One-line summary of move acceptance, e.g. ``birth 4.90%, death 4.89%, swap 6.10%``."""
    parts = []
    for m in MOVES:
        r = report["acceptance_rates"][m]
        parts.append(f"{m} {'n/a' if r is None else f'{100 * r:.2f}%'}")
    return ", ".join(parts)
