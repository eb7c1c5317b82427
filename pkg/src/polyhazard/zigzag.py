"""Zig-Zag dynamics: flip rates, numerical thinning bounds and sticky events.

The flip rate of coordinate ``i`` is ``max(0, v_i * dU/dtheta_i)`` along the
linear trajectory.  Arrivals are simulated by thinning a dominating process
whose rate ``M(t) + offset`` is rebuilt on short adaptive intervals.
"""

from __future__ import annotations

import collections
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

log = logging.getLogger(__name__)

T_B_FLOOR = 1e-4
T_B_CAP = 10.0


class BoundKind(enum.Enum):
    LINEAR = "linear"
    CONSTANT = "constant"
    BRENT = "brent"


@dataclass
class BoundSegment:
    t0: float
    t_b: float
    intercept: float
    slope: float
    kind: BoundKind
    offset: float = 0.0
    end_rate: Optional[float] = None  # flip rate at the segment end, reusable by the next segment

    @property
    def end(self) -> float:
        return self.t0 + self.t_b

    def rate(self, t: float) -> float:
        """Dominating rate ``M(t) + offset``."""
        return self.intercept + self.slope * (t - self.t0) + self.offset


class AdaptState:
    """Sliding reservoir of inter-event times and its running quantile."""

    def __init__(self, window: int = 512, quantile: float = 0.8, initial: float = 1.0, refresh: int = 16):
        self.times = collections.deque(maxlen=window)
        self.quantile = quantile
        self.t_star = initial
        self.refresh = refresh
        self._since = 0

    def record(self, dt: float) -> None:
        if dt <= 0:
            return
        self.times.append(dt)
        self._since += 1
        if self._since >= self.refresh:
            self._since = 0
            self.t_star = float(np.quantile(np.fromiter(self.times, float), self.quantile))


@dataclass
class ZigZagDiagnostics:
    bounds: dict = field(default_factory=lambda: {k.value: 0 for k in BoundKind})
    brent_failures: int = 0
    thinning_evals: int = 0
    exceedances: int = 0
    max_exceedance_ratio: float = 0.0
    flips: int = 0
    segment_length_total: float = 0.0
    t_star_trace: list = field(default_factory=list)

    @property
    def n_segments(self) -> int:
        return sum(self.bounds.values())

    @property
    def exceedance_fraction(self) -> Optional[float]:
        return self.exceedances / self.thinning_evals if self.thinning_evals else None

    @property
    def linear_fraction(self) -> Optional[float]:
        n = self.n_segments
        return self.bounds[BoundKind.LINEAR.value] / n if n else None

    def to_dict(self) -> dict:
        n = self.n_segments
        return {
            "bounds": dict(self.bounds),
            "brent_failures": self.brent_failures,
            "thinning_evals": self.thinning_evals,
            "exceedances": self.exceedances,
            "exceedance_fraction": self.exceedance_fraction,
            "max_exceedance_ratio": self.max_exceedance_ratio,
            "flips": self.flips,
            "linear_fraction": self.linear_fraction,
            "mean_segment_length": self.segment_length_total / n if n else None,
            "t_star_trace": list(self.t_star_trace),
        }


def flip_rate(grad: np.ndarray, v: np.ndarray):
    """Total and per-coordinate flip rates for gradient ``grad`` and velocity ``v``."""
    per = np.maximum(0.0, v * grad)
    return float(per.sum()), per


def interval_length(rate0: float, t_star: float) -> float:
    t_b = t_star if rate0 <= 0 else min(t_star, 1.0 / rate0)
    return min(max(t_b, T_B_FLOOR), T_B_CAP * t_star)


def build_bound(
    rate_fn: Callable[[float], float],
    t0: float,
    adapt: AdaptState,
    offset: float = 0.1,
    rate0: Optional[float] = None,
    diag: Optional[ZigZagDiagnostics] = None,
) -> BoundSegment:
    """Bound the total flip rate on ``[t0, t0 + t_b)``.

    Three evaluations decide between a chord (monotone and convex), the
    larger endpoint (monotone only), or a Brent search for the maximum.
    """
    r0 = rate_fn(t0) if rate0 is None else rate0
    t_b = interval_length(r0, adapt.t_star)
    rm = rate_fn(t0 + 0.5 * t_b)
    r1 = rate_fn(t0 + t_b)
    monotone = (r0 <= rm <= r1) or (r0 >= rm >= r1)
    chord = 0.5 * (r0 + r1)
    convex = rm <= chord + 1e-12 * abs(chord)  # exactly linear rates pass despite rounding
    if monotone and convex:
        seg = BoundSegment(t0, t_b, r0, (r1 - r0) / t_b, BoundKind.LINEAR, offset)
    elif monotone:
        seg = BoundSegment(t0, t_b, max(r0, r1), 0.0, BoundKind.CONSTANT, offset)
    else:
        top = max(r0, rm, r1)
        res = optimize.minimize_scalar(
            lambda t: -rate_fn(t),
            bounds=(t0, t0 + t_b),
            method="bounded",
            options={"maxiter": 20, "xatol": 1e-3 * t_b},
        )
        if res.success and np.isfinite(res.fun):
            level = max(top, -float(res.fun))
        else:
            level = 2.0 * top
            if diag is not None:
                diag.brent_failures += 1
            log.warning("Brent bound search did not converge on [%g, %g]", t0, t0 + t_b)
        seg = BoundSegment(t0, t_b, level, 0.0, BoundKind.BRENT, offset)
    if diag is not None:
        diag.bounds[seg.kind.value] += 1
        diag.segment_length_total += t_b
    seg.end_rate = r1
    return seg


def sample_event_time(seg: BoundSegment, rng: np.random.Generator, start: Optional[float] = None) -> Optional[float]:
    """First arrival after ``start`` of the dominating process, or ``None`` at segment end.

    Inverts the integrated linear rate in closed form.
    """
    s = seg.t0 if start is None else start
    A = seg.rate(s)
    b = seg.slope
    E = rng.standard_exponential()
    disc = A * A + 2.0 * b * E
    if disc < 0.0:
        return None
    denom = A + math.sqrt(disc)
    if denom <= 0.0:
        return None
    t = s + 2.0 * E / denom
    return t if t < seg.end else None


def thin_and_flip(
    rates: np.ndarray,
    seg: BoundSegment,
    tau: float,
    rng: np.random.Generator,
    diag: Optional[ZigZagDiagnostics] = None,
) -> Optional[int]:
    """Accept a proposed flip at ``tau`` and pick the coordinate.

    ``rates`` are the per-coordinate flip rates at ``tau``.  Returns the flat
    index of the coordinate to flip, or ``None`` on rejection.
    """
    total = float(rates.sum())
    bound = seg.rate(tau)
    if diag is not None:
        diag.thinning_evals += 1
        if total > bound:
            diag.exceedances += 1
            diag.max_exceedance_ratio = max(diag.max_exceedance_ratio, total / bound if bound > 0 else math.inf)
    if total <= 0.0:
        return None
    if rng.random() * bound >= total:
        return None
    flat = rates.reshape(-1)
    cum = np.cumsum(flat)
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(i, flat.size - 1)


def next_sticking_time(position: np.ndarray, v: np.ndarray, sticky: np.ndarray):
    """Earliest time at which a moving sticky coordinate reaches zero.

    Returns ``(flat index, time offset)`` or ``None``.
    """
    pos = position.reshape(-1)
    vel = v.reshape(-1)
    cand = sticky.reshape(-1) & (pos * vel < 0.0)
    if not cand.any():
        return None
    idx = np.flatnonzero(cand)
    dts = np.abs(pos[idx])
    j = int(np.argmin(dts))
    return int(idx[j]), float(dts[j])


UNSTICK_CONVENTIONS = ("slab", "odds", "inverse_odds")


def unstick_rate(omega: float, sigma_beta: float, convention: str = "slab") -> float:
    """Rate at which one stuck coefficient is released from zero.

    ``"slab"`` is the prior ratio of the spike-and-slab at zero,
    ``omega / (1 - omega)`` times the slab density at zero.  ``"odds"`` and
    ``"inverse_odds"`` drop the density factor (and invert the odds).
    """
    if not 0.0 < omega < 1.0:
        raise ValueError("omega must lie strictly between 0 and 1")
    odds = omega / (1.0 - omega)
    if convention == "slab":
        return odds / (sigma_beta * math.sqrt(2.0 * math.pi))
    if convention == "odds":
        return odds
    if convention == "inverse_odds":
        return 1.0 / odds
    raise ValueError(f"unknown unstick convention {convention!r}")


# ---------------------------------------------------------------------------
# sampler for explicit potentials


@dataclass
class ZigZagTrace:
    """Time integrals collected by :class:`StickyZigZag`, one row per batch."""

    batch_time: np.ndarray
    first: np.ndarray  # integral of x
    second: np.ndarray  # integral of x x^T
    included: np.ndarray  # time each sticky coordinate spent unstuck
    diagnostics: ZigZagDiagnostics
    skeleton: list

    def mean(self):
        return self.first.sum(0) / self.batch_time.sum()

    def cov(self):
        m = self.mean()
        return self.second.sum(0) / self.batch_time.sum() - np.outer(m, m)

    def inclusion(self):
        return self.included.sum(0) / self.batch_time.sum()

    def batch_means(self, what: str = "first"):
        arr = getattr(self, what)
        shape = (-1,) + (1,) * (arr.ndim - 1)
        return arr / self.batch_time.reshape(shape)


class StickyZigZag:
    """Zig-Zag sampler for a potential given by its gradient.

    Coordinates flagged ``sticky`` freeze at zero for an exponential time
    with rate ``kappa`` (spike-and-slab targets).  Intended for analytic test
    targets; the polyhazard engine drives the same primitives directly.
    """

    def __init__(
        self,
        grad_fn: Callable[[np.ndarray], np.ndarray],
        x0,
        rng: np.random.Generator,
        v0=None,
        sticky=None,
        kappa: float = 1.0,
        offset: float = 0.1,
        adapt: Optional[AdaptState] = None,
        record_skeleton: bool = False,
    ):
        self.grad_fn = grad_fn
        self.x = np.array(x0, dtype=float).reshape(-1)
        d = self.x.size
        self.rng = rng
        self.v = rng.choice((-1.0, 1.0), size=d) if v0 is None else np.array(v0, dtype=float)
        self.sticky = np.zeros(d, dtype=bool) if sticky is None else np.asarray(sticky, dtype=bool)
        self.stuck = self.sticky & (self.x == 0.0) & (self.v == 0.0)
        self.kappa = kappa
        self.offset = offset
        self.adapt = adapt or AdaptState()
        self.diag = ZigZagDiagnostics()
        self.t = 0.0
        self.record_skeleton = record_skeleton
        self.skeleton = []

    def rates_at(self, s: float) -> np.ndarray:
        pos = self.x + self.v * (s - self.t)
        return np.maximum(0.0, self.v * self.grad_fn(pos))

    def rate_at(self, s: float) -> float:
        return float(self.rates_at(s).sum())

    def _log_event(self, kind):
        if self.record_skeleton:
            self.skeleton.append((self.t, kind, self.x.copy(), self.v.copy()))

    def run(self, total_time: float, n_batches: int = 50) -> ZigZagTrace:
        d = self.x.size
        edges = np.linspace(self.t, self.t + total_time, n_batches + 1)
        first = np.zeros((n_batches, d))
        second = np.zeros((n_batches, d, d))
        included = np.zeros((n_batches, d))
        bt = np.diff(edges)
        end = edges[-1]
        batch = 0
        seg = None
        last_flip = self.t
        rng = self.rng
        self._log_event("start")
        while self.t < end:
            if seg is None:
                seg = build_bound(self.rate_at, self.t, self.adapt, self.offset, diag=self.diag)
            tau = sample_event_time(seg, rng, self.t)
            cands = [(seg.end if tau is None else tau, "segment" if tau is None else "flip")]
            stick = next_sticking_time(self.x, self.v, self.sticky)
            if stick is not None:
                cands.append((self.t + stick[1], "stick"))
            n_stuck = int(self.stuck.sum())
            if n_stuck:
                cands.append((self.t + rng.exponential(1.0 / (self.kappa * n_stuck)), "unstick"))
            t_new, kind = min(cands, key=lambda c: c[0])
            if t_new >= end:
                t_new, kind = end, "end"
            # accumulate exact time integrals over the linear piece, split at batch edges
            t_cur = self.t
            while t_cur < t_new:
                stop = min(t_new, edges[batch + 1])
                dt = stop - t_cur
                x0 = self.x + self.v * (t_cur - self.t)
                first[batch] += x0 * dt + 0.5 * self.v * dt * dt
                second[batch] += (
                    np.outer(x0, x0) * dt
                    + 0.5 * (np.outer(x0, self.v) + np.outer(self.v, x0)) * dt * dt
                    + np.outer(self.v, self.v) * dt**3 / 3.0
                )
                included[batch] += (~self.stuck) * dt
                t_cur = stop
                if t_cur >= edges[batch + 1] and batch < n_batches - 1:
                    batch += 1
            self.x = self.x + self.v * (t_new - self.t)
            self.t = t_new
            if kind == "end":
                break
            if kind == "segment":
                seg = None
            elif kind == "flip":
                i = thin_and_flip(self.rates_at(self.t), seg, self.t, rng, self.diag)
                if i is not None:
                    self.v[i] = -self.v[i]
                    self.diag.flips += 1
                    self.adapt.record(self.t - last_flip)
                    last_flip = self.t
                    seg = None
                    self._log_event("flip")
            elif kind == "stick":
                i = stick[0]
                self.x[i] = 0.0
                self.v[i] = 0.0
                self.stuck[i] = True
                seg = None
                self._log_event("stick")
            elif kind == "unstick":
                i = int(rng.choice(np.flatnonzero(self.stuck)))
                self.stuck[i] = False
                self.v[i] = rng.choice((-1.0, 1.0))
                seg = None
                self._log_event("unstick")
        self.diag.t_star_trace.append(self.adapt.t_star)
        return ZigZagTrace(bt, first, second, included, self.diag, self.skeleton)
