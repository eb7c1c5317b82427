"""Posterior summaries from sampler output.

Samples are the JSON-ready snapshot dicts produced by the engine: ``dists``,
``alpha`` (log shapes), ``beta0`` and ``beta`` (location intercepts and
slopes on the standardised covariate scale).  Covariate profiles passed here
must already be standardised (see ``Dataset.transform``).
"""

from __future__ import annotations

import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import survdist
from .model import model_key
from .survdist import DistKind

QUANTILES = (0.025, 0.25, 0.75, 0.975)
SURVIVAL_TAIL = 1e-4

_PER_HAZARD = ("dists", "alpha", "beta0", "beta", "gamma")


# ---------------------------------------------------------------------------
# labelling


def apply_ordering(sample: dict) -> dict:
    """Relabel subhazards: Weibulls before log-logistics, ascending shape within a kind.

    Ties in shape are broken by intercept and then slopes.  All per-subhazard
    fields move together; the likelihood is unchanged.
    """
    K = len(sample["dists"])
    kinds = [DistKind.parse(d) for d in sample["dists"]]
    beta = sample.get("beta", [[]] * K)
    order = sorted(
        range(K), key=lambda k: (int(kinds[k]), sample["alpha"][k], sample["beta0"][k], tuple(beta[k]), k)
    )
    out = dict(sample)
    for name in _PER_HAZARD:
        if name in sample:
            out[name] = [sample[name][k] for k in order]
    return out


def _log_components(sample: dict, x):
    """Yield ``(kind, alpha, log mu(x))`` for each subhazard of a sample."""
    x = np.asarray(x, dtype=float).reshape(-1)
    for d, a, b0, b in zip(sample["dists"], sample["alpha"], sample["beta0"], sample["beta"]):
        yield DistKind.parse(d), a, b0 + (float(np.dot(x, b)) if len(b) else 0.0)


def _components(sample: dict, x):
    """Yield ``(kind, nu, mu(x))`` for each subhazard of a sample."""
    for kind, a, eta in _log_components(sample, x):
        yield kind, math.exp(a), math.exp(eta)


# ---------------------------------------------------------------------------
# submodel probabilities


def _as_dict(sk):
    return sk if isinstance(sk, dict) else {
        "initial_model": sk.initial_model,
        "initial": sk.initial,
        "events": [e.to_dict() for e in sk.events],
        "end_clock": sk.end_clock,
        "burn_in": sk.burn_in,
    }


def submodel_occupancy(skeleton) -> dict:
    """Time spent in each submodel along one chain's event skeleton, after burn-in."""
    sk = _as_dict(skeleton)
    start = float(sk.get("burn_in") or sk["initial"]["anchor"])
    occ = defaultdict(float)
    t, key = float(sk["initial"]["anchor"]), sk["initial_model"]
    for ev in sk["events"]:
        if ev["clock"] > start:
            occ[key] += ev["clock"] - max(t, start)
        t, key = ev["clock"], ev["model"]
    occ[key] += float(sk["end_clock"]) - max(t, start)
    return {k: v for k, v in occ.items() if v > 0}


def submodel_probabilities(skeletons) -> dict:
    """Fraction of sampler time spent in each submodel, pooled over chains.

    Keys are submodel labels such as ``"W-L"``: ``K`` is the number of
    letters and the letters give the distribution multiset.
    """
    if not isinstance(skeletons, (list, tuple)):
        skeletons = [skeletons]
    total = Counter()
    for sk in skeletons:
        total.update(submodel_occupancy(sk))
    mass = sum(total.values())
    if mass <= 0:
        raise ValueError("skeleton covers no sampler time")
    return {k: v / mass for k, v in sorted(total.items(), key=lambda kv: (-kv[1], kv[0]))}


def snapshot_probabilities(samples: Iterable[dict]) -> dict:
    """Submodel frequencies among the sampled snapshots."""
    counts = Counter(model_key(s["dists"]) for s in samples)
    n = sum(counts.values())
    if n == 0:
        raise ValueError("no samples")
    return {k: c / n for k, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))}


def k_probabilities(probs: dict, k_max: Optional[int] = None) -> np.ndarray:
    """Collapse submodel probabilities to the distribution of ``K`` (index 0 is K=1)."""
    ks = [len(key.split("-")) for key in probs]
    k_max = max(ks) if k_max is None else k_max
    out = np.zeros(k_max)
    for k, pr in zip(ks, probs.values()):
        out[k - 1] += pr
    return out


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------------------
# mean survival


def survival_function(sample: dict, x, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    H = np.zeros_like(y)
    for kind, nu, mu in _components(sample, x):
        H = H + survdist.cumulative_hazard(kind, nu, mu, y)
    return np.exp(-H)


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-6, m: int = 1, max_depth: int = 50) -> np.ndarray:
    """Adaptive Simpson quadrature of ``m`` functions over ``[a, b]`` at once.

    ``f(owner, y)`` evaluates function ``owner[i]`` at ``y[i]``.  Every
    interval at one refinement level, across all functions, is evaluated
    in a single call.  Returns the ``m`` integrals.
    """
    owner = np.arange(m)
    lo = np.full(m, float(a))
    hi = np.full(m, float(b))
    ends = f(np.concatenate((owner, owner, owner)), np.concatenate((lo, 0.5 * (lo + hi), hi)))
    f_lo, f_mid, f_hi = ends[:m], ends[m : 2 * m], ends[2 * m :]
    whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)
    tols = np.full(m, float(tol))
    total = np.zeros(m)
    for _ in range(max_depth):
        n = lo.size
        mid = 0.5 * (lo + hi)
        vals = f(np.concatenate((owner, owner)), np.concatenate((0.5 * (lo + mid), 0.5 * (mid + hi))))
        f_q1, f_q3 = vals[:n], vals[n:]
        left = (mid - lo) / 6.0 * (f_lo + 4.0 * f_q1 + f_mid)
        right = (hi - mid) / 6.0 * (f_mid + 4.0 * f_q3 + f_hi)
        err = left + right - whole
        done = np.abs(err) <= 15.0 * tols
        np.add.at(total, owner[done], (left + right + err / 15.0)[done])
        keep = ~done
        if not keep.any():
            return total
        owner, lo, mid, hi = owner[keep], lo[keep], mid[keep], hi[keep]
        f_lo, f_q1, f_mid, f_q3, f_hi = f_lo[keep], f_q1[keep], f_mid[keep], f_q3[keep], f_hi[keep]
        tols = tols[keep] / 2.0
        owner = np.concatenate((owner, owner))
        lo, hi = np.concatenate((lo, mid)), np.concatenate((mid, hi))
        f_lo, f_mid, f_hi = np.concatenate((f_lo, f_mid)), np.concatenate((f_q1, f_q3)), np.concatenate((f_mid, f_hi))
        whole = np.concatenate((left[keep], right[keep]))
        tols = np.concatenate((tols, tols))
    np.add.at(total, owner, whole)
    return total


class _SampleTable:
    """Padded per-sample subhazard parameters at one covariate profile."""

    def __init__(self, samples, x):
        comps = [list(_log_components(s, x)) for s in samples]
        K = max((len(c) for c in comps), default=1)
        m = len(comps)
        self.kind = np.zeros((m, K), dtype=int)
        self.nu = np.ones((m, K))
        self.log_mu = np.zeros((m, K))
        self.active = np.zeros((m, K), dtype=bool)
        for i, cs in enumerate(comps):
            for k, (kind, a, eta) in enumerate(cs):
                self.kind[i, k], self.nu[i, k], self.log_mu[i, k] = int(kind), math.exp(a), eta
                self.active[i, k] = True

    def cumulative_hazard(self, owner, y):
        y = np.asarray(y, dtype=float)[:, None]
        nu, lm = self.nu[owner], self.log_mu[owner]
        with np.errstate(divide="ignore", over="ignore"):
            logy = np.log(y)
            weib = np.exp(np.minimum(lm + nu * logy, survdist.EXP_CLAMP))
            z = nu * (logy - lm)
            ll = np.logaddexp(0.0, z)
        H = np.where(self.kind[owner] == int(DistKind.WEIBULL), weib, ll)
        return np.where(self.active[owner], H, 0.0).sum(axis=1)

    def survival(self, owner, y):
        return np.exp(-self.cumulative_hazard(owner, y))


@dataclass
class MeanSurvival:
    values: np.ndarray
    truncated: np.ndarray
    divergent: np.ndarray
    horizon: float

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def quantiles(self, qs=QUANTILES) -> dict:
        return {f"q{100 * q:g}": float(np.quantile(self.values, q)) for q in qs}

    def summary(self) -> dict:
        return {
            "mean": self.mean,
            **self.quantiles(),
            "n_samples": int(self.values.size),
            "horizon": self.horizon,
            "n_truncated": int(self.truncated.sum()),
            "n_divergent": int(self.divergent.sum()),
        }


def _divergent(sample: dict) -> bool:
    # log-logistic tails decay like y^-nu, so the mean is infinite when every nu <= 1
    return all(DistKind.parse(d) is DistKind.LOGLOGISTIC and a <= 0.0 for d, a in zip(sample["dists"], sample["alpha"]))


def mean_survival(samples, x, horizon: float, tol: float = 1e-6) -> MeanSurvival:
    """Per-sample ``E[Y] = int_0^horizon S(y) dy`` and flags for unresolved tails."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    table = _SampleTable(samples, x)
    m = len(samples)
    vals = adaptive_simpson(table.survival, 0.0, horizon, tol, m)
    div = np.array([_divergent(s) for s in samples], dtype=bool)
    trunc = div | (table.survival(np.arange(m), np.full(m, float(horizon))) > SURVIVAL_TAIL)
    if trunc.any():
        warnings.warn(
            f"{int(trunc.sum())} of {len(samples)} survival curves exceed {SURVIVAL_TAIL:g} at the horizon; "
            "their mean survival is truncated",
            RuntimeWarning,
            stacklevel=2,
        )
    return MeanSurvival(vals, trunc, div, float(horizon))


def mean_survival_difference(samples, x1, x0, horizon: float, tol: float = 1e-6) -> dict:
    """Posterior summary of ``E[Y | x1] - E[Y | x0]`` on paired samples."""
    a = mean_survival(samples, x1, horizon, tol)
    b = mean_survival(samples, x0, horizon, tol)
    d = a.values - b.values
    return {"mean": float(d.mean()), **{f"q{100 * q:g}": float(np.quantile(d, q)) for q in QUANTILES}}


# ---------------------------------------------------------------------------
# curves


def hazard_matrix(samples, x, grid) -> np.ndarray:
    """Overall hazard ``sum_k h_k(y | x)`` per sample (rows) and grid time (columns)."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise ValueError("grid times must be positive")
    samples = list(samples)
    out = np.zeros((len(samples), grid.size))
    for i, s in enumerate(samples):
        for kind, nu, mu in _components(s, x):
            out[i] += survdist.hazard(kind, nu, mu, grid)
    return out


def _band_summary(mat: np.ndarray, grid) -> dict:
    return {
        "time": np.asarray(grid, dtype=float),
        "mean": mat.mean(axis=0),
        "lower": np.quantile(mat, 0.025, axis=0),
        "upper": np.quantile(mat, 0.975, axis=0),
    }


def hazard_curve(samples, x, grid) -> dict:
    """Pointwise posterior mean and 95% band of the model-averaged hazard."""
    return _band_summary(hazard_matrix(samples, x, grid), grid)


def hazard_ratio_curve(samples, x1, x0, grid) -> dict:
    """Pointwise posterior summary of ``h(y | x1) / h(y | x0)``."""
    samples = list(samples)
    num = hazard_matrix(samples, x1, grid)
    den = hazard_matrix(samples, x0, grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / den, np.nan)
    if np.isnan(ratio).any():
        raise FloatingPointError("hazard vanished at the reference profile")
    return _band_summary(ratio, grid)


def quartile_contrast(X_raw, column: int, base=None):
    """Profiles at the upper and lower sample quartiles of one covariate.

    Other covariates are held at ``base`` (default: their sample means).
    Returns ``(x_upper, x_lower)`` on the original scale.
    """
    X_raw = np.asarray(X_raw, dtype=float)
    base = X_raw.mean(axis=0) if base is None else np.asarray(base, dtype=float)
    lo, hi = np.quantile(X_raw[:, column], [0.25, 0.75])
    x1, x0 = base.copy(), base.copy()
    x1[column], x0[column] = hi, lo
    return x1, x0


def default_grid(max_time: float, n: int = 100) -> np.ndarray:
    return np.linspace(max_time / n, max_time, n)
