"""Polyhazard data, state, posterior potential and prior densities."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .survdist import CANDIDATES, DistKind

LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(RuntimeError):
    """Raised when a likelihood or potential evaluation is not finite."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class CapacityError(ValueError):
    pass


def normal_logpdf(x, sd):
    if isinstance(x, float):
        return -0.5 * (x / sd) ** 2 - math.log(sd) - 0.5 * LOG_2PI
    x = np.asarray(x, dtype=float)
    return -0.5 * (x / sd) ** 2 - math.log(sd) - 0.5 * LOG_2PI


# ---------------------------------------------------------------------------
# data


def _is_binary(col: np.ndarray) -> bool:
    vals = np.unique(col)
    return vals.size <= 2 and np.all(np.isin(vals, (0.0, 1.0)))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Right-censored survival data with standardised covariates.

    ``X`` holds the standardised design.  Continuous columns are centred and
    divided by their sample standard deviation; binary columns are centred
    only.  ``center``/``scale`` map original-scale profiles onto ``X``.
    """

    time: np.ndarray
    event: np.ndarray
    X: np.ndarray
    names: tuple = ()
    center: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    binary: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        if self.time.ndim != 1 or self.event.shape != self.time.shape:
            raise ValueError("time and event must be 1-D arrays of equal length")
        if self.X.shape[0] != self.time.shape[0]:
            raise ValueError("covariate rows do not match number of observations")
        if np.any(~np.isfinite(self.time)) or np.any(self.time <= 0):
            raise ValueError("observed times must be positive and finite")
        if not np.all(np.isin(self.event, (0, 1))):
            raise ValueError("event indicators must be 0 or 1")
        object.__setattr__(self, "logy", np.log(self.time))
        object.__setattr__(self, "events", self.event.astype(np.bool_))

    @classmethod
    def from_arrays(
        cls,
        time,
        event,
        X=None,
        names: Optional[Sequence[str]] = None,
        standardize: bool = True,
        binary: Optional[Sequence[bool]] = None,
    ) -> "Dataset":
        time = np.asarray(time, dtype=float).reshape(-1)
        event = np.asarray(event).astype(np.int64).reshape(-1)
        n = time.size
        if X is None:
            X = np.zeros((n, 0))
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        p = X.shape[1]
        names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise ValueError("covariate names do not match number of columns")
        if binary is None:
            binary = [_is_binary(X[:, j]) if n else False for j in range(p)]
        binary = np.asarray(binary, dtype=bool)
        center = np.zeros(p)
        scale = np.ones(p)
        if standardize and n:
            center = X.mean(axis=0)
            sd = X.std(axis=0, ddof=1) if n > 1 else np.ones(p)
            scale = np.where(binary | (sd <= 0), 1.0, sd)
        Xs = (X - center) / scale
        return cls(time, event, np.ascontiguousarray(Xs), names, center, scale, binary)

    @classmethod
    def empty(cls, p: int = 0) -> "Dataset":
        return cls.from_arrays(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros((0, p)))

    @property
    def n(self) -> int:
        return int(self.time.size)

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    def transform(self, x_raw) -> np.ndarray:
        """Map an original-scale covariate profile onto the standardised scale."""
        x_raw = np.asarray(x_raw, dtype=float)
        return (x_raw - self.center) / self.scale

    def standardization(self) -> dict:
        return {
            "names": list(self.names),
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "binary": self.binary.tolist(),
        }


# ---------------------------------------------------------------------------
# prior and state


@dataclass
class PriorConfig:
    sigma_alpha: float = 2.0
    sigma_beta0: float = 5.0
    a: float = 4.0
    b: float = 4.0
    xi: float = 2.0
    k_max: int = 4
    fixed_omega: Optional[float] = None
    fixed_sigma_beta: Optional[float] = None

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        for name in ("sigma_alpha", "sigma_beta0", "a", "b", "xi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.fixed_omega is not None and not 0.0 < self.fixed_omega < 1.0:
            raise ValueError("fixed_omega must lie strictly between 0 and 1")
        if self.fixed_sigma_beta is not None and not self.fixed_sigma_beta > 0:
            raise ValueError("fixed_sigma_beta must be positive")

    def log_prior_k(self, k: int) -> float:
        """Zero-truncated Poisson log-mass, up to the truncation constant."""
        if k < 1 or k > self.k_max:
            return -math.inf
        return k * math.log(self.xi) - math.lgamma(k + 1)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Component:
    """One subhazard's parameters, used when adding or removing a hazard."""

    kind: DistKind
    theta: np.ndarray  # [alpha, beta0, beta_1..p]
    gamma: np.ndarray
    v: np.ndarray


@dataclass
class ModelState:
    """Full sampler state.

    ``theta`` is the exact position at time ``anchor``; between events the
    position moves linearly, ``theta + v * (t - anchor)``.  Row ``k`` of
    ``theta`` and ``v`` is ``[alpha, beta0, beta_1, ..., beta_p]``.
    """

    dists: list
    theta: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    omega: float = 0.5
    z1: float = 1.0
    z2: float = 1.0
    clock: float = 0.0
    anchor: float = 0.0

    @property
    def K(self) -> int:
        return len(self.dists)

    @property
    def p(self) -> int:
        return self.theta.shape[1] - 2

    @property
    def sigma_beta(self) -> float:
        return abs(self.z1) * math.sqrt(self.z2)

    @property
    def kinds(self) -> np.ndarray:
        return np.array(self.dists, dtype=np.int64)

    @property
    def model_key(self) -> str:
        return model_key(self.dists)

    def position(self, t: Optional[float] = None) -> np.ndarray:
        t = self.clock if t is None else t
        return self.theta + self.v * (t - self.anchor)

    def sync(self, t: Optional[float] = None) -> None:
        """Re-anchor the trajectory at ``t`` (defaults to the clock)."""
        t = self.clock if t is None else t
        self.theta = self.position(t)
        self.anchor = t
        self.clock = t

    def at(self, t: Optional[float] = None) -> "ModelState":
        """Copy re-anchored at ``t`` without touching this state."""
        out = self.copy()
        out.sync(t)
        return out

    def copy(self) -> "ModelState":
        return ModelState(
            list(self.dists),
            self.theta.copy(),
            self.v.copy(),
            self.gamma.copy(),
            self.omega,
            self.z1,
            self.z2,
            self.clock,
            self.anchor,
        )

    def component(self, k: int) -> Component:
        return Component(self.dists[k], self.theta[k].copy(), self.gamma[k].copy(), self.v[k].copy())

    def with_component(self, comp: Component, index: Optional[int] = None) -> "ModelState":
        index = self.K if index is None else index
        dists = list(self.dists)
        dists.insert(index, DistKind.parse(comp.kind))
        return ModelState(
            dists,
            _insert_row(self.theta, index, comp.theta),
            _insert_row(self.v, index, comp.v),
            _insert_row(self.gamma, index, comp.gamma),
            self.omega,
            self.z1,
            self.z2,
            self.clock,
            self.anchor,
        )

    def without_component(self, k: int) -> "ModelState":
        dists = list(self.dists)
        del dists[k]
        keep = [i for i in range(self.K) if i != k]
        return ModelState(
            dists, self.theta[keep], self.v[keep], self.gamma[keep], self.omega, self.z1, self.z2, self.clock, self.anchor
        )

    def check(self, prior: Optional[PriorConfig] = None) -> None:
        """Assert the structural invariants of the state."""
        K, p = self.K, self.p
        assert K >= 1
        if prior is not None:
            assert K <= prior.k_max
        assert self.theta.shape == (K, p + 2) and self.v.shape == (K, p + 2)
        assert self.gamma.shape == (K, p)
        assert np.all(np.isin(self.v, (-1.0, 0.0, 1.0)))
        assert np.all(self.v[:, :2] != 0)
        stuck = self.v[:, 2:] == 0
        assert np.array_equal(stuck, ~self.gamma)
        assert np.all(self.theta[:, 2:][~self.gamma] == 0.0)
        assert self.z2 > 0 and self.sigma_beta > 0
        assert 0.0 < self.omega < 1.0

    def to_dict(self, t: Optional[float] = None) -> dict:
        """JSON-ready snapshot of the state at time ``t``."""
        t = self.clock if t is None else t
        pos = self.position(t)
        return {
            "clock": t,
            "K": self.K,
            "dists": [d.short for d in self.dists],
            "alpha": pos[:, 0].tolist(),
            "beta0": pos[:, 1].tolist(),
            "beta": pos[:, 2:].tolist(),
            "gamma": self.gamma.astype(int).tolist(),
            "omega": self.omega,
            "z1": self.z1,
            "z2": self.z2,
            "sigma_beta": self.sigma_beta,
        }

    def to_full_dict(self) -> dict:
        """Exact anchor state, including velocities, for skeleton records."""
        out = {
            "anchor": self.anchor,
            "dists": [d.short for d in self.dists],
            "theta": self.theta.tolist(),
            "v": self.v.tolist(),
            "gamma": self.gamma.astype(int).tolist(),
            "omega": self.omega,
            "z1": self.z1,
            "z2": self.z2,
        }
        return out

    @classmethod
    def from_full_dict(cls, d: dict) -> "ModelState":
        p = len(d["gamma"][0]) if d["gamma"] else 0
        K = len(d["dists"])
        return cls(
            [DistKind.parse(x) for x in d["dists"]],
            np.asarray(d["theta"], dtype=float).reshape(K, p + 2),
            np.asarray(d["v"], dtype=float).reshape(K, p + 2),
            np.asarray(d["gamma"], dtype=bool).reshape(K, p),
            d["omega"],
            d["z1"],
            d["z2"],
            d["anchor"],
            d["anchor"],
        )


def _insert_row(arr: np.ndarray, index: int, row) -> np.ndarray:
    return np.concatenate((arr[:index], np.asarray(row, dtype=arr.dtype)[None, :], arr[index:]), axis=0)


def model_key(dists) -> str:
    """Label of the submodel, e.g. ``"W-L"``; Weibulls listed first."""
    return "-".join(sorted((DistKind.parse(d).short for d in dists), key="WL".index))


def new_state(dists, p: int, theta=None, gamma=None, v=None, omega=0.5, z1=1.0, z2=1.0) -> ModelState:
    """Build a state, filling unspecified parts with zeros and +1 velocities."""
    dists = [DistKind.parse(d) for d in dists]
    K = len(dists)
    theta = np.zeros((K, p + 2)) if theta is None else np.array(theta, dtype=float).reshape(K, p + 2)
    gamma = np.zeros((K, p), dtype=bool) if gamma is None else np.array(gamma, dtype=bool).reshape(K, p)
    theta[:, 2:][~gamma] = 0.0
    if v is None:
        v = np.ones((K, p + 2))
    v = np.array(v, dtype=float).reshape(K, p + 2)
    v[:, 2:][~gamma] = 0.0
    return ModelState(dists, theta, v, gamma, omega, z1, z2)


# ---------------------------------------------------------------------------
# likelihood and potential


def linear_predictor(state: ModelState, k: int, x) -> float:
    """Location ``mu_k(x)`` under the log-link."""
    if not 0 <= k < state.K:
        raise IndexError(k)
    x = np.asarray(x, dtype=float)
    row = state.theta[k]
    eta = row[1] + float(np.dot(x[state.gamma[k]], row[2:][state.gamma[k]]))
    return math.exp(eta)


def _raise_nonfinite(state_kinds, theta, gamma, data: Dataset):
    logh, H = _kernels.component_terms(state_kinds, theta, gamma, data.X, data.logy)
    per_obs = _kernels.observation_loglik(logh, H, data.events)
    bad = np.flatnonzero(~np.isfinite(per_obs))
    idx = int(bad[0]) if bad.size else None
    raise NumericalError(f"non-finite log-likelihood at observation {idx}", idx)


def component_terms(state: ModelState, data: Dataset, theta=None):
    theta = state.theta if theta is None else theta
    return _kernels.component_terms(state.kinds, theta, state.gamma, data.X, data.logy)


def log_likelihood(state: ModelState, data: Dataset, theta=None) -> float:
    theta = state.theta if theta is None else theta
    value = _kernels.loglik(state.kinds, theta, state.gamma, data.X, data.logy, data.events)
    if not math.isfinite(value):
        _raise_nonfinite(state.kinds, theta, state.gamma, data)
    return value


def log_prior_continuous(theta, gamma, sigma_beta: float, prior: PriorConfig) -> float:
    """Gaussian prior terms of the potential (shapes, intercepts, included slopes)."""
    return _kernels.gaussian_log_prior(theta, gamma, prior.sigma_alpha, prior.sigma_beta0, sigma_beta)


def effective_sigma_beta(state: ModelState, prior: PriorConfig) -> float:
    if prior.fixed_sigma_beta is not None:
        return prior.fixed_sigma_beta
    return state.sigma_beta


def effective_omega(state: ModelState, prior: PriorConfig) -> float:
    if prior.fixed_omega is not None:
        return prior.fixed_omega
    return state.omega


def potential(state: ModelState, data: Dataset, prior: PriorConfig, theta=None) -> float:
    """Negative log posterior density of the continuous coordinates.

    Discrete factors (omega powers, K, distributions) are excluded; they
    enter only through the jump processes.
    """
    theta = state.theta if theta is None else theta
    sb = effective_sigma_beta(state, prior)
    return -log_likelihood(state, data, theta) - log_prior_continuous(theta, state.gamma, sb, prior)


def potential_and_grad(state: ModelState, data: Dataset, prior: PriorConfig, theta=None):
    """Potential and its gradient matrix (zero on excluded coefficients)."""
    theta = state.theta if theta is None else theta
    ll, g = _kernels.loglik_and_grad(state.kinds, theta, state.gamma, data.X, data.logy, data.events)
    if not math.isfinite(ll) or not np.all(np.isfinite(g)):
        _raise_nonfinite(state.kinds, theta, state.gamma, data)
    sb = effective_sigma_beta(state, prior)
    U = -ll - log_prior_continuous(theta, state.gamma, sb, prior)
    grad = -g
    grad[:, 0] += theta[:, 0] / prior.sigma_alpha**2
    grad[:, 1] += theta[:, 1] / prior.sigma_beta0**2
    grad[:, 2:] += np.where(state.gamma, theta[:, 2:] / sb**2, 0.0)
    return U, grad


def grad_matrix(state: ModelState, data: Dataset, prior: PriorConfig, theta=None) -> np.ndarray:
    return potential_and_grad(state, data, prior, theta)[1]


def grad_potential(state: ModelState, data: Dataset, prior: PriorConfig, coords=None) -> np.ndarray:
    """Partial derivatives of the potential at the requested coordinates.

    ``coords`` is a sequence of ``(k, column)`` pairs into the parameter
    matrix; the default is every active coordinate.  Requesting an excluded
    coefficient is a contract violation.
    """
    g = grad_matrix(state, data, prior)
    if coords is None:
        return g[state.v != 0]
    out = np.empty(len(coords))
    for n, (k, c) in enumerate(coords):
        if c >= 2 and not state.gamma[k, c - 2]:
            raise ValueError(f"coordinate {(k, c)} is excluded (gamma = 0)")
        out[n] = g[k, c]
    return out


# ---------------------------------------------------------------------------
# full posterior including discrete factors


def log_prior_component(comp: Component, omega: float, sigma_beta: float, prior: PriorConfig) -> float:
    """Prior log-density of one subhazard (distribution, shape, location, slopes)."""
    lp = -math.log(len(CANDIDATES))
    lp += normal_logpdf(float(comp.theta[0]), prior.sigma_alpha)
    lp += normal_logpdf(float(comp.theta[1]), prior.sigma_beta0)
    g = np.asarray(comp.gamma, dtype=bool)
    n_in = int(g.sum())
    lp += n_in * math.log(omega) + (g.size - n_in) * math.log1p(-omega)
    if n_in:
        lp += float(np.sum(normal_logpdf(comp.theta[2:][g], sigma_beta)))
    return lp


def log_prior_structure(state: ModelState, prior: PriorConfig, theta=None) -> float:
    """Log prior of ``(K, D, gamma, theta)`` given the current hyperparameters."""
    theta = state.theta if theta is None else theta
    omega = effective_omega(state, prior)
    sb = effective_sigma_beta(state, prior)
    lp = prior.log_prior_k(state.K) - state.K * math.log(len(CANDIDATES))
    n_in = int(state.gamma.sum())
    lp += n_in * math.log(omega) + (state.gamma.size - n_in) * math.log1p(-omega)
    lp += log_prior_continuous(theta, state.gamma, sb, prior)
    return lp


def log_target(state: ModelState, data: Dataset, prior: PriorConfig, theta=None) -> float:
    """Log posterior of the whole state, up to a constant independent of the state."""
    theta = state.theta if theta is None else theta
    return log_likelihood(state, data, theta) + log_prior_structure(state, prior, theta)


def log_prior_ratio_birth(state: ModelState, new_component: Component, prior: PriorConfig) -> float:
    """Log prior ratio for adding ``new_component`` to ``state``."""
    if state.K >= prior.k_max:
        raise CapacityError(f"cannot add a subhazard at K = k_max = {prior.k_max}")
    lr = prior.log_prior_k(state.K + 1) - prior.log_prior_k(state.K)
    lr += log_prior_component(
        new_component, effective_omega(state, prior), effective_sigma_beta(state, prior), prior
    )
    return lr


def truncated_poisson_pmf(xi: float, k_max: int) -> np.ndarray:
    """Masses of the zero-truncated Poisson on ``1..k_max`` (renormalised)."""
    ks = np.arange(1, k_max + 1)
    logw = ks * math.log(xi) - np.array([math.lgamma(k + 1) for k in ks])
    w = np.exp(logw - logw.max())
    return w / w.sum()
