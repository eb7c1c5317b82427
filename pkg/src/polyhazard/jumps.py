"""Birth, death and swap moves over the subhazard structure, plus hyperparameter updates.

Jump events arrive at constant capped rates and are thinned by a balancing
function of the Metropolis-Hastings-Green ratio, so the resulting jump
process leaves the posterior invariant.  Velocities are uniform auxiliary
variables: new coordinates receive uniform signs and removed ones are
dropped, so they cancel from every ratio.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .model import (
    CapacityError,
    Component,
    Dataset,
    ModelState,
    PriorConfig,
    effective_omega,
    effective_sigma_beta,
    log_prior_component,
    log_prior_structure,
    normal_logpdf,
)
from .survdist import CANDIDATES, LOG2, DistKind

LOG_LOG2 = math.log(LOG2)


class Balancing(enum.Enum):
    METROPOLIS = "metropolis"
    BARKER = "barker"

    def __call__(self, a):
        """Evaluate ``b(a)``; satisfies ``b(a) = a * b(1 / a)``."""
        a = np.asarray(a, dtype=float)
        if self is Balancing.METROPOLIS:
            out = np.minimum(1.0, a)
        else:
            out = np.where(np.isinf(a), 1.0, a / (1.0 + a))
        return out if out.ndim else float(out)

    def from_log(self, log_a: float) -> float:
        if math.isnan(log_a):
            return 0.0
        if self is Balancing.METROPOLIS:
            return math.exp(min(0.0, log_a))
        if log_a >= 0:
            return 1.0 / (1.0 + math.exp(-log_a))
        e = math.exp(log_a)
        return e / (1.0 + e)


@dataclass
class JumpRates:
    """Rate caps of the jump clocks.

    ``birth_death`` and ``swap`` are the thinning caps; ``k`` and ``k_swap``
    multiply the balancing function, so acceptance is ``(k / cap) * b(a)``.
    """

    birth_death: float = 5.0
    swap: float = 5.0
    hyper: float = 1.0
    k: Optional[float] = None
    k_swap: Optional[float] = None

    def __post_init__(self):
        if self.k is None:
            self.k = self.birth_death
        if self.k_swap is None:
            self.k_swap = self.swap
        for name in ("birth_death", "swap", "hyper", "k", "k_swap"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.k > self.birth_death or self.k_swap > self.swap:
            raise ValueError("balancing multipliers must not exceed their thinning caps")

    @classmethod
    def from_combined(cls, total: float, probs=(1 / 3, 1 / 3, 1 / 3)) -> "JumpRates":
        """Split one jump rate across (birth-death, swap, hyperparameter) events."""
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (3,) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0):
            raise ValueError("probs must be three nonnegative weights summing to one")
        bd, sw, hy = (float(total * p) for p in probs)
        return cls(birth_death=bd, swap=sw, hyper=hy)

    def to_dict(self) -> dict:
        return {
            "birth_death": self.birth_death,
            "swap": self.swap,
            "hyper": self.hyper,
            "k": self.k,
            "k_swap": self.k_swap,
        }


@dataclass
class MoveOutcome:
    move: str
    accepted: bool
    state: Optional[ModelState] = None
    log_ratio: float = math.nan
    feasible: bool = True


# ---------------------------------------------------------------------------
# ratios


def log_mhg_ratio(
    state: ModelState,
    candidate: ModelState,
    data: Dataset,
    prior: PriorConfig,
    log_q_fwd: float = 0.0,
    log_q_rev: float = 0.0,
    log_jacobian: float = 0.0,
    log_lik: Optional[tuple] = None,
    log_prior_diff: Optional[float] = None,
) -> float:
    """Log Metropolis-Hastings-Green ratio of moving ``state`` to ``candidate``.

    Both states are evaluated at their anchor positions.  ``log_lik`` may
    carry precomputed ``(state, candidate)`` log-likelihoods and
    ``log_prior_diff`` the candidate-minus-state log prior.
    """
    if log_lik is None:
        ll0 = _loglik(state, data)
        ll1 = _loglik(candidate, data)
    else:
        ll0, ll1 = log_lik
    if log_prior_diff is None:
        log_prior_diff = log_prior_structure(candidate, prior) - log_prior_structure(state, prior)
    out = (ll1 - ll0) + log_prior_diff + log_q_rev - log_q_fwd + log_jacobian
    return out if math.isfinite(out) or out == -math.inf else math.nan


def mhg_ratio(state, candidate, data, prior, log_q_fwd=0.0, log_q_rev=0.0, log_jacobian=0.0) -> float:
    return math.exp(min(log_mhg_ratio(state, candidate, data, prior, log_q_fwd, log_q_rev, log_jacobian), 700.0))


def _loglik(state: ModelState, data: Dataset) -> float:
    return _kernels.loglik(state.kinds, state.theta, state.gamma, data.X, data.logy, data.events)


class _TermCache:
    """Per-subhazard likelihood terms at a fixed position.

    Candidates differing in one subhazard only recompute that row.
    """

    def __init__(self, state: ModelState, data: Dataset):
        self.data = data
        self.empty = data.n == 0
        if self.empty:
            self.loglik = 0.0
            return
        self.logh, self.H = _kernels.component_terms(state.kinds, state.theta, state.gamma, data.X, data.logy)
        self.loglik = _kernels.loglik_from_terms(self.logh, self.H, data.events)

    def _row(self, comp: Component):
        d = self.data
        kinds = np.array([int(comp.kind)], dtype=np.int64)
        return _kernels.component_terms(kinds, comp.theta[None, :], comp.gamma[None, :], d.X, d.logy)

    def with_row(self, comp: Component, index: int) -> float:
        if self.empty:
            return 0.0
        lh, H = self._row(comp)
        logh = np.concatenate((self.logh[:index], lh, self.logh[index:]))
        HH = np.concatenate((self.H[:index], H, self.H[index:]))
        return _kernels.loglik_from_terms(logh, HH, self.data.events)

    def without_row(self, index: int) -> float:
        if self.empty:
            return 0.0
        keep = [i for i in range(self.logh.shape[0]) if i != index]
        return _kernels.loglik_from_terms(self.logh[keep], self.H[keep], self.data.events)

    def replace_row(self, comp: Component, index: int) -> float:
        if self.empty:
            return 0.0
        lh, H = self._row(comp)
        logh = self.logh.copy()
        HH = self.H.copy()
        logh[index] = lh[0]
        HH[index] = H[0]
        return _kernels.loglik_from_terms(logh, HH, self.data.events)


# ---------------------------------------------------------------------------
# birth and death


def propose_birth(state: ModelState, prior: PriorConfig, rng: np.random.Generator):
    """Draw a new subhazard from the prior given the current hyperparameters.

    Returns ``(component, log proposal density)``.
    """
    if state.K >= prior.k_max:
        raise CapacityError(f"cannot add a subhazard at K = k_max = {prior.k_max}")
    p = state.p
    omega = effective_omega(state, prior)
    sb = effective_sigma_beta(state, prior)
    kind = CANDIDATES[int(rng.integers(len(CANDIDATES)))]
    gamma = rng.random(p) < omega
    theta = np.zeros(p + 2)
    theta[0] = rng.normal(0.0, prior.sigma_alpha)
    theta[1] = rng.normal(0.0, prior.sigma_beta0)
    theta[2:][gamma] = rng.normal(0.0, sb, size=int(gamma.sum()))
    v = rng.choice((-1.0, 1.0), size=p + 2)
    v[2:][~gamma] = 0.0
    comp = Component(kind, theta, gamma, v)
    return comp, log_prior_component(comp, omega, sb, prior)


def birth_death_event(
    state: ModelState,
    data: Dataset,
    prior: PriorConfig,
    rates: JumpRates,
    rng: np.random.Generator,
    balancing: Balancing = Balancing.METROPOLIS,
) -> MoveOutcome:
    """One firing of the birth-death clock, at the state's anchor position.

    Births insert the new subhazard at a uniform position and deaths remove
    a uniformly chosen one, so the labelled target stays exchangeable.
    """
    K = state.K
    scale = rates.k / rates.birth_death if rates.birth_death > 0 else 0.0
    cache = _TermCache(state, data)
    if rng.random() < 0.5:
        if K >= prior.k_max:
            return MoveOutcome("birth", False, feasible=False)
        comp, log_q = propose_birth(state, prior, rng)
        index = int(rng.integers(K + 1))
        cand = state.with_component(comp, index)
        ll1 = cache.with_row(comp, index)
        log_a = log_mhg_ratio(
            state,
            cand,
            data,
            prior,
            log_q_fwd=log_q - math.log(K + 1),
            log_q_rev=-math.log(K + 1),
            log_lik=(cache.loglik, ll1),
            log_prior_diff=prior.log_prior_k(K + 1) - prior.log_prior_k(K) + log_q,
        )
        move = "birth"
    else:
        if K <= 1:
            return MoveOutcome("death", False, feasible=False)
        index = int(rng.integers(K))
        comp = state.component(index)
        cand = state.without_component(index)
        ll1 = cache.without_row(index)
        log_q_rev = log_prior_component(
            comp, effective_omega(state, prior), effective_sigma_beta(state, prior), prior
        ) - math.log(K)
        log_a = log_mhg_ratio(
            state,
            cand,
            data,
            prior,
            log_q_fwd=-math.log(K),
            log_q_rev=log_q_rev,
            log_lik=(cache.loglik, ll1),
            log_prior_diff=prior.log_prior_k(K - 1) - prior.log_prior_k(K) - (log_q_rev + math.log(K)),
        )
        move = "death"
    accept = rng.random() < scale * balancing.from_log(log_a)
    return MoveOutcome(move, accept, cand if accept else None, log_a)


# ---------------------------------------------------------------------------
# swaps


def median_match(kind_from, nu: float, mu: float, beta):
    """Switch distribution while preserving the median at the reference profile.

    Returns ``(kind_to, nu, mu_new, beta_new, log|Jacobian|)``; the Jacobian
    is taken in the sampled coordinates ``(alpha, log mu, beta)``.
    """
    kind_from = DistKind.parse(kind_from)
    beta = -np.asarray(beta, dtype=float)
    if kind_from is DistKind.LOGLOGISTIC:
        return DistKind.WEIBULL, nu, mu ** (-nu) * LOG2, beta, math.log(nu)
    return DistKind.LOGLOGISTIC, nu, (LOG2 / mu) ** (1.0 / nu), beta, -math.log(nu)


def _median_match_row(kind: DistKind, row: np.ndarray, v_row: np.ndarray):
    alpha, beta0 = row[0], row[1]
    nu = math.exp(alpha)
    new = row.copy()
    new_v = v_row.copy()
    if kind is DistKind.LOGLOGISTIC:
        new[1] = -nu * beta0 + LOG_LOG2
        log_jac = alpha
        to = DistKind.WEIBULL
    else:
        new[1] = (LOG_LOG2 - beta0) / nu
        log_jac = -alpha
        to = DistKind.LOGLOGISTIC
    new[2:] = -row[2:]
    new_v[2:] = -v_row[2:]
    new[2:][new[2:] == 0.0] = 0.0  # keep stuck coefficients at +0.0
    new_v[2:][new_v[2:] == 0.0] = 0.0
    return to, new, new_v, log_jac


def swap_event(
    state: ModelState,
    data: Dataset,
    prior: PriorConfig,
    rates: JumpRates,
    rng: np.random.Generator,
    balancing: Balancing = Balancing.METROPOLIS,
    mode: str = "median",
) -> MoveOutcome:
    """Re-type one uniformly chosen subhazard without changing ``K``.

    ``mode="median"`` uses the median-matching bijection; ``"independent"``
    redraws shape and intercept from their priors (kept for comparison).
    """
    scale = rates.k_swap / rates.swap if rates.swap > 0 else 0.0
    k = int(rng.integers(state.K))
    kind = state.dists[k]
    cand = state.copy()
    if mode == "median":
        to, row, v_row, log_jac = _median_match_row(kind, state.theta[k], state.v[k])
        log_q_fwd = log_q_rev = 0.0
    elif mode == "independent":
        to = DistKind.WEIBULL if kind is DistKind.LOGLOGISTIC else DistKind.LOGLOGISTIC
        row = state.theta[k].copy()
        row[0] = rng.normal(0.0, prior.sigma_alpha)
        row[1] = rng.normal(0.0, prior.sigma_beta0)
        v_row = state.v[k].copy()
        log_jac = 0.0
        log_q_fwd = normal_logpdf(float(row[0]), prior.sigma_alpha) + normal_logpdf(float(row[1]), prior.sigma_beta0)
        log_q_rev = normal_logpdf(float(state.theta[k, 0]), prior.sigma_alpha) + normal_logpdf(
            float(state.theta[k, 1]), prior.sigma_beta0
        )
    else:
        raise ValueError(f"unknown swap mode {mode!r}")
    cand.dists[k] = to
    cand.theta[k] = row
    cand.v[k] = v_row
    cache = _TermCache(state, data)
    ll1 = cache.replace_row(Component(to, row, state.gamma[k], v_row), k)
    # only shape and intercept priors change; slopes keep their magnitudes
    log_prior_diff = 0.0
    for c, sd in ((0, prior.sigma_alpha), (1, prior.sigma_beta0)):
        log_prior_diff += normal_logpdf(float(row[c]), sd) - normal_logpdf(float(state.theta[k, c]), sd)
    log_a = log_mhg_ratio(
        state, cand, data, prior, log_q_fwd, log_q_rev, log_jac, log_lik=(cache.loglik, ll1), log_prior_diff=log_prior_diff
    )
    accept = rng.random() < scale * balancing.from_log(log_a)
    return MoveOutcome("swap", accept, cand if accept else None, log_a)


# ---------------------------------------------------------------------------
# hyperparameters


def gibbs_omega(state: ModelState, prior: PriorConfig, rng: np.random.Generator) -> float:
    """Draw the inclusion probability from its Beta full conditional."""
    n_in = int(state.gamma.sum())
    return float(rng.beta(prior.a + n_in, prior.b + state.gamma.size - n_in))


def log_sigma_target(z1: float, log_z2: float, included_beta: np.ndarray) -> float:
    """Log density of ``(z1, log z2)`` given the included coefficients."""
    z2 = math.exp(log_z2)
    # N(0, 1) for z1, InvGamma(1/2, 1/2) for z2, plus the log-scale Jacobian
    lp = -0.5 * z1 * z1 + 0.5 * math.log(0.5) - math.lgamma(0.5) - 1.5 * log_z2 - 0.5 / z2 + log_z2
    if included_beta.size:
        sb = abs(z1) * math.sqrt(z2)
        if sb <= 0.0:
            return -math.inf
        lp += float(np.sum(normal_logpdf(included_beta, sb)))
    return lp


class SigmaAdapter:
    """Robbins-Monro adaptive random-walk proposal for ``(z1, log z2)``.

    Global scale, mean and covariance follow the usual stochastic
    approximation with step ``n ** -0.6`` towards acceptance ``target``.
    Mean/covariance adaptation starts after ``warmup`` updates.
    """

    def __init__(self, target: float = 0.234, decay: float = 0.6, warmup: int = 100):
        self.target = target
        self.decay = decay
        self.warmup = warmup
        self.n = 0
        self.log_scale = math.log(2.38**2 / 2.0)
        self.mean = np.zeros(2)
        self.cov = np.eye(2)
        self.accepted = 0

    def proposal_chol(self) -> np.ndarray:
        c = math.exp(self.log_scale) * (self.cov + 1e-8 * np.eye(2))
        return np.linalg.cholesky(c)

    def update(self, x: np.ndarray, accept_prob: float) -> None:
        self.n += 1
        step = self.n ** (-self.decay)
        self.log_scale = float(np.clip(self.log_scale + step * (accept_prob - self.target), -20.0, 10.0))
        if self.n > self.warmup:
            diff = x - self.mean
            self.mean = self.mean + step * diff
            self.cov = self.cov + step * (np.outer(diff, diff) - self.cov)
        else:
            self.mean = self.mean + (x - self.mean) / self.n

    def to_dict(self) -> dict:
        return {
            "updates": self.n,
            "accepted": self.accepted,
            "acceptance_rate": self.accepted / self.n if self.n else None,
            "log_scale": self.log_scale,
            "cov": self.cov.tolist(),
        }


def rwm_sigma(state: ModelState, adapter: SigmaAdapter, rng: np.random.Generator, theta=None):
    """One adaptive random-walk step on ``(z1, log z2)``; returns ``(z1, z2)``."""
    theta = state.theta if theta is None else theta
    included = theta[:, 2:][state.gamma]
    x = np.array([state.z1, math.log(state.z2)])
    prop = x + adapter.proposal_chol() @ rng.standard_normal(2)
    lp_old = log_sigma_target(x[0], x[1], included)
    lp_new = log_sigma_target(prop[0], prop[1], included)
    log_acc = lp_new - lp_old
    acc_prob = 1.0 if log_acc >= 0 else math.exp(log_acc) if math.isfinite(log_acc) else 0.0
    if rng.random() < acc_prob:
        x = prop
        adapter.accepted += 1
    adapter.update(x, acc_prob)
    return float(x[0]), float(math.exp(x[1]))
