"""Reference samplers, toy targets with exact answers, and data simulators.

``reference_rjmcmc`` is a plain discrete-time reversible-jump sampler for
the same posterior as the continuous-time engine.  Its within-model moves
are fixed-scale random-walk Metropolis; trans-dimensional moves reuse the
jump proposals of :mod:`polyhazard.jumps` with acceptance ``min(1, a)``.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import survdist
from .jumps import Balancing, JumpRates, birth_death_event, gibbs_omega, log_sigma_target, swap_event
from .model import (
    Dataset,
    ModelState,
    PriorConfig,
    effective_omega,
    effective_sigma_beta,
    log_likelihood,
    log_prior_continuous,
    model_key,
    new_state,
    truncated_poisson_pmf,
)
from .survdist import DistKind

RWM_SCALE = 0.2


# ---------------------------------------------------------------------------
# reference reversible-jump sampler


@dataclass
class OracleChain:
    """Per-iteration submodel counts and per-submodel parameter traces."""

    iterations: int
    counts: Counter
    traces: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    omega: list = field(default_factory=list)
    sigma_beta: list = field(default_factory=list)

    def probabilities(self) -> dict:
        n = sum(self.counts.values())
        return {k: c / n for k, c in sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))}


def _log_post_cont(state: ModelState, data: Dataset, prior: PriorConfig, theta) -> float:
    try:
        ll = log_likelihood(state, data, theta)
    except Exception:
        return -math.inf
    return ll + log_prior_continuous(theta, state.gamma, effective_sigma_beta(state, prior), prior)


def _rwm_rows(state, data, prior, rng, lp, acc):
    """Fixed-scale random-walk Metropolis on each subhazard's active coordinates."""
    for k in range(state.K):
        active = np.concatenate(([True, True], state.gamma[k]))
        prop = state.theta.copy()
        prop[k, active] += RWM_SCALE * rng.standard_normal(int(active.sum()))
        lp_new = _log_post_cont(state, data, prior, prop)
        acc["rwm"][0] += 1
        if math.log(rng.random()) < lp_new - lp:
            state.theta, lp = prop, lp_new
            acc["rwm"][1] += 1
    return lp


def _toggle_inclusion(state, data, prior, rng, lp, acc):
    """Add or delete one slope, proposing added values from the slab."""
    if state.p == 0:
        return state, lp
    k = int(rng.integers(state.K))
    j = int(rng.integers(state.p))
    omega = effective_omega(state, prior)
    sb = effective_sigma_beta(state, prior)
    cand = state.copy()
    if state.gamma[k, j]:
        cand.gamma[k, j] = False
        cand.theta[k, 2 + j] = 0.0
        cand.v[k, 2 + j] = 0.0
        # slab density cancels against the reverse proposal density
        log_odds = math.log1p(-omega) - math.log(omega)
    else:
        cand.gamma[k, j] = True
        cand.theta[k, 2 + j] = rng.normal(0.0, sb)
        cand.v[k, 2 + j] = 1.0
        log_odds = math.log(omega) - math.log1p(-omega)
    lp_new = _log_post_cont(cand, data, prior, cand.theta)
    # Gaussian slab terms appear in both lp values; remove the one of the toggled slope
    beta = cand.theta[k, 2 + j] if cand.gamma[k, j] else state.theta[k, 2 + j]
    slab = -0.5 * (beta / sb) ** 2 - math.log(sb) - 0.5 * math.log(2.0 * math.pi)
    log_a = lp_new - lp + log_odds + (-slab if cand.gamma[k, j] else slab)
    acc["toggle"][0] += 1
    if math.log(rng.random()) < log_a:
        acc["toggle"][1] += 1
        return cand, lp_new
    return state, lp


def _rwm_sigma_fixed(state: ModelState, rng, scale: float = RWM_SCALE):
    included = state.theta[:, 2:][state.gamma]
    x = np.array([state.z1, math.log(state.z2)])
    prop = x + scale * rng.standard_normal(2)
    log_a = log_sigma_target(prop[0], prop[1], included) - log_sigma_target(x[0], x[1], included)
    if math.log(rng.random()) < log_a:
        x = prop
    return float(x[0]), float(math.exp(x[1]))


def reference_rjmcmc(
    prior: PriorConfig,
    data: Dataset,
    iterations: int,
    rng: np.random.Generator,
    swap_mode: str = "median",
    init_dists=("W",),
    record=None,
) -> OracleChain:
    """Discrete-time reversible-jump MCMC for the polyhazard posterior.

    Each iteration runs random-walk Metropolis on every subhazard, one
    slope add/delete, one birth-or-death, one swap and a hyperparameter
    update.  ``record`` names the submodels whose (ordered) parameter rows
    are traced; by default every submodel is.
    """
    state = new_state(list(init_dists), data.p, omega=0.5)
    n_ev = int(data.event.sum())
    if n_ev:
        state.theta[:, 1] = math.log(n_ev / float(data.time.sum()))
    full = JumpRates(birth_death=1.0, swap=1.0, hyper=1.0)
    acc = {m: [0, 0] for m in ("rwm", "toggle", "birth", "death", "swap")}
    counts = Counter()
    traces = defaultdict(list)
    omegas, sigmas = [], []
    lp = _log_post_cont(state, data, prior, state.theta)
    for _ in range(iterations):
        lp = _rwm_rows(state, data, prior, rng, lp, acc)
        state, lp = _toggle_inclusion(state, data, prior, rng, lp, acc)
        for move in (birth_death_event, swap_event):
            kwargs = {"mode": swap_mode} if move is swap_event else {}
            out = move(state, data, prior, full, rng, Balancing.METROPOLIS, **kwargs)
            if out.feasible:
                acc[out.move][0] += 1
            if out.accepted:
                acc[out.move][1] += 1
                state = out.state
                lp = _log_post_cont(state, data, prior, state.theta)
        if prior.fixed_omega is None:
            state.omega = gibbs_omega(state, prior, rng)
        if prior.fixed_sigma_beta is None:
            state.z1, state.z2 = _rwm_sigma_fixed(state, rng)
            lp = _log_post_cont(state, data, prior, state.theta)
        key = state.model_key
        counts[key] += 1
        if record is None or key in record:
            traces[key].append(_ordered_row_vector(state))
        omegas.append(state.omega)
        sigmas.append(state.sigma_beta)
    return OracleChain(
        iterations,
        counts,
        {k: np.array(v) for k, v in traces.items()},
        {m: (c / a if a else None) for m, (a, c) in acc.items()},
        omegas,
        sigmas,
    )


def _ordered_row_vector(state: ModelState) -> np.ndarray:
    """Parameter rows flattened after Weibull-first, ascending-shape relabelling."""
    order = sorted(range(state.K), key=lambda k: (int(state.dists[k]), state.theta[k, 0], k))
    return state.theta[order].reshape(-1).copy()


def ordered_sample_vector(sample: dict) -> np.ndarray:
    """Same flattening for an engine snapshot dict."""
    K = len(sample["dists"])
    kinds = [DistKind.parse(d) for d in sample["dists"]]
    order = sorted(range(K), key=lambda k: (int(kinds[k]), sample["alpha"][k], k))
    rows = [[sample["alpha"][k], sample["beta0"][k], *sample["beta"][k]] for k in order]
    return np.array(rows, dtype=float).reshape(-1)


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of the mean of each column by batch means."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0] // n_batches * n_batches
    if n < n_batches:
        raise ValueError("too few draws for batch means")
    means = x[:n].reshape(n_batches, -1, x.shape[1]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


# ---------------------------------------------------------------------------
# fixed-dimension evidence route


def _within_model_draws(dists, data, prior, iterations, rng, burn=0.2):
    state = new_state(list(dists), data.p)
    n_ev = int(data.event.sum())
    if n_ev:
        state.theta[:, 1] = math.log(n_ev / float(data.time.sum()) / state.K)
    acc = {"rwm": [0, 0]}
    lp = _log_post_cont(state, data, prior, state.theta)
    out = np.empty((iterations, state.K * 2))
    for i in range(iterations):
        lp = _rwm_rows(state, data, prior, rng, lp, acc)
        out[i] = _ordered_row_vector(state)
    return out[int(burn * iterations) :]


def _is_ordered(dists, rows):
    """Rows are sorted by ascending shape within each distribution kind."""
    ok = np.ones(rows.shape[0], dtype=bool)
    for i in range(len(dists) - 1):
        if dists[i] == dists[i + 1]:
            ok &= rows[:, 2 * i] <= rows[:, 2 * (i + 1)]
    return ok


def log_evidence(dists, data: Dataset, prior: PriorConfig, rng, mcmc_iterations=20000, draws=200000) -> tuple:
    """Log marginal likelihood of one labelled submodel without covariates.

    Within-model random-walk draws (relabelled so shapes ascend within a
    kind) fit a multivariate t proposal; importance sampling over the
    ordered region, times the number of relabellings, gives the integral
    over the whole parameter space.  Returns ``(log Z, relative SE)``.
    """
    if data.p != 0:
        raise ValueError("evidence route supports covariate-free data only")
    dists = sorted((DistKind.parse(d) for d in dists), key=int)
    K = len(dists)
    post = _within_model_draws(dists, data, prior, mcmc_iterations, rng)
    mean = post.mean(axis=0)
    cov = np.cov(post, rowvar=False).reshape(2 * K, 2 * K) * 1.5
    q = stats.multivariate_t(loc=mean, shape=cov, df=4, seed=rng)
    x = np.atleast_2d(q.rvs(size=draws))
    ordered = _is_ordered(dists, x)
    state = new_state(dists, 0)
    logw = np.full(draws, -np.inf)
    for i in np.flatnonzero(ordered):
        theta = x[i].reshape(K, 2)
        logw[i] = _log_post_cont(state, data, prior, theta)
    logw[ordered] -= q.logpdf(x[ordered])
    m = np.max(logw)
    w = np.exp(logw - m)
    n_perm = math.prod(math.factorial(c) for c in Counter(dists).values())
    log_z = m + math.log(w.mean()) + math.log(n_perm)
    rel_se = w.std() / (w.mean() * math.sqrt(draws))
    return log_z, rel_se


def evidence_probabilities(data: Dataset, prior: PriorConfig, rng, **kw) -> dict:
    """Posterior submodel probabilities from per-submodel evidences (no trans-dimensional moves)."""
    from itertools import combinations_with_replacement

    logp = {}
    for K in range(1, prior.k_max + 1):
        for combo in combinations_with_replacement((DistKind.WEIBULL, DistKind.LOGLOGISTIC), K):
            log_z, _ = log_evidence(combo, data, prior, rng, **kw)
            # labelled arrangements of the multiset: K! over multiplicities, absorbed into Z above
            n_lab = math.factorial(K) / math.prod(math.factorial(c) for c in Counter(combo).values())
            logp[model_key(combo)] = prior.log_prior_k(K) - K * math.log(2) + math.log(n_lab) + log_z
    m = max(logp.values())
    total = sum(math.exp(v - m) for v in logp.values())
    return {k: math.exp(v - m) / total for k, v in sorted(logp.items(), key=lambda kv: -kv[1])}


# ---------------------------------------------------------------------------
# toy targets with exact answers


def enumerate_posterior(data: Dataset, prior: PriorConfig, nodes: int = 12) -> dict:
    """Submodel probabilities by tensor Gauss-Hermite quadrature of each evidence.

    For covariate-free data and small ``k_max`` (the integral has ``2K``
    dimensions) this is exact up to quadrature error, which vanishes
    quickly for tight priors.
    """
    from itertools import combinations_with_replacement, product

    if data.p != 0:
        raise ValueError("enumeration supports covariate-free data only")
    if prior.k_max > 2:
        raise ValueError("enumeration is limited to k_max <= 2")
    x, w = np.polynomial.hermite.hermgauss(nodes)
    logw = np.log(w) - 0.5 * math.log(math.pi)
    scale = np.array([prior.sigma_alpha, prior.sigma_beta0]) * math.sqrt(2.0)
    logp = {}
    for K in range(1, prior.k_max + 1):
        for combo in combinations_with_replacement((DistKind.WEIBULL, DistKind.LOGLOGISTIC), K):
            state = new_state(combo, 0)
            terms = []
            for idx in product(range(nodes), repeat=2 * K):
                theta = (x[list(idx)].reshape(K, 2) * scale).copy()
                terms.append(log_likelihood(state, data, theta) + float(logw[list(idx)].sum()))
            log_z = float(np.logaddexp.reduce(terms))
            n_lab = math.factorial(K) / math.prod(math.factorial(c) for c in Counter(combo).values())
            logp[model_key(combo)] = prior.log_prior_k(K) - K * math.log(2) + math.log(n_lab) + log_z
    m = max(logp.values())
    total = sum(math.exp(v - m) for v in logp.values())
    return {k: math.exp(v - m) / total for k, v in sorted(logp.items(), key=lambda kv: -kv[1])}


def prior_k_distribution(prior: PriorConfig) -> dict:
    """Exact prior distribution of ``K``."""
    pm = truncated_poisson_pmf(prior.xi, prior.k_max)
    return {k + 1: float(p) for k, p in enumerate(pm)}


@dataclass
class SpikeSlabToy:
    """One coefficient with a Gaussian likelihood and a spike-and-slab prior.

    Target: ``exp(-(b - m)^2 / (2 s^2))`` times ``(1 - omega) delta_0 +
    omega N(b; 0, slab_sd^2)``.
    """

    m: float = 0.8
    s: float = 0.7
    omega: float = 0.5
    slab_sd: float = 2.0

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the continuous potential (likelihood plus slab)."""
        return (x - self.m) / self.s**2 + x / self.slab_sd**2

    def log_lik(self, b: float) -> float:
        return -0.5 * ((b - self.m) / self.s) ** 2

    def inclusion_probability(self) -> float:
        """Closed-form posterior probability that the coefficient is nonzero."""
        # integral of exp(loglik) against the slab over exp(loglik(0))
        log_marg = (
            math.log(self.s)
            + 0.5 * math.log(2.0 * math.pi)
            + stats.norm.logpdf(self.m, 0.0, math.hypot(self.s, self.slab_sd))
            - self.log_lik(0.0)
        )
        log_odds = math.log(self.omega) - math.log1p(-self.omega) + log_marg
        return 1.0 / (1.0 + math.exp(-log_odds))

    def slab_mean(self) -> float:
        """Posterior mean of the coefficient given inclusion."""
        prec = 1.0 / self.s**2 + 1.0 / self.slab_sd**2
        return self.m / self.s**2 / prec

    def slab_density_at_zero(self) -> float:
        return 1.0 / (self.slab_sd * math.sqrt(2.0 * math.pi))


def reference_spike_slab(toy: SpikeSlabToy, iterations: int, rng: np.random.Generator, step: float = 1.0) -> float:
    """Inclusion frequency from add/delete plus random-walk Metropolis on the toy."""
    b, included = 0.0, False
    hits = 0
    lo = math.log(toy.omega) - math.log1p(-toy.omega)
    for _ in range(iterations):
        if included:
            # delete: proposal is the slab, which cancels
            log_a = toy.log_lik(0.0) - toy.log_lik(b) - lo
            if math.log(rng.random()) < log_a:
                b, included = 0.0, False
        else:
            cand = rng.normal(0.0, toy.slab_sd)
            log_a = toy.log_lik(cand) - toy.log_lik(0.0) + lo
            if math.log(rng.random()) < log_a:
                b, included = cand, True
        if included:
            cand = b + step * rng.standard_normal()
            log_a = (
                toy.log_lik(cand)
                - toy.log_lik(b)
                - 0.5 * (cand / toy.slab_sd) ** 2
                + 0.5 * (b / toy.slab_sd) ** 2
            )
            if math.log(rng.random()) < log_a:
                b = cand
        hits += included
    return hits / iterations


# ---------------------------------------------------------------------------
# simulators


def simulate_supplement_data(n: int, rng: np.random.Generator) -> Dataset:
    """Event time ``min(LogNormal(0, 0.5), Exp(1))``, censoring ``Exp(0.5)``, one Bernoulli(0.5) covariate."""
    if n < 1:
        raise ValueError("n must be at least 1")
    y1 = rng.lognormal(0.0, 0.5, size=n)
    y2 = rng.exponential(1.0, size=n)
    y = np.minimum(y1, y2)
    c = rng.exponential(1.0 / 0.5, size=n)
    x = (rng.random(n) < 0.5).astype(float)
    return Dataset.from_arrays(np.minimum(y, c), (y <= c).astype(int), x[:, None], names=["x1"])


def supplement_event_probability() -> float:
    """``P(Y <= C)`` under the supplement generator, by quadrature."""
    from scipy import integrate

    # density of Y = min(Y1, Y2) times survival of the censoring time
    def f(y):
        s1 = stats.lognorm.sf(y, 0.5)
        f1 = stats.lognorm.pdf(y, 0.5)
        return (f1 * math.exp(-y) + s1 * math.exp(-y)) * math.exp(-0.5 * y)

    return integrate.quad(f, 0.0, math.inf)[0]


def simulate_polyhazard(
    dists,
    nus,
    mus,
    n: int,
    rng: np.random.Generator,
    censor_rate: float = 0.0,
    X=None,
    betas=None,
) -> Dataset:
    """Latent competing risks: event time is the minimum over independent subhazard draws.

    ``mus`` are baseline locations; with covariates ``X`` each subhazard's
    location is ``mu * exp(X @ beta)``.  Censoring is exponential with
    ``censor_rate`` (0 disables it).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    dists = [DistKind.parse(d) for d in dists]
    if not (len(dists) == len(nus) == len(mus)):
        raise ValueError("dists, nus and mus must have equal length")
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    y = np.full(n, np.inf)
    for k, (d, nu, mu) in enumerate(zip(dists, nus, mus)):
        loc = np.full(n, float(mu))
        if betas is not None and X.shape[1]:
            loc = loc * np.exp(X @ np.asarray(betas[k], dtype=float))
        y = np.minimum(y, survdist.sample(d, nu, loc, rng))
    if censor_rate > 0:
        c = rng.exponential(1.0 / censor_rate, size=n)
        event = (y <= c).astype(int)
        y = np.minimum(y, c)
    else:
        event = np.ones(n, dtype=int)
    return Dataset.from_arrays(y, event, X, standardize=False)


def kaplan_meier(time, event):
    """Kaplan-Meier estimate at the distinct event times: ``(times, S)``."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    order = np.argsort(time, kind="stable")
    time, event = time[order], event[order]
    uniq = np.unique(time[event == 1])
    at_risk = time.size - np.searchsorted(time, uniq, side="left")
    deaths = np.array([np.sum((time == t) & (event == 1)) for t in uniq])
    return uniq, np.cumprod(1.0 - deaths / at_risk)
