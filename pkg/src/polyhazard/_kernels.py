"""Compiled polyhazard likelihood kernels.

These fuse the per-observation subhazard terms of :mod:`polyhazard.survdist`
into single loops; the tests check them against the numpy reference.
Distribution codes follow ``DistKind`` (0 Weibull, 1 log-logistic).
Parameter rows are laid out as ``[alpha, beta0, beta_1, ..., beta_p]``.
"""

import math

import numpy as np
from numba import njit

EXP_CLAMP = 700.0


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def _sigmoid_pair(x):
    # returns (s, 1 - s) without cancellation
    if x >= 0.0:
        e = math.exp(-x)
        return 1.0 / (1.0 + e), e / (1.0 + e)
    e = math.exp(x)
    return e / (1.0 + e), 1.0 / (1.0 + e)


@njit(cache=True)
def _log_location(theta, gamma, X, k, i):
    lm = theta[k, 1]
    for j in range(X.shape[1]):
        if gamma[k, j]:
            lm += X[i, j] * theta[k, 2 + j]
    return lm


@njit(cache=True)
def component_terms(kinds, theta, gamma, X, logy):
    """Per-subhazard ``log h`` and ``H`` at every observation, shape (K, n)."""
    K = theta.shape[0]
    n = logy.shape[0]
    logh = np.empty((K, n))
    H = np.empty((K, n))
    for k in range(K):
        alpha = theta[k, 0]
        nu = math.exp(min(alpha, EXP_CLAMP))
        for i in range(n):
            lm = _log_location(theta, gamma, X, k, i)
            if kinds[k] == 0:
                logh[k, i] = lm + alpha + (nu - 1.0) * logy[i]
                H[k, i] = math.exp(min(lm + nu * logy[i], EXP_CLAMP))
            else:
                rel = logy[i] - lm
                sp = _softplus(nu * rel)
                logh[k, i] = alpha - lm + (nu - 1.0) * rel - sp
                H[k, i] = sp
    return logh, H


@njit(cache=True)
def loglik_from_terms(logh, H, events):
    K, n = logh.shape
    total = 0.0
    for i in range(n):
        if events[i]:
            m = -np.inf
            for k in range(K):
                if logh[k, i] > m:
                    m = logh[k, i]
            s = 0.0
            for k in range(K):
                s += math.exp(logh[k, i] - m)
            total += m + math.log(s)
        for k in range(K):
            total -= H[k, i]
    return total


@njit(cache=True)
def observation_loglik(logh, H, events):
    K, n = logh.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        if events[i]:
            m = -np.inf
            for k in range(K):
                if logh[k, i] > m:
                    m = logh[k, i]
            s = 0.0
            for k in range(K):
                s += math.exp(logh[k, i] - m)
            acc = m + math.log(s)
        for k in range(K):
            acc -= H[k, i]
        out[i] = acc
    return out


@njit(cache=True)
def loglik_and_grad(kinds, theta, gamma, X, logy, events):
    """Log-likelihood and its gradient over the parameter matrix.

    Gradient entries of excluded coefficients are left at zero.
    """
    K = theta.shape[0]
    n = logy.shape[0]
    p = X.shape[1]
    grad = np.zeros(theta.shape)
    logh = np.empty(K)
    dlh_da = np.empty(K)
    dlh_dl = np.empty(K)
    dH_da = np.empty(K)
    dH_dl = np.empty(K)
    nus = np.empty(K)
    for k in range(K):
        nus[k] = math.exp(min(theta[k, 0], EXP_CLAMP))
    total = 0.0
    for i in range(n):
        ly = logy[i]
        lse = 0.0
        for k in range(K):
            alpha = theta[k, 0]
            nu = nus[k]
            lm = _log_location(theta, gamma, X, k, i)
            if kinds[k] == 0:
                logh[k] = lm + alpha + (nu - 1.0) * ly
                Hk = math.exp(min(lm + nu * ly, EXP_CLAMP))
                dlh_da[k] = 1.0 + nu * ly
                dlh_dl[k] = 1.0
                dH_da[k] = Hk * nu * ly
                dH_dl[k] = Hk
            else:
                rel = ly - lm
                z = nu * rel
                Hk = _softplus(z)
                s, s1 = _sigmoid_pair(z)
                logh[k] = alpha - lm + (nu - 1.0) * rel - Hk
                dlh_da[k] = 1.0 + z * s1
                dlh_dl[k] = -nu * s1
                dH_da[k] = s * z
                dH_dl[k] = -nu * s
            total -= Hk
        if events[i]:
            m = -np.inf
            for k in range(K):
                if logh[k] > m:
                    m = logh[k]
            s = 0.0
            for k in range(K):
                s += math.exp(logh[k] - m)
            lse = m + math.log(s)
            total += lse
        for k in range(K):
            if events[i]:
                w = math.exp(logh[k] - lse)
                ga = w * dlh_da[k] - dH_da[k]
                gl = w * dlh_dl[k] - dH_dl[k]
            else:
                ga = -dH_da[k]
                gl = -dH_dl[k]
            grad[k, 0] += ga
            grad[k, 1] += gl
            for j in range(p):
                if gamma[k, j]:
                    grad[k, 2 + j] += X[i, j] * gl
    return total, grad


@njit(cache=True)
def potential_grad(kinds, theta, gamma, X, logy, events, sd_alpha, sd_beta0, sd_beta):
    """Gradient of the potential: negative log-likelihood plus Gaussian priors."""
    ll, g = loglik_and_grad(kinds, theta, gamma, X, logy, events)
    K = theta.shape[0]
    p = X.shape[1]
    for k in range(K):
        g[k, 0] = theta[k, 0] / (sd_alpha * sd_alpha) - g[k, 0]
        g[k, 1] = theta[k, 1] / (sd_beta0 * sd_beta0) - g[k, 1]
        for j in range(p):
            if gamma[k, j]:
                g[k, 2 + j] = theta[k, 2 + j] / (sd_beta * sd_beta) - g[k, 2 + j]
            else:
                g[k, 2 + j] = 0.0
    return ll, g


@njit(cache=True)
def flip_rates(kinds, theta, v, dt, gamma, X, logy, events, sd_alpha, sd_beta0, sd_beta):
    """Coordinate flip rates ``max(0, v * grad U)`` at ``theta + v * dt``."""
    pos = theta + v * dt
    ll, g = potential_grad(kinds, pos, gamma, X, logy, events, sd_alpha, sd_beta0, sd_beta)
    K, m = theta.shape
    total = 0.0
    for k in range(K):
        for c in range(m):
            r = v[k, c] * g[k, c]
            r = r if r > 0.0 else 0.0
            g[k, c] = r
            total += r
    return ll, total, g


@njit(cache=True)
def gaussian_log_prior(theta, gamma, sd_alpha, sd_beta0, sd_beta):
    """Sum of the Gaussian log-densities of shapes, intercepts and included slopes."""
    half_log_2pi = 0.5 * math.log(2.0 * math.pi)
    K = theta.shape[0]
    p = gamma.shape[1]
    total = 0.0
    for k in range(K):
        a = theta[k, 0] / sd_alpha
        b = theta[k, 1] / sd_beta0
        total -= 0.5 * (a * a + b * b) + math.log(sd_alpha) + math.log(sd_beta0) + 2.0 * half_log_2pi
        for j in range(p):
            if gamma[k, j]:
                c = theta[k, 2 + j] / sd_beta
                total -= 0.5 * c * c + math.log(sd_beta) + half_log_2pi
    return total


@njit(cache=True)
def loglik(kinds, theta, gamma, X, logy, events):
    """Log-likelihood without materialising the per-subhazard terms."""
    K = theta.shape[0]
    n = logy.shape[0]
    logh = np.empty(K)
    total = 0.0
    for i in range(n):
        for k in range(K):
            alpha = theta[k, 0]
            nu = math.exp(min(alpha, EXP_CLAMP))
            lm = _log_location(theta, gamma, X, k, i)
            if kinds[k] == 0:
                logh[k] = lm + alpha + (nu - 1.0) * logy[i]
                total -= math.exp(min(lm + nu * logy[i], EXP_CLAMP))
            else:
                rel = logy[i] - lm
                sp = _softplus(nu * rel)
                logh[k] = alpha - lm + (nu - 1.0) * rel - sp
                total -= sp
        if events[i]:
            m = -np.inf
            for k in range(K):
                if logh[k] > m:
                    m = logh[k]
            s = 0.0
            for k in range(K):
                s += math.exp(logh[k] - m)
            total += m + math.log(s)
    return total
