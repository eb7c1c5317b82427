"""Weibull and log-logistic subhazards.

The Weibull hazard is rate-parameterised, ``h(y) = mu * nu * y**(nu - 1)``,
and the log-logistic hazard is scale-parameterised,
``h(y) = (nu / mu) * (y / mu)**(nu - 1) / (1 + (y / mu)**nu)``.

All functions accept scalars or broadcastable arrays.  Derivatives are
taken with respect to the unconstrained sampling coordinates
``alpha = log(nu)`` and ``log(mu)``.
"""

from __future__ import annotations

import enum
import math

import numpy as np

EXP_CLAMP = 700.0
LOG2 = math.log(2.0)


class DistKind(enum.IntEnum):
    WEIBULL = 0
    LOGLOGISTIC = 1

    @property
    def short(self) -> str:
        return "W" if self is DistKind.WEIBULL else "L"

    @classmethod
    def parse(cls, value) -> "DistKind":
        if isinstance(value, DistKind):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().upper().replace("-", "").replace("_", "")
        aliases = {
            "W": cls.WEIBULL,
            "WEIBULL": cls.WEIBULL,
            "L": cls.LOGLOGISTIC,
            "LL": cls.LOGLOGISTIC,
            "LOGLOGISTIC": cls.LOGLOGISTIC,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown distribution {value!r}") from None


CANDIDATES = (DistKind.WEIBULL, DistKind.LOGLOGISTIC)


def _check(nu, mu, y=None):
    arrays = [np.asarray(nu, dtype=float), np.asarray(mu, dtype=float)]
    if y is not None:
        arrays.append(np.asarray(y, dtype=float))
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite input to survival distribution")
    if np.any(arrays[0] <= 0) or np.any(arrays[1] <= 0):
        raise ValueError("shape and location must be positive")
    if y is not None and np.any(arrays[2] < 0):
        raise ValueError("times must be nonnegative")
    return arrays


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_hazard(kind: DistKind, nu, mu, y):
    nu, mu, y = _check(nu, mu, y)
    with np.errstate(divide="ignore"):
        logy = np.log(y)
    alpha, logmu = np.log(nu), np.log(mu)
    if DistKind.parse(kind) is DistKind.WEIBULL:
        return logmu + alpha + (nu - 1.0) * logy
    rel = logy - logmu
    return alpha - logmu + (nu - 1.0) * rel - _softplus(nu * rel)


def hazard(kind: DistKind, nu, mu, y):
    """Subhazard ``h(y)`` for one candidate distribution."""
    out = np.exp(np.clip(log_hazard(kind, nu, mu, y), -EXP_CLAMP, EXP_CLAMP))
    return out if np.ndim(out) else float(out)


def cumulative_hazard(kind: DistKind, nu, mu, y):
    """Integrated hazard ``H(y)``; survival is ``exp(-H(y))``."""
    nu, mu, y = _check(nu, mu, y)
    with np.errstate(divide="ignore"):
        logy = np.log(y)
    if DistKind.parse(kind) is DistKind.WEIBULL:
        out = np.exp(np.clip(np.log(mu) + nu * logy, -np.inf, EXP_CLAMP))
    else:
        out = _softplus(nu * (logy - np.log(mu)))
    return out if np.ndim(out) else float(out)


def survival(kind: DistKind, nu, mu, y):
    out = np.exp(-np.asarray(cumulative_hazard(kind, nu, mu, y)))
    return out if np.ndim(out) else float(out)


def log_derivatives(kind: DistKind, nu, mu, y):
    """Partial derivatives of ``log h`` and ``H`` in ``(alpha, log mu)``.

    Returns ``(dlogh_dalpha, dlogh_dlogmu, dH_dalpha, dH_dlogmu)``.
    """
    nu, mu, y = _check(nu, mu, y)
    logy = np.log(y)
    logmu = np.log(mu)
    if DistKind.parse(kind) is DistKind.WEIBULL:
        H = np.exp(np.clip(logmu + nu * logy, -np.inf, EXP_CLAMP))
        dlogh_da = 1.0 + nu * logy
        dlogh_dl = np.ones_like(H)
        dH_da = H * nu * logy
        dH_dl = H
    else:
        z = nu * (logy - logmu)
        s = _sigmoid(z)
        dlogh_da = 1.0 + z * (1.0 - s)
        dlogh_dl = -nu * (1.0 - s)
        dH_da = s * z
        dH_dl = -nu * s
    out = np.broadcast_arrays(dlogh_da, dlogh_dl, dH_da, dH_dl)
    if out[0].ndim == 0:
        return tuple(float(o) for o in out)
    return tuple(out)


def median(kind: DistKind, nu, mu):
    nu, mu = _check(nu, mu)
    if DistKind.parse(kind) is DistKind.WEIBULL:
        out = (LOG2 / mu) ** (1.0 / nu)
    else:
        out = mu
    return out if np.ndim(out) else float(out)


def sample(kind: DistKind, nu, mu, rng: np.random.Generator, size=None):
    """Draw event times by inverting the survival function.

    Without ``size`` one time is drawn per broadcast element of ``nu`` and ``mu``.
    """
    nu, mu = _check(nu, mu)
    u = rng.random(np.broadcast(nu, mu).shape if size is None else size)
    if DistKind.parse(kind) is DistKind.WEIBULL:
        return (-np.log1p(-u) / mu) ** (1.0 / nu)
    return mu * (u / (1.0 - u)) ** (1.0 / nu)
