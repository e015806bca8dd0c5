"""Generalised inverse-Gaussian (GIG) density, moments and sampling.

Parametrisation::

    GIG(x; a, b, h) = (a/b)^(h/2) / (2 K_h(2 sqrt(ab))) * x^(h-1) * exp(-(a x + b/x))

with ``a, b > 0`` and real ``h``; ``K_h`` is the modified Bessel function of
the second kind.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate, special

#: floor for densities entering log-energies
LOG_FLOOR = -700.0


@dataclass(frozen=True)
class GigParams:
    a: float
    b: float
    h: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("GIG requires a > 0 and b > 0, got a=%r b=%r" % (self.a, self.b))
        if not np.isfinite(self.h):
            raise ValueError("GIG shape h must be finite")

    def __iter__(self):
        return iter((self.a, self.b, self.h))


def log_bessel_k(h, z):
    """``ln K_h(z)`` for ``z > 0``, stable for large arguments."""
    z = np.asarray(z, dtype=float)
    return np.log(special.kve(h, z)) - z


def log_norm_const(a, b, h):
    """Log of the normalising factor ``(a/b)^(h/2) / (2 K_h(2 sqrt(ab)))``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.5 * h * (np.log(a) - np.log(b)) - np.log(2.0) - log_bessel_k(h, 2.0 * np.sqrt(a * b))


def gig_logpdf(x, a, b, h):
    """Log density; ``-inf`` outside the support. Broadcasts over all arguments."""
    x = np.asarray(x, dtype=float)
    a, b, h = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(h, float))
    pos = x > 0
    xs = np.where(pos, x, 1.0)
    with np.errstate(divide="ignore"):
        out = (log_norm_const(a, b, h) + (h - 1.0) * np.log(xs) - (a * xs + b / xs))
    out = np.where(pos, out, -np.inf)
    return out if out.ndim else float(out)


def gig_pdf(x, p: GigParams):
    """Density of ``GIG(a, b, h)`` at `x`; zero for ``x <= 0``."""
    return np.exp(gig_logpdf(x, p.a, p.b, p.h))


def gig_mean(p: GigParams) -> float:
    z = 2.0 * np.sqrt(p.a * p.b)
    return float(np.sqrt(p.b / p.a) * np.exp(log_bessel_k(p.h + 1.0, z) - log_bessel_k(p.h, z)))


def gig_mode(p: GigParams) -> float:
    # root of a x^2 - (h - 1) x - b = 0
    return float(((p.h - 1.0) + np.sqrt((p.h - 1.0) ** 2 + 4.0 * p.a * p.b)) / (2.0 * p.a))


class GigSampler:
    """Inverse-CDF sampler backed by a tabulated CDF.

    The CDF is integrated on a dense logarithmic grid, then a table of
    `n_table` nodes is chosen equally spaced in the combined arc length of
    probability and log-x, so that nodes concentrate where the mass is while
    the tails stay resolved. Both directions are interpolated with cubic
    Hermite pieces using the exact density as slope.
    """

    def __init__(self, p: GigParams, n_table: int = 2048, n_dense: int = 40000,
                 tail: float = 1e-12):
        self.params = p
        lo, hi = self._support(p, tail)
        u = np.linspace(np.log(lo), np.log(hi), n_dense)
        x = np.exp(u)
        # dF = f(x) dx = f(x) x du
        w = np.exp(gig_logpdf(x, p.a, p.b, p.h) + u)
        cdf = integrate.cumulative_simpson(w, x=u, initial=0.0)
        head = integrate.quad(lambda t: gig_pdf(t, p), 0.0, lo)[0]
        cdf = cdf + head
        total = cdf[-1] + integrate.quad(lambda t: gig_pdf(t, p), hi, np.inf)[0]
        cdf = np.maximum.accumulate(cdf / total)
        arc = cdf + (u - u[0]) / (u[-1] - u[0])
        levels = np.linspace(arc[0], arc[-1], n_table)
        idx = np.unique(np.searchsorted(arc, levels).clip(0, n_dense - 1))
        keep = idx[np.concatenate([[True], np.diff(cdf[idx]) > 0])]
        self.table_x = x[keep]
        self.table_cdf = cdf[keep]
        # cubic Hermite pieces with the exact slope dF/dlog(x) = f(x) x
        slope = w[keep] / total
        self._fwd = interpolate.CubicHermiteSpline(u[keep], self.table_cdf, slope)
        self._inv = interpolate.CubicHermiteSpline(self.table_cdf, u[keep], 1.0 / slope)

    @staticmethod
    def _support(p: GigParams, tail: float):
        # bracket the region where the log-scale density exceeds tail * its peak
        def logw(x):
            return gig_logpdf(x, p.a, p.b, p.h) + np.log(x)
        mode = gig_mode(p)
        floor = logw(mode) + np.log(tail)
        lo, hi = mode, mode
        while logw(lo) > floor and lo > 1e-12:
            lo /= 2.0
        while logw(hi) > floor and hi < 1e12:
            hi *= 2.0
        return lo, hi

    def cdf(self, x):
        """Tabulated CDF (0 below the table, 1 above it)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            lx = np.log(np.where(x > 0, x, np.finfo(float).tiny))
        out = self._fwd(np.clip(lx, np.log(self.table_x[0]), np.log(self.table_x[-1])))
        out = np.where(x <= self.table_x[0], 0.0, out)
        out = np.where(x >= self.table_x[-1], 1.0, out)
        return np.clip(out, 0.0, 1.0)

    def ppf(self, q):
        q = np.clip(np.asarray(q, dtype=float), self.table_cdf[0], self.table_cdf[-1])
        return np.exp(self._inv(q))

    def sample(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))


_SAMPLERS = {}


def sample_gig(p: GigParams, rng: np.random.Generator, size=None):
    """Draw from ``GIG(p)``; tables are cached per parameter triple."""
    sampler = _SAMPLERS.get(p)
    if sampler is None:
        sampler = _SAMPLERS[p] = GigSampler(p)
    return sampler.sample(rng, size)
