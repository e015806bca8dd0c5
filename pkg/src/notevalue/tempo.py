"""Local tempo estimation from onset times and onset score times.

Each gap between consecutive onset clusters gives a noisy ratio
``y_k = dt_k / dtau_k`` (seconds per whole note). The tempo is modelled as a
Gaussian random walk observed through these ratios, with observation
variance shrinking for longer score intervals, and estimated with a Kalman
filter followed by a Rauch-Tung-Striebel backward pass.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

V_MIN, V_MAX = 0.1, 20.0


class KalmanTempoSmoother(BaseEstimator):
    """Random-walk tempo smoother.

    Parameters
    ----------
    sigma_v : float
        Standard deviation of the tempo step between clusters.
    sigma_obs : float
        Observation noise for a one-whole-note interval; an interval of
        length ``dtau`` has variance ``sigma_obs**2 / dtau``.

    Attributes
    ----------
    tempo_ : ndarray (K,)
        Smoothed tempo per cluster (the last cluster repeats the final gap).
    variance_, filtered_variance_ : ndarray (K - 1,)
    """

    def __init__(self, sigma_v=0.05, sigma_obs=0.1):
        self.sigma_v = sigma_v
        self.sigma_obs = sigma_obs

    def fit(self, t, tau):
        t = np.asarray(t, dtype=float)
        dtau = np.array([float(b - a) for a, b in zip(tau[:-1], tau[1:])])
        if len(t) != len(tau):
            raise ValueError("t and tau lengths differ")
        if len(t) < 2:
            raise ValueError("tempo unobservable: need at least two onset clusters")
        if (dtau <= 0).any():
            raise ValueError("tau must be strictly increasing across clusters")
        if self.sigma_v <= 0 or self.sigma_obs <= 0:
            raise ValueError("sigma_v and sigma_obs must be positive")
        y = np.diff(t) / dtau
        R = self.sigma_obs ** 2 / dtau
        Q = self.sigma_v ** 2
        M = len(y)
        mf = np.empty(M)
        pf = np.empty(M)
        pp = np.empty(M)
        # diffuse start: the first state is pinned by its observation alone
        mf[0], pf[0], pp[0] = y[0], R[0], np.inf
        for k in range(1, M):
            pp[k] = pf[k - 1] + Q
            gain = pp[k] / (pp[k] + R[k])
            mf[k] = mf[k - 1] + gain * (y[k] - mf[k - 1])
            pf[k] = (1.0 - gain) * pp[k]
        ms = mf.copy()
        ps = pf.copy()
        for k in range(M - 2, -1, -1):
            c = pf[k] / pp[k + 1]
            ms[k] = mf[k] + c * (ms[k + 1] - mf[k])
            ps[k] = pf[k] + c * c * (ps[k + 1] - pp[k + 1])
        self.raw_tempo_ = ms
        self.tempo_ = np.clip(np.append(ms, ms[-1]), V_MIN, V_MAX)
        self.variance_ = ps
        self.filtered_variance_ = pf
        return self


def smooth_tempi(t, tau, sigma_v: float = 0.05, sigma_obs: float = 0.1) -> np.ndarray:
    """Smoothed tempo per onset cluster (seconds per whole note)."""
    return KalmanTempoSmoother(sigma_v, sigma_obs).fit(t, tau).tempo_


def note_tempi(onsets_sec: Sequence[float], tau: Sequence[Fraction], sigma_v: float = 0.05,
               sigma_obs: float = 0.1) -> list:
    """Per-note tempos: notes are grouped by onset score time, each group
    timed at its mean performed onset, and every note gets its group's
    smoothed tempo."""
    groups = {}
    for t, s in zip(onsets_sec, tau):
        groups.setdefault(Fraction(s), []).append(float(t))
    keys = sorted(groups)
    v = smooth_tempi([float(np.mean(groups[k])) for k in keys], keys, sigma_v, sigma_obs)
    lookup = dict(zip(keys, v))
    return [float(lookup[Fraction(s)]) for s in tau]
