"""Onset rhythm transcription with metrical hidden Markov models.

Beat positions ``s`` in one bar (period ``G``) follow a Markov chain; a local
tempo ``v`` (seconds per whole note) follows a Gaussian random walk and
performed onset intervals scatter around ``(tau_{n+1} - tau_n) * v_n``. The
tempo is discretised on a fixed grid and the joint state ``(s, v)`` is
decoded with the Viterbi algorithm. Several metres can be decoded and the one
with the highest posterior kept.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .score import PerformanceNote, build_onset_clusters

LOG_FLOOR = -700.0
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MetreSpec:
    name: str
    G: int
    resolution: Fraction

    def __post_init__(self):
        object.__setattr__(self, "resolution", Fraction(self.resolution))
        if self.G < 2:
            raise ValueError("a metre needs at least two beat positions")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def bar(self) -> Fraction:
        return self.G * self.resolution


METRES = {
    "duple": MetreSpec("duple", 16, Fraction(1, 16)),
    "triple": MetreSpec("triple", 12, Fraction(1, 16)),
}


def default_tempo_grid(n: int = 30, lo: float = 0.8, hi: float = 6.4) -> np.ndarray:
    return np.geomspace(lo, hi, n)


@dataclass
class MetricalHmmParams:
    metre: MetreSpec
    initial: np.ndarray
    transition: np.ndarray
    sigma_v: float = 0.05
    sigma_t: float = 0.02
    v_ini: float = 2.0
    sigma_v_ini: float = 1.0
    tempo_grid: np.ndarray = field(default_factory=default_tempo_grid)

    def __post_init__(self):
        G = self.metre.G
        self.initial = np.asarray(self.initial, dtype=float)
        self.transition = np.asarray(self.transition, dtype=float)
        self.tempo_grid = np.asarray(self.tempo_grid, dtype=float)
        if self.initial.shape != (G,) or self.transition.shape != (G, G):
            raise ValueError("initial/transition shapes do not match G=%d" % G)
        if abs(self.initial.sum() - 1.0) > 1e-9 or np.abs(self.transition.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("initial and transition rows must sum to 1")
        if min(self.sigma_v, self.sigma_t, self.sigma_v_ini) <= 0:
            raise ValueError("standard deviations must be positive")
        if (np.diff(self.tempo_grid) <= 0).any() or self.tempo_grid[0] <= 0:
            raise ValueError("tempo grid must be positive and strictly increasing")

    def to_dict(self) -> dict:
        return {
            "metre": self.metre.name, "G": self.metre.G,
            "resolution": [self.metre.resolution.numerator, self.metre.resolution.denominator],
            "initial": self.initial.tolist(), "transition": self.transition.tolist(),
            "sigma_v": self.sigma_v, "sigma_t": self.sigma_t, "v_ini": self.v_ini,
            "sigma_v_ini": self.sigma_v_ini, "tempo_grid": self.tempo_grid.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricalHmmParams":
        res = d["resolution"]
        res = Fraction(res[0], res[1]) if isinstance(res, list) else Fraction(res)
        return cls(MetreSpec(d["metre"], int(d["G"]), res), d["initial"], d["transition"],
                   float(d["sigma_v"]), float(d["sigma_t"]), float(d["v_ini"]),
                   float(d["sigma_v_ini"]), d["tempo_grid"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "MetricalHmmParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class OnsetTranscription:
    """Decoded onset score times and tempos, one entry per input note."""

    tau: list
    tempo: list
    metre: MetreSpec
    log_posterior: float
    cluster_of: list = field(default_factory=list)


# --- training ---------------------------------------------------------------

def beat_positions(times: Sequence[Fraction], metre: MetreSpec, names=None) -> list:
    """1-based beat position in the bar of each score time."""
    out = []
    for j, t in enumerate(times):
        pos = (Fraction(t) % metre.bar) / metre.resolution
        if pos.denominator != 1:
            who = names[j] if names is not None else "score time %s" % t
            raise ValueError("%s is not representable at resolution %s"
                             % (who, metre.resolution))
        out.append(int(pos) + 1)
    return out


def train_hmm(corpus, metre: MetreSpec, alpha: float = 1.0, **kw) -> MetricalHmmParams:
    """Beat-position initial and transition probabilities counted over the
    onset clusters of a score corpus, with add-`alpha` smoothing. Other
    parameters come from `kw` or the defaults."""
    if alpha <= 0:
        raise ValueError("smoothing alpha must be positive")
    G = metre.G
    init = np.zeros(G)
    trans = np.zeros((G, G))
    pieces = corpus.values() if isinstance(corpus, dict) else corpus
    for notes in pieces:
        if not notes:
            continue
        clusters = build_onset_clusters(notes)
        names = ["note %d (onset %s)" % (c.member_ids[0], c.time) for c in clusters]
        s = beat_positions(clusters.times, metre, names)
        init[s[0] - 1] += 1
        for a, b in zip(s[:-1], s[1:]):
            trans[a - 1, b - 1] += 1
    init = (init + alpha) / (init.sum() + G * alpha)
    trans = (trans + alpha) / (trans.sum(axis=1, keepdims=True) + G * alpha)
    return MetricalHmmParams(metre, init, trans, **kw)


def score_times_from_beats(s: Sequence[int], G: int, resolution=1) -> list:
    """Unwrap bar-periodic beat positions into score times.

    A position not after its predecessor is read as lying in the next bar.
    """
    resolution = Fraction(resolution)
    if not len(s):
        return []
    tau = [Fraction(s[0])]
    for prev, cur in zip(s[:-1], s[1:]):
        tau.append(tau[-1] + (cur - prev if cur > prev else G + cur - prev))
    return [t * resolution for t in tau]


# --- decoding ---------------------------------------------------------------

def _log_normal(x, mean, sd):
    return np.maximum(-0.5 * ((x - mean) / sd) ** 2 - np.log(sd) - _LOG_SQRT_2PI, LOG_FLOOR)


def _log_prob(p):
    return np.log(np.maximum(p, np.exp(LOG_FLOOR)))


def _beat_steps(G: int) -> np.ndarray:
    s = np.arange(G)
    d = s[None, :] - s[:, None]
    return np.where(d > 0, d, d + G)


def path_log_posterior(params: MetricalHmmParams, onsets, beats, tempo_idx) -> float:
    """Joint log probability of a state path (1-based beats) and onsets."""
    grid = params.tempo_grid
    res = float(params.metre.resolution)
    steps = _beat_steps(params.metre.G)
    logA = _log_prob(params.transition)
    lp = float(_log_prob(params.initial[beats[0] - 1])
               + _log_normal(grid[tempo_idx[0]], params.v_ini, params.sigma_v_ini))
    for n in range(1, len(onsets)):
        s0, s1 = beats[n - 1] - 1, beats[n] - 1
        i0, i1 = tempo_idx[n - 1], tempo_idx[n]
        lp += float(logA[s0, s1] + _log_normal(grid[i1], grid[i0], params.sigma_v)
                    + _log_normal(onsets[n], onsets[n - 1] + steps[s0, s1] * res * grid[i0],
                                  params.sigma_t))
    return lp


def viterbi(params: MetricalHmmParams, onsets) -> tuple:
    """Most probable joint path for a sequence of cluster onset times.

    Returns 1-based beat positions, tempo grid indices and the log posterior.
    """
    onsets = np.asarray(onsets, dtype=float)
    if onsets.size == 0:
        raise ValueError("cannot decode an empty performance")
    G = params.metre.G
    grid = params.tempo_grid
    T = len(grid)
    res = float(params.metre.resolution)
    logA = _log_prob(params.transition)                                   # (G, G)
    log_tv = _log_normal(grid[None, :], grid[:, None], params.sigma_v)     # (T, T)
    pred = _beat_steps(G)[:, None, :] * res * grid[None, :, None]         # (G, T, G)
    delta = _log_prob(params.initial)[:, None] + _log_normal(grid, params.v_ini, params.sigma_v_ini)[None, :]
    back = []
    for n in range(1, len(onsets)):
        dt = onsets[n] - onsets[n - 1]
        m1 = delta[:, :, None] + logA[:, None, :] + _log_normal(dt, pred, params.sigma_t)  # (G,T,G)
        full = m1[:, :, :, None] + log_tv[None, :, None, :]                                 # (G,T,G,T)
        full = full.reshape(G * T, G * T)
        ptr = np.argmax(full, axis=0)
        delta = full[ptr, np.arange(G * T)].reshape(G, T)
        back.append(ptr)
    state = int(np.argmax(delta))
    best = float(delta.ravel()[state])
    path = [state]
    for ptr in reversed(back):
        state = int(ptr[state])
        path.append(state)
    path.reverse()
    beats = [p // T + 1 for p in path]
    tempo_idx = [p % T for p in path]
    return beats, tempo_idx, best


def performed_clusters(perf: Sequence[PerformanceNote], chord_eps: float = 0.035):
    """Group notes whose onsets lie within `chord_eps` of a cluster's first
    onset. Returns (cluster index per note, mean onset per cluster)."""
    order = sorted(range(len(perf)), key=lambda i: (perf[i].onset_sec, perf[i].pitch, perf[i].id))
    cluster_of = [0] * len(perf)
    members = []
    start = None
    for i in order:
        t = perf[i].onset_sec
        if start is None or t - start > chord_eps:
            members.append([])
            start = t
        members[-1].append(i)
        cluster_of[i] = len(members) - 1
    times = [float(np.mean([perf[i].onset_sec for i in m])) for m in members]
    return cluster_of, times


def decode_onsets(perf: Sequence[PerformanceNote], models: Sequence[MetricalHmmParams],
                  chord_eps: float = 0.035) -> OnsetTranscription:
    """Onset score times and tempos of a performance under the best of
    several metre models."""
    if len(perf) < 1:
        raise ValueError("decode_onsets needs at least one note")
    if not models:
        raise ValueError("no metre models supplied")
    cluster_of, times = performed_clusters(perf, chord_eps)
    best = None
    for params in models:
        beats, tidx, lp = viterbi(params, times)
        if best is None or lp > best[0]:
            best = (lp, params, beats, tidx)
    lp, params, beats, tidx = best
    tau_c = score_times_from_beats(beats, params.metre.G, params.metre.resolution)
    v_c = [float(params.tempo_grid[i]) for i in tidx]
    return OnsetTranscription(tau=[tau_c[c] for c in cluster_of], tempo=[v_c[c] for c in cluster_of],
                              metre=params.metre, log_posterior=lp, cluster_of=cluster_of)


class MetricalHMM(BaseEstimator):
    """Estimator wrapper: ``fit`` on score corpora, ``predict`` onsets.

    Parameters
    ----------
    metres : tuple of str
        Names from ``METRES``; one model is trained per metre.
    alpha : float
        Additive smoothing of beat-position counts.
    chord_eps : float
        Onsets closer than this (seconds) form one performed cluster.
    """

    def __init__(self, metres=("duple", "triple"), alpha=1.0, sigma_v=0.05, sigma_t=0.02,
                 v_ini=2.0, sigma_v_ini=1.0, n_tempi=30, tempo_min=0.8, tempo_max=6.4,
                 chord_eps=0.035):
        self.metres = metres
        self.alpha = alpha
        self.sigma_v = sigma_v
        self.sigma_t = sigma_t
        self.v_ini = v_ini
        self.sigma_v_ini = sigma_v_ini
        self.n_tempi = n_tempi
        self.tempo_min = tempo_min
        self.tempo_max = tempo_max
        self.chord_eps = chord_eps

    def fit(self, corpus, y=None):
        grid = default_tempo_grid(self.n_tempi, self.tempo_min, self.tempo_max)
        self.models_ = [train_hmm(corpus, METRES[m], self.alpha, sigma_v=self.sigma_v,
                                  sigma_t=self.sigma_t, v_ini=self.v_ini,
                                  sigma_v_ini=self.sigma_v_ini, tempo_grid=grid)
                        for m in self.metres]
        return self

    def predict(self, perf) -> OnsetTranscription:
        check_is_fitted(self, "models_")
        return decode_onsets(perf, self.models_, self.chord_eps)
