"""MAP note-value assignment under the Markov random field that combines the
context-tree prior, the pair interdependence term and the duration
likelihoods.

Only same-onset pairs interact, so the energy splits into independent onset
clusters, and further into connected components of the pitch-neighbour graph
within a cluster. Each component is solved by exhaustive search.
"""
from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .context_tree import ContextTreeClassifier
from .gig import LOG_FLOOR
from .performance import DurationModel
from .score import (N_IONV, PerformanceNote, ScoreNote, build_onset_clusters,
                    context_features)
from .score_model import InterdependenceModel, MrfWeights

#: common note values (whole-note units), used for notes with no IONV
NOTE_VALUE_GRID = tuple(sorted(Fraction(x) for x in (
    "1/32", "1/48", "1/16", "1/24", "3/32", "1/8", "1/12", "3/16",
    "1/4", "1/6", "3/8", "1/2", "1/3", "3/4", "1")))

#: component state count above which clusters of more than ten notes are
#: decoded greedily
MAX_STATES = 2 ** 20

_Onset = namedtuple("_Onset", "id onset pitch")


def candidate_count(cluster_size: int, available: int) -> int:
    """Number of leading IONVs searched for each note of a cluster."""
    if cluster_size <= 6:
        cap = N_IONV
    elif cluster_size <= 10:
        cap = 14 - cluster_size
    else:
        cap = 2
    return min(cap, available)


@dataclass
class MrfConfig:
    tree: ContextTreeClassifier
    durmodel: DurationModel
    weights: MrfWeights = field(default_factory=MrfWeights)
    interdep: Optional[InterdependenceModel] = None

    def __post_init__(self):
        if self.interdep is not None and self.interdep.delta_nbh != self.weights.delta_nbh:
            raise ValueError("interdependence model was learned for delta_nbh=%d, weights use %d"
                             % (self.interdep.delta_nbh, self.weights.delta_nbh))

    @property
    def pair_nll(self):
        """Negative log joint, or ``None`` when the pair term is inactive."""
        if self.interdep is None or self.weights.beta2 == 0:
            return None
        return -np.log(self.interdep.joint)


def _nll(logp):
    return -np.maximum(logp, LOG_FLOOR)


def note_energy(k: int, r, config: MrfConfig, d: float, dbar: float, v: float, context) -> float:
    """Unary energy of assigning label `k` (note value `r`) to one note."""
    w = config.weights
    q = config.tree.distribution(np.asarray(context))[k]
    r = float(r)
    e = w.beta1 * _nll(math.log(q)) if w.beta1 else 0.0
    if w.beta31:
        e += w.beta31 * float(_nll(config.durmodel.log_g(d / (r * v))))
    if w.beta32:
        e += w.beta32 * float(_nll(config.durmodel.log_gbar(dbar / (r * v))))
    return float(e)


# --- cluster search ---------------------------------------------------------

def _components(pitches, delta_nbh, active: bool):
    """Connected components (sorted member positions) of the neighbour graph."""
    n = len(pitches)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    pairs = []
    if active:
        for i in range(n):
            for j in range(i + 1, n):
                if abs(pitches[i] - pitches[j]) <= delta_nbh:
                    pairs.append((i, j))
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    comps = sorted(groups.values())
    return comps, pairs


def _component_energy(members, pairs, unary, pair_block):
    """Energy tensor over all label tuples of one component."""
    m = len(members)
    K = unary.shape[1]
    local = {p: ax for ax, p in enumerate(members)}
    E = np.zeros((K,) * m)
    for ax, p in enumerate(members):
        shape = [1] * m
        shape[ax] = K
        E = E + unary[p].reshape(shape)
    if pair_block is not None:
        for i, j in pairs:
            if i in local and j in local:
                shape = [1] * m
                shape[local[i]] = K
                shape[local[j]] = K
                E = E + pair_block.reshape(shape)
    return E


def _greedy(members, pairs, unary, pair_block, pitches):
    order = sorted(members, key=lambda p: (pitches[p], p))
    nbrs = {p: [] for p in members}
    for i, j in pairs:
        if i in nbrs and j in nbrs:
            nbrs[i].append(j)
            nbrs[j].append(i)
    chosen = {}
    for p in order:
        e = unary[p].copy()
        for q in nbrs[p]:
            if q in chosen:
                # pair_block is symmetric in label order
                e = e + pair_block[:, chosen[q]]
        chosen[p] = int(np.argmin(e))
    return chosen


def decode_cluster(unary, pitches, pair_nll=None, beta2: float = 0.0, delta_nbh: int = 12,
                   labels=None) -> list:
    """Minimum-energy candidate index for each note of one onset cluster.

    Parameters
    ----------
    unary : array (J, K)
        Unary energy of each candidate for each note.
    pitches : sequence of int
        Pitches of the J notes; pairs within `delta_nbh` semitones interact.
    pair_nll : array (11, 11) or None
        Negative log joint label probability.
    labels : array (K,), optional
        Label index of each candidate column (default ``1..K``).

    Ties are broken towards the lexicographically smallest index tuple.
    """
    unary = np.asarray(unary, dtype=float)
    J, K = unary.shape
    if K == 0:
        return [None] * J
    labels = np.arange(1, K + 1) if labels is None else np.asarray(labels)
    active = pair_nll is not None and beta2 > 0
    pair_block = beta2 * np.asarray(pair_nll)[np.ix_(labels, labels)] if active else None
    comps, pairs = _components(pitches, delta_nbh, active)
    out = [None] * J
    for members in comps:
        if len(members) == 1:
            out[members[0]] = int(np.argmin(unary[members[0]]))
            continue
        if J > 10 and K ** len(members) > MAX_STATES:
            for p, k in _greedy(members, pairs, unary, pair_block, pitches).items():
                out[p] = k
            continue
        E = _component_energy(members, pairs, unary, pair_block)
        idx = np.unravel_index(int(np.argmin(E)), E.shape)
        for p, k in zip(members, idx):
            out[p] = int(k)
    return out


# --- piece level -------------------------------------------------------------

@dataclass
class ClusterProblem:
    """Candidates and separated energy terms for one onset cluster."""

    position: int
    ids: list
    pitches: list
    values: list                 # candidate note values (Fraction), shared by members
    tree_nll: np.ndarray         # (J, K)
    g_nll: np.ndarray            # (J, K)
    gbar_nll: np.ndarray         # (J, K)

    @property
    def labels(self):
        return np.arange(1, len(self.values) + 1)

    def unary(self, w: MrfWeights) -> np.ndarray:
        e = w.beta1 * self.tree_nll
        if w.beta31:
            e = e + w.beta31 * self.g_nll
        if w.beta32:
            e = e + w.beta32 * self.gbar_nll
        return e


@dataclass
class PieceProblem:
    clusters: list
    fallback: dict               # note id -> fallback note value
    onset: dict                  # note id -> score time
    pitch: dict


def fallback_note_value(d: float, v: float) -> Fraction:
    """Common note value nearest in log scale to the duration-implied value."""
    x = d / v
    return min(NOTE_VALUE_GRID, key=lambda g: (abs(math.log(x / float(g))), g))


def build_problem(perf: Sequence[PerformanceNote], tau, tempo, tree: ContextTreeClassifier,
                  durmodel: DurationModel) -> PieceProblem:
    """Candidate spaces and energy terms for every cluster of a piece."""
    if not (len(perf) == len(tau) == len(tempo)):
        raise ValueError("performance, onset and tempo lengths differ: %d, %d, %d"
                         % (len(perf), len(tau), len(tempo)))
    onsets = [_Onset(p.id, Fraction(t), p.pitch) for p, t in zip(perf, tau)]
    by_id = {o.id: o for o in onsets}
    if len(by_id) != len(onsets):
        raise ValueError("duplicate note ids in performance")
    pnote = {p.id: p for p in perf}
    vel = {p.id: float(v) for p, v in zip(perf, tempo)}
    if any(not v > 0 for v in vel.values()):
        raise ValueError("tempos must be positive")
    clusters = build_onset_clusters(onsets)
    times = clusters.times
    problems, fallback = [], {}
    # contexts for all non-final notes at once
    ids_all = [i for k, c in enumerate(clusters) if k < len(clusters) - 1 for i in c.member_ids]
    ctx = np.array([context_features(by_id, clusters, i) for i in ids_all],
                   dtype=np.int64).reshape(-1, N_IONV)
    proba = dict(zip(ids_all, tree.predict_proba(ctx))) if ids_all else {}
    for k, cl in enumerate(clusters):
        ids = list(cl.member_ids)
        available = min(N_IONV, len(clusters) - 1 - k)
        n_c = candidate_count(len(ids), available)
        if n_c == 0:
            for i in ids:
                fallback[i] = fallback_note_value(pnote[i].duration, vel[i])
            continue
        values = [times[k + j] - times[k] for j in range(1, n_c + 1)]
        r = np.array([float(x) for x in values])
        tq = np.array([proba[i][1:n_c + 1] for i in ids])
        d = np.array([pnote[i].duration for i in ids])
        db = np.array([pnote[i].damper_duration for i in ids])
        v = np.array([vel[i] for i in ids])
        scale = r[None, :] * v[:, None]
        problems.append(ClusterProblem(
            position=k, ids=ids, pitches=[by_id[i].pitch for i in ids], values=values,
            tree_nll=_nll(np.log(tq)),
            g_nll=_nll(durmodel.log_g(d[:, None] / scale)),
            gbar_nll=_nll(durmodel.log_gbar(db[:, None] / scale))))
    return PieceProblem(problems, fallback, {o.id: o.onset for o in onsets},
                        {o.id: o.pitch for o in onsets})


def solve_problem(problem: PieceProblem, weights: MrfWeights, pair_nll=None):
    """Decode every cluster; returns note id -> (label, note value, energy, n_candidates).

    Fallback notes get label ``None`` and energy ``nan``.
    """
    out = {}
    for cp in problem.clusters:
        U = cp.unary(weights)
        choice = decode_cluster(U, cp.pitches, pair_nll, weights.beta2, weights.delta_nbh)
        for j, (i, c) in enumerate(zip(cp.ids, choice)):
            out[i] = (c + 1, cp.values[c], float(U[j, c]), len(cp.values))
    for i, r in problem.fallback.items():
        out[i] = (None, r, float("nan"), 0)
    return out


def decode_piece(perf: Sequence[PerformanceNote], tau, tempo, config: MrfConfig,
                 return_report: bool = False):
    """Note values for a performed piece with given onset score times and
    local tempos (both aligned with `perf`).

    Returns a list of :class:`ScoreNote` in input order, and optionally a
    per-note report.
    """
    problem = build_problem(perf, tau, tempo, config.tree, config.durmodel)
    result = solve_problem(problem, config.weights, config.pair_nll)
    notes = [ScoreNote(p.id, problem.onset[p.id], result[p.id][1], p.pitch) for p in perf]
    if not return_report:
        return notes
    report = [{"id": p.id, "label": result[p.id][0],
               "energy": None if math.isnan(result[p.id][2]) else result[p.id][2],
               "candidates": result[p.id][3],
               "note_value": str(result[p.id][1])} for p in perf]
    return notes, report
