"""Grid searches for the MRF weights.

The context and interdependence weights (with the pitch neighbourhood) are
chosen by maximum likelihood of the true labels of a held-out score corpus
under the normalised score prior. The duration weights are chosen by the
error rate of full decoding on a development set of performances.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mrf import MAX_STATES, _component_energy, _components, build_problem, candidate_count, decode_cluster
from .score import N_IONV, piece_features
from .score_model import MrfWeights

logger = logging.getLogger(__name__)

#: clusters whose normaliser would need more states than this are skipped
MAX_NORM_STATES = 100_000


def _axis(lo, hi, step):
    return np.round(np.arange(lo, hi + step / 2, step), 10)


# --- score weights ----------------------------------------------------------

@dataclass
class _ScoreTerms:
    """Flattened per-state energies for one neighbourhood setting."""

    a: np.ndarray        # tree energy per state
    b: np.ndarray        # pair energy per state
    starts: np.ndarray   # first state of each component
    a_true: float
    b_true: float

    def __post_init__(self):
        self.a_min = np.minimum.reduceat(self.a, self.starts)
        self.b_min = np.minimum.reduceat(self.b, self.starts)
        self.seg = np.repeat(np.arange(len(self.starts)), np.diff(np.append(self.starts, len(self.a))))
        self.da = self.a - self.a_min[self.seg]
        self.db = self.b - self.b_min[self.seg]


def _score_clusters(corpus, tree):
    """Per-cluster (pitches, candidate labels, tree nll, true label index)."""
    pieces = corpus.values() if isinstance(corpus, dict) else corpus
    out = []
    skipped = 0
    for notes in pieces:
        clusters, labels, contexts = piece_features(notes)
        pitch = {n.id: n.pitch for n in notes}
        for k, cl in enumerate(clusters):
            if k == len(clusters) - 1:
                continue
            ids = cl.member_ids
            n_c = candidate_count(len(ids), min(N_IONV, len(clusters) - 1 - k))
            labs = np.arange(0, n_c + 1)
            true = [labels[i] for i in ids]
            if any(t > n_c for t in true) or len(labs) ** len(ids) > MAX_NORM_STATES:
                skipped += 1
                continue
            proba = tree.predict_proba(np.array([contexts[i] for i in ids], dtype=np.int64))
            out.append(([pitch[i] for i in ids], labs, -np.log(proba[:, labs]), true))
    if skipped:
        logger.info("skipped %d clusters outside the candidate space or too large", skipped)
    return out


def _terms_for_delta(clusters, pair_nll, delta):
    a_parts, b_parts, sizes = [], [], []
    a_true = b_true = 0.0
    for pitches, labs, tnll, true in clusters:
        comps, pairs = _components(pitches, delta, True)
        block = pair_nll[np.ix_(labs, labs)]
        zeros = np.zeros_like(tnll)
        for members in comps:
            A = _component_energy(members, pairs, tnll, None).ravel()
            B = _component_energy(members, pairs, zeros, block).ravel()
            a_parts.append(A)
            b_parts.append(B)
            sizes.append(A.size)
        for j, t in enumerate(true):
            a_true += tnll[j, t]
        for i, j in pairs:
            b_true += pair_nll[true[i], true[j]]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    return _ScoreTerms(np.concatenate(a_parts), np.concatenate(b_parts), starts, a_true, b_true)


def _loglik(terms: _ScoreTerms, beta1, beta2) -> float:
    # shifting each component by its smallest a and b keeps every exponent <= 0
    s = np.add.reduceat(np.exp(-(beta1 * terms.da + beta2 * terms.db)), terms.starts)
    if not (s > 0).all():
        x = -(beta1 * terms.a + beta2 * terms.b)
        m = np.maximum.reduceat(x, terms.starts)
        s = np.add.reduceat(np.exp(x - m[terms.seg]), terms.starts)
        return float(-(beta1 * terms.a_true + beta2 * terms.b_true) - (m + np.log(s)).sum())
    log_z = -(beta1 * terms.a_min + beta2 * terms.b_min).sum() + np.log(s).sum()
    return float(-(beta1 * terms.a_true + beta2 * terms.b_true) - log_z)


def _row_best(terms, b1, b2s):
    """Best ``beta2`` on a grid row. The log likelihood is concave in
    ``beta2``, so the sampled row is unimodal and bisection on the sign of
    the forward difference finds its first maximiser."""
    cache = {}

    def f(i):
        if i not in cache:
            cache[i] = _loglik(terms, b1, b2s[i])
        return cache[i]

    lo, hi = 0, len(b2s) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if f(mid) < f(mid + 1):
            lo = mid + 1
        else:
            hi = mid
    return f(lo), lo


def _grid_best(terms, b1s, b2s, exhaustive=False):
    best = (-np.inf, None, None)
    for b1 in b1s:
        if exhaustive:
            cand = [(_loglik(terms, b1, b2), j) for j, b2 in enumerate(b2s)]
            ll, j = max(cand, key=lambda c: (c[0], -c[1]))
        else:
            ll, j = _row_best(terms, b1, b2s)
        if ll > best[0]:
            best = (ll, float(b1), float(b2s[j]))
    return best


def score_prior_loglik(corpus, tree, interdep, beta1, beta2) -> float:
    """Held-out log likelihood of true labels under the normalised prior."""
    terms = _terms_for_delta(_score_clusters(corpus, tree), -np.log(interdep.joint), interdep.delta_nbh)
    return _loglik(terms, beta1, beta2)


def optimize_score_weights(corpus, tree, interdeps: dict, base: MrfWeights = MrfWeights(),
                           beta1_range=(0.5, 1.5), beta2_range=(0.0, 0.2),
                           coarse=(0.05, 0.01), fine=(0.005, 0.001)):
    """Maximum-likelihood ``beta1``, ``beta2`` and neighbourhood.

    Parameters
    ----------
    corpus : dict or list of score note lists
        Held out from the context-tree training data.
    interdeps : dict
        Interdependence model per candidate ``delta_nbh``.

    Returns
    -------
    weights : MrfWeights
        `base` with the three fitted entries replaced.
    loglik : float
    """
    clusters = _score_clusters(corpus, tree)
    if not clusters:
        raise ValueError("no usable onset clusters in the held-out corpus")
    best = (-np.inf, None, None, None)
    for delta in sorted(interdeps):
        terms = _terms_for_delta(clusters, -np.log(interdeps[delta].joint), delta)
        ll, b1, b2 = _grid_best(terms, _axis(*beta1_range, coarse[0]), _axis(*beta2_range, coarse[1]))
        f1 = _axis(max(beta1_range[0], b1 - coarse[0]), min(beta1_range[1], b1 + coarse[0]), fine[0])
        f2 = _axis(max(beta2_range[0], b2 - coarse[1]), min(beta2_range[1], b2 + coarse[1]), fine[1])
        ll, b1, b2 = _grid_best(terms, f1, f2)
        logger.debug("delta %d: beta1=%.3f beta2=%.3f loglik=%.3f", delta, b1, b2, ll)
        if ll > best[0]:
            best = (ll, b1, b2, delta)
    ll, b1, b2, delta = best
    return base.replace(beta1=b1, beta2=b2, delta_nbh=delta), ll


# --- performance weights ----------------------------------------------------

def _prune(E_corners):
    """States never optimal on the weight box: strictly worse than one of the
    corner minimisers at every corner (energy is linear in the weights)."""
    keep = np.ones(E_corners.shape[1], dtype=bool)
    for ref in np.unique(np.argmin(E_corners, axis=1)):
        keep &= ~(E_corners > E_corners[:, [ref]]).all(axis=0)
    return np.flatnonzero(keep)


def optimize_perf_weights(dev, tree, durmodel, weights: MrfWeights = MrfWeights(), interdep=None,
                          beta31_grid=None, beta32_grid=None):
    """Duration weights minimising the mean per-piece error rate.

    Parameters
    ----------
    dev : list of (perf, ref_notes, tau, tempo)
        Performances with reference scores (matched by id), onset score
        times and tempos aligned with `perf`.

    Returns
    -------
    weights : MrfWeights
    error : float
        Mean error rate at the optimum.
    table : ndarray (len(beta31_grid), len(beta32_grid))
        Mean error rate over the whole grid.
    """
    b31 = _axis(0.0, 1.0, 0.01) if beta31_grid is None else np.asarray(beta31_grid, dtype=float)
    b32 = _axis(0.0, 0.1, 0.001) if beta32_grid is None else np.asarray(beta32_grid, dtype=float)
    W31, W32 = [w.ravel() for w in np.meshgrid(b31, b32, indexing="ij")]
    corners = np.array([[b31.min(), b32.min()], [b31.min(), b32.max()],
                        [b31.max(), b32.min()], [b31.max(), b32.max()]])
    active = interdep is not None and weights.beta2 > 0
    pair_nll = -np.log(interdep.joint) if active else None
    err_sum = np.zeros(W31.size)
    for perf, ref, tau, tempo in dev:
        ref_value = {n.id: n.note_value for n in ref}
        problem = build_problem(perf, tau, tempo, tree, durmodel)
        correct = np.full(W31.size, float(sum(ref_value[i] == r for i, r in problem.fallback.items())))
        for cp in problem.clusters:
            J, K = cp.tree_nll.shape
            hit = np.array([[ref_value[i] == v for v in cp.values] for i in cp.ids], dtype=float)
            base = weights.beta1 * cp.tree_nll
            block = weights.beta2 * pair_nll[np.ix_(cp.labels, cp.labels)] if active else None
            comps, pairs = _components(cp.pitches, weights.delta_nbh, active)
            if J > 10 and any(K ** len(m) > MAX_STATES for m in comps):
                # greedy decoding is not linear in the weights: decode per grid point
                for g in range(W31.size):
                    w = weights.replace(beta31=W31[g], beta32=W32[g])
                    ch = decode_cluster(cp.unary(w), cp.pitches, pair_nll, w.beta2, w.delta_nbh)
                    correct[g] += sum(hit[j, c] for j, c in enumerate(ch))
                continue
            for members in comps:
                E0 = _component_energy(members, pairs, base, block).ravel()
                C = _component_energy(members, pairs, cp.g_nll, None).ravel()
                D = _component_energy(members, pairs, cp.gbar_nll, None).ravel()
                H = _component_energy(members, pairs, hit, None).ravel()
                Ec = E0[None, :] + corners[:, :1] * C[None, :] + corners[:, 1:] * D[None, :]
                keep = _prune(Ec)
                E = E0[keep][None, :] + W31[:, None] * C[keep][None, :] + W32[:, None] * D[keep][None, :]
                correct += H[keep][np.argmin(E, axis=1)]
        err_sum += 1.0 - correct / len(perf)
    err = err_sum / len(dev)
    g = int(np.argmin(err))  # grid order: smallest beta31, then smallest beta32
    table = err.reshape(len(b31), len(b32))
    return weights.replace(beta31=float(W31[g]), beta32=float(W32[g])), float(err[g]), table
