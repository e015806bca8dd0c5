"""Context-tree prior over note-value labels.

Contexts are integer vectors (smallest pitch interval to each of the next ten
onset clusters). A binary tree of ``context[f] <= cut`` criteria partitions the
context space; each leaf carries an 11-way label distribution. The tree is
grown greedily by maximum likelihood and stopped by minimum description
length.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy.special import xlogy
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .score import MISSING, N_IONV, N_LABELS, piece_features

#: parameters added by one split (one extra 11-way distribution)
PARAMS_PER_SPLIT = N_LABELS - 1


class TreeStructureError(ValueError):
    """Raised when a serialised tree is not a proper binary tree."""


def extract_samples(corpus):
    """Training samples ``(X, y)`` from a corpus of scores.

    `corpus` is an iterable of note lists (or a dict of them). One sample per
    note; notes in the final onset cluster of a piece are skipped because
    their IONV labels are undefined.
    """
    pieces = corpus.values() if isinstance(corpus, dict) else corpus
    rows, labels = [], []
    for notes in pieces:
        _, lab, ctx = piece_features(notes)
        for nt in sorted(notes, key=lambda n: n.id):
            c = ctx[nt.id]
            if c[0] == MISSING:
                continue
            rows.append(c)
            labels.append(lab[nt.id])
    X = np.asarray(rows, dtype=np.int64).reshape(-1, N_IONV)
    return X, np.asarray(labels, dtype=np.int64)


def _loglik(counts):
    """ML log likelihood of label counts along the last axis."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum(axis=-1, keepdims=True)
    return xlogy(counts, counts).sum(axis=-1) - xlogy(total[..., 0], total[..., 0])


def split_gain(X, y, feature: int, cut: int) -> float:
    """Log-likelihood gain of splitting samples by ``X[:, feature] <= cut``.

    `feature` is 0-based. Distributions are the ML estimates of each sample
    set, so the gain is non-negative; ``-inf`` marks a split leaving one
    side empty.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    left = X[:, feature] <= cut
    if left.all() or not left.any():
        return -math.inf
    cl = np.bincount(y[left], minlength=N_LABELS)
    cr = np.bincount(y[~left], minlength=N_LABELS)
    return float(_loglik(cl) + _loglik(cr) - _loglik(cl + cr))


def _best_split(X, y):
    """Best ``(gain, feature, cut)`` over all features and observed cuts."""
    best = (-math.inf, None, None)
    n = len(y)
    if n < 2:
        return best
    parent = _loglik(np.bincount(y, minlength=N_LABELS))
    for f in range(X.shape[1]):
        values, inv = np.unique(X[:, f], return_inverse=True)
        if len(values) < 2:
            continue
        table = np.zeros((len(values), N_LABELS), dtype=np.int64)
        np.add.at(table, (inv, y), 1)
        left = np.cumsum(table, axis=0)[:-1]
        right = left[-1:] + table[-1:] - left
        gains = _loglik(left) + _loglik(right) - parent
        j = int(np.argmax(gains))  # first maximum: smallest cut
        if gains[j] > best[0]:
            best = (float(gains[j]), f, int(values[j]))
    return best


class ContextTreeClassifier(ClassifierMixin, BaseEstimator):
    """Context-tree model of note-value labels.

    Parameters
    ----------
    alpha : float
        Additive smoothing of leaf distributions.
    max_leaves : int or None
        Hard cap on the number of leaves; ``1`` gives the context-free model.
    use_mdl : bool
        Stop growing when a split increases the description length.
    total_count : int or None
        Sample count in the MDL penalty; defaults to the number of samples.

    Attributes
    ----------
    nodes_ : list of dict
        Node records indexed by id; the root has id 0.
    splits_ : list of dict
        Accepted splits in order, with their likelihood gain and change in
        description length.
    """

    def __init__(self, alpha=0.1, max_leaves=None, use_mdl=True, total_count=None):
        self.alpha = alpha
        self.max_leaves = max_leaves
        self.use_mdl = use_mdl
        self.total_count = total_count

    def fit(self, X, y):
        X = check_array(X, dtype=np.int64, ensure_min_samples=1)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have inconsistent lengths")
        if y.min() < 0 or y.max() >= N_LABELS:
            raise ValueError("labels must lie in 0..%d" % (N_LABELS - 1))
        self.classes_ = np.arange(N_LABELS)
        self.n_features_in_ = X.shape[1]
        total = self.total_count or len(y)
        penalty = 0.5 * PARAMS_PER_SPLIT * math.log2(total)

        nodes = [None]
        members = {0: np.arange(len(y))}
        cache = {0: _best_split(X, y)}
        splits = []
        while self.max_leaves is None or len(members) < self.max_leaves:
            cands = [(-g, f, c, leaf) for leaf, (g, f, c) in cache.items() if f is not None]
            if not cands:
                break
            neg_gain, f, cut, leaf = min(cands)
            gain = -neg_gain
            dl = -gain / math.log(2.0) + penalty
            if self.use_mdl and dl > 0:
                break
            idx = members.pop(leaf)
            del cache[leaf]
            go_left = X[idx, f] <= cut
            left_id, right_id = len(nodes), len(nodes) + 1
            nodes[leaf] = {"id": leaf, "kind": "split", "feature": f + 1, "cut": cut,
                           "left": left_id, "right": right_id}
            nodes.extend([None, None])
            for child, sel in ((left_id, idx[go_left]), (right_id, idx[~go_left])):
                members[child] = sel
                cache[child] = _best_split(X[sel], y[sel])
            splits.append({"leaf": leaf, "feature": f + 1, "cut": cut,
                           "gain": gain, "delta_dl": dl})
        for leaf, idx in members.items():
            counts = np.bincount(y[idx], minlength=N_LABELS)
            dist = (counts + self.alpha) / (counts.sum() + N_LABELS * self.alpha)
            nodes[leaf] = {"id": leaf, "kind": "leaf", "dist": dist.tolist(),
                           "count": int(counts.sum())}
        self.nodes_ = nodes
        self.splits_ = splits
        self._compile()
        return self

    # -- structure --------------------------------------------------------

    def _compile(self):
        nodes = self.nodes_
        n = len(nodes)
        feat = np.full(n, -1, dtype=np.int64)
        cut = np.zeros(n, dtype=np.int64)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        dist = np.zeros((n, N_LABELS))
        for i, node in enumerate(nodes):
            if node is None or node.get("id") != i:
                raise TreeStructureError("node %d missing or misnumbered" % i)
            if node["kind"] == "split":
                l, r = node["left"], node["right"]
                if not (0 <= l < n and 0 <= r < n):
                    raise TreeStructureError("node %d has dangling child id" % i)
                feat[i], cut[i], left[i], right[i] = node["feature"] - 1, node["cut"], l, r
            elif node["kind"] == "leaf":
                dist[i] = node["dist"]
            else:
                raise TreeStructureError("node %d has unknown kind %r" % (i, node["kind"]))
        # every node reachable exactly once from the root
        seen = np.zeros(n, dtype=int)
        stack = [0]
        while stack:
            i = stack.pop()
            seen[i] += 1
            if seen[i] > 1:
                raise TreeStructureError("node %d reached twice" % i)
            if feat[i] >= 0:
                stack.extend([left[i], right[i]])
        if not (seen == 1).all():
            raise TreeStructureError("unreachable nodes: %s" % np.flatnonzero(seen == 0).tolist())
        self._feat, self._cut, self._left, self._right, self._dist = feat, cut, left, right, dist

    @property
    def n_leaves_(self) -> int:
        check_is_fitted(self, "nodes_")
        return sum(1 for nd in self.nodes_ if nd["kind"] == "leaf")

    def leaf_ids(self) -> list:
        return [nd["id"] for nd in self.nodes_ if nd["kind"] == "leaf"]

    def apply(self, X):
        """Leaf id reached by each context."""
        check_is_fitted(self, "nodes_")
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        node = np.zeros(len(X), dtype=np.int64)
        active = self._feat[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self._feat[cur]] <= self._cut[cur]
            node[rows] = np.where(go_left, self._left[cur], self._right[cur])
            active = self._feat[node] >= 0
        return node

    def predict_proba(self, X):
        return self._dist[self.apply(X)]

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def distribution(self, context) -> np.ndarray:
        """Leaf distribution for a single context."""
        return self.predict_proba(np.asarray(context)[None, :])[0]

    def log_likelihood(self, X, y) -> float:
        p = self.predict_proba(X)
        return float(np.log(p[np.arange(len(y)), np.asarray(y)]).sum())

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "nodes_")
        return {"alpha": self.alpha, "nodes": self.nodes_}

    @classmethod
    def from_dict(cls, d: dict) -> "ContextTreeClassifier":
        tree = cls(alpha=d["alpha"])
        nodes = []
        for nd in d["nodes"]:
            nd = dict(nd)
            if nd.get("kind") == "leaf":
                nd["dist"] = [float(v) for v in nd["dist"]]
                if len(nd["dist"]) != N_LABELS:
                    raise TreeStructureError("leaf %s: expected %d probabilities" % (nd.get("id"), N_LABELS))
            nodes.append(nd)
        tree.nodes_ = nodes
        tree.splits_ = []
        tree.classes_ = np.arange(N_LABELS)
        tree.n_features_in_ = N_IONV
        tree._compile()
        return tree

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "ContextTreeClassifier":
        return cls.from_dict(json.loads(Path(path).read_text()))


def grow_context_tree(X, y, total_count=None, alpha=0.1) -> ContextTreeClassifier:
    return ContextTreeClassifier(alpha=alpha, total_count=total_count).fit(X, y)


def tree_lookup(tree: ContextTreeClassifier, context) -> np.ndarray:
    return tree.distribution(context)
