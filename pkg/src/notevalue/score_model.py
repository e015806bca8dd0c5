"""Interdependence of note values within onset clusters, and the MRF weight
record shared by the decoder and the command line."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .score import N_LABELS, piece_features

logger = logging.getLogger(__name__)

MAX_DELTA = 15


@dataclass
class InterdependenceModel:
    """Joint label distribution of same-onset note pairs whose pitches lie
    within `delta_nbh` semitones."""

    delta_nbh: int
    joint: np.ndarray

    def __post_init__(self):
        self.joint = np.asarray(self.joint, dtype=float)
        if self.joint.shape != (N_LABELS, N_LABELS):
            raise ValueError("joint must be %dx%d" % (N_LABELS, N_LABELS))
        if abs(self.joint.sum() - 1.0) > 1e-9 or (self.joint < 0).any():
            raise ValueError("joint must be a probability matrix")

    def to_dict(self) -> dict:
        return {"delta_nbh": int(self.delta_nbh), "joint": self.joint.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "InterdependenceModel":
        return cls(int(d["delta_nbh"]), np.array(d["joint"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "InterdependenceModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _pair_counts(corpus, deltas):
    """Label-pair counts for each delta, both orders of every pair."""
    pieces = corpus.values() if isinstance(corpus, dict) else corpus
    counts = {d: np.zeros((N_LABELS, N_LABELS)) for d in deltas}
    dmax = max(deltas)
    for notes in pieces:
        clusters, labels, contexts = piece_features(notes)
        pitch = {nt.id: nt.pitch for nt in notes}
        last = len(clusters) - 1
        for k, cl in enumerate(clusters):
            if k == last:
                continue
            ids = cl.member_ids
            for i in range(len(ids)):
                for j in range(i + 1, len(ids)):
                    gap = abs(pitch[ids[i]] - pitch[ids[j]])
                    if gap > dmax:
                        continue
                    a, b = labels[ids[i]], labels[ids[j]]
                    for d in deltas:
                        if gap <= d:
                            counts[d][a, b] += 1
                            counts[d][b, a] += 1
    return counts


def learn_interdependence(corpus, delta_nbh: int, alpha: float = 0.1) -> InterdependenceModel:
    """Joint label distribution over same-onset pairs within `delta_nbh`
    semitones (final clusters excluded), add-`alpha` smoothed."""
    return learn_interdependence_all(corpus, [delta_nbh], alpha)[delta_nbh]


def learn_interdependence_all(corpus, deltas=range(MAX_DELTA + 1), alpha: float = 0.1) -> dict:
    deltas = list(deltas)
    if any(d < 0 for d in deltas):
        raise ValueError("delta_nbh must be non-negative")
    out = {}
    for d, c in _pair_counts(corpus, deltas).items():
        if c.sum() == 0:
            logger.info("no note pairs within %d semitones; using a uniform joint", d)
        smoothed = c + alpha
        out[d] = InterdependenceModel(d, smoothed / smoothed.sum())
    return out


@dataclass(frozen=True)
class MrfWeights:
    """Weights of the context, interdependence, key-holding and
    damper-lifting terms, and the pitch neighbourhood of the pair term."""

    beta1: float = 0.965
    beta2: float = 0.03
    beta31: float = 0.21
    beta32: float = 0.003
    delta_nbh: int = 12

    def __post_init__(self):
        for name in ("beta1", "beta2", "beta31", "beta32"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError("%s must be finite and non-negative, got %r" % (name, v))
        if self.delta_nbh < 0:
            raise ValueError("delta_nbh must be non-negative")

    def replace(self, **kw) -> "MrfWeights":
        d = asdict(self)
        d.update({k: v for k, v in kw.items() if v is not None})
        return MrfWeights(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MrfWeights":
        return cls(float(d["beta1"]), float(d["beta2"]), float(d["beta31"]),
                   float(d["beta32"]), int(d["delta_nbh"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "MrfWeights":
        return cls.from_dict(json.loads(Path(path).read_text()))
