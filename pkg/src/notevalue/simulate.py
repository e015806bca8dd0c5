"""Synthetic performances of symbolic scores.

The tempo follows a floored Gaussian random walk over onset clusters, onsets
are jittered, and key-holding and damper-lifting durations are drawn from a
duration model scaled by note value and local tempo.

Random numbers come from ``numpy.random.Philox`` seeded with
``SeedSequence([seed, piece_index])``, so every piece has its own
reproducible stream independent of platform and of the other pieces.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .performance import DEFAULT_DURATION_MODEL, DurationModel
from .score import PerformanceNote, ScoreNote, build_onset_clusters
from .synth import piece_rng

V_FLOOR = 0.1


@dataclass(frozen=True)
class SimParams:
    """Simulation settings; ``durmodel=None`` gives durations exactly equal
    to ``r * v``."""

    v_ini: float = 2.0
    sigma_v_ini: float = 0.2
    sigma_v: float = 0.03
    sigma_t: float = 0.015
    durmodel: Optional[DurationModel] = field(default=DEFAULT_DURATION_MODEL)
    seed: int = 0
    t0: float = 0.5

    def __post_init__(self):
        if not self.v_ini > 0:
            raise ValueError("v_ini must be positive")
        if min(self.sigma_v_ini, self.sigma_v, self.sigma_t) < 0:
            raise ValueError("standard deviations must be non-negative")

    @classmethod
    def noiseless(cls, v_ini: float = 2.0, seed: int = 0) -> "SimParams":
        return cls(v_ini, 0.0, 0.0, 0.0, None, seed)

    def to_dict(self) -> dict:
        return {"v_ini": self.v_ini, "sigma_v_ini": self.sigma_v_ini, "sigma_v": self.sigma_v,
                "sigma_t": self.sigma_t, "seed": self.seed, "t0": self.t0,
                "durmodel": None if self.durmodel is None else self.durmodel.to_dict()}

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "SimParams":
        """`durmodel` may be an inline model, a path to a model file, the
        string ``"default"`` or ``null`` for point-mass durations."""
        dm = d.get("durmodel", "default")
        if dm == "default":
            dm = DEFAULT_DURATION_MODEL
        elif isinstance(dm, str):
            p = Path(dm)
            dm = DurationModel.load(p if p.is_absolute() or base_dir is None else Path(base_dir) / p)
        elif dm is not None:
            dm = DurationModel.from_dict(dm)
        known = {k: d[k] for k in ("v_ini", "sigma_v_ini", "sigma_v", "sigma_t", "t0") if k in d}
        return cls(durmodel=dm, seed=int(d.get("seed", 0)), **{k: float(v) for k, v in known.items()})

    @classmethod
    def load(cls, path) -> "SimParams":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def simulate_performance(score: Sequence[ScoreNote], params: SimParams,
                         rng: Optional[np.random.Generator] = None):
    """Render one score.

    Returns
    -------
    perf : list of PerformanceNote
        Sorted by onset then pitch; ids equal the score note ids.
    alignment : list of (perf_id, score_id)
    tempo : dict
        True local tempo of each note id.
    """
    if rng is None:
        rng = piece_rng(params.seed, 0)
    clusters = build_onset_clusters(score)
    by_id = {n.id: n for n in score}
    if len(by_id) != len(score):
        raise ValueError("duplicate note ids in score")
    v = max(V_FLOOR, params.v_ini + params.sigma_v_ini * rng.standard_normal())
    t = params.t0 + float(clusters.times[0]) * v if len(clusters) else params.t0
    perf, tempo = [], {}
    v_prev = v
    for k, cl in enumerate(clusters):
        if k > 0:
            v = max(V_FLOOR, v + params.sigma_v * rng.standard_normal())
            step = float(cl.time - clusters.times[k - 1]) * v_prev
            while True:
                t_new = t + step + params.sigma_t * rng.standard_normal()
                if t_new > t:
                    break
            t = t_new
        for nid in cl.member_ids:
            r = float(by_id[nid].note_value)
            if params.durmodel is None:
                x = xb = 1.0
            else:
                x = params.durmodel.sample_g(rng)
                xb = params.durmodel.sample_gbar(rng)
            d = r * v * x
            db = max(d, r * v * xb)
            perf.append(PerformanceNote(nid, t, t + d, t + db, by_id[nid].pitch))
            tempo[nid] = v
        v_prev = v
    perf.sort(key=lambda p: (p.onset_sec, p.pitch, p.id))
    return perf, [(p.id, p.id) for p in perf], tempo


def simulate_corpus(corpus: dict, params: SimParams, offset: int = 0) -> dict:
    """Simulate every piece (in sorted name order) with its own stream."""
    out = {}
    for i, name in enumerate(sorted(corpus)):
        out[name] = simulate_performance(corpus[name], params, piece_rng(params.seed, offset + i))
    return out
