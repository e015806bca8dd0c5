"""Random polyphonic piano scores for training and simulation experiments.

Scores are in 4/4 on a sixteenth-note grid. Each voice fills every bar with
its own rhythm (upper voices busier, the bass slower), moves by small steps
in its own register, and occasionally doubles a note into a dyad or rests.
All voices stop at the final barline.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .score import ScoreNote

F = Fraction

# (centre pitch, range half-width, rhythm choices, rhythm weights, dyad prob)
_VOICES = {
    "soprano": (74, 9, [F(1, 16), F(1, 8), F(3, 16), F(1, 4), F(3, 8), F(1, 2)],
                [0.06, 0.42, 0.06, 0.32, 0.06, 0.08], 0.05),
    "alto": (65, 6, [F(1, 8), F(1, 4), F(3, 8), F(1, 2)],
             [0.25, 0.5, 0.08, 0.17], 0.25),
    "tenor": (56, 6, [F(1, 8), F(1, 4), F(1, 2), F(3, 4)],
              [0.15, 0.45, 0.32, 0.08], 0.25),
    "bass": (45, 7, [F(1, 4), F(1, 2), F(3, 4), F(1, 1)],
             [0.5, 0.38, 0.06, 0.06], 0.1),
}
_LAYOUTS = {2: ("soprano", "bass"), 3: ("soprano", "alto", "bass"),
            4: ("soprano", "alto", "tenor", "bass")}
BAR = F(1)


def piece_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for piece `index` of a seeded batch."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def _bar_rhythm(rng, values, weights, p_rest):
    """Durations (and rest flags) filling one bar."""
    out = []
    pos = F(0)
    w = np.asarray(weights, dtype=float)
    while pos < BAR:
        ok = np.array([pos + v <= BAR and (pos + v) % min(v, F(1, 4)) == 0 for v in values])
        if not ok.any():
            ok = np.array([pos + v <= BAR for v in values])
        p = np.where(ok, w, 0.0)
        v = values[int(rng.choice(len(values), p=p / p.sum()))]
        out.append((v, rng.random() < p_rest))
        pos += v
    return out


def random_score(rng: np.random.Generator, n_voices: int | None = None, min_notes: int = 300,
                 p_rest: float = 0.01) -> list:
    """One random score with at least `min_notes` notes."""
    if n_voices is None:
        n_voices = int(rng.integers(2, 5))
    if n_voices not in _LAYOUTS:
        raise ValueError("n_voices must be 2, 3 or 4")
    voices = _LAYOUTS[n_voices]
    pitch = {v: _VOICES[v][0] + int(rng.integers(-3, 4)) for v in voices}
    events = []  # (onset, value, pitch, voice)
    taken = set()
    bar_start = F(0)
    while True:
        for vi, name in enumerate(voices):
            centre, width, values, weights, p_dyad = _VOICES[name]
            t = bar_start
            for value, rest in _bar_rhythm(rng, values, weights, p_rest):
                if not rest:
                    step = int(rng.choice([-4, -3, -2, -1, 1, 2, 3, 4],
                                          p=[0.05, 0.1, 0.2, 0.15, 0.15, 0.2, 0.1, 0.05]))
                    p = pitch[name] + step
                    if abs(p - centre) > width:
                        p = pitch[name] - step
                    pitch[name] = p
                    chord = [p]
                    if rng.random() < p_dyad:
                        chord.append(p - int(rng.choice([3, 4, 5, 7])))
                    for q in chord:
                        while (t, q) in taken:
                            q -= 1
                        taken.add((t, q))
                        events.append((t, value, q, vi))
                t += value
        bar_start += BAR
        if len(events) >= min_notes:
            break
    events.sort(key=lambda e: (e[0], e[2], e[3]))
    return [ScoreNote(i, on, val, p, voice) for i, (on, val, p, voice) in enumerate(events)]


def random_corpus(n_pieces: int, seed: int, offset: int = 0, min_notes: int = 300) -> dict:
    """Named random scores; piece ``i`` draws from stream ``(seed, offset + i)``."""
    return {"piece%03d" % (offset + i): random_score(piece_rng(seed, offset + i), min_notes=min_notes)
            for i in range(n_pieces)}
