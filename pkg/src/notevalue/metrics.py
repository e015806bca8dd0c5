"""Error rate and scale error between estimated and reference note values,
plus their variants made invariant to a global rescaling of score time."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .score import ScoreNote, build_onset_clusters, ionv


def _check_lengths(est, ref):
    if len(est) != len(ref):
        raise ValueError("estimated and reference lengths differ: %d vs %d" % (len(est), len(ref)))


def error_rate(est: Sequence, ref: Sequence) -> float:
    """Fraction of positions where the values differ (exact comparison)."""
    _check_lengths(est, ref)
    if not est:
        return 0.0
    return sum(Fraction(a) != Fraction(b) for a, b in zip(est, ref)) / len(est)


def _abs_log_ratio(a, b) -> float:
    q = Fraction(a) / Fraction(b)
    return abs(math.log(q.numerator) - math.log(q.denominator))


def _exact_mean(values) -> float:
    values = list(values)
    return float(sum(map(Fraction, values), Fraction(0)) / len(values))


def scale_error(est: Sequence, ref: Sequence) -> float:
    """``exp`` of the mean absolute log ratio; 1 for a perfect match and 2
    when every value is doubled or halved."""
    _check_lengths(est, ref)
    if any(Fraction(x) <= 0 for x in list(est) + list(ref)):
        raise ValueError("scale error needs positive note values")
    if not est:
        return 1.0
    return math.exp(_exact_mean(_abs_log_ratio(a, b) for a, b in zip(est, ref)))


def normalize_by_first_ionv(notes: Sequence[ScoreNote]) -> dict:
    """Note value over first inter-onset note value, per note id.

    Notes in the final onset cluster have no IONV and map to ``None``.
    """
    clusters = build_onset_clusters(notes)
    out = {}
    for nt in notes:
        first = ionv(clusters, nt.id, 1)
        out[nt.id] = None if first is None else nt.note_value / first
    return out


@dataclass
class EvalReport:
    error_rate: float
    scale_error: float
    error_rate_scale_invariant: float
    scale_error_scale_invariant: float
    N: int
    n_scale_invariant: int = 0
    n_excluded_final: int = 0
    n_zero_excluded: int = 0
    onset_error_rate: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def match_notes(est: Sequence[ScoreNote], ref: Sequence[ScoreNote], by: str = "id"):
    """Pair estimated and reference notes by id, or by (onset, pitch) order."""
    if by == "id":
        e = {n.id: n for n in est}
        r = {n.id: n for n in ref}
        if set(e) != set(r):
            missing = sorted(set(e) ^ set(r))[:5]
            raise ValueError("note ids differ between scores (e.g. %s)" % missing)
        return [(e[i], r[i]) for i in sorted(r)]
    if by == "order":
        _check_lengths(est, ref)
        key = lambda n: (n.onset, n.pitch, n.id)
        return list(zip(sorted(est, key=key), sorted(ref, key=key)))
    raise ValueError("unknown matching %r" % by)


def evaluate(est: Sequence[ScoreNote], ref: Sequence[ScoreNote], by: str = "id") -> EvalReport:
    """All metrics for one piece."""
    pairs = match_notes(est, ref, by)
    ev = [a.note_value for a, _ in pairs]
    rv = [b.note_value for _, b in pairs]
    pos = [(a, b) for a, b in zip(ev, rv) if a > 0]
    ne = normalize_by_first_ionv(est)
    nr = normalize_by_first_ionv(ref)
    inv = [(ne[a.id], nr[b.id]) for a, b in pairs if ne[a.id] is not None and nr[b.id] is not None]
    inv_pos = [(a, b) for a, b in inv if a > 0]
    return EvalReport(
        error_rate=error_rate(ev, rv),
        scale_error=scale_error(*zip(*pos)) if pos else 1.0,
        error_rate_scale_invariant=error_rate(*zip(*inv)) if inv else 0.0,
        scale_error_scale_invariant=scale_error(*zip(*inv_pos)) if inv_pos else 1.0,
        N=len(pairs),
        n_scale_invariant=len(inv),
        n_excluded_final=len(pairs) - len(inv),
        n_zero_excluded=len(ev) - len(pos),
        onset_error_rate=error_rate([a.onset for a, _ in pairs], [b.onset for _, b in pairs]),
    )


METRIC_FIELDS = ("error_rate", "scale_error", "error_rate_scale_invariant",
                 "scale_error_scale_invariant")


def aggregate(reports: Sequence[EvalReport]) -> dict:
    """Mean, standard deviation and standard error over pieces."""
    out = {"pieces": len(reports)}
    for f in METRIC_FIELDS:
        x = np.array([getattr(r, f) for r in reports], dtype=float)
        std = float(x.std(ddof=1)) if len(x) > 1 else 0.0
        out[f] = {"mean": float(x.mean()) if len(x) else float("nan"), "std": std,
                  "ste": std / math.sqrt(len(x)) if len(x) else float("nan")}
    return out
