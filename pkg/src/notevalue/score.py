"""Symbolic score data model.

Score times are exact rationals in whole-note units, represented with
:class:`fractions.Fraction`. A note value is the difference between offset
and onset score times.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

ScoreTime = Fraction

N_IONV = 10
N_LABELS = N_IONV + 1
#: label index of the complement class; labels 1..10 are IONV(1)..IONV(10)
OTHER = 0
#: context entry used when the k-th next onset cluster does not exist
MISSING = 128

PITCH_MIN, PITCH_MAX = 21, 108


class ScoreFormatError(ValueError):
    """Raised for malformed score TSV input."""


def as_score_time(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        raise TypeError("score times must be exact; got float %r" % value)
    return Fraction(value)


@dataclass(frozen=True)
class ScoreNote:
    id: int
    onset: Fraction
    note_value: Fraction
    pitch: int
    voice: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "onset", as_score_time(self.onset))
        object.__setattr__(self, "note_value", as_score_time(self.note_value))
        if self.note_value <= 0:
            raise ValueError("note %d: note value must be positive, got %s"
                             % (self.id, self.note_value))
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise ValueError("note %d: pitch %d outside [%d, %d]"
                             % (self.id, self.pitch, PITCH_MIN, PITCH_MAX))

    @property
    def offset(self) -> Fraction:
        return self.onset + self.note_value


@dataclass(frozen=True)
class PerformanceNote:
    """A performed note: onset, key-release and damper-drop times in seconds."""

    id: int
    onset_sec: float
    key_release_sec: float
    damper_drop_sec: float
    pitch: int

    def __post_init__(self):
        if not self.key_release_sec > self.onset_sec:
            raise ValueError("note %d: key release must follow onset" % self.id)
        if self.damper_drop_sec < self.key_release_sec:
            raise ValueError("note %d: damper drop precedes key release" % self.id)
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise ValueError("note %d: pitch %d outside [%d, %d]"
                             % (self.id, self.pitch, PITCH_MIN, PITCH_MAX))

    @property
    def duration(self) -> float:
        """Key-holding duration."""
        return self.key_release_sec - self.onset_sec

    @property
    def damper_duration(self) -> float:
        return self.damper_drop_sec - self.onset_sec


@dataclass(frozen=True)
class OnsetCluster:
    time: Fraction
    member_ids: tuple


class ClusterIndex:
    """Onset clusters of a piece with note-id lookup.

    Behaves like a sequence of :class:`OnsetCluster` sorted by time.
    """

    def __init__(self, clusters: Sequence[OnsetCluster]):
        self.clusters = list(clusters)
        self.times = [c.time for c in self.clusters]
        self._pos = {}
        for k, c in enumerate(self.clusters):
            for i in c.member_ids:
                self._pos[i] = k

    def __len__(self):
        return len(self.clusters)

    def __getitem__(self, k):
        return self.clusters[k]

    def __iter__(self):
        return iter(self.clusters)

    def position(self, note_id: int) -> int:
        try:
            return self._pos[note_id]
        except KeyError:
            raise KeyError("unknown note id %r" % (note_id,)) from None


def build_onset_clusters(notes: Iterable[ScoreNote]) -> ClusterIndex:
    """Group notes with identical onset score times.

    Members of each cluster are listed by ascending pitch, then id, so the
    result does not depend on input order.
    """
    groups = {}
    for note in notes:
        groups.setdefault(note.onset, []).append(note)
    clusters = []
    for time in sorted(groups):
        members = sorted(groups[time], key=lambda n: (n.pitch, n.id))
        clusters.append(OnsetCluster(time, tuple(n.id for n in members)))
    return ClusterIndex(clusters)


def _as_index(clusters) -> ClusterIndex:
    return clusters if isinstance(clusters, ClusterIndex) else ClusterIndex(clusters)


def ionv(clusters, n: int, k: int) -> Optional[Fraction]:
    """Inter-onset note value: score time from note `n`'s cluster to the
    `k`-th following cluster, or ``None`` past the end of the piece."""
    if k < 1:
        raise ValueError("k must be >= 1, got %r" % (k,))
    index = _as_index(clusters)
    pos = index.position(n)
    if pos + k >= len(index):
        return None
    return index.times[pos + k] - index.times[pos]


def ionvs(clusters, n: int, kmax: int = N_IONV) -> list:
    """All available IONV(n, 1..kmax) values (possibly fewer near the end)."""
    index = _as_index(clusters)
    pos = index.position(n)
    t0 = index.times[pos]
    return [t - t0 for t in index.times[pos + 1:pos + 1 + kmax]]


def context_features(notes, clusters, n: int) -> tuple:
    """Smallest unsigned pitch interval from note `n` to each of the ten
    following onset clusters, ``MISSING`` where a cluster does not exist."""
    by_id = _note_map(notes)
    index = _as_index(clusters)
    pos = index.position(n)
    p = by_id[n].pitch
    out = []
    for k in range(1, N_IONV + 1):
        if pos + k < len(index):
            out.append(min(abs(p - by_id[m].pitch) for m in index[pos + k].member_ids))
        else:
            out.append(MISSING)
    return tuple(out)


def classify_note_value(notes, clusters, n: int) -> int:
    """Label of note `n`'s value: k if it equals IONV(n, k), else ``OTHER``."""
    note = _note_map(notes)[n]
    for k, value in enumerate(ionvs(clusters, n), start=1):
        if value == note.note_value:
            return k
        if value > note.note_value:
            break
    return OTHER


def _note_map(notes) -> dict:
    if isinstance(notes, dict):
        return notes
    return {nt.id: nt for nt in notes}


def piece_features(notes: Sequence[ScoreNote]):
    """Labels and contexts for every note of a piece.

    Returns
    -------
    clusters : ClusterIndex
    labels : dict
        note id -> label (``OTHER`` for final-cluster notes)
    contexts : dict
        note id -> context tuple
    """
    clusters = build_onset_clusters(notes)
    by_id = _note_map(notes)
    labels, contexts = {}, {}
    for nt in notes:
        labels[nt.id] = classify_note_value(by_id, clusters, nt.id)
        contexts[nt.id] = context_features(by_id, clusters, nt.id)
    return clusters, labels, contexts


def nearest_index(sorted_values: Sequence, x) -> int:
    """Index of the element of `sorted_values` closest to `x`."""
    j = bisect.bisect_left(sorted_values, x)
    if j == 0:
        return 0
    if j == len(sorted_values):
        return j - 1
    return j if sorted_values[j] - x < x - sorted_values[j - 1] else j - 1


# --- TSV interchange ------------------------------------------------------

def format_score_tsv(notes: Iterable[ScoreNote]) -> str:
    lines = ["# id\tonset_num\tonset_den\tvalue_num\tvalue_den\tpitch\tvoice"]
    for nt in sorted(notes, key=lambda n: n.id):
        voice = -1 if nt.voice is None else nt.voice
        lines.append("%d\t%d\t%d\t%d\t%d\t%d\t%d" % (
            nt.id, nt.onset.numerator, nt.onset.denominator,
            nt.note_value.numerator, nt.note_value.denominator, nt.pitch, voice))
    return "\n".join(lines) + "\n"


def parse_score_tsv(text: str, source: str = "<string>") -> list:
    notes = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.rstrip("\n").split("\t")
        try:
            if len(fields) != 7:
                raise ValueError("expected 7 fields, got %d" % len(fields))
            nid, on_n, on_d, va_n, va_d, pitch, voice = (int(f) for f in fields)
            if on_d <= 0 or va_d <= 0:
                raise ValueError("denominators must be positive")
            note = ScoreNote(nid, Fraction(on_n, on_d), Fraction(va_n, va_d),
                             pitch, None if voice < 0 else voice)
        except ValueError as exc:
            raise ScoreFormatError("%s:%d: %s" % (source, lineno, exc)) from None
        if nid in seen:
            raise ScoreFormatError("%s:%d: duplicate note id %d" % (source, lineno, nid))
        seen.add(nid)
        notes.append(note)
    return notes


def read_score_tsv(path: Union[str, Path]) -> list:
    path = Path(path)
    return parse_score_tsv(path.read_text(encoding="utf-8"), str(path))


def write_score_tsv(path: Union[str, Path], notes: Iterable[ScoreNote]) -> None:
    Path(path).write_text(format_score_tsv(notes), encoding="utf-8")


def read_corpus(directory: Union[str, Path]) -> dict:
    """Read every ``*.tsv`` score in `directory`, keyed by file stem."""
    directory = Path(directory)
    return {p.stem: read_score_tsv(p) for p in sorted(directory.glob("*.tsv"))}


# --- performance and alignment files -----------------------------------------

def format_performance_tsv(perf: Iterable[PerformanceNote]) -> str:
    lines = ["# id\tonset_sec\tkey_release_sec\tdamper_drop_sec\tpitch"]
    for p in perf:
        lines.append("%d\t%.6f\t%.6f\t%.6f\t%d" % (
            p.id, p.onset_sec, p.key_release_sec, p.damper_drop_sec, p.pitch))
    return "\n".join(lines) + "\n"


def _parse_rows(text: str, source: str, n_fields: int, convert):
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        try:
            if len(fields) != n_fields:
                raise ValueError("expected %d fields, got %d" % (n_fields, len(fields)))
            out.append(convert(fields))
        except ValueError as exc:
            raise ScoreFormatError("%s:%d: %s" % (source, lineno, exc)) from None
    return out


def parse_performance_tsv(text: str, source: str = "<string>") -> list:
    perf = _parse_rows(text, source, 5, lambda f: PerformanceNote(
        int(f[0]), float(f[1]), float(f[2]), float(f[3]), int(f[4])))
    if len({p.id for p in perf}) != len(perf):
        raise ScoreFormatError("%s: duplicate note ids" % source)
    return perf


def read_performance_tsv(path: Union[str, Path]) -> list:
    path = Path(path)
    return parse_performance_tsv(path.read_text(encoding="utf-8"), str(path))


def write_performance_tsv(path: Union[str, Path], perf: Iterable[PerformanceNote]) -> None:
    Path(path).write_text(format_performance_tsv(perf), encoding="utf-8")


def format_alignment_tsv(pairs: Iterable[tuple]) -> str:
    lines = ["# perf_id\tscore_id"] + ["%d\t%d" % (a, b) for a, b in pairs]
    return "\n".join(lines) + "\n"


def read_alignment_tsv(path: Union[str, Path]) -> dict:
    """Map performance note id -> score note id."""
    path = Path(path)
    rows = _parse_rows(path.read_text(encoding="utf-8"), str(path), 2,
                       lambda f: (int(f[0]), int(f[1])))
    return dict(rows)


def read_tempo_tsv(path: Union[str, Path]) -> dict:
    """Per-note local tempos, ``id<TAB>seconds_per_whole_note``."""
    path = Path(path)
    rows = _parse_rows(path.read_text(encoding="utf-8"), str(path), 2,
                       lambda f: (int(f[0]), float(f[1])))
    return dict(rows)
