"""Standard MIDI File reading and extraction of performed notes.

Only what is needed for piano performances is decoded: note on/off and
control changes, plus set-tempo meta events for the tick-to-seconds map.
"""
from __future__ import annotations

import bisect
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .score import PerformanceNote

logger = logging.getLogger(__name__)

DEFAULT_TEMPO = 500000  # microseconds per quarter note
SUSTAIN = 64

_DATA_BYTES = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}
_KINDS = {0x8: "note-off", 0x9: "note-on", 0xB: "control-change"}


class ParseError(ValueError):
    """Malformed MIDI data; `offset` is the byte position of the problem."""

    def __init__(self, msg: str, offset: int):
        super().__init__("%s (byte offset %d)" % (msg, offset))
        self.offset = offset


@dataclass(frozen=True)
class RawMidiEvent:
    tick: int
    time: float
    kind: str
    number: int      # pitch or controller
    value: int       # velocity or controller value
    channel: int


class TempoMap:
    """Piecewise-linear tick to seconds conversion.

    Parameters
    ----------
    ppq : int or None
        Ticks per quarter note; ``None`` for SMPTE time division.
    changes : list of (tick, microseconds per quarter)
    seconds_per_tick : float, optional
        Fixed tick length for SMPTE division.
    """

    def __init__(self, ppq, changes=(), seconds_per_tick=None):
        self.ppq = ppq
        self.seconds_per_tick = seconds_per_tick
        ticks, secs, tempos = [0], [0.0], [DEFAULT_TEMPO]
        for tick, tempo in sorted(changes, key=lambda c: c[0]):
            if ppq is None:
                break
            secs.append(secs[-1] + (tick - ticks[-1]) * tempos[-1] * 1e-6 / ppq)
            ticks.append(tick)
            tempos.append(tempo)
        self.ticks, self.secs, self.tempos = ticks, secs, tempos

    def seconds(self, tick: int) -> float:
        if self.ppq is None:
            return tick * self.seconds_per_tick
        i = bisect.bisect_right(self.ticks, tick) - 1
        return self.secs[i] + (tick - self.ticks[i]) * self.tempos[i] * 1e-6 / self.ppq


class _Reader:
    def __init__(self, data: bytes, pos: int, end: int):
        self.data, self.pos, self.end = data, pos, end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise ParseError("unexpected end of track", self.pos)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise ParseError("unexpected end of track", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise ParseError("variable-length quantity longer than 4 bytes", self.pos)


def _parse_track(r: _Reader, track: int, out: list, tempos: list):
    tick = 0
    status = None
    seq = 0
    while r.pos < r.end:
        tick += r.varlen()
        b = r.byte()
        if b == 0xFF:
            mtype = r.byte()
            data = r.take(r.varlen())
            if mtype == 0x51:
                if len(data) != 3:
                    raise ParseError("set-tempo event with %d data bytes" % len(data), r.pos)
                tempos.append((tick, int.from_bytes(data, "big")))
            elif mtype == 0x2F:
                break
            continue
        if b in (0xF0, 0xF7):
            r.take(r.varlen())
            status = None
            continue
        if b & 0x80:
            if b >= 0xF0:
                raise ParseError("unsupported system message 0x%02X" % b, r.pos - 1)
            status = b
            first = r.byte()
        else:
            if status is None:
                raise ParseError("running status without a previous status byte", r.pos - 1)
            first = b
        hi = status >> 4
        second = r.byte() if _DATA_BYTES[hi] == 2 else 0
        if hi in _KINDS:
            out.append((tick, track, seq, _KINDS[hi], first, second, status & 0x0F))
            seq += 1


def parse_smf(data: bytes):
    """Decode a format 0 or 1 Standard MIDI File.

    Returns
    -------
    events : list of RawMidiEvent
        Note and control events of all tracks, merged and sorted by tick
        (ties keep track order, then file order).
    tempo_map : TempoMap
    """
    data = bytes(data)
    if len(data) < 14 or data[:4] != b"MThd":
        raise ParseError("missing MThd header", 0)
    hlen = struct.unpack(">I", data[4:8])[0]
    if hlen < 6 or 8 + hlen > len(data):
        raise ParseError("bad header length %d" % hlen, 4)
    fmt, ntrks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise ParseError("unsupported SMF format %d" % fmt, 8)
    if division & 0x8000:
        fps = 256 - (division >> 8)
        fps = 29.97 if fps == 29 else fps
        tpf = division & 0xFF
        if fps <= 0 or tpf == 0:
            raise ParseError("bad SMPTE division", 12)
        ppq, spt = None, 1.0 / (fps * tpf)
    else:
        if division == 0:
            raise ParseError("zero ticks per quarter note", 12)
        ppq, spt = division, None
    pos = 8 + hlen
    raw, tempos = [], []
    track = 0
    while track < ntrks:
        if pos + 8 > len(data):
            raise ParseError("truncated chunk header (expected %d tracks, found %d)" % (ntrks, track), pos)
        ctype = data[pos:pos + 4]
        clen = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        start, end = pos + 8, pos + 8 + clen
        if end > len(data):
            raise ParseError("chunk %r runs past end of file" % ctype.decode("latin-1"), pos)
        if ctype == b"MTrk":
            _parse_track(_Reader(data, start, end), track, raw, tempos)
            track += 1
        pos = end
    tmap = TempoMap(ppq, tempos, spt)
    raw.sort(key=lambda e: (e[0], e[1], e[2]))
    events = [RawMidiEvent(tick, tmap.seconds(tick), kind, num, val, ch)
              for tick, _, _, kind, num, val, ch in raw]
    return events, tmap


def read_midi(path):
    return parse_smf(Path(path).read_bytes())[0]


def _pedal_curve(events, threshold: int):
    """Times of sustain changes, value at each, and for each index the first
    later-or-equal index whose value is below `threshold`."""
    times, values = [], []
    for e in events:
        if e.kind == "control-change" and e.number == SUSTAIN:
            times.append(e.time)
            values.append(e.value)
    n = len(times)
    nxt = np.full(n + 1, n, dtype=np.int64)
    for i in range(n - 1, -1, -1):
        nxt[i] = i if values[i] < threshold else nxt[i + 1]
    return times, values, nxt


def damper_drop_time(t_off: float, times, values, nxt, threshold: int, end_time: float) -> float:
    """First time at or after `t_off` at which the sustain pedal is up."""
    i = bisect.bisect_right(times, t_off) - 1
    if i < 0 or values[i] < threshold:
        return t_off
    j = nxt[i + 1]
    return times[j] if j < len(times) else max(end_time, t_off)


def extract_performance(events, pedal_threshold: int = 64) -> list:
    """Performed notes from time-ordered MIDI events.

    Note-offs (or velocity-0 note-ons) close the most recent open note of the
    same channel and pitch. Damper drop is the first time from key release
    on at which controller 64 is below `pedal_threshold`. Output ids follow
    onset order.
    """
    if not events:
        return []
    end_time = max(e.time for e in events)
    open_notes = {}
    spans = []
    for e in events:
        if e.kind == "note-on" and e.value > 0:
            open_notes.setdefault((e.channel, e.number), []).append(e.time)
        elif e.kind in ("note-on", "note-off"):
            stack = open_notes.get((e.channel, e.number))
            if not stack:
                logger.warning("unmatched note-off for pitch %d at %.6f s ignored", e.number, e.time)
                continue
            spans.append((stack.pop(), e.time, e.number))
    for (ch, pitch), stack in sorted(open_notes.items()):
        for onset in stack:
            logger.warning("note %d from %.6f s still held at end; closed at %.6f s",
                           pitch, onset, end_time)
            spans.append((onset, end_time, pitch))
    times, values, nxt = _pedal_curve(events, pedal_threshold)
    spans.sort()
    out = []
    for onset, off, pitch in spans:
        if not off > onset:
            logger.warning("zero-length note %d at %.6f s dropped", pitch, onset)
            continue
        if not 21 <= pitch <= 108:
            logger.warning("pitch %d outside the piano range dropped", pitch)
            continue
        drop = damper_drop_time(off, times, values, nxt, pedal_threshold, end_time)
        out.append(PerformanceNote(len(out), onset, off, drop, pitch))
    return out


def read_performance_midi(path, pedal_threshold: int = 64) -> list:
    return extract_performance(read_midi(path), pedal_threshold)
