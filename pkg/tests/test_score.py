from fractions import Fraction as F

import pytest
from hypothesis import given, strategies as st

from conftest import make_notes
from notevalue.score import (MISSING, OTHER, PerformanceNote, ScoreFormatError, ScoreNote,
                             build_onset_clusters, classify_note_value, context_features,
                             format_performance_tsv, format_score_tsv, ionv, ionvs,
                             parse_performance_tsv, parse_score_tsv, piece_features)


def test_clusters_sorted_and_grouped(two_voice):
    cl = build_onset_clusters(two_voice)
    assert cl.times == [F(k, 8) for k in range(8)]
    assert cl[0].member_ids == (8, 0)          # bass below melody
    assert sorted(i for c in cl for i in c.member_ids) == list(range(10))


def test_empty_input_gives_no_clusters():
    assert len(build_onset_clusters([])) == 0


def test_ionv_values(two_voice):
    cl = build_onset_clusters(two_voice)
    assert ionv(cl, 8, 1) == F(1, 8)
    assert ionv(cl, 8, 4) == F(1, 2)
    assert ionv(cl, 7, 1) is None
    assert ionvs(cl, 5) == [F(1, 8), F(1, 4)]
    with pytest.raises(KeyError):
        ionv(cl, 99, 1)
    with pytest.raises(ValueError):
        ionv(cl, 0, 0)


def test_labels_and_context(two_voice):
    cl = build_onset_clusters(two_voice)
    assert classify_note_value(two_voice, cl, 0) == 1
    assert classify_note_value(two_voice, cl, 8) == 4     # half note = 4th IONV
    assert classify_note_value(two_voice, cl, 9) == OTHER  # last cluster has none
    c = context_features(two_voice, cl, 8)
    assert c[0] == 73 - 48 and c[3] == 2                  # bass moves 48 -> 50
    assert c[7:] == (MISSING,) * 3


def test_other_label_for_unmatched_value():
    notes = make_notes([(0, F(3, 16), 60), (0, F(1, 8), 64), (F(1, 8), F(1, 8), 64), (F(1, 4), F(1, 4), 60)])
    _, lab, _ = piece_features(notes)
    assert lab[0] == OTHER and lab[1] == 1


@st.composite
def random_pieces(draw):
    n = draw(st.integers(1, 25))
    rows = [(F(draw(st.integers(0, 30)), 16), F(draw(st.integers(1, 16)), 16), draw(st.integers(21, 108)))
            for _ in range(n)]
    return make_notes(rows)


@given(random_pieces())
def test_context_and_label_match_direct_scan(notes):
    _, lab, ctx = piece_features(notes)
    times = sorted({n.onset for n in notes})
    for n in notes:
        later = [t for t in times if t > n.onset]
        want_ctx = []
        for k in range(10):
            if k < len(later):
                want_ctx.append(min(abs(n.pitch - m.pitch) for m in notes if m.onset == later[k]))
            else:
                want_ctx.append(MISSING)
        assert ctx[n.id] == tuple(want_ctx)
        gaps = [t - n.onset for t in later[:10]]
        assert lab[n.id] == (gaps.index(n.note_value) + 1 if n.note_value in gaps else OTHER)


@given(random_pieces())
def test_score_tsv_round_trip(notes):
    text = format_score_tsv(notes)
    assert parse_score_tsv(text) == sorted(notes, key=lambda n: n.id)
    assert format_score_tsv(parse_score_tsv(text)) == text


def test_score_tsv_errors_name_line():
    with pytest.raises(ScoreFormatError, match="x.tsv:2"):
        parse_score_tsv("# header\n1\t0\t1\t1\t4\n", "x.tsv")
    with pytest.raises(ScoreFormatError, match="duplicate"):
        parse_score_tsv("1\t0\t1\t1\t4\t60\t-1\n1\t0\t1\t1\t4\t62\t-1\n")
    with pytest.raises(ScoreFormatError):
        parse_score_tsv("1\t0\t0\t1\t4\t60\t-1\n")


def test_note_validation():
    with pytest.raises(TypeError):
        ScoreNote(0, 0.5, F(1, 4), 60)
    with pytest.raises(ValueError):
        ScoreNote(0, F(0), F(0), 60)
    with pytest.raises(ValueError):
        PerformanceNote(0, 1.0, 1.0, 1.0, 60)
    with pytest.raises(ValueError):
        PerformanceNote(0, 1.0, 2.0, 1.5, 60)


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(1e-3, 10), st.floats(0, 5), st.integers(21, 108)),
                min_size=1, max_size=20))
def test_performance_tsv_round_trip_at_microseconds(rows):
    perf = [PerformanceNote(i, t, t + d, t + d + e, p) for i, (t, d, e, p) in enumerate(rows)]
    back = parse_performance_tsv(format_performance_tsv(perf))
    for a, b in zip(perf, back):
        assert abs(a.onset_sec - b.onset_sec) <= 5e-7
        assert abs(a.key_release_sec - b.key_release_sec) <= 5e-7
        assert abs(a.damper_drop_sec - b.damper_drop_sec) <= 5e-7
        assert a.pitch == b.pitch and a.id == b.id
