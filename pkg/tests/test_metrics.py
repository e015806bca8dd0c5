from fractions import Fraction as F

import math
import pytest

from conftest import make_notes
from notevalue.metrics import aggregate, error_rate, evaluate, normalize_by_first_ionv, scale_error
from notevalue.score import ScoreNote


def rescale(notes, c):
    return [ScoreNote(n.id, n.onset * c, n.note_value * c, n.pitch, n.voice) for n in notes]


def test_identical(two_voice):
    rep = evaluate(two_voice, two_voice)
    assert rep.error_rate == 0.0
    assert rep.scale_error == 1.0
    assert rep.error_rate_scale_invariant == 0.0
    assert rep.scale_error_scale_invariant == 1.0
    assert rep.N == len(two_voice)


def test_doubled_and_halved(two_voice):
    assert evaluate(rescale(two_voice, 2), two_voice).scale_error == 2.0
    assert evaluate(rescale(two_voice, F(1, 2)), two_voice).scale_error == 2.0
    assert evaluate(rescale(two_voice, 2), two_voice).error_rate == 1.0


def test_scale_invariant_under_global_rescaling(two_voice):
    est = list(two_voice)
    est[0] = ScoreNote(est[0].id, est[0].onset, est[0].note_value * 3, est[0].pitch, est[0].voice)
    a = evaluate(est, two_voice)
    b = evaluate(rescale(est, 2), two_voice)
    assert a.error_rate_scale_invariant == b.error_rate_scale_invariant
    assert a.scale_error_scale_invariant == b.scale_error_scale_invariant
    assert a.error_rate_scale_invariant > 0


def test_hand_values():
    assert error_rate([F(1, 4), F(1, 2), F(1, 8)], [F(1, 4), F(1, 4), F(1, 8)]) == pytest.approx(1 / 3)
    assert scale_error([F(1, 4), F(1, 2)], [F(1, 4), F(1, 8)]) == pytest.approx(math.exp(math.log(4) / 2))
    with pytest.raises(ValueError):
        scale_error([0], [1])
    with pytest.raises(ValueError):
        error_rate([1], [1, 2])


def test_normalize_and_final_cluster():
    notes = make_notes([(0, F(1, 2), 60), (F(1, 4), F(1, 4), 64), (F(1, 2), F(1, 4), 60)])
    nm = normalize_by_first_ionv(notes)
    assert nm == {0: 2, 1: 1, 2: None}
    rep = evaluate(notes, notes)
    assert (rep.n_scale_invariant, rep.n_excluded_final) == (2, 1)


def test_order_matching_and_aggregate(two_voice):
    shuffled = [ScoreNote(100 + i, n.onset, n.note_value, n.pitch, n.voice) for i, n in enumerate(two_voice[::-1])]
    assert evaluate(shuffled, two_voice, by="order").error_rate == 0.0
    with pytest.raises(ValueError):
        evaluate(shuffled, two_voice)
    agg = aggregate([evaluate(two_voice, two_voice), evaluate(rescale(two_voice, 2), two_voice)])
    assert agg["error_rate"]["mean"] == 0.5
    assert agg["error_rate"]["std"] == pytest.approx(math.sqrt(0.5))
    assert agg["error_rate"]["ste"] == pytest.approx(0.5)
