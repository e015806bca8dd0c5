import itertools
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from conftest import make_notes
from notevalue.hmm import (METRES, MetreSpec, MetricalHMM, MetricalHmmParams, decode_onsets,
                           score_times_from_beats, train_hmm, viterbi)
from notevalue.score import PerformanceNote
from notevalue.synth import random_corpus


def test_score_times_from_beats_examples():
    assert score_times_from_beats([1, 3, 2], 4) == [1, 3, 6]
    assert score_times_from_beats([2, 2, 2], 4) == [2, 6, 10]
    assert score_times_from_beats([1, 5], 16, F(1, 16)) == [F(1, 16), F(5, 16)]


@given(st.integers(2, 16).flatmap(lambda G: st.tuples(st.just(G), st.lists(st.integers(1, G), min_size=1, max_size=100))))
def test_beat_unwrapping_steps_lie_in_one_bar(args):
    G, s = args
    tau = score_times_from_beats(s, G)
    d = np.diff([int(t) for t in tau])
    assert ((d >= 1) & (d <= G)).all()
    assert [(int(t) - 1) % G + 1 for t in tau] == s


def test_quarter_notes_concentrate_transitions():
    notes = make_notes([(F(k, 4), F(1, 4), 60) for k in range(32)])
    p = train_hmm([notes], METRES["duple"], alpha=0.01)
    for s in (0, 4, 8, 12):
        assert p.transition[s].argmax() == (s + 4) % 16
    big = train_hmm([notes], METRES["duple"], alpha=1e9)
    np.testing.assert_allclose(big.transition, 1 / 16, atol=1e-6)


def test_two_piece_hand_count():
    metre = MetreSpec("tiny", 4, F(1, 4))
    a = make_notes([(0, F(1, 4), 60), (F(1, 4), F(1, 2), 62), (F(3, 4), F(1, 4), 64), (F(3, 4), F(1, 4), 67)])
    b = make_notes([(F(1, 2), F(1, 2), 60), (F(5, 4), F(1, 4), 60)])
    p = train_hmm({"a": a, "b": b}, metre, alpha=0.5)
    counts = np.zeros((4, 4))
    counts[0, 1] += 1      # piece a: positions 1 -> 2 -> 4
    counts[1, 3] += 1
    counts[2, 1] += 1      # piece b: positions 3 -> 2 (next bar)
    want = (counts + 0.5) / (counts.sum(axis=1, keepdims=True) + 2.0)
    np.testing.assert_allclose(p.transition, want)
    np.testing.assert_allclose(p.initial, (np.array([1, 0, 1, 0]) + 0.5) / 4)


def test_unrepresentable_onset_names_note():
    notes = make_notes([(0, F(1, 4), 60), (F(1, 32), F(1, 4), 62)])
    with pytest.raises(ValueError, match="note 1"):
        train_hmm([notes], METRES["duple"])


def lognorm(x, m, s):
    return max(stats.norm.logpdf(x, m, s), -700.0)


def enumerate_best(params, t):
    """Exhaustive search over all (beat, tempo) paths."""
    G, grid = params.metre.G, params.tempo_grid
    res = float(params.metre.resolution)
    best = -np.inf
    states = [(s, i) for s in range(G) for i in range(len(grid))]
    for path in itertools.product(states, repeat=len(t)):
        s0, i0 = path[0]
        lp = np.log(params.initial[s0]) + lognorm(grid[i0], params.v_ini, params.sigma_v_ini)
        for n in range(1, len(t)):
            (sa, ia), (sb, ib) = path[n - 1], path[n]
            step = sb - sa if sb > sa else G + sb - sa
            lp += np.log(params.transition[sa, sb]) + lognorm(grid[ib], grid[ia], params.sigma_v)
            lp += lognorm(t[n], t[n - 1] + step * res * grid[ia], params.sigma_t)
        best = max(best, lp)
    return best


def random_params(r, G):
    A = r.random((G, G)) + 0.05
    pi = r.random(G) + 0.05
    return MetricalHmmParams(MetreSpec("r", G, F(1, 4)), pi / pi.sum(), A / A.sum(axis=1, keepdims=True),
                             sigma_v=float(r.uniform(0.05, 0.5)), sigma_t=float(r.uniform(0.02, 0.3)),
                             v_ini=2.0, sigma_v_ini=1.0, tempo_grid=np.sort(r.uniform(0.8, 4.0, 3)))


@pytest.mark.parametrize("seed", range(8))
def test_viterbi_matches_enumeration(seed):
    r = np.random.default_rng(seed)
    G = int(r.integers(2, 5))
    n = int(r.integers(1, 5))
    params = random_params(r, G)
    t = np.cumsum(np.r_[0.3, r.uniform(0.1, 1.5, n - 1)])
    beats, tidx, lp = viterbi(params, t)
    assert lp == pytest.approx(enumerate_best(params, t), abs=1e-9)


def test_single_note():
    p = train_hmm([make_notes([(0, F(1, 4), 60), (F(1, 4), F(1, 4), 60)])], METRES["duple"])
    tr = decode_onsets([PerformanceNote(0, 1.0, 1.5, 1.5, 60)], [p])
    assert tr.tau == [F(int(np.argmax(p.initial)) + 1, 16)]
    assert tr.tempo == [p.tempo_grid[np.argmin(np.abs(p.tempo_grid - p.v_ini))]]


@pytest.fixture(scope="module")
def hmm():
    return MetricalHMM().fit(random_corpus(20, 31))


def test_noiseless_performance_recovers_onsets(hmm):
    score = random_corpus(1, 31, offset=40)["piece040"]
    v = float(hmm.models_[0].tempo_grid[12])
    perf = sorted((PerformanceNote(n.id, 1.0 + float(n.onset) * v, 1.0 + float(n.offset) * v,
                                   1.0 + float(n.offset) * v, n.pitch) for n in score),
                  key=lambda p: (p.onset_sec, p.pitch))
    tr = hmm.predict(perf)
    by_id = {n.id: n for n in score}
    shift = {tau - by_id[p.id].onset for tau, p in zip(tr.tau, perf)}
    assert len(shift) == 1
    assert set(tr.tempo) == {v}


def test_chords_share_onsets_and_model_selection(hmm):
    perf = [PerformanceNote(0, 0.0, 0.3, 0.3, 60), PerformanceNote(1, 0.02, 0.3, 0.3, 64),
            PerformanceNote(2, 0.5, 0.9, 0.9, 62), PerformanceNote(3, 1.0, 1.4, 1.4, 60),
            PerformanceNote(4, 1.51, 1.9, 1.9, 67)]
    tr = hmm.predict(perf)
    assert tr.tau[0] == tr.tau[1]
    assert all(b > a for a, b in zip(tr.tau[1:], tr.tau[2:]))
    t = [0.01, 0.5, 1.0, 1.51]
    assert tr.log_posterior >= max(viterbi(m, t)[2] for m in hmm.models_) - 1e-12
    with pytest.raises(ValueError):
        hmm.predict([])


def test_params_round_trip(tmp_path, hmm):
    p = hmm.models_[1]
    p.save(tmp_path / "h.json")
    q = MetricalHmmParams.load(tmp_path / "h.json")
    assert q.metre == p.metre
    np.testing.assert_array_equal(q.transition, p.transition)
    np.testing.assert_array_equal(q.tempo_grid, p.tempo_grid)
    with pytest.raises(ValueError):
        MetricalHmmParams(p.metre, p.initial, p.transition * 2)
