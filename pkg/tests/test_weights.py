import itertools
from fractions import Fraction as F

import numpy as np
import pytest
from scipy.special import logsumexp

from notevalue.context_tree import ContextTreeClassifier, extract_samples
from notevalue.metrics import error_rate
from notevalue.mrf import MrfConfig, candidate_count, decode_piece
from notevalue.performance import DEFAULT_DURATION_MODEL
from notevalue.score import N_IONV, PerformanceNote, ScoreNote, piece_features
from notevalue.score_model import InterdependenceModel, MrfWeights, learn_interdependence, learn_interdependence_all
from notevalue.simulate import SimParams, simulate_corpus
from notevalue.synth import piece_rng, random_corpus
from notevalue.weights import (_axis, _grid_best, _score_clusters, _terms_for_delta, optimize_perf_weights,
                               optimize_score_weights, score_prior_loglik)


def dyad_corpus(n_pieces, seed, coupled):
    """Two-note chords on a quarter grid; each note lasts one to three
    quarters, either shared within the chord or drawn independently."""
    out = {}
    for p in range(n_pieces):
        r = piece_rng(seed, p)
        notes = []
        for k in range(150):
            a = int(r.integers(1, 4))
            b = a if coupled else int(r.integers(1, 4))
            lo = int(r.integers(50, 60))
            notes.append(ScoreNote(len(notes), F(k, 4), F(a, 4), lo))
            notes.append(ScoreNote(len(notes), F(k, 4), F(b, 4), lo + int(r.integers(3, 8))))
        out["p%d" % p] = notes
    return out


def fit_tree(corpus):
    X, y = extract_samples(corpus)
    return ContextTreeClassifier().fit(X, y)


def pair_gain(coupled):
    train = dyad_corpus(6, 1, coupled)
    held = dyad_corpus(3, 2, coupled)
    tree = fit_tree(train)
    inter = learn_interdependence_all(train, [12])
    w, ll = optimize_score_weights(held, tree, inter)
    assert ll == pytest.approx(score_prior_loglik(held, tree, inter[12], w.beta1, w.beta2))
    _, ll0 = optimize_score_weights(held, tree, inter, beta2_range=(0.0, 0.0))
    return w, (ll - ll0) / sum(len(v) for v in held.values())


def test_score_weights_follow_coupling():
    # the joint also carries the label marginals, so even independent pairs
    # may take some weight; only coupled pairs should gain likelihood from it
    w, gain = pair_gain(True)
    assert w.beta2 > 0 and w.delta_nbh == 12
    w_ind, gain_ind = pair_gain(False)
    assert gain > 0.1
    assert gain_ind < 0.01


def brute_loglik(corpus, tree, joint, delta, b1, b2):
    total = 0.0
    for notes in corpus.values():
        clusters, labels, contexts = piece_features(notes)
        pitch = {n.id: n.pitch for n in notes}
        for k, cl in enumerate(list(clusters)[:-1]):
            ids = cl.member_ids
            n_c = candidate_count(len(ids), min(N_IONV, len(clusters) - 1 - k))
            true = tuple(labels[i] for i in ids)
            if max(true) > n_c:
                continue
            P = tree.predict_proba(np.array([contexts[i] for i in ids]))

            def energy(lab):
                e = -b1 * sum(np.log(P[j, l]) for j, l in enumerate(lab))
                for i, j in itertools.combinations(range(len(ids)), 2):
                    if abs(pitch[ids[i]] - pitch[ids[j]]) <= delta:
                        e -= b2 * np.log(joint[lab[i], lab[j]])
                return e
            space = list(itertools.product(range(n_c + 1), repeat=len(ids)))
            total += -energy(true) - logsumexp([-energy(s) for s in space])
    return total


def test_score_loglik_matches_enumeration():
    corpus = dyad_corpus(1, 3, True)
    corpus["p0"] = corpus["p0"][:40]
    tree = fit_tree(dyad_corpus(3, 4, True))
    inter = learn_interdependence(dyad_corpus(3, 4, True), 4)
    got = score_prior_loglik(corpus, tree, inter, 0.9, 0.15)
    assert got == pytest.approx(brute_loglik(corpus, tree, inter.joint, 4, 0.9, 0.15), rel=1e-10)


@pytest.fixture(scope="module")
def setup():
    train = random_corpus(12, 21)
    tree = fit_tree(train)
    inter = learn_interdependence(train, 12)
    scores = random_corpus(3, 21, offset=100, min_notes=120)
    sims = simulate_corpus(scores, SimParams(seed=4))
    dev = []
    for name, (perf, _, tempo) in sims.items():
        onset = {n.id: n.onset for n in scores[name]}
        dev.append((perf, scores[name], [onset[p.id] for p in perf], [tempo[p.id] for p in perf]))
    return tree, inter, dev


def test_perf_weights_match_direct_decoding(setup):
    tree, inter, dev = setup
    g31, g32 = [0.0, 0.2, 0.7], [0.0, 0.01, 0.08]
    base = MrfWeights(beta2=0.05)
    w, err, table = optimize_perf_weights(dev, tree, DEFAULT_DURATION_MODEL, base, inter, g31, g32)
    for a, b31 in enumerate(g31):
        for b, b32 in enumerate(g32):
            cfg = MrfConfig(tree, DEFAULT_DURATION_MODEL, base.replace(beta31=b31, beta32=b32), inter)
            errs = []
            for perf, ref, tau, tempo in dev:
                est = {n.id: n.note_value for n in decode_piece(perf, tau, tempo, cfg)}
                rv = {n.id: n.note_value for n in ref}
                errs.append(error_rate([est[i] for i in rv], [rv[i] for i in rv]))
            assert table[a, b] == pytest.approx(np.mean(errs), abs=1e-12)
    assert err == table.min()


def test_simulated_dev_set_selects_duration_weight(setup):
    tree, inter, dev = setup
    w, err, table = optimize_perf_weights(dev, tree, DEFAULT_DURATION_MODEL, MrfWeights(), inter,
                                          np.round(np.arange(0, 1.01, 0.05), 2), [0.0, 0.003, 0.03])
    assert w.beta31 > 0
    assert err < table[0, 0]


def test_noise_durations_give_zero_weights(setup):
    tree, inter, dev = setup
    r = np.random.default_rng(0)
    noisy = []
    for perf, ref, tau, tempo in dev:
        d = np.exp(r.uniform(np.log(0.05), np.log(3.0), len(perf)))
        q = [PerformanceNote(p.id, p.onset_sec, p.onset_sec + x, p.onset_sec + x, p.pitch)
             for p, x in zip(perf, d)]
        noisy.append((q, ref, tau, tempo))
    w, err, table = optimize_perf_weights(noisy, tree, DEFAULT_DURATION_MODEL, MrfWeights(), inter,
                                          np.round(np.arange(0, 1.01, 0.05), 2), [0.0, 0.003, 0.03, 0.1])
    assert (w.beta31, w.beta32) == (0.0, 0.0)


@pytest.fixture(scope="module")
def held_terms():
    train = random_corpus(10, 3)
    held = random_corpus(4, 3, offset=300)
    tree = fit_tree(train)
    return train, held, tree


def test_row_bisection_equals_exhaustive_grid(held_terms):
    train, held, tree = held_terms
    inter = learn_interdependence_all(train, [0, 5, 12])
    clusters = _score_clusters(held, tree)
    for d, model in inter.items():
        terms = _terms_for_delta(clusters, -np.log(model.joint), d)
        for b1s, b2s in ((_axis(0.5, 1.5, 0.05), _axis(0, 0.2, 0.01)),
                         (_axis(0.9, 1.0, 0.005), _axis(0.0, 0.02, 0.001)),
                         (_axis(0.5, 1.5, 0.1), _axis(0, 3.0, 0.1))):
            assert _grid_best(terms, b1s, b2s) == _grid_best(terms, b1s, b2s, exhaustive=True)


def test_learned_joint_beats_outer_product_of_marginals(held_terms):
    # an outer-product joint still acts as a label prior for chord notes, so
    # its beta2 need not vanish; the learned joint must fit held-out data better
    train, held, tree = held_terms
    joint = learn_interdependence(train, 12)
    p = joint.joint.sum(axis=1)
    outer = InterdependenceModel(12, np.outer(p, p))
    _, ll_joint = optimize_score_weights(held, tree, {12: joint})
    _, ll_outer = optimize_score_weights(held, tree, {12: outer})
    assert ll_joint > ll_outer
