"""End-to-end note-value recognition: onset rhythm transcription followed by
MRF decoding of note values."""
from __future__ import annotations

from fractions import Fraction
from typing import Optional

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .context_tree import ContextTreeClassifier, extract_samples
from .hmm import MetricalHMM
from .mrf import MrfConfig, decode_piece
from .performance import DEFAULT_DURATION_MODEL
from .score_model import MAX_DELTA, MrfWeights, learn_interdependence_all
from .tempo import note_tempi

TEMPO_SOURCES = ("hmm", "kalman", "provided")


class NoteValueRecognizer(BaseEstimator):
    """Estimate note values of a performed piano piece.

    ``fit`` learns the score-side models (context tree, interdependence
    tables for every neighbourhood, metrical HMMs) from a score corpus.
    The duration model and MRF weights are supplied, defaulting to the
    shipped values.

    Parameters
    ----------
    weights : MrfWeights, optional
    durmodel : DurationModel, optional
    max_leaves : int or None
        Passed to the context tree; ``1`` disables the context.
    tempo_source : {"hmm", "kalman", "provided"}
        Where local tempos come from when predicting.
    """

    def __init__(self, weights: Optional[MrfWeights] = None, durmodel=None, alpha=0.1,
                 max_leaves=None, metres=("duple", "triple"), chord_eps=0.035,
                 tempo_source="hmm", sigma_v=0.05, sigma_obs=0.1):
        self.weights = weights
        self.durmodel = durmodel
        self.alpha = alpha
        self.max_leaves = max_leaves
        self.metres = metres
        self.chord_eps = chord_eps
        self.tempo_source = tempo_source
        self.sigma_v = sigma_v
        self.sigma_obs = sigma_obs

    def fit(self, corpus, y=None):
        X, labels = extract_samples(corpus)
        if len(labels) == 0:
            raise ValueError("score corpus has no trainable notes")
        self.tree_ = ContextTreeClassifier(alpha=self.alpha, max_leaves=self.max_leaves).fit(X, labels)
        self.interdeps_ = learn_interdependence_all(corpus, range(MAX_DELTA + 1))
        self.hmm_ = MetricalHMM(metres=self.metres, chord_eps=self.chord_eps).fit(corpus)
        return self

    @classmethod
    def from_models(cls, tree, interdep=None, hmm_models=None, **params) -> "NoteValueRecognizer":
        """Recognizer assembled from already trained (e.g. loaded) models."""
        rec = cls(**params)
        rec.tree_ = tree
        rec.interdeps_ = {} if interdep is None else {interdep.delta_nbh: interdep}
        rec.hmm_ = MetricalHMM(chord_eps=rec.chord_eps)
        rec.hmm_.models_ = list(hmm_models or [])
        return rec

    def _config(self) -> MrfConfig:
        w = self.weights or MrfWeights()
        return MrfConfig(self.tree_, self.durmodel or DEFAULT_DURATION_MODEL, w,
                         self.interdeps_.get(w.delta_nbh))

    def onsets_and_tempi(self, perf, onsets=None, tempos=None):
        """Onset score times and tempos aligned with `perf`.

        `onsets` and `tempos` are optional dicts keyed by note id.
        """
        if self.tempo_source not in TEMPO_SOURCES:
            raise ValueError("tempo_source must be one of %s" % (TEMPO_SOURCES,))
        hmm_v = None
        if onsets is None:
            if not getattr(self.hmm_, "models_", None):
                raise ValueError("no onset score times given and no metrical HMM available")
            tr = self.hmm_.predict(perf)
            tau, hmm_v = tr.tau, tr.tempo
        else:
            missing = [p.id for p in perf if p.id not in onsets]
            if missing:
                raise ValueError("no onset score time for note ids %s" % missing[:5])
            tau = [Fraction(onsets[p.id]) for p in perf]
        if self.tempo_source == "hmm" and hmm_v is not None:
            v = hmm_v
        elif self.tempo_source == "provided":
            if tempos is None:
                raise ValueError("tempo source 'provided' needs a tempo table")
            v = [float(tempos[p.id]) for p in perf]
        else:
            v = note_tempi([p.onset_sec for p in perf], tau, self.sigma_v, self.sigma_obs)
        return tau, v

    def decode(self, perf, tau, tempo, return_report: bool = False):
        """Note values given onset score times and tempos aligned with `perf`."""
        check_is_fitted(self, "tree_")
        return decode_piece(perf, tau, tempo, self._config(), return_report=return_report)

    def transcribe(self, perf, onsets=None, tempos=None):
        """Score notes in input order and a per-note decoding report."""
        check_is_fitted(self, "tree_")
        tau, v = self.onsets_and_tempi(perf, onsets, tempos)
        return self.decode(perf, tau, v, return_report=True)

    def predict(self, perf, onsets=None, tempos=None):
        return self.transcribe(perf, onsets, tempos)[0]
