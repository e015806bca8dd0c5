"""Duration likelihoods over normalised key-holding and damper-lifting
durations, and their fitting to histograms by grid search."""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .gig import LOG_FLOOR, GigParams, gig_logpdf, sample_gig

BIN_WIDTH = 0.05
HIST_MAX = 3.0


@dataclass(frozen=True)
class DurationModel:
    """Mixture ``g`` of two GIGs for key-holding durations and a single GIG
    ``gbar`` for damper-lifting durations."""

    w1: float
    gig1: GigParams
    gig2: GigParams
    gbar: GigParams

    def __post_init__(self):
        if not 0.0 <= self.w1 <= 1.0:
            raise ValueError("mixture weight w1 must lie in [0, 1], got %r" % self.w1)

    @property
    def w2(self) -> float:
        return 1.0 - self.w1

    def log_g(self, x):
        """Log mixture density of normalised key-holding durations."""
        l1 = gig_logpdf(x, self.gig1.a, self.gig1.b, self.gig1.h)
        l2 = gig_logpdf(x, self.gig2.a, self.gig2.b, self.gig2.h)
        with np.errstate(divide="ignore"):
            out = np.logaddexp(np.log(self.w1) + l1, np.log(self.w2) + l2)
        return np.maximum(out, LOG_FLOOR)

    def log_gbar(self, x):
        out = gig_logpdf(x, self.gbar.a, self.gbar.b, self.gbar.h)
        return np.maximum(out, LOG_FLOOR)

    def g(self, x):
        return np.exp(self.log_g(x))

    def gbar_pdf(self, x):
        return np.exp(self.log_gbar(x))

    def sample_g(self, rng: np.random.Generator) -> float:
        comp = self.gig1 if rng.random() < self.w1 else self.gig2
        return float(sample_gig(comp, rng))

    def sample_gbar(self, rng: np.random.Generator) -> float:
        return float(sample_gig(self.gbar, rng))

    def to_dict(self) -> dict:
        return {
            "g": {"w1": self.w1, "a1": self.gig1.a, "b1": self.gig1.b, "h1": self.gig1.h,
                  "w2": self.w2, "a2": self.gig2.a, "b2": self.gig2.b, "h2": self.gig2.h},
            "gbar": {"a3": self.gbar.a, "b3": self.gbar.b, "h3": self.gbar.h},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DurationModel":
        g, gb = d["g"], d["gbar"]
        return cls(float(g["w1"]), GigParams(g["a1"], g["b1"], g["h1"]),
                   GigParams(g["a2"], g["b2"], g["h2"]),
                   GigParams(gb["a3"], gb["b3"], gb["h3"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DurationModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


#: values fitted on the reference performance corpus
DEFAULT_DURATION_MODEL = DurationModel(
    w1=0.814,
    gig1=GigParams(2.24, 0.24, 0.69),
    gig2=GigParams(13.8, 15.2, -1.22),
    gbar=GigParams(0.94, 0.51, 0.80),
)


def normalized_duration(d: float, r, v: float) -> float:
    """Duration in units of the score-implied length ``r * v``."""
    if d <= 0 or r <= 0 or v <= 0:
        raise ValueError("normalized_duration needs positive inputs, got d=%r r=%r v=%r" % (d, r, v))
    if isinstance(r, Fraction):
        return d * r.denominator / (r.numerator * v)
    return d / (float(r) * v)


# --- histogram fitting ------------------------------------------------------

def duration_histogram(samples, width: float = BIN_WIDTH, upper: float = HIST_MAX):
    """Density histogram on ``(0, upper]``, normalised by the total sample
    count (samples above `upper` lower the in-range mass but are not binned).

    Returns bin centres and densities.
    """
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x) & (x > 0)]
    if x.size == 0:
        raise ValueError("empty histogram: no positive finite samples")
    nbins = int(round(upper / width))
    edges = np.linspace(0.0, upper, nbins + 1)
    # right-closed bins (lo, hi]
    idx = np.ceil(x / width).astype(int) - 1
    idx = idx[(idx >= 0) & (idx < nbins)]
    counts = np.bincount(idx, minlength=nbins)
    if counts.sum() == 0:
        raise ValueError("empty histogram: no samples in (0, %g]" % upper)
    centres = 0.5 * (edges[:-1] + edges[1:])
    return centres, counts / (x.size * width)


@dataclass
class _Grid:
    log_a: np.ndarray
    log_b: np.ndarray
    h: np.ndarray

    def table(self, centres):
        la, lb, hh = np.meshgrid(self.log_a, self.log_b, self.h, indexing="ij")
        la, lb, hh = la.ravel(), lb.ravel(), hh.ravel()
        dens = np.exp(gig_logpdf(centres[None, :], np.exp(la)[:, None],
                                 np.exp(lb)[:, None], hh[:, None]))
        return np.column_stack([np.exp(la), np.exp(lb), hh]), dens


def _step(v):
    return float(v[1] - v[0]) if len(v) > 1 else 1.0


def coarse_grid(n_ab: int = 40, n_h: int = 25) -> _Grid:
    return _Grid(np.log(np.geomspace(0.05, 50.0, n_ab)),
                 np.log(np.geomspace(0.05, 50.0, n_ab)),
                 np.linspace(-3.0, 3.0, n_h))


W_GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.02), 10)


def _best_single(params, dens, target):
    err = ((dens - target) ** 2).sum(axis=1)
    i = int(np.argmin(err))  # first minimum: lexicographic tie-break on (a, b, h)
    return err[i], params[i]


def fit_gig(samples=None, *, hist=None, grid: _Grid | None = None, refine_stages: int = 2,
            max_moves: int = 20):
    """Least-squares fit of a single GIG to a duration histogram.

    A full search of the coarse grid is followed by `refine_stages` local
    searches, each with fivefold finer spacing, recentred until the incumbent
    stops moving.

    Returns
    -------
    params : GigParams
    error : float
        Sum of squared density residuals over bins.
    """
    centres, target = hist if hist is not None else duration_histogram(samples)
    grid = grid or coarse_grid()
    params, dens = grid.table(centres)
    err, best = _best_single(params, dens, target)
    for stage in range(1, refine_stages + 1):
        for _ in range(max_moves):
            e, cand = _best_single(*_local_grid(grid, best, stage).table(centres), target)
            if e < err * (1.0 - 1e-12):
                err, best = e, cand
            else:
                break
    return GigParams(*map(float, best)), float(err)


def _best_partner(fixed_dens, dens, target, wgrid):
    """Best (component, weight) to pair with a fixed component.

    Minimises ``|| w f + (1 - w) D_j - t ||^2`` jointly over rows ``D_j`` and
    ``w`` in `wgrid`, where `w` weighs the fixed component.
    """
    u = fixed_dens[None, :] * wgrid[:, None] - target[None, :]           # (W, B)
    dd = (dens ** 2).sum(axis=1)                                            # (P,)
    cross = dens @ u.T                                                      # (P, W)
    uu = (u ** 2).sum(axis=1)                                               # (W,)
    c = 1.0 - wgrid
    err = (c ** 2)[None, :] * dd[:, None] + 2.0 * c[None, :] * cross + uu[None, :]
    flat = int(np.argmin(err))
    j, k = divmod(flat, len(wgrid))
    return float(err[j, k]), j, float(wgrid[k])


def _local_grid(base: _Grid, centre, stage: int, half: int = 5) -> _Grid:
    """Grid of ``2 * half + 1`` points per axis spanning one step of the
    previous stage's spacing on either side of `centre`."""
    k = np.arange(-half, half + 1) / half / (half ** (stage - 1))
    a, b, h = centre

    def axis(values, c):
        return np.unique(np.clip(c + k * _step(values), values[0], values[-1]))

    return _Grid(axis(base.log_a, np.log(a)), axis(base.log_b, np.log(b)), axis(base.h, h))


def fit_gig_mixture(samples=None, *, hist=None, grid: _Grid | None = None,
                    refine_stages: int = 2, max_rounds: int = 20):
    """Two-component GIG mixture fitted by alternating grid search.

    Starting from the best single-GIG fit, each round searches the full grid
    (and the weight grid) for one component with the other held fixed, until
    neither side improves. Refinement stages repeat the alternation on local
    grids centred on the incumbent with spacing shrunk fivefold per stage.
    Deterministic; the heavier component is returned first.

    Returns
    -------
    w1, gig1, gig2, error
    """
    centres, target = hist if hist is not None else duration_histogram(samples)
    grid = grid or coarse_grid()
    params, dens = grid.table(centres)
    err, p0 = _best_single(params, dens, target)
    comps = [np.array(p0), np.array(p0)]
    w = 1.0  # weight of comps[0]
    for stage in range(refine_stages + 1):
        if stage == 0:
            wsteps = W_GRID
        else:
            wsteps = np.arange(-5, 6) * (0.02 / 5 ** stage)
        for _ in range(max_rounds):
            improved = False
            for side in (0, 1):
                fixed = comps[1 - side]
                fdens = np.exp(gig_logpdf(centres, *fixed))
                w_fixed = w if side == 1 else 1.0 - w
                if stage == 0:
                    cand_params, cand_dens = params, dens
                    wgrid = wsteps
                else:
                    cand_params, cand_dens = _local_grid(grid, comps[side], stage).table(centres)
                    wgrid = np.unique(np.clip(w_fixed + wsteps, 0.0, 1.0))
                e, j, wf = _best_partner(fdens, cand_dens, target, wgrid)
                if e < err * (1.0 - 1e-12):
                    err = e
                    comps[side] = np.array(cand_params[j])
                    w = wf if side == 1 else 1.0 - wf
                    improved = True
            if not improved:
                break
    g1, g2 = GigParams(*map(float, comps[0])), GigParams(*map(float, comps[1]))
    w = float(np.clip(w, 0.0, 1.0))
    if w < 0.5:
        w, g1, g2 = 1.0 - w, g2, g1
    return w, g1, g2, float(err)


def fit_duration_models(dprime, dbar_prime) -> DurationModel:
    """Fit ``g`` (two-GIG mixture) and ``gbar`` (single GIG) to normalised
    key-holding and damper-lifting duration samples."""
    w1, g1, g2, _ = fit_gig_mixture(dprime)
    gbar, _ = fit_gig(dbar_prime)
    return DurationModel(w1, g1, g2, gbar)
