"""Command-line interface.

Subcommands: ``train``, ``fit-perf``, ``optimize-weights``, ``transcribe``,
``evaluate`` and ``simulate``. Exit status is 0 on success, 2 for bad input
and 1 for internal errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .context_tree import ContextTreeClassifier, extract_samples
from .hmm import METRES, MetricalHmmParams, train_hmm
from .metrics import aggregate, evaluate
from .midi import ParseError, read_performance_midi
from .performance import DurationModel, fit_duration_models
from .recognizer import NoteValueRecognizer
from .score import (ScoreFormatError, ScoreNote, format_alignment_tsv, format_performance_tsv,
                    format_score_tsv, read_alignment_tsv, read_corpus, read_performance_tsv,
                    read_score_tsv, read_tempo_tsv)
from .score_model import MAX_DELTA, InterdependenceModel, MrfWeights, learn_interdependence_all
from .simulate import SimParams, simulate_performance
from .synth import piece_rng
from .tempo import note_tempi
from .weights import optimize_perf_weights, optimize_score_weights

logger = logging.getLogger("notevalue")

TREE_FILE = "context_tree.json"
DURMODEL_FILE = "durmodel.json"
WEIGHTS_FILE = "weights.json"
PERF_SUFFIX = ".perf.tsv"
ALIGN_SUFFIX = ".align.tsv"


class UsageError(Exception):
    """Bad input detected by the command line layer."""


def interdep_file(delta: int) -> str:
    return "interdependence_%02d.json" % delta


def default_file(name: str) -> Path:
    return Path(str(resources.files("notevalue") / "defaults" / name))


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# --- model registry -----------------------------------------------------------

def load_weights(args) -> MrfWeights:
    path = args.weights or _model_or_default(args.models, WEIGHTS_FILE)
    w = MrfWeights.load(path)
    return w.replace(beta1=args.beta1, beta2=args.beta2, beta31=args.beta31, beta32=args.beta32,
                     delta_nbh=args.delta_nbh)


def _model_or_default(models, name) -> Path:
    if models is not None and (Path(models) / name).exists():
        return Path(models) / name
    return default_file(name)


def load_recognizer(args) -> NoteValueRecognizer:
    models = Path(args.models)
    if not (models / TREE_FILE).exists():
        raise UsageError("no %s in %s (run `train` first)" % (TREE_FILE, models))
    tree = ContextTreeClassifier.load(models / TREE_FILE)
    weights = load_weights(args)
    ipath = models / interdep_file(weights.delta_nbh)
    interdep = InterdependenceModel.load(ipath) if ipath.exists() else None
    hmms = [MetricalHmmParams.load(p) for p in sorted(models.glob("hmm_*.json"))]
    durmodel = DurationModel.load(args.durmodel or _model_or_default(models, DURMODEL_FILE))
    return NoteValueRecognizer.from_models(
        tree, interdep, hmms, weights=weights, durmodel=durmodel, chord_eps=args.chord_eps,
        tempo_source=args.tempo_source or ("kalman" if args.onsets else "hmm"))


def read_performance(path: Path, pedal_threshold: int = 64):
    if path.suffix.lower() in (".mid", ".midi"):
        return read_performance_midi(path, pedal_threshold)
    return read_performance_tsv(path)


def piece_name(path: Path) -> str:
    name = path.name
    for suffix in (PERF_SUFFIX, ALIGN_SUFFIX, ".tsv", ".mid", ".midi"):
        if name.lower().endswith(suffix):
            return name[:-len(suffix)]
    return path.stem


def performance_files(directory: Path) -> list:
    files = [p for p in directory.iterdir()
             if p.name.endswith(PERF_SUFFIX) or p.suffix.lower() in (".mid", ".midi")]
    return sorted(files)


def _require_corpus(directory) -> dict:
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError("not a directory: %s" % directory)
    corpus = read_corpus(directory)
    if not corpus or not any(corpus.values()):
        raise UsageError("empty score corpus: %s" % directory)
    return corpus


def _aligned(perf_dir: Path, scores: dict):
    """Yield (name, perf, ref notes, onset tau per perf note) for every
    performance with a reference score."""
    for path in performance_files(perf_dir):
        name = piece_name(path)
        if name not in scores:
            raise UsageError("no reference score for performance %s" % path)
        perf = read_performance(path)
        apath = perf_dir / (name + ALIGN_SUFFIX)
        align = read_alignment_tsv(apath) if apath.exists() else {p.id: p.id for p in perf}
        ref = {n.id: n for n in scores[name]}
        try:
            tau = [ref[align[p.id]].onset for p in perf]
        except KeyError as exc:
            raise UsageError("%s: note %s has no aligned score note" % (path, exc.args[0])) from None
        yield name, perf, [ref[align[p.id]] for p in perf], tau


# --- commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    corpus = _require_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    X, y = extract_samples(corpus)
    if len(y) == 0:
        raise UsageError("score corpus has no trainable notes")
    tree = ContextTreeClassifier(alpha=args.alpha, max_leaves=args.max_leaves).fit(X, y)
    tree.save(out / TREE_FILE)
    for d, model in learn_interdependence_all(corpus, range(MAX_DELTA + 1), args.alpha).items():
        model.save(out / interdep_file(d))
    for name in args.metres.split(","):
        if name not in METRES:
            raise UsageError("unknown metre %r (choose from %s)" % (name, ", ".join(METRES)))
        train_hmm(corpus, METRES[name], args.hmm_alpha).save(out / ("hmm_%s.json" % name))
    print("pieces: %d  samples: %d  leaves: %d" % (len(corpus), len(y), tree.n_leaves_))
    return 0


def cmd_fit_perf(args) -> int:
    scores = _require_corpus(args.scores)
    dp, db = [], []
    for name, perf, ref, tau in _aligned(Path(args.perf), scores):
        v = note_tempi([p.onset_sec for p in perf], tau, args.sigma_v, args.sigma_obs)
        for p, n, vn in zip(perf, ref, v):
            r = float(n.note_value)
            dp.append(p.duration / (r * vn))
            db.append(p.damper_duration / (r * vn))
    if not dp:
        raise UsageError("no performances found in %s" % args.perf)
    model = fit_duration_models(dp, db)
    model.save(Path(args.out))
    fmt = lambda p: "(%.4g, %.4g, %.4g)" % tuple(p)
    print("notes: %d  w1=%.3f  g1=%s  g2=%s  gbar=%s"
          % (len(dp), model.w1, fmt(model.gig1), fmt(model.gig2), fmt(model.gbar)))
    return 0


def cmd_optimize_weights(args) -> int:
    models = Path(args.models)
    if not (models / TREE_FILE).exists():
        raise UsageError("no %s in %s" % (TREE_FILE, models))
    tree = ContextTreeClassifier.load(models / TREE_FILE)
    weights = load_weights(args)
    if args.heldout:
        interdeps = {}
        for d in range(MAX_DELTA + 1):
            p = models / interdep_file(d)
            if p.exists():
                interdeps[d] = InterdependenceModel.load(p)
        if not interdeps:
            raise UsageError("no interdependence models in %s" % models)
        weights, ll = optimize_score_weights(_require_corpus(args.heldout), tree, interdeps, weights)
        print("beta1=%.3f beta2=%.3f delta_nbh=%d loglik=%.4f"
              % (weights.beta1, weights.beta2, weights.delta_nbh, ll))
    if args.perf:
        if not args.scores:
            raise UsageError("--perf needs --scores with the reference scores")
        scores = _require_corpus(args.scores)
        durmodel = DurationModel.load(args.durmodel or _model_or_default(models, DURMODEL_FILE))
        dev = []
        for name, perf, ref, tau in _aligned(Path(args.perf), scores):
            v = note_tempi([p.onset_sec for p in perf], tau, args.sigma_v, args.sigma_obs)
            # reference notes renamed to performance ids
            dev.append((perf, [ScoreNote(p.id, n.onset, n.note_value, n.pitch)
                               for p, n in zip(perf, ref)], tau, v))
        if not dev:
            raise UsageError("no performances found in %s" % args.perf)
        ipath = models / interdep_file(weights.delta_nbh)
        interdep = InterdependenceModel.load(ipath) if ipath.exists() else None
        weights, err, _ = optimize_perf_weights(dev, tree, durmodel, weights, interdep)
        print("beta31=%.3f beta32=%.3f error_rate=%.4f" % (weights.beta31, weights.beta32, err))
    if not (args.heldout or args.perf):
        raise UsageError("give --heldout scores and/or --perf performances")
    weights.save(Path(args.out))
    return 0


def _transcribe_one(args, src: Path, dst: Path, report_path):
    rec = load_recognizer(args)
    perf = read_performance(src, args.pedal_threshold)
    if not perf:
        raise UsageError("no notes in %s" % src)
    onsets = tempos = None
    if args.onsets:
        onsets = {n.id: n.onset for n in read_score_tsv(args.onsets)}
    if args.tempos:
        tempos = read_tempo_tsv(args.tempos)
    notes, report = rec.transcribe(perf, onsets, tempos)
    dst.write_text(format_score_tsv(notes), encoding="utf-8")
    if report_path is not None:
        _dump_json(Path(report_path), {"input": src.name, "weights": rec._config().weights.to_dict(),
                                       "tempo_source": rec.tempo_source, "notes": report})
    return len(notes)


def _transcribe_job(job):
    args, src, dst, rep = job
    return _transcribe_one(args, src, dst, rep)


def cmd_transcribe(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise UsageError("input not found: %s" % src)
    if src.is_dir():
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.onsets or args.tempos:
            raise UsageError("--onsets/--tempos apply to single-file transcription only")
        jobs = [(args, p, out / (piece_name(p) + ".tsv"), out / (piece_name(p) + ".report.json"))
                for p in performance_files(src)]
        if not jobs:
            raise UsageError("no performances in %s" % src)
        counts = _run_jobs(_transcribe_job, jobs, args.jobs)
        print("pieces: %d  notes: %d" % (len(jobs), sum(counts)))
        return 0
    n = _transcribe_one(args, src, Path(args.out), args.report)
    print("notes: %d" % n)
    return 0


def _run_jobs(fn, jobs, n_jobs):
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _score_files(path: Path) -> dict:
    if path.is_dir():
        return {piece_name(p): p for p in sorted(path.glob("*.tsv"))
                if not p.name.endswith((PERF_SUFFIX, ALIGN_SUFFIX))}
    if not path.exists():
        raise UsageError("not found: %s" % path)
    return {piece_name(path): path}


def cmd_evaluate(args) -> int:
    est, ref = _score_files(Path(args.est)), _score_files(Path(args.ref))
    if Path(args.est).is_dir() != Path(args.ref).is_dir():
        raise UsageError("give two files or two directories")
    if len(est) == 1 and len(ref) == 1 and not Path(args.est).is_dir():
        pairs = [(next(iter(ref)), next(iter(est.values())), next(iter(ref.values())))]
    else:
        missing = sorted(set(ref) - set(est))
        if missing:
            raise UsageError("no estimate for pieces: %s" % ", ".join(missing[:5]))
        pairs = [(name, est[name], ref[name]) for name in sorted(ref)]
    if not pairs:
        raise UsageError("nothing to evaluate")
    reports = {}
    for name, e, r in pairs:
        try:
            reports[name] = evaluate(read_score_tsv(e), read_score_tsv(r), by=args.match)
        except ValueError as exc:
            if isinstance(exc, ScoreFormatError):
                raise
            raise UsageError("%s: %s" % (name, exc)) from None
    summary = aggregate(list(reports.values()))
    for name, rep in reports.items():
        print("%s\tE=%.4f\tS=%.4f\tE'=%.4f\tS'=%.4f\tN=%d" % (
            name, rep.error_rate, rep.scale_error, rep.error_rate_scale_invariant,
            rep.scale_error_scale_invariant, rep.N))
    print("mean\tE=%.4f\tS=%.4f" % (summary["error_rate"]["mean"], summary["scale_error"]["mean"]))
    if args.report:
        _dump_json(Path(args.report), {"pieces": {k: v.to_dict() for k, v in reports.items()},
                                       "aggregate": summary})
    return 0


def _simulate_job(job):
    name, notes, params, index, out = job
    perf, align, _ = simulate_performance(notes, params, piece_rng(params.seed, index))
    (out / (name + PERF_SUFFIX)).write_text(format_performance_tsv(perf), encoding="utf-8")
    (out / (name + ALIGN_SUFFIX)).write_text(format_alignment_tsv(align), encoding="utf-8")
    return len(perf)


def cmd_simulate(args) -> int:
    corpus = _require_corpus(args.scores)
    params = SimParams.load(args.params) if args.params else SimParams()
    if args.seed is not None:
        params = dataclasses.replace(params, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, name in enumerate(sorted(corpus)):
        for rep in range(args.repeats):
            tag = name if args.repeats == 1 else "%s_%d" % (name, rep)
            jobs.append((tag, corpus[name], params, i * args.repeats + rep, out))
    counts = _run_jobs(_simulate_job, jobs, args.jobs)
    print("performances: %d  notes: %d" % (len(jobs), sum(counts)))
    return 0


# --- parser ------------------------------------------------------------------------

def _add_model_options(p):
    p.add_argument("--models", help="directory written by `train`")
    p.add_argument("--weights", help="weights JSON (default: models dir, then shipped)")
    p.add_argument("--durmodel", help="duration model JSON (default: models dir, then shipped)")
    for name in ("beta1", "beta2", "beta31", "beta32"):
        p.add_argument("--" + name, type=float, help="override weight %s" % name)
    p.add_argument("--delta-nbh", type=int, help="override pitch neighbourhood (semitones)")
    p.add_argument("--sigma-v", type=float, default=0.05, help="tempo smoother step std")
    p.add_argument("--sigma-obs", type=float, default=0.1, help="tempo smoother observation std")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="notevalue", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, help="random seed (overrides simulation params)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel pieces")
    parser.add_argument("--config", help="JSON file of option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="learn score models from a TSV corpus")
    p.add_argument("corpus")
    p.add_argument("out")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--hmm-alpha", type=float, default=1.0)
    p.add_argument("--max-leaves", type=int)
    p.add_argument("--metres", default="duple,triple")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit-perf", parents=[common], help="fit duration models to aligned performances")
    p.add_argument("--perf", required=True, help="directory of performances")
    p.add_argument("--scores", required=True, help="directory of reference scores")
    p.add_argument("--out", required=True)
    p.add_argument("--sigma-v", type=float, default=0.05)
    p.add_argument("--sigma-obs", type=float, default=0.1)
    p.set_defaults(func=cmd_fit_perf)

    p = sub.add_parser("optimize-weights", parents=[common], help="grid-search MRF weights")
    _add_model_options(p)
    p.add_argument("--heldout", help="held-out scores for the score-model weights")
    p.add_argument("--perf", help="development performances for the duration weights")
    p.add_argument("--scores", help="reference scores of --perf")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize_weights)

    p = sub.add_parser("transcribe", parents=[common], help="estimate note values of performances")
    p.add_argument("input", help="MIDI file, performance TSV or directory of them")
    p.add_argument("out", help="score TSV (or directory)")
    _add_model_options(p)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--onsets", help="score TSV supplying onset score times by note id")
    p.add_argument("--tempo-source", choices=("hmm", "kalman", "provided"))
    p.add_argument("--tempos", help="TSV of id and tempo (s per whole note)")
    p.add_argument("--chord-eps", type=float, default=0.035)
    p.add_argument("--pedal-threshold", type=int, default=64)
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("evaluate", parents=[common], help="compare estimated and reference scores")
    p.add_argument("est")
    p.add_argument("ref")
    p.add_argument("--report")
    p.add_argument("--match", choices=("id", "order"), default="id")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", parents=[common], help="synthesise performances of scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--params", help="simulation parameters JSON")
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_simulate)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error("cannot read config %s: %s" % (args.config, exc))
        # options given on the command line win over the config file
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})
        args = parser.parse_args(argv)
    if args.command == "transcribe" and args.models is None:
        parser.error("transcribe needs --models")
    if args.command == "optimize-weights" and args.models is None:
        parser.error("optimize-weights needs --models")
    return args


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScoreFormatError, ParseError, FileNotFoundError, json.JSONDecodeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print("internal error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
