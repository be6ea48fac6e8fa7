# coding: utf-8

# Copyright 2019-2020 The progvt authors

# This file is part of progvt.
#
# progvt is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# any later version.
#
# progvt is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with progvt.  If not, see <https://www.gnu.org/licenses/>.

r"""progvt command line

Subcommands: gen-data, train, score, calibrate-evaluate, simulate-stream.
Every run writes run_config.json (the effective configuration) and
artifacts.json (the files it produced) under --out.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.

"""

import argparse
import json
import logging
import os
import sys
from os.path import join, relpath

from pubsub import pub

from progvt import __version__
from progvt.audio import read_wav
from progvt.config import load_run_config
from progvt.decision import ProgressiveDetector, ScorePair, Thresholds, \
    calibrate_two_stage, early_only, hours_per_fa, run_policy, \
    write_decisions
from progvt.evalkit import condition_breakdown, context_tradeoff, \
    det_curve, emit_reports, frr_at_fa_count, frr_at_operating_point, \
    reference_early_threshold, two_stage_det, two_stage_det_family
from progvt.exceptions import ConfigError, DataError, NumericError, \
    ProgvtError
from progvt.messages import CORPUS_PROGRESS, SCORING_PROGRESS, \
    TRAINER_PROGRESS
from progvt.model import load_checkpoint, save_checkpoint
from progvt.scorer import TriggerCandidate, cached_loader, \
    score_candidates, stub_first_pass
from progvt.synthgen import CorpusManifest, generate_corpus
from progvt.trainer import train
from progvt.utils import derive_seed, ensure_dir, json_number, read_csv, \
    write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

LOG_FORMAT = '%(asctime)s :: %(levelname)8s :: %(name)35s :: %(message)s'

SCORE_COLUMNS = ["utterance_id", "label", "post_context", "score", "source"]
PAIR_COLUMNS = ["utterance_id", "label", "early", "late", "condition",
                "source"]


def setup_logging(level="INFO", log_file=None):
    r"""Configure the root logger: a stream handler and an optional file"""
    formatter = logging.Formatter(LOG_FORMAT)
    main_logger = logging.getLogger()
    main_logger.setLevel(getattr(logging, level.upper()))
    for handler in list(main_logger.handlers):
        main_logger.removeHandler(handler)
    sh = logging.StreamHandler()
    sh.setFormatter(formatter)
    main_logger.addHandler(sh)
    if log_file is not None:
        fh = logging.FileHandler(log_file)
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(formatter)
        main_logger.addHandler(fh)


def _on_corpus_progress(kind, done, total):
    logger.info("corpus: %s %d/%d", kind, done, total)


def _on_trainer_progress(step, max_steps, phonetic_loss, disc_loss):
    logger.debug("trainer: step %d/%d", step, max_steps)


def _on_scoring_progress(done, total):
    logger.info("scoring: %d/%d candidates", done, total)


def subscribe_listeners():
    pub.subscribe(_on_corpus_progress, CORPUS_PROGRESS)
    pub.subscribe(_on_trainer_progress, TRAINER_PROGRESS)
    pub.subscribe(_on_scoring_progress, SCORING_PROGRESS)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated numbers, "
                                         "got %r" % text)


def _ids(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser():
    r"""The argparse parser of the progvt command"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON (or .ini) configuration file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int,
                        help="master seed, every module seed derives from it "
                             "(default 0)")
    common.add_argument("--threads", type=int,
                        help="worker threads, 0 for one per core (default 0)")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="default INFO")
    common.add_argument("--log-file", help="also log to this file")

    parser = argparse.ArgumentParser(
        prog="progvt", description="Progressive voice trigger detection: "
                                   "synthetic data, training, scoring and "
                                   "two-stage evaluation")
    parser.add_argument("--version", action="version",
                        version="%(prog)s " + __version__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common],
                       help="generate the synthetic corpus")
    p.add_argument("--n-positive", type=int, help="default 2000")
    p.add_argument("--n-negative", type=int, help="default 600")
    p.add_argument("--timeline-hours", type=float,
                   help="hours of trigger-free timeline (default 2.0)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train the model")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--lr", type=float, help="Adam learning rate "
                                            "(default 0.0008)")
    p.add_argument("--clip-norm", type=float,
                   help="global gradient norm clipping (default 20)")
    p.add_argument("--max-steps", type=int,
                   help="total optimizer steps (default 3000)")
    p.add_argument("--batch-size", type=int, help="default 16")
    p.add_argument("--lambda-disc", type=float,
                   help="weight of the discriminative loss (default 1.0)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common],
                       help="score candidates at several contexts")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--contexts", type=_floats,
                   help="post-trigger contexts in seconds "
                        "(default 0.3,0.5,1,1.5,2)")
    p.add_argument("--early-context", type=float, help="default 0.3")
    p.add_argument("--late-context", type=float, help="default 2.0")
    p.add_argument("--split", choices=["train", "test"],
                   help="utterances to score (default test)")
    p.add_argument("--utterances", type=_ids,
                   help="comma separated utterance ids; restricts scoring "
                        "to them and skips the timeline")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("calibrate-evaluate", parents=[common],
                       help="calibrate the two-stage thresholds and report")
    p.add_argument("--scores", required=True,
                   help="output directory of the score command")
    p.add_argument("--early-frr", type=float,
                   help="FRR target of the early threshold (default 0.03)")
    p.add_argument("--late-frr", type=float,
                   help="FRR target of the late threshold (default 0.01)")
    p.add_argument("--late-scope", choices=["all", "deferred"],
                   help="positives the late target is measured on "
                        "(default all)")
    p.set_defaults(func=cmd_calibrate_evaluate)

    p = sub.add_parser("simulate-stream", parents=[common],
                       help="replay the timeline through the stub first "
                            "pass and the two-stage policy")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--thresholds", required=True,
                   help="thresholds.json of calibrate-evaluate")
    p.set_defaults(func=cmd_simulate_stream)
    return parser


def _overrides(args):
    r"""Nested config mapping of the flags given on the command line"""
    flags = {"seed": ("seed",), "threads": ("threads",),
             "n_positive": ("synthgen", "n_positive"),
             "n_negative": ("synthgen", "n_negative"),
             "timeline_hours": ("synthgen", "negative_timeline_hours"),
             "lr": ("train", "learning_rate"),
             "clip_norm": ("train", "clip_norm"),
             "max_steps": ("train", "max_steps"),
             "batch_size": ("train", "batch_size"),
             "lambda_disc": ("train", "lambda_disc"),
             "contexts": ("scorer", "contexts"),
             "early_context": ("scorer", "early_context"),
             "late_context": ("scorer", "late_context"),
             "early_frr": ("decision", "early_frr"),
             "late_frr": ("decision", "late_frr"),
             "late_scope": ("decision", "late_scope"),
             "split": ("decision", "calibration_split")}
    overrides = {}
    for flag, keys in flags.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        target = overrides
        for key in keys[:-1]:
            target = target.setdefault(key, {})
        target[keys[-1]] = value
    return overrides


def _threads(run):
    return run.threads if run.threads > 0 else (os.cpu_count() or 1)


class Artifacts(object):
    r"""Files produced by a command, listed in artifacts.json"""
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.paths = []

    def add(self, *paths):
        self.paths.extend(paths)

    def save(self, command):
        path = join(self.out_dir, "artifacts.json")
        with open(path, "w") as f:
            json.dump({"command": command,
                       "files": sorted(relpath(p, self.out_dir)
                                       for p in self.paths)},
                      f, indent=2, sort_keys=True)
            f.write("\n")


def cmd_gen_data(run, args, artifacts):
    r"""Generate the corpus under --out"""
    manifest = generate_corpus(run.synthgen, args.out,
                               sample_rate=run.frontend.sample_rate,
                               threads=_threads(run))
    artifacts.add(*[manifest.path_of(e.path) for e in manifest.entries])
    artifacts.add(*[manifest.path_of(c.path) for c in manifest.timeline])
    artifacts.add(join(args.out, CorpusManifest.MANIFEST),
                  join(args.out, CorpusManifest.TIMELINE),
                  join(args.out, "gen_config.json"))


def cmd_train(run, args, artifacts):
    r"""Train and write model.ckpt, train_log.csv and train_summary.json"""
    manifest = CorpusManifest.load(args.corpus)
    log_path = join(args.out, "train_log.csv")
    session = train(manifest, run.model, run.train, run.frontend,
                    resume=args.resume, log_path=log_path,
                    threads=_threads(run))
    ckpt_path = join(args.out, "model.ckpt")
    save_checkpoint(session.checkpoint, ckpt_path, session.state)
    summary = join(args.out, "train_summary.json")
    with open(summary, "w") as f:
        json.dump({"steps": session.checkpoint.step,
                   "holdout_accuracy": session.holdout_accuracy},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    artifacts.add(ckpt_path, log_path, summary)


def _timeline_candidates(manifest, stub_cfg, loader):
    candidates = []
    for chunk in manifest.timeline:
        candidates.extend(stub_first_pass(loader(chunk.path), stub_cfg,
                                          chunk.path))
    return candidates


def cmd_score(run, args, artifacts):
    r"""Write scores.csv, pairs.csv and score_meta.json"""
    manifest = CorpusManifest.load(args.corpus)
    ckpt = load_checkpoint(args.checkpoint)
    # candidates are grouped by file, in-flight jobs touch at most one per
    # worker
    loader = cached_loader(lambda key: read_wav(manifest.path_of(key)),
                           max_items=_threads(run) + 1)
    scorer_cfg = run.scorer

    if args.utterances:
        entries = [manifest.entry(uid) for uid in args.utterances]
    else:
        entries = manifest.select(split=run.decision.calibration_split)
    candidates, labels, conditions = [], [], []
    for entry in entries:
        candidate = TriggerCandidate.from_entry(entry)
        candidate.audio_key = entry.path
        candidates.append(candidate)
        labels.append(entry.is_positive)
        conditions.append(entry.spec.condition)
    timeline_hours = 0.
    if not args.utterances:
        stub = _timeline_candidates(manifest, run.stub, loader)
        candidates.extend(stub)
        labels.extend([False] * len(stub))
        conditions.extend(["timeline"] * len(stub))
        timeline_hours = manifest.negative_timeline_hours
    logger.info("Scoring %d candidates at %d contexts", len(candidates),
                len(scorer_cfg.contexts))

    contexts = sorted(set(scorer_cfg.contexts)
                      | {scorer_cfg.early_context, scorer_cfg.late_context})
    results = score_candidates(ckpt, loader, candidates, contexts,
                               threads=_threads(run),
                               aggregation=scorer_cfg.aggregation,
                               labels=labels)

    scores_path = join(args.out, "scores.csv")
    write_csv(scores_path, SCORE_COLUMNS,
              ([r.candidate.utterance_id, int(r.label), float(context),
                r.scores[context], r.candidate.source]
               for r in results for context in scorer_cfg.contexts))
    pairs_path = join(args.out, "pairs.csv")
    write_csv(pairs_path, PAIR_COLUMNS,
              ([r.candidate.utterance_id, int(r.label),
                r.scores[scorer_cfg.early_context],
                r.scores[scorer_cfg.late_context], condition,
                r.candidate.source]
               for r, condition in zip(results, conditions)
               if r.scores[scorer_cfg.early_context] is not None
               and r.scores[scorer_cfg.late_context] is not None))
    meta_path = join(args.out, "score_meta.json")
    with open(meta_path, "w") as f:
        json.dump({"timeline_hours": timeline_hours,
                   "contexts": list(scorer_cfg.contexts),
                   "early_context": scorer_cfg.early_context,
                   "late_context": scorer_cfg.late_context,
                   "n_candidates": len(candidates),
                   "checkpoint_step": ckpt.step},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    artifacts.add(scores_path, pairs_path, meta_path)


def _read_scores(scores_dir):
    try:
        with open(join(scores_dir, "score_meta.json")) as f:
            meta = json.load(f)
        pairs = read_csv(join(scores_dir, "pairs.csv"))
        scores = read_csv(join(scores_dir, "scores.csv"))
    except (IOError, ValueError) as e:
        raise DataError("Cannot read the score files: %s" % e, scores_dir)
    return meta, pairs, scores


def _score_pairs(rows):
    return [ScorePair(utterance_id=r["utterance_id"],
                      positive=r["label"] == "1", early=float(r["early"]),
                      late=float(r["late"]), condition=r["condition"])
            for r in rows]


def cmd_calibrate_evaluate(run, args, artifacts):
    r"""Calibrate the thresholds, apply the policy, write the reports"""
    meta, pair_rows, score_rows = _read_scores(args.scores)
    hours = float(meta["timeline_hours"])
    if hours <= 0:
        raise DataError("No timeline in the scores, cannot measure false "
                        "alarms", args.scores)
    positives = _score_pairs(r for r in pair_rows if r["label"] == "1")
    timeline = _score_pairs(r for r in pair_rows if r["source"] == "stub")
    targets = run.decision

    th = calibrate_two_stage(positives, targets.early_frr, targets.late_frr,
                             targets.late_scope, meta["early_context"],
                             meta["late_context"])
    report = run_policy(positives, timeline, th, hours)
    early_report = run_policy(positives, timeline, early_only(th), hours)

    curves = {}
    for context in meta["contexts"]:
        rows = [r for r in score_rows
                if float(r["post_context"]) == context and r["score"] != ""]
        curves[context] = det_curve(
            [float(r["score"]) for r in rows if r["label"] == "1"],
            [float(r["score"]) for r in rows if r["source"] == "stub"],
            hours, label="%g s" % context)
    staged = two_stage_det(positives, timeline, hours, th.early_accept)
    early_curve = two_stage_det(positives, timeline, hours, 0.,
                                label="early-only")
    family = two_stage_det_family(positives, timeline, hours)

    max_fa = targets.fa_count_target
    frr_two_stage = frr_at_fa_count(staged, max_fa)
    frr_early = frr_at_fa_count(early_curve, max_fa)
    extra = {"early_only": early_report.to_dict(),
             "operating_point": {
                 "max_fa": max_fa,
                 "hours_per_fa": json_number(hours_per_fa(hours, max_fa)),
                 "frr_two_stage": frr_two_stage,
                 "frr_early_only": frr_early,
                 "relative_reduction": None if not frr_early
                 or frr_two_stage is None
                 else (frr_early - frr_two_stage) / frr_early,
                 "frr_two_stage_at_hours_target": frr_at_operating_point(
                     staged, targets.hours_per_fa_target),
                 "hours_per_fa_target": targets.hours_per_fa_target}}

    out = args.out
    th_path = join(out, "thresholds.json")
    with open(th_path, "w") as f:
        json.dump(th.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    decisions_path = join(out, "decisions.csv")
    write_decisions(decisions_path, report.decisions)
    artifacts.add(th_path, decisions_path)
    artifacts.add(*emit_reports(
        [curves[c] for c in sorted(curves)] + [early_curve, staged] + family,
        positives + timeline, report, out,
        tradeoff=context_tradeoff(curves, max_fa,
                                  (staged, report.mean_latency_s)),
        breakdown=condition_breakdown(positives, th),
        reference_early=reference_early_threshold(positives,
                                                  targets.late_frr),
        extra=extra))
    logger.info("FRR %.4f, %d FA in %.2f h, mean latency %s s",
                report.frr, report.fa_count, hours, report.mean_latency_s)


def cmd_simulate_stream(run, args, artifacts):
    r"""Replay the timeline and report the false alarms of the policy"""
    manifest = CorpusManifest.load(args.corpus)
    ckpt = load_checkpoint(args.checkpoint)
    try:
        with open(args.thresholds) as f:
            th = Thresholds(**json.load(f)).validate()
    except (IOError, ValueError, TypeError) as e:
        raise DataError("Cannot read thresholds: %s" % e, args.thresholds)
    detector = ProgressiveDetector(checkpoint=ckpt, thresholds=th,
                                   stub=run.stub,
                                   aggregation=run.scorer.aggregation)
    decisions = []
    for chunk in manifest.timeline:
        decisions.extend(detector.process(read_wav(manifest.path_of(
            chunk.path)), chunk.path))
    hours = manifest.negative_timeline_hours
    fa_count = sum(1 for d in decisions if d.accepted)
    decisions_path = join(args.out, "stream_decisions.csv")
    write_decisions(decisions_path, decisions)
    report_path = join(args.out, "stream_report.json")
    with open(report_path, "w") as f:
        json.dump({"timeline_hours": hours,
                   "candidates": detector.candidates_seen,
                   "late_computations": detector.late_computations,
                   "fa_count": fa_count,
                   "hours_per_fa": json_number(hours_per_fa(hours, fa_count)),
                   "thresholds": th.to_dict()},
                  f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    artifacts.add(decisions_path, report_path)
    logger.info("%d false alarms in %.2f h (%d late computations for %d "
                "candidates)", fa_count, hours, detector.late_computations,
                detector.candidates_seen)


def _apply_master_seed(run):
    run.synthgen.seed = derive_seed(run.seed, "synthgen")
    run.train.seed = derive_seed(run.seed, "train")


def main(argv=None):
    r"""Run the progvt command line, return the exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.log_file)
    subscribe_listeners()
    try:
        run = load_run_config(args.config, _overrides(args))
        _apply_master_seed(run)
        run.out_dir = args.out
        run.corpus_dir = getattr(args, "corpus", None) or run.corpus_dir
        run.checkpoint = getattr(args, "checkpoint", None) or run.checkpoint
        ensure_dir(args.out)
        artifacts = Artifacts(args.out)
        args.func(run, args, artifacts)
        config_path = join(args.out, "run_config.json")
        run.save(config_path)
        artifacts.add(config_path)
        artifacts.save(args.command)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_USAGE
    except NumericError as e:
        logger.exception("Numeric failure: %s", e)
        return EXIT_NUMERIC
    except (ProgvtError, IOError, ValueError) as e:
        logger.exception("Data error: %s", e)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
