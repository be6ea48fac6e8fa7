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

r"""Progressive two-stage decisions

A candidate whose early score (short post-trigger context) reaches the
early threshold is accepted at once. Otherwise the late score (long
context) is computed and compared with the late threshold. Thresholds are
inclusive: a score equal to the threshold is accepted.

"""

import json
import logging
import math

import numpy as np
from atom.api import Atom, Bool, Enum, Float, Int, List, Str, Typed, Value

from progvt.exceptions import DeferredEvaluationError, ProgvtError
from progvt.scorer import ScoreRequest, score_segment, stub_first_pass
from progvt.utils import json_number, write_csv

logger = logging.getLogger(__name__)

#: a threshold above every score: nothing is accepted
ABOVE_ALL = 1. + 1e-6

DECISION_COLUMNS = ["utterance_id", "label", "early", "late", "outcome",
                    "latency"]


class Thresholds(Atom):
    r"""Early and late acceptance thresholds with their contexts"""
    early_accept = Float(0.)
    late_accept = Float(0.)
    early_context = Float(.3)
    late_context = Float(2.)

    def validate(self):
        for name in ("early_accept", "late_accept"):
            if not 0. <= getattr(self, name) <= ABOVE_ALL:
                raise ValueError("%s must be in [0, 1], got %g"
                                 % (name, getattr(self, name)))
        return self

    def to_dict(self):
        return {"early_accept": self.early_accept,
                "late_accept": self.late_accept,
                "early_context": self.early_context,
                "late_context": self.late_context}


class ScorePair(Atom):
    r"""Early and late scores of one candidate"""
    utterance_id = Str()
    positive = Bool()
    early = Float()
    late = Float()
    condition = Str()


class ScoredDecision(Atom):
    r"""Outcome of the two-stage policy for one candidate

    late is None when the candidate was accepted early. Rejected
    candidates carry the late context as latency, for bookkeeping only.

    """
    utterance_id = Str()
    early = Float()
    late = Value()
    outcome = Enum("accept_early", "accept_late", "reject")
    latency = Float()
    label = Value()

    @property
    def accepted(self):
        return self.outcome != "reject"


def decide(early, late_supplier, th, utterance_id=""):
    r"""Two-stage decision for one candidate

    Parameters
    ----------
    early : float
    late_supplier : callable
        Called without arguments, only if the candidate is deferred
    th : Thresholds
    utterance_id : str

    Returns
    -------
    ScoredDecision

    Raises
    ------
    DeferredEvaluationError
        If late_supplier fails

    """
    if early >= th.early_accept:
        return ScoredDecision(utterance_id=utterance_id, early=early,
                              outcome="accept_early",
                              latency=th.early_context)
    try:
        late = float(late_supplier())
    except Exception as e:
        raise DeferredEvaluationError("late score of %s failed: %s"
                                      % (utterance_id, e)) from e
    return ScoredDecision(utterance_id=utterance_id, early=early, late=late,
                          outcome="accept_late" if late >= th.late_accept
                          else "reject",
                          latency=th.late_context)


def calibrate_threshold(true_scores, target_frr):
    r"""Largest threshold rejecting at most target_frr of the true scores

    The candidate thresholds are the scores themselves, 0 and ABOVE_ALL;
    a score is rejected when it is strictly below the threshold.

    Parameters
    ----------
    true_scores : sequence of float
    target_frr : float
        In [0, 1)

    Returns
    -------
    float

    Raises
    ------
    ValueError
        On an empty list or a target outside [0, 1)

    """
    scores = np.sort(np.asarray(true_scores, dtype=np.float64))
    if len(scores) == 0:
        raise ValueError("calibrate_threshold needs at least one true score")
    if not 0. <= target_frr < 1.:
        raise ValueError("target_frr must be in [0, 1), got %g" % target_frr)
    allowed = int(math.floor(target_frr * len(scores) + 1e-9))
    grid = np.unique(np.concatenate([[0., ABOVE_ALL], scores]))
    below = np.searchsorted(scores, grid, side="left")
    return float(grid[below <= allowed].max())


def _positives(pairs):
    positives = [p for p in pairs if p.positive]
    if len(positives) == 0:
        raise ValueError("no positive pairs to calibrate on")
    return positives


def calibrate_two_stage(pairs, early_frr_target=.03, late_frr_target=.01,
                        late_scope="all", early_context=.3, late_context=2.):
    r"""Thresholds of the two-stage policy from labelled score pairs

    Parameters
    ----------
    pairs : list of ScorePair
    early_frr_target : float
        Fraction of true triggers allowed below the early threshold
    late_frr_target : float
        Fraction of true triggers allowed below the late threshold
    late_scope : {'all', 'deferred'}
        'all' measures the late target over every positive; 'deferred'
        over the positives the early stage defers (all positives when none
        is deferred)

    Returns
    -------
    Thresholds

    """
    positives = _positives(pairs)
    early_accept = calibrate_threshold([p.early for p in positives],
                                       early_frr_target)
    late_pool = positives
    if late_scope == "deferred":
        deferred = [p for p in positives if p.early < early_accept]
        late_pool = deferred if deferred else positives
    elif late_scope != "all":
        raise ValueError("late_scope must be 'all' or 'deferred'")
    late_accept = calibrate_threshold([p.late for p in late_pool],
                                      late_frr_target)
    th = Thresholds(early_accept=early_accept, late_accept=late_accept,
                    early_context=early_context, late_context=late_context)
    logger.info("Calibrated thresholds: early %.4f, late %.4f",
                early_accept, late_accept)
    return th


class PolicyReport(Atom):
    r"""Accuracy and latency of the two-stage policy"""
    frr = Float()
    fa_count = Int()
    hours_per_fa = Float()
    defer_fraction = Float()
    mean_latency_s = Value()
    n_early = Int()
    n_late = Int()
    n_pos = Int()
    late_computations = Int()
    timeline_hours = Float()
    thresholds = Typed(Thresholds)
    decisions = List(Typed(ScoredDecision))

    def to_dict(self):
        d = {"frr": self.frr,
             "fa_count": self.fa_count,
             "hours_per_fa": json_number(self.hours_per_fa),
             "defer_fraction": self.defer_fraction,
             "mean_latency_s": self.mean_latency_s,
             "n_early": self.n_early,
             "n_late": self.n_late,
             "n_pos": self.n_pos,
             "late_computations": self.late_computations,
             "timeline_hours": self.timeline_hours}
        if self.thresholds is not None:
            d["thresholds"] = self.thresholds.to_dict()
        return d

    def to_json(self):
        r"""JSON text; an infinite hours_per_fa (no false alarm) is null"""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True,
                          allow_nan=False)


def hours_per_fa(timeline_hours, fa_count):
    return timeline_hours / fa_count if fa_count > 0 else float("inf")


def mean_latency(n_early, n_late, early_context, late_context):
    r"""Mean latency of accepted true triggers, None if none is accepted"""
    if n_early + n_late == 0:
        return None
    return (n_early * early_context + n_late * late_context) \
        / float(n_early + n_late)


class _CountingSupplier(object):
    def __init__(self, value):
        self.value = value
        self.calls = 0

    def __call__(self):
        self.calls += 1
        return self.value


def run_policy(positive_pairs, negative_pairs, th, timeline_hours):
    r"""Apply the policy to labelled positives and timeline candidates

    Parameters
    ----------
    positive_pairs : list of ScorePair
        True triggers
    negative_pairs : list of ScorePair
        Candidates of the trigger-free timeline; every acceptance is a
        false alarm
    th : Thresholds
    timeline_hours : float

    Returns
    -------
    PolicyReport

    """
    decisions = []
    late_computations = 0
    for pair in list(positive_pairs) + list(negative_pairs):
        supplier = _CountingSupplier(pair.late)
        decision = decide(pair.early, supplier, th, pair.utterance_id)
        decision.label = pair.positive
        late_computations += supplier.calls
        decisions.append(decision)
    pos = decisions[:len(positive_pairs)]
    neg = decisions[len(positive_pairs):]
    n_early = sum(1 for d in pos if d.outcome == "accept_early")
    n_late = sum(1 for d in pos if d.outcome == "accept_late")
    n_pos = len(pos)
    fa_count = sum(1 for d in neg if d.accepted)
    report = PolicyReport(
        frr=(n_pos - n_early - n_late) / float(n_pos) if n_pos else 0.,
        fa_count=fa_count,
        hours_per_fa=hours_per_fa(timeline_hours, fa_count),
        defer_fraction=(n_pos - n_early) / float(n_pos) if n_pos else 0.,
        mean_latency_s=mean_latency(n_early, n_late, th.early_context,
                                    th.late_context),
        n_early=n_early, n_late=n_late, n_pos=n_pos,
        late_computations=late_computations,
        timeline_hours=timeline_hours, thresholds=th, decisions=decisions)
    if report.mean_latency_s is None:
        logger.warning("No true trigger accepted: mean latency undefined")
    return report


def early_only(th):
    r"""Single-stage policy on the early score at th.early_accept"""
    return Thresholds(early_accept=th.early_accept, late_accept=ABOVE_ALL,
                      early_context=th.early_context,
                      late_context=th.late_context)


def write_decisions(path, decisions):
    r"""Per-candidate decisions CSV"""
    return write_csv(path, DECISION_COLUMNS,
                     ([d.utterance_id,
                       "" if d.label is None else int(bool(d.label)),
                       float(d.early),
                       None if d.late is None else float(d.late),
                       d.outcome, float(d.latency)] for d in decisions))


class ProgressiveDetector(Atom):
    r"""Replay of a stream through the stub first pass and the policy

    Only deferred candidates pay for a second (late) forward pass.

    """
    checkpoint = Value()
    thresholds = Typed(Thresholds)
    stub = Value()
    aggregation = Enum("max", "mean")
    late_computations = Int(0)
    candidates_seen = Int(0)

    def process(self, audio, stream_id="stream"):
        r"""Decisions of all stub candidates of an audio stream

        Parameters
        ----------
        audio : progvt.audio.AudioBuffer
        stream_id : str

        Returns
        -------
        list of ScoredDecision

        """
        decisions = []
        th = self.thresholds
        for candidate in stub_first_pass(audio, self.stub, stream_id):
            try:
                early = score_segment(self.checkpoint, audio,
                                      ScoreRequest(candidate,
                                                   th.early_context),
                                      self.aggregation)
            except ProgvtError as e:
                logger.warning("Skipping candidate %s: %s",
                               candidate.utterance_id, e)
                continue

            def _late(candidate=candidate):
                self.late_computations += 1
                return score_segment(self.checkpoint, audio,
                                     ScoreRequest(candidate, th.late_context),
                                     self.aggregation)

            decisions.append(decide(early, _late, th, candidate.utterance_id))
            self.candidates_seen += 1
        return decisions
