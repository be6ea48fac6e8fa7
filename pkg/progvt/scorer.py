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

r"""Scores of candidate trigger segments

A candidate is the [trigger_start, trigger_end] span marked by a first
pass detector (or by the annotation). Scoring runs the discriminative
branch on [trigger_start, trigger_end + post_context], clipped to the end
of the audio, and aggregates y_t^p over the segment.

"""

import logging
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from atom.api import Atom, Dict, Enum, Float, Str, Typed, Value

from progvt.audio import extract_segment
from progvt.exceptions import FrontendError
from progvt.frontend import compute_features
from progvt.losses import ctc_log_likelihood
from progvt.messages import SCORING_PROGRESS, send
from progvt.model import forward

logger = logging.getLogger(__name__)


class TriggerCandidate(Atom):
    r"""A purported trigger segment

    Parameters
    ----------
    utterance_id : str
    trigger_start : float
    trigger_end : float
    source : {'annotation', 'stub'}
    audio_key : str
        What the audio loader needs to find the audio (defaults to the
        utterance id)

    """
    utterance_id = Str()
    trigger_start = Float()
    trigger_end = Float()
    source = Enum("annotation", "stub")
    audio_key = Str()

    def __init__(self, utterance_id, trigger_start, trigger_end, **kwargs):
        if not 0. <= trigger_start < trigger_end:
            raise FrontendError("invalid candidate %s: need 0 <= start < end,"
                                " got [%g, %g]" % (utterance_id, trigger_start,
                                                   trigger_end))
        kwargs.setdefault("audio_key", utterance_id)
        super(TriggerCandidate, self).__init__(utterance_id=utterance_id,
                                               trigger_start=trigger_start,
                                               trigger_end=trigger_end,
                                               **kwargs)

    @classmethod
    def from_entry(cls, entry):
        r"""Annotated candidate of a manifest entry

        Positives use the annotated trigger end, negatives the end a first
        pass would have marked (candidate_end).

        """
        spec = entry.spec
        end = spec.trigger_end if entry.is_positive else spec.candidate_end
        return cls(entry.utterance_id, spec.trigger_start, end,
                   source="annotation")


class ScoreRequest(Atom):
    r"""A candidate and the post-trigger context to score it with"""
    candidate = Typed(TriggerCandidate)
    post_context = Float(0.)

    def __init__(self, candidate, post_context, **kwargs):
        if post_context < 0:
            raise FrontendError("post_context must be >= 0, got %g"
                                % post_context)
        super(ScoreRequest, self).__init__(candidate=candidate,
                                           post_context=float(post_context),
                                           **kwargs)


def segment_bounds(audio, candidate, post_context):
    r"""[start, end] of the scored segment, end clipped to the audio"""
    return (candidate.trigger_start,
            min(candidate.trigger_end + post_context, audio.duration))


def aggregate(positive, aggregation="max"):
    r"""One score from per-window positive posteriors"""
    if aggregation == "max":
        return float(np.max(positive))
    if aggregation == "mean":
        return float(np.mean(positive))
    raise ValueError("Unknown aggregation %r" % aggregation)


def score_segment(ckpt, audio, req, aggregation="max"):
    r"""p(true | audio segment) from the discriminative branch

    Parameters
    ----------
    ckpt : progvt.model.ModelCheckpoint
    audio : AudioBuffer
    req : ScoreRequest
    aggregation : {'max', 'mean'}

    Returns
    -------
    float
        In [0, 1]

    Raises
    ------
    FrontendError
        "segment too short" if the clipped segment gives no window

    """
    start, end = segment_bounds(audio, req.candidate, req.post_context)
    segment = extract_segment(audio, start, end)
    features = compute_features(segment, ckpt.frontend, origin_offset=start)
    return aggregate(forward(ckpt, features).positive, aggregation)


def score_pair(ckpt, audio, candidate, early_context=.3, late_context=2.,
               aggregation="max"):
    r"""(early, late) scores, each from its own forward pass"""
    early = score_segment(ckpt, audio, ScoreRequest(candidate, early_context),
                          aggregation)
    late = score_segment(ckpt, audio, ScoreRequest(candidate, late_context),
                         aggregation)
    return early, late


def phonetic_score(ckpt, audio, candidate, trigger_labels):
    r"""p(trigger phone sequence | trigger segment) from the phonetic branch

    Parameters
    ----------
    ckpt : progvt.model.ModelCheckpoint
    audio : AudioBuffer
    candidate : TriggerCandidate
    trigger_labels : progvt.losses.LabelSequence

    Returns
    -------
    float

    """
    segment = extract_segment(audio, candidate.trigger_start,
                              min(candidate.trigger_end, audio.duration))
    features = compute_features(segment, ckpt.frontend,
                                origin_offset=candidate.trigger_start)
    posteriors = forward(ckpt, features)
    return float(np.exp(ctc_log_likelihood(posteriors.phonetic_log,
                                           trigger_labels)))


def _runs(mask):
    r"""(start, stop) index pairs of the True runs of a boolean array"""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def energy_regions(audio, cfg):
    r"""[start, end] seconds of the merged regions above the energy
    threshold, at least cfg.min_duration long"""
    frame = int(round(cfg.frame_ms * audio.sample_rate / 1000.))
    n = len(audio) // frame
    if n == 0:
        return []
    x = audio.as_float()[:n * frame].reshape(n, frame)
    energy_db = 10. * np.log10(np.mean(x ** 2, axis=1) + 1e-20)
    step = frame / float(audio.sample_rate)
    regions = []
    for first, stop in _runs(energy_db > cfg.energy_threshold_db):
        start, end = first * step, stop * step
        if regions and start - regions[-1][1] < cfg.min_gap:
            regions[-1] = (regions[-1][0], end)
        else:
            regions.append((start, end))
    return [(s, e) for s, e in regions if e - s >= cfg.min_duration]


def stub_first_pass(audio, cfg, utterance_id="stream"):
    r"""Energy based stand-in for an always-on first pass detector

    Each region above cfg.energy_threshold_db yields a candidate of
    cfg.trigger_duration at its onset, then one every cfg.rescan_interval
    seconds while the region lasts. Candidates overlapping the previous
    one by more than cfg.max_overlap are dropped, as are candidates cut
    below cfg.min_duration by the end of the audio.

    Parameters
    ----------
    audio : AudioBuffer
    cfg : progvt.config.StubConfig
    utterance_id : str
        Prefix of the candidate ids ("<utterance_id>@<start>")

    Returns
    -------
    list of TriggerCandidate

    """
    candidates = []
    for region_start, region_end in energy_regions(audio, cfg):
        t = region_start
        while t < region_end:
            end = min(t + cfg.trigger_duration, audio.duration)
            overlap = candidates[-1].trigger_end - t if candidates else 0.
            if end - t >= cfg.min_duration and overlap <= cfg.max_overlap:
                candidates.append(TriggerCandidate(
                    "%s@%.2f" % (utterance_id, t), t, end, source="stub",
                    audio_key=utterance_id))
            t += cfg.rescan_interval
    logger.debug("%d stub candidates in %s", len(candidates), utterance_id)
    return candidates


class ScoredCandidate(Atom):
    r"""Scores of a candidate, one per post-trigger context"""
    candidate = Typed(TriggerCandidate)
    label = Value()
    #: post_context -> score, None if the segment could not be scored
    scores = Dict()


def score_candidates(ckpt, audio_loader, candidates, contexts, threads=1,
                     aggregation="max", labels=None):
    r"""Score many candidates at several contexts, in parallel

    Parameters
    ----------
    ckpt : progvt.model.ModelCheckpoint
    audio_loader : callable
        audio_key -> AudioBuffer
    candidates : list of TriggerCandidate
    contexts : list of float
    threads : int
    aggregation : {'max', 'mean'}
    labels : list or None
        Carried to the results (e.g. True for positives)

    Returns
    -------
    list of ScoredCandidate
        In the order of candidates

    """
    labels = [None] * len(candidates) if labels is None else labels
    total = len(candidates)

    def _score(job):
        candidate, label = job
        audio = audio_loader(candidate.audio_key)
        scores = {}
        for context in contexts:
            try:
                scores[context] = score_segment(
                    ckpt, audio, ScoreRequest(candidate, context), aggregation)
            except FrontendError as e:
                logger.warning("Cannot score %s at %g s: %s",
                               candidate.utterance_id, context, e)
                scores[context] = None
        return ScoredCandidate(candidate=candidate, label=label, scores=scores)

    results = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        for result in executor.map(_score, zip(candidates, labels)):
            results.append(result)
            if len(results) % 100 == 0 or len(results) == total:
                send(SCORING_PROGRESS, done=len(results), total=total)
    return results


def cached_loader(load, max_items=4):
    r"""Wrap an audio loader with a small least-recently-used cache

    A key is read once while it stays among the max_items most recently
    used; threads asking for the same key wait for a single read.

    Parameters
    ----------
    load : callable
        key -> AudioBuffer
    max_items : int

    Returns
    -------
    callable

    """
    cache = OrderedDict()
    lock = threading.Lock()
    pending = {}

    def _cached(key):
        if key in cache:
            cache.move_to_end(key)
            return True
        return False

    def _load(key):
        with lock:
            if _cached(key):
                return cache[key]
            key_lock = pending.setdefault(key, threading.Lock())
        with key_lock:
            with lock:
                if _cached(key):
                    return cache[key]
            value = load(key)
            with lock:
                cache[key] = value
                while len(cache) > max(1, max_items):
                    cache.popitem(last=False)
                pending.pop(key, None)
            return value
    return _load
