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

r"""Tests of the two-stage decision policy and its calibration"""

import json

import numpy as np
import pytest

from progvt.audio import AudioBuffer
from progvt.config import StubConfig
from progvt.decision import ABOVE_ALL, ProgressiveDetector, ScorePair, \
    Thresholds, calibrate_threshold, calibrate_two_stage, decide, \
    early_only, hours_per_fa, mean_latency, run_policy, write_decisions
from progvt.exceptions import DeferredEvaluationError
from progvt.model import init_params
from progvt.utils import read_csv

from conftest import tiny_model_config

TH = Thresholds(early_accept=.9, late_accept=.8)


def _never():
    raise AssertionError("late score must not be computed")


def _pairs(rng, n_pos=200, n_neg=300):
    early = np.clip(rng.normal(.7, .15, n_pos), 0., 1.)
    pos = [ScorePair(utterance_id="p%d" % i, positive=True, early=e,
                     late=min(1., e + .1)) for i, e in enumerate(early)]
    neg = [ScorePair(utterance_id="n%d" % i, positive=False, early=e,
                     late=max(0., e - .1))
           for i, e in enumerate(np.clip(rng.normal(.3, .15, n_neg), 0., 1.))]
    return pos, neg


def test_decide_accepts_early_without_late_score():
    d = decide(.99, _never, TH, "u")
    assert d.outcome == "accept_early"
    assert d.late is None
    assert d.latency == pytest.approx(.3)


def test_decide_accepts_late():
    d = decide(.5, lambda: .95, TH)
    assert d.outcome == "accept_late"
    assert d.late == pytest.approx(.95)
    assert d.latency == pytest.approx(2.)


def test_decide_rejects():
    d = decide(.5, lambda: .5, TH)
    assert d.outcome == "reject"
    assert not d.accepted


def test_decide_thresholds_are_inclusive():
    assert decide(.9, _never, TH).outcome == "accept_early"
    assert decide(.1, lambda: .8, TH).outcome == "accept_late"


def test_decide_failing_late_score():
    def broken():
        raise RuntimeError("no audio")

    with pytest.raises(DeferredEvaluationError) as e:
        decide(.1, broken, TH, "u")
    assert isinstance(e.value.__cause__, RuntimeError)


def test_calibrate_threshold_examples():
    scores = [.1, .2, .3, .4, .5, .6, .7, .8, .9, 1.]
    assert calibrate_threshold(scores, .3) == pytest.approx(.4)
    assert calibrate_threshold(scores, 0.) == pytest.approx(.1)
    assert calibrate_threshold([.7] * 6, .5) == pytest.approx(.7)


def test_calibrate_threshold_errors():
    with pytest.raises(ValueError):
        calibrate_threshold([], .1)
    with pytest.raises(ValueError):
        calibrate_threshold([.5], 1.)


def test_calibrated_frr_never_exceeds_target(rng):
    for _ in range(20):
        scores = rng.uniform(size=int(rng.integers(1, 60)))
        target = float(rng.uniform(0., .5))
        th = calibrate_threshold(scores, target)
        assert np.mean(scores < th) <= target + 1e-12
        # the next larger score would break the target
        larger = scores[scores > th]
        if len(larger):
            assert np.mean(scores < larger.min()) > target


def test_calibrate_two_stage(rng):
    pos, neg = _pairs(rng)
    th = calibrate_two_stage(pos + neg, .03, .01)
    assert np.mean([p.early < th.early_accept for p in pos]) <= .03
    assert np.mean([p.late < th.late_accept for p in pos]) <= .01


def test_calibrate_two_stage_deferred_scope(rng):
    pos, neg = _pairs(rng)
    th = calibrate_two_stage(pos + neg, .5, .01, late_scope="deferred")
    deferred = [p for p in pos if p.early < th.early_accept]
    assert np.mean([p.late < th.late_accept for p in deferred]) <= .01


def test_calibrate_two_stage_needs_positives(rng):
    _, neg = _pairs(rng)
    with pytest.raises(ValueError):
        calibrate_two_stage(neg)


def test_policy_report(rng):
    pos, neg = _pairs(rng)
    th = calibrate_two_stage(pos + neg)
    report = run_policy(pos, neg, th, timeline_hours=2.)
    assert report.n_pos == len(pos)
    assert report.n_early + report.n_late <= report.n_pos
    assert report.frr == pytest.approx(
        1. - (report.n_early + report.n_late) / float(len(pos)))
    deferred = sum(1 for p in pos + neg if p.early < th.early_accept)
    assert report.late_computations == deferred
    assert report.defer_fraction == pytest.approx(
        np.mean([p.early < th.early_accept for p in pos]))
    d = json.loads(report.to_json())
    assert d["thresholds"]["early_accept"] == th.early_accept


def test_two_stage_accepts_a_superset_of_early_only(rng):
    pos, neg = _pairs(rng)
    th = Thresholds(early_accept=.6, late_accept=0.)
    two = run_policy(pos, neg, th, 1.)
    single = run_policy(pos, neg, early_only(th), 1.)
    for a, b in zip(two.decisions, single.decisions):
        assert a.accepted or not b.accepted


def test_zero_early_threshold_is_single_stage_early(rng):
    pos, neg = _pairs(rng)
    report = run_policy(pos, neg, Thresholds(early_accept=0.,
                                             late_accept=.5), 1.)
    assert report.n_early == len(pos)
    assert report.late_computations == 0
    assert report.mean_latency_s == pytest.approx(.3)


def test_above_all_early_threshold_is_single_stage_late(rng):
    pos, neg = _pairs(rng)
    th = Thresholds(early_accept=ABOVE_ALL, late_accept=.6)
    report = run_policy(pos, neg, th, 1.)
    for pair, d in zip(pos + neg, report.decisions):
        assert d.accepted == (pair.late >= .6)
    assert report.late_computations == len(pos) + len(neg)


def test_hours_per_fa_and_latency():
    assert hours_per_fa(2000., 4) == pytest.approx(500.)
    assert hours_per_fa(2., 0) == float("inf")
    assert mean_latency(97, 3, .3, 2.) == pytest.approx(.351)
    assert mean_latency(97, 3, .3, 2.) / .3 == pytest.approx(1.17)
    assert mean_latency(0, 0, .3, 2.) is None


def test_no_accepted_positive_has_no_latency():
    pos = [ScorePair(utterance_id="p", positive=True, early=.1, late=.1)]
    report = run_policy(pos, [], Thresholds(early_accept=.9,
                                            late_accept=.9), 1.)
    assert report.mean_latency_s is None
    assert json.loads(report.to_json())["mean_latency_s"] is None
    assert report.hours_per_fa == float("inf")


def _strict(constant):
    raise ValueError("non-standard JSON constant %s" % constant)


def test_no_false_alarm_is_null_in_json():
    pos = [ScorePair(utterance_id="p", positive=True, early=.95, late=.95)]
    neg = [ScorePair(utterance_id="n", positive=False, early=.1, late=.1)]
    report = run_policy(pos, neg, TH, 3.)
    assert report.fa_count == 0
    assert report.hours_per_fa == float("inf")
    data = json.loads(report.to_json(), parse_constant=_strict)
    assert data["hours_per_fa"] is None


def test_write_decisions(tmp_path):
    decisions = [decide(.99, _never, TH, "a"), decide(.5, lambda: .5, TH,
                                                        "b")]
    decisions[0].label = True
    path = str(tmp_path / "decisions.csv")
    write_decisions(path, decisions)
    rows = read_csv(path)
    assert rows[0]["utterance_id"] == "a"
    assert rows[0]["label"] == "1"
    assert rows[0]["late"] == ""
    assert rows[1]["label"] == ""
    assert rows[1]["outcome"] == "reject"


def test_progressive_detector_defers_lazily():
    rng = np.random.default_rng(0)
    x = np.zeros(16000 * 6, dtype=np.int16)
    x[16000:24000] = (rng.standard_normal(8000) * 3000).astype(np.int16)
    x[64000:72000] = (rng.standard_normal(8000) * 3000).astype(np.int16)
    ckpt = init_params(tiny_model_config(), seed=0)
    accept_all = ProgressiveDetector(checkpoint=ckpt, stub=StubConfig(),
                                     thresholds=Thresholds(early_accept=0.))
    decisions = accept_all.process(AudioBuffer(x))
    assert len(decisions) == 2
    assert accept_all.late_computations == 0
    defer_all = ProgressiveDetector(checkpoint=ckpt, stub=StubConfig(),
                                    thresholds=Thresholds(
                                        early_accept=ABOVE_ALL))
    decisions = defer_all.process(AudioBuffer(x))
    assert defer_all.late_computations == 2
    assert all(d.late is not None for d in decisions)


def test_calibration_is_exact_on_the_calibration_set(rng):
    pos, neg = _pairs(rng, n_pos=333)
    th = calibrate_two_stage(pos + neg, .03, .01)
    report = run_policy(pos, neg, th, 1.)
    assert report.defer_fraction <= .03 + 1. / len(pos)
    assert report.frr <= .01 + 1. / len(pos)
