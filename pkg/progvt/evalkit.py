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

r"""DET curves, operating points and evaluation reports

FRR at threshold theta is the fraction of true trigger scores strictly
below theta; the false alarm count is the number of timeline candidate
scores at or above theta. Curves sweep the observed scores, so they are
exact step functions.

"""

import json
import logging
import math
import re
from os.path import join

import numpy as np
from atom.api import Atom, Float, Int, List, Str, Typed

from progvt.decision import calibrate_threshold
from progvt.figures import det_figure, latency_figure, scatter_figure, \
    tradeoff_figure
from progvt.utils import ensure_dir, write_csv

logger = logging.getLogger(__name__)

DET_COLUMNS = ["threshold", "frr", "fr_count", "fa_count", "hours_per_fa"]


class DetPoint(Atom):
    threshold = Float()
    frr = Float()
    fr_count = Int()
    fa_count = Int()
    hours_per_fa = Float()


class DetCurve(Atom):
    r"""Points ordered by strictly increasing threshold"""
    points = List(Typed(DetPoint))
    label = Str()
    n_pos = Int()
    n_neg = Int()
    timeline_hours = Float()

    def __len__(self):
        return len(self.points)

    def thresholds(self):
        return np.array([p.threshold for p in self.points])

    def frrs(self):
        return np.array([p.frr for p in self.points])

    def fa_counts(self):
        return np.array([p.fa_count for p in self.points])


def _hours_per_fa(timeline_hours, fa):
    return timeline_hours / fa if fa > 0 else math.inf


def _check_inputs(pos_scores, neg_scores, timeline_hours):
    pos = np.sort(np.asarray(pos_scores, dtype=np.float64))
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("empty input: DET needs positive and negative "
                         "scores")
    if timeline_hours <= 0:
        raise ValueError("timeline_hours must be > 0")
    return pos, neg


def _points(grid, fr, fa, n_pos, timeline_hours):
    return [DetPoint(threshold=float(t), frr=float(r) / n_pos, fr_count=int(r),
                     fa_count=int(a),
                     hours_per_fa=_hours_per_fa(timeline_hours, int(a)))
            for t, r, a in zip(grid, fr, fa)]


def det_curve(pos_scores, neg_scores, timeline_hours, label=""):
    r"""Exact DET curve over the union of the observed scores

    Parameters
    ----------
    pos_scores : sequence of float
        Scores of true triggers
    neg_scores : sequence of float
        Scores of the candidates of the trigger-free timeline
    timeline_hours : float
    label : str

    Returns
    -------
    DetCurve

    Raises
    ------
    ValueError
        On empty inputs

    """
    pos, neg = _check_inputs(pos_scores, neg_scores, timeline_hours)
    grid = np.unique(np.concatenate([pos, neg]))
    fr = np.searchsorted(pos, grid, side="left")
    fa = len(neg) - np.searchsorted(neg, grid, side="left")
    return DetCurve(points=_points(grid, fr, fa, len(pos), timeline_hours),
                    label=str(label), n_pos=len(pos), n_neg=len(neg),
                    timeline_hours=timeline_hours)


def frr_at_operating_point(curve, hours_per_fa_target=100.):
    r"""FRR at the smallest threshold reaching hours_per_fa_target

    No interpolation between points. Returns None when no threshold of
    the curve reaches the target.

    """
    for point in curve.points:
        if point.hours_per_fa >= hours_per_fa_target:
            return point.frr
    return None


def frr_at_fa_count(curve, max_fa=50):
    r"""FRR at the smallest threshold with at most max_fa false alarms

    The FA-count form of the operating point, for timelines much shorter
    than the hours-per-FA target. None when unreachable.

    """
    for point in curve.points:
        if point.fa_count <= max_fa:
            return point.frr
    return None


def _pair_arrays(pairs):
    return (np.array([p.early for p in pairs], dtype=np.float64),
            np.array([p.late for p in pairs], dtype=np.float64))


def two_stage_det(pos_pairs, neg_pairs, timeline_hours, early_threshold,
                  label="two-stage"):
    r"""DET curve of the two-stage policy with a fixed early threshold

    Thresholds theta below early_threshold (taken from the late scores)
    are late thresholds of the policy (early_threshold, theta); thresholds
    at or above it (taken from the early scores) are early-only policies.
    High thresholds thus follow the early-only curve and the curve departs
    from it at the FRR of early_threshold. With early_threshold = 0 the
    curve is the early-only DET.

    Parameters
    ----------
    pos_pairs, neg_pairs : list of progvt.decision.ScorePair
    timeline_hours : float
    early_threshold : float
    label : str

    Returns
    -------
    DetCurve

    """
    pos_early, pos_late = _pair_arrays(pos_pairs)
    neg_early, neg_late = _pair_arrays(neg_pairs)
    _check_inputs(pos_early, neg_early, timeline_hours)
    late_scores = np.concatenate([pos_late, neg_late])
    early_scores = np.concatenate([pos_early, neg_early])
    grid = np.unique(np.concatenate(
        [late_scores[late_scores < early_threshold],
         early_scores[early_scores >= early_threshold]]))

    def _accepted(early, late, theta):
        if theta < early_threshold:
            return (early >= early_threshold) | (late >= theta)
        return early >= theta

    fr = [int(np.sum(~_accepted(pos_early, pos_late, t))) for t in grid]
    fa = [int(np.sum(_accepted(neg_early, neg_late, t))) for t in grid]
    return DetCurve(points=_points(grid, fr, fa, len(pos_pairs),
                                   timeline_hours),
                    label=label, n_pos=len(pos_pairs), n_neg=len(neg_pairs),
                    timeline_hours=timeline_hours)


def two_stage_det_family(pos_pairs, neg_pairs, timeline_hours,
                         early_frr_grid=(.01, .03, .05, .1)):
    r"""Two-stage curves for several early FRR (deferral) targets"""
    curves = []
    for target in early_frr_grid:
        th = calibrate_threshold([p.early for p in pos_pairs], target)
        curves.append(two_stage_det(pos_pairs, neg_pairs, timeline_hours, th,
                                    label="two-stage@%g" % target))
    return curves


def context_tradeoff(curves_by_context, max_fa=50, two_stage=None):
    r"""FRR at the FA-count operating point versus latency

    Parameters
    ----------
    curves_by_context : dict
        post_context (s) -> DetCurve
    max_fa : int
    two_stage : (DetCurve, float) or None
        Two-stage curve and its mean latency

    Returns
    -------
    list of (label, latency, frr)

    """
    rows = [("%g s" % context, float(context),
             frr_at_fa_count(curves_by_context[context], max_fa))
            for context in sorted(curves_by_context)]
    if two_stage is not None:
        curve, latency = two_stage
        rows.append((curve.label, latency, frr_at_fa_count(curve, max_fa)))
    return rows


def condition_breakdown(pos_pairs, thresholds):
    r"""FRR per acoustic condition for early-only, late-only and two-stage

    Returns
    -------
    list of dict
        Keys condition, n, frr_early, frr_late, frr_two_stage

    """
    rows = []
    for condition in sorted(set(p.condition for p in pos_pairs)):
        chosen = [p for p in pos_pairs if p.condition == condition]
        early, late = _pair_arrays(chosen)
        n = float(len(chosen))
        early_reject = early < thresholds.early_accept
        late_reject = late < thresholds.late_accept
        rows.append({"condition": condition, "n": len(chosen),
                     "frr_early": float(np.sum(early_reject)) / n,
                     "frr_late": float(np.sum(late_reject)) / n,
                     "frr_two_stage": float(np.sum(early_reject
                                                   & late_reject)) / n})
    return rows


def reference_early_threshold(pos_pairs, late_frr_target):
    r"""Early-only threshold rejecting late_frr_target of the true triggers"""
    return calibrate_threshold([p.early for p in pos_pairs], late_frr_target)


def _slug(label):
    return re.sub(r"[^A-Za-z0-9.@_-]+", "_", str(label)).strip("_") or "curve"


def write_det_csv(path, curve):
    return write_csv(path, DET_COLUMNS,
                     ([p.threshold, p.frr, p.fr_count, p.fa_count,
                       p.hours_per_fa] for p in curve.points))


def emit_reports(curves, pairs, policy_report, out_dir, tradeoff=None,
                 breakdown=None, reference_early=None, extra=None):
    r"""Write CSV, SVG and JSON reports

    Parameters
    ----------
    curves : list of DetCurve
        One det_<label>.csv per curve and det.svg; none if empty
    pairs : list of progvt.decision.ScorePair
        scatter.csv and scatter.svg
    policy_report : progvt.decision.PolicyReport or None
        report.json, latency.csv and latency.svg
    out_dir : str
    tradeoff : list of (label, latency, frr) or None
    breakdown : list of dict or None
    reference_early : float or None
    extra : dict or None
        Added to report.json

    Returns
    -------
    list of str
        Paths of the written files

    """
    ensure_dir(out_dir)
    written = []
    if len(curves) == 0:
        logger.warning("No DET curve to report")
    else:
        for curve in curves:
            path = join(out_dir, "det_%s.csv" % _slug(curve.label))
            write_det_csv(path, curve)
            written.append(path)
        written.append(det_figure(curves, join(out_dir, "det.svg")))

    path = join(out_dir, "scatter.csv")
    write_csv(path, ["utterance_id", "label", "early", "late"],
              ([p.utterance_id, int(p.positive), p.early, p.late]
               for p in pairs))
    written.append(path)
    thresholds = None if policy_report is None else policy_report.thresholds
    written.append(scatter_figure(pairs, join(out_dir, "scatter.svg"),
                                  thresholds, reference_early))

    report = {} if policy_report is None else policy_report.to_dict()
    if policy_report is not None and thresholds is not None:
        rows = [("early", thresholds.early_context),
                ("late", thresholds.late_context),
                ("two-stage", policy_report.mean_latency_s)]
        path = join(out_dir, "latency.csv")
        write_csv(path, ["system", "mean_latency_s"], rows)
        written.append(path)
        written.append(latency_figure(rows, join(out_dir, "latency.svg")))

    if tradeoff is not None:
        path = join(out_dir, "tradeoff.csv")
        write_csv(path, ["system", "latency_s", "frr"], tradeoff)
        written.append(path)
        written.append(tradeoff_figure(tradeoff,
                                       join(out_dir, "tradeoff.svg")))
        report["tradeoff"] = [{"system": r[0], "latency_s": r[1],
                               "frr": r[2]} for r in tradeoff]
    if breakdown is not None:
        path = join(out_dir, "conditions.csv")
        columns = ["condition", "n", "frr_early", "frr_late", "frr_two_stage"]
        write_csv(path, columns, ([r[c] for c in columns] for r in breakdown))
        written.append(path)
        report["conditions"] = breakdown
    if extra:
        report.update(extra)

    path = join(out_dir, "report.json")
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    written.append(path)
    logger.info("Wrote %d report files to %s", len(written), out_dir)
    return written
