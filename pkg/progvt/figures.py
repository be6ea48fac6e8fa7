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

r"""SVG figures of the evaluation reports

Figures are drawn with the object oriented matplotlib API (no pyplot
state) and saved with a fixed hash salt, no date metadata and text kept
as text, so that identical inputs give identical SVG bytes.

"""

import logging
import math

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

logger = logging.getLogger(__name__)

#: one color per curve or system, cycled
CURVE_COLORS = ("#222d5a", "#ff8840", "#00b8ff", "#cc3f14", "#3d4f99",
                "#e95a9a", "#aa8f68", "#b4d44f", "#a9a9a9", "#51b39d")
#: true triggers, other candidates
LABEL_COLORS = {True: "#008c46", False: "#d62728"}


def curve_color(index):
    return CURVE_COLORS[index % len(CURVE_COLORS)]

_RC = {"svg.hashsalt": "progvt",
       "svg.fonttype": "none",
       "font.size": 9.,
       "axes.grid": True,
       "grid.alpha": .3}


def _save(fig, path):
    with matplotlib.rc_context(_RC):
        FigureCanvasSVG(fig)
        fig.savefig(path, format="svg", metadata={"Date": None})
    logger.debug("Wrote %s", path)
    return path


def _new_figure(width=5., height=3.8):
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(width, height))
        ax = fig.add_subplot(1, 1, 1)
    return fig, ax


def det_figure(curves, path, title="DET"):
    r"""FRR versus hours per false alarm (log scale), one line per curve

    Parameters
    ----------
    curves : list of progvt.evalkit.DetCurve
    path : str

    """
    fig, ax = _new_figure()
    for i, curve in enumerate(curves):
        points = [p for p in curve.points if not math.isinf(p.hours_per_fa)]
        ax.step([p.hours_per_fa for p in points], [p.frr for p in points],
                where="post", color=curve_color(i), label=curve.label)
    ax.set_xscale("log")
    ax.set_xlabel("hours per false alarm")
    ax.set_ylabel("false reject rate")
    ax.set_title(title)
    if curves:
        ax.legend(loc="upper left")
    return _save(fig, path)


def scatter_figure(pairs, path, thresholds=None, reference_early=None):
    r"""Late versus early scores, true triggers in green, others in red

    Parameters
    ----------
    pairs : list of progvt.decision.ScorePair
    path : str
    thresholds : progvt.decision.Thresholds or None
        Draws the early threshold (solid vertical) and the late threshold
        (horizontal)
    reference_early : float or None
        Early-only threshold reaching the late FRR target (dashed vertical)

    """
    fig, ax = _new_figure(4.5, 4.5)
    for positive, name in ((False, "other"), (True, "true trigger")):
        chosen = [p for p in pairs if p.positive == positive]
        ax.scatter([p.early for p in chosen], [p.late for p in chosen], s=6,
                   alpha=.6, color=LABEL_COLORS[positive],
                   label=name, linewidths=0)
    if thresholds is not None:
        ax.axvline(thresholds.early_accept, color="k", linestyle="-", lw=1)
        ax.axhline(thresholds.late_accept, color="k", linestyle="-", lw=1)
    if reference_early is not None:
        ax.axvline(reference_early, color="k", linestyle="--", lw=1)
    ax.set_xlim(-.02, 1.02)
    ax.set_ylim(-.02, 1.02)
    ax.set_xlabel("early score")
    ax.set_ylabel("late score")
    ax.legend(loc="lower right")
    return _save(fig, path)


def latency_figure(rows, path):
    r"""Bar chart of (system, mean latency in seconds) rows"""
    fig, ax = _new_figure()
    names = [r[0] for r in rows]
    values = [0. if r[1] is None else r[1] for r in rows]
    ax.bar(range(len(rows)), values,
           color=[curve_color(i) for i in range(len(rows))])
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names)
    ax.set_ylabel("mean latency of accepted true triggers (s)")
    return _save(fig, path)


def tradeoff_figure(rows, path):
    r"""FRR at the operating point versus latency

    Parameters
    ----------
    rows : list of (label, latency, frr)
        frr may be None (operating point unreachable)

    """
    fig, ax = _new_figure()
    for i, (label, latency, frr) in enumerate(rows):
        if frr is None or latency is None:
            continue
        ax.plot([latency], [frr], "o", color=curve_color(i),
                label=str(label))
    ax.set_xlabel("latency (s)")
    ax.set_ylabel("false reject rate at the operating point")
    if rows:
        ax.legend(loc="upper right")
    return _save(fig, path)
