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

r"""Training objectives

* ctc_loss: connectionist temporal classification over the phonetic head,
  forward-backward recursions in log space.
* discriminative_positive_loss: CTC of the one-symbol sequence [positive]
  over the 2-class head, the negative class playing the blank, i.e.
  -log of the total probability of the alignments neg* pos+ neg*.
* discriminative_negative_loss: -log of the mean over time of y_t^n; the
  mean keeps the loss nonnegative and independent of the sequence length.

All gradients are returned with respect to the pre-softmax logits.

"""

import logging

import numpy as np
from atom.api import Atom, Bool, Enum, Float, Int, List, Typed, Value

from progvt.exceptions import AlignmentError, NumericError, ShapeError, \
    TrainingError
from progvt.model import NEGATIVE, POSITIVE, FramePosteriors

logger = logging.getLogger(__name__)

NEG_FLOOR = 1e-12


class LabelSequence(Atom):
    r"""Target symbols of a CTC loss, blank excluded"""
    symbols = List(Int())
    blank_index = Int()

    def __init__(self, symbols, blank_index, **kwargs):
        symbols = [int(s) for s in symbols]
        if len(symbols) == 0:
            raise AlignmentError("empty label sequence")
        if blank_index in symbols:
            raise AlignmentError("label sequence contains the blank index %d"
                                 % blank_index)
        super(LabelSequence, self).__init__(symbols=symbols,
                                            blank_index=int(blank_index),
                                            **kwargs)

    def __len__(self):
        return len(self.symbols)

    @property
    def min_frames(self):
        r"""Fewest frames an alignment needs (a blank between repeats)"""
        repeats = sum(1 for a, b in zip(self.symbols[:-1], self.symbols[1:])
                      if a == b)
        return len(self.symbols) + repeats

    def extended(self):
        r"""Symbols interleaved with blanks, blank first and last"""
        ext = [self.blank_index]
        for s in self.symbols:
            ext.extend([s, self.blank_index])
        return np.array(ext)


def _check(log_posteriors, labels):
    lp = np.asarray(log_posteriors, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] < 1:
        raise ShapeError("expected a [T x K] matrix, got shape %s"
                         % (lp.shape,))
    if np.isnan(lp).any():
        raise NumericError("log posteriors contain NaN")
    if max(labels.symbols + [labels.blank_index]) >= lp.shape[1]:
        raise ShapeError("label index out of range for K = %d" % lp.shape[1])
    if lp.shape[0] < labels.min_frames:
        raise AlignmentError("alignment impossible: %d labels need %d "
                             "frames, got %d" % (len(labels),
                                                 labels.min_frames,
                                                 lp.shape[0]))
    return lp


def _skips(ext, blank):
    r"""allowed[s]: the transition s - 2 -> s is legal"""
    allowed = np.zeros(len(ext), dtype=bool)
    allowed[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return allowed


def _alpha(lp_ext, skips):
    steps, size = lp_ext.shape
    log_alpha = np.full((steps, size), -np.inf)
    log_alpha[0, :2] = lp_ext[0, :2]
    for t in range(1, steps):
        a = log_alpha[t - 1]
        combined = np.logaddexp(a, np.concatenate([[-np.inf], a[:-1]]))
        combined = np.where(skips, np.logaddexp(
            combined, np.concatenate([[-np.inf, -np.inf], a[:-2]])), combined)
        log_alpha[t] = combined + lp_ext[t]
    return log_alpha


def _beta(lp_ext, skips):
    steps, size = lp_ext.shape
    log_beta = np.full((steps, size), -np.inf)
    log_beta[-1, -2:] = lp_ext[-1, -2:]
    # s -> s + 2 is legal when skips[s + 2] is
    forward_skips = np.concatenate([skips[2:], [False, False]])
    for t in range(steps - 2, -1, -1):
        b = log_beta[t + 1]
        combined = np.logaddexp(b, np.concatenate([b[1:], [-np.inf]]))
        combined = np.where(forward_skips, np.logaddexp(
            combined, np.concatenate([b[2:], [-np.inf, -np.inf]])), combined)
        log_beta[t] = combined + lp_ext[t]
    return log_beta


def ctc_log_likelihood(log_posteriors, labels):
    r"""log P(labels | posteriors), forward recursion only

    Parameters
    ----------
    log_posteriors : np.ndarray
        [T x K] log-probabilities
    labels : LabelSequence

    Returns
    -------
    float

    Raises
    ------
    AlignmentError
        "alignment impossible" if T is too short for the labels
    NumericError
        If the log posteriors contain NaN

    """
    lp = _check(log_posteriors, labels)
    ext = labels.extended()
    log_alpha = _alpha(lp[:, ext], _skips(ext, labels.blank_index))
    return float(np.logaddexp(log_alpha[-1, -1], log_alpha[-1, -2]))


def ctc_loss(log_posteriors, labels):
    r"""CTC loss and its gradient with respect to the logits

    Parameters
    ----------
    log_posteriors : np.ndarray
        [T x K] log-softmax outputs
    labels : LabelSequence

    Returns
    -------
    (float, np.ndarray)
        -log P(labels | X) and dL/dlogits [T x K] = y - gamma, where
        gamma_t(k) is the posterior occupation of symbol k at time t

    Raises
    ------
    AlignmentError
        "alignment impossible" if T is too short for the labels
    NumericError
        If the log posteriors contain NaN

    """
    lp = _check(log_posteriors, labels)
    ext = labels.extended()
    skips = _skips(ext, labels.blank_index)
    lp_ext = lp[:, ext]
    log_alpha = _alpha(lp_ext, skips)
    log_beta = _beta(lp_ext, skips)
    log_p = np.logaddexp(log_alpha[-1, -1], log_alpha[-1, -2])
    if not np.isfinite(log_p):
        raise AlignmentError("alignment impossible: zero probability path "
                             "set")

    with np.errstate(invalid="ignore"):
        log_occupation = np.where(np.isfinite(lp_ext),
                                  log_alpha + log_beta - lp_ext - log_p,
                                  -np.inf)
    occupation = np.exp(log_occupation)
    gamma = np.zeros_like(lp)
    for s, k in enumerate(ext):
        gamma[:, k] += occupation[:, s]
    return max(float(-log_p), 0.), np.exp(lp) - gamma


def discriminative_positive_loss(disc_log_posteriors):
    r"""Loss of a trigger-bearing view on the discriminative head

    Parameters
    ----------
    disc_log_posteriors : np.ndarray
        [T x 2] log-posteriors (column 0 negative, column 1 positive)

    Returns
    -------
    (float, np.ndarray)
        Loss and dL/dlogits [T x 2]

    """
    return ctc_loss(disc_log_posteriors,
                    LabelSequence([POSITIVE], blank_index=NEGATIVE))


def discriminative_negative_loss(disc_posteriors, wrt="logits"):
    r"""-log((1/T) sum_t y_t^n) and its gradient

    Parameters
    ----------
    disc_posteriors : np.ndarray
        [T x 2] posteriors (column 0 negative, column 1 positive)
    wrt : {'logits', 'posteriors'}
        With 'posteriors' the gradient is dL/dy_t^n = -(1/T) / mean in
        column 0 and zero in column 1

    Returns
    -------
    (float, np.ndarray)

    """
    y = np.asarray(disc_posteriors, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 2 or y.shape[0] < 1:
        raise ShapeError("expected a [T x 2] matrix, got shape %s"
                         % (y.shape,))
    steps = y.shape[0]
    y_neg = np.maximum(y[:, NEGATIVE], NEG_FLOOR)
    mean = y_neg.mean()
    loss = max(float(-np.log(mean)), 0.)
    g = np.full(steps, -1. / (steps * mean))
    grad = np.zeros_like(y)
    if wrt == "posteriors":
        grad[:, NEGATIVE] = g
    elif wrt == "logits":
        coupling = g * y[:, NEGATIVE] * y[:, POSITIVE]
        grad[:, NEGATIVE] = coupling
        grad[:, POSITIVE] = -coupling
    else:
        raise ValueError("wrt must be 'logits' or 'posteriors', got %r" % wrt)
    return loss, grad


class LossItem(Atom):
    r"""One batch item: a forward pass and its target"""
    task = Enum("phonetic", "discriminative")
    posteriors = Typed(FramePosteriors)
    #: phonetic task target
    labels = Typed(LabelSequence)
    #: discriminative task target
    positive = Bool(False)
    #: anything the caller wants back (cache, utterance id)
    context = Value()


class MTLResult(Atom):
    r"""Batch loss and per-item logit gradients"""
    total = Float()
    phonetic_loss = Float()
    disc_loss = Float()
    #: list of (grad_phonetic or None, grad_discriminative or None)
    grads = List()


def item_loss(item):
    r"""Unweighted loss and logit gradient of one item"""
    post = item.posteriors
    if item.task == "phonetic":
        if item.labels is None:
            raise TrainingError("phonetic item without labels")
        return ctc_loss(post.phonetic_log, item.labels)
    if item.positive:
        return discriminative_positive_loss(post.discriminative_log)
    return discriminative_negative_loss(post.discriminative)


def mtl_loss(items, lambda_disc=1.0):
    r"""Multi-task loss of a batch

    total = mean phonetic CTC loss + lambda_disc * mean discriminative
    loss; a task absent from the batch contributes 0.

    Parameters
    ----------
    items : list of LossItem
    lambda_disc : float

    Returns
    -------
    MTLResult

    Raises
    ------
    TrainingError
        "empty batch"

    """
    if len(items) == 0:
        raise TrainingError("empty batch")
    n_phon = sum(1 for i in items if i.task == "phonetic")
    n_disc = len(items) - n_phon
    phon_total, disc_total = 0., 0.
    grads = []
    for item in items:
        steps = item.posteriors.num_windows
        if item.task == "phonetic":
            loss, g = item_loss(item)
            phon_total += loss
            grads.append((g / n_phon, None))
        elif lambda_disc == 0.:
            disc_total += item_loss(item)[0]
            grads.append((None, np.zeros((steps, 2))))
        else:
            loss, g = item_loss(item)
            disc_total += loss
            grads.append((None, g * (lambda_disc / n_disc)))
    phonetic_loss = phon_total / n_phon if n_phon else 0.
    disc_loss = disc_total / n_disc if n_disc else 0.
    return MTLResult(total=phonetic_loss + lambda_disc * disc_loss,
                     phonetic_loss=phonetic_loss, disc_loss=disc_loss,
                     grads=grads)
