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

r"""Tests of the CTC, discriminative and multi-task losses"""

import itertools

import numpy as np
import pytest

from progvt.config import ModelConfig
from progvt.exceptions import AlignmentError, NumericError, TrainingError
from progvt.losses import LabelSequence, LossItem, ctc_log_likelihood, \
    ctc_loss, discriminative_negative_loss, discriminative_positive_loss, \
    mtl_loss
from progvt.model import FramePosteriors, backward, forward, init_params, \
    log_softmax


def _collapse(path, blank):
    out = []
    previous = None
    for k in path:
        if k != previous and k != blank:
            out.append(k)
        previous = k
    return out


def _brute_force_probability(posteriors, symbols, blank):
    steps, classes = posteriors.shape
    total = 0.
    for path in itertools.product(range(classes), repeat=steps):
        if _collapse(path, blank) == symbols:
            total += np.prod([posteriors[t, k] for t, k in enumerate(path)])
    return total


def _random_log_posteriors(rng, steps, classes):
    return log_softmax(rng.standard_normal((steps, classes)) * 2.)


def _posteriors(logits_phon, logits_disc):
    phon_log, disc_log = log_softmax(logits_phon), log_softmax(logits_disc)
    return FramePosteriors(phonetic=np.exp(phon_log),
                           discriminative=np.exp(disc_log),
                           phonetic_log=phon_log,
                           discriminative_log=disc_log,
                           phonetic_logits=logits_phon,
                           discriminative_logits=logits_disc)


def test_ctc_matches_path_enumeration():
    rng = np.random.default_rng(0)
    cases = 0
    while cases < 50:
        steps = int(rng.integers(1, 7))
        classes = 3
        symbols = [int(s) for s in rng.integers(0, 2,
                                                size=rng.integers(1, 4))]
        labels = LabelSequence(symbols, blank_index=2)
        if labels.min_frames > steps:
            continue
        lp = _random_log_posteriors(rng, steps, classes)
        expected = _brute_force_probability(np.exp(lp), symbols, 2)
        assert ctc_log_likelihood(lp, labels) == \
            pytest.approx(np.log(expected), abs=1e-10)
        loss, _ = ctc_loss(lp, labels)
        assert loss == pytest.approx(-np.log(expected), abs=1e-10)
        cases += 1


def test_ctc_uniform_two_frames():
    lp = np.log(np.full((2, 2), .5))
    # paths a-a, a-blank, blank-a
    assert ctc_log_likelihood(lp, LabelSequence([0], 1)) == \
        pytest.approx(np.log(.75))


def test_ctc_certain_single_frame():
    lp = np.log(np.array([[1., 0.]]))
    loss, grad = ctc_loss(lp, LabelSequence([0], 1))
    assert loss == 0.
    assert np.allclose(grad, 0.)


def test_ctc_repeat_needs_blank():
    lp = np.log(np.full((2, 2), .5))
    with pytest.raises(AlignmentError) as e:
        ctc_loss(lp, LabelSequence([0, 0], 1))
    assert "alignment impossible" in str(e.value)


def test_ctc_nan_is_numeric_not_alignment():
    lp = np.log(np.full((4, 3), 1. / 3.))
    lp[1, 0] = np.nan
    with pytest.raises(NumericError) as e:
        ctc_loss(lp, LabelSequence([0, 1], 2))
    assert not isinstance(e.value, AlignmentError)


def test_ctc_rejects_blank_in_labels():
    with pytest.raises(AlignmentError):
        LabelSequence([0, 2], blank_index=2)


def test_ctc_gradient_matches_finite_differences(rng):
    logits = rng.standard_normal((6, 4))
    labels = LabelSequence([0, 1, 1], blank_index=3)
    _, grad = ctc_loss(log_softmax(logits), labels)
    eps = 1e-6
    numeric = np.zeros_like(logits)
    for index in np.ndindex(*logits.shape):
        up, down = logits.copy(), logits.copy()
        up[index] += eps
        down[index] -= eps
        numeric[index] = (ctc_loss(log_softmax(up), labels)[0]
                          - ctc_loss(log_softmax(down), labels)[0]) / (2 * eps)
    assert np.allclose(grad, numeric, rtol=1e-4, atol=1e-8)
    # rows of y - gamma sum to zero
    assert np.allclose(grad.sum(axis=1), 0., atol=1e-9)


def test_positive_loss_is_one_label_ctc(rng):
    lp = _random_log_posteriors(rng, 5, 2)
    loss, _ = discriminative_positive_loss(lp)
    expected = _brute_force_probability(np.exp(lp), [1], 0)
    assert loss == pytest.approx(-np.log(expected), abs=1e-10)


def test_negative_loss_values():
    y = np.array([[.9, .1], [.5, .5]])
    loss, _ = discriminative_negative_loss(y)
    assert loss == pytest.approx(-np.log(.7))
    certain = np.array([[1., 0.], [1., 0.]])
    assert discriminative_negative_loss(certain)[0] == 0.


def test_negative_loss_is_floored():
    loss, grad = discriminative_negative_loss(np.array([[0., 1.]]))
    assert np.isfinite(loss)
    assert np.all(np.isfinite(grad))


def test_negative_loss_posterior_gradient():
    y = np.array([[.9, .1], [.5, .5]])
    _, grad = discriminative_negative_loss(y, wrt="posteriors")
    assert np.allclose(grad[:, 0], -1. / (2 * .7))
    assert np.all(grad[:, 1] == 0.)


def test_negative_loss_logit_gradient(rng):
    logits = rng.standard_normal((5, 2))

    def loss_of(z):
        return discriminative_negative_loss(np.exp(log_softmax(z)))[0]

    _, grad = discriminative_negative_loss(np.exp(log_softmax(logits)))
    eps = 1e-6
    for index in np.ndindex(*logits.shape):
        up, down = logits.copy(), logits.copy()
        up[index] += eps
        down[index] -= eps
        numeric = (loss_of(up) - loss_of(down)) / (2 * eps)
        assert grad[index] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


def test_mtl_empty_batch():
    with pytest.raises(TrainingError) as e:
        mtl_loss([])
    assert "empty batch" in str(e.value)


def _batch(rng):
    labels = LabelSequence([0, 1], blank_index=4)
    return [LossItem(task="phonetic",
                     posteriors=_posteriors(rng.standard_normal((6, 5)),
                                            rng.standard_normal((6, 2))),
                     labels=labels),
            LossItem(task="discriminative", positive=True,
                     posteriors=_posteriors(rng.standard_normal((4, 5)),
                                            rng.standard_normal((4, 2)))),
            LossItem(task="discriminative", positive=False,
                     posteriors=_posteriors(rng.standard_normal((3, 5)),
                                            rng.standard_normal((3, 2))))]


def test_mtl_lambda_zero_has_no_discriminative_gradient(rng):
    items = _batch(rng)
    result = mtl_loss(items, lambda_disc=0.)
    assert result.total == pytest.approx(result.phonetic_loss)
    for item, (g_phon, g_disc) in zip(items, result.grads):
        if item.task == "discriminative":
            assert g_phon is None
            assert not np.any(g_disc)


def test_mtl_total_is_weighted_sum(rng):
    result = mtl_loss(_batch(rng), lambda_disc=.5)
    assert result.total == pytest.approx(result.phonetic_loss
                                         + .5 * result.disc_loss)
    assert result.disc_loss > 0.


def test_mtl_gradient_through_model(rng):
    cfg = ModelConfig(num_layers=1, hidden_per_direction=3, input_dim=4,
                      phonetic_classes=5)
    ckpt = init_params(cfg, seed=1, dtype=np.float64)
    xs = [rng.standard_normal((6, 4)), rng.standard_normal((4, 4))]
    labels = LabelSequence([0, 2], blank_index=4)

    def batch(c):
        out = []
        for x, task in zip(xs, ("phonetic", "discriminative")):
            post, cache = forward(c, x, return_cache=True)
            out.append((LossItem(task=task, posteriors=post, labels=labels,
                                 positive=True), cache))
        return out

    items = batch(ckpt)
    result = mtl_loss([item for item, _ in items])
    total = {name: np.zeros_like(p) for name, p in ckpt.params.items()}
    for (_, cache), (g_phon, g_disc) in zip(items, result.grads):
        for name, g in backward(ckpt, cache, g_phon, g_disc).items():
            total[name] += g

    eps = 1e-6
    for name in ("layer0.fwd.W", "phonetic.W", "discriminative.b"):
        param = ckpt.params[name]
        for index in list(np.ndindex(*param.shape))[:8]:
            saved = param[index]
            param[index] = saved + eps
            up = mtl_loss([i for i, _ in batch(ckpt)]).total
            param[index] = saved - eps
            down = mtl_loss([i for i, _ in batch(ckpt)]).total
            param[index] = saved
            assert total[name][index] == pytest.approx(
                (up - down) / (2 * eps), rel=1e-4, abs=1e-7)
