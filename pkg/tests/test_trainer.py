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

r"""Tests of view construction, the optimizer and the training loop"""

import csv

import numpy as np
import pytest

from progvt.audio import extract_segment
from progvt.config import ModelConfig
from progvt.exceptions import ConfigError, DivergenceError, NumericError, \
    TrainingError
from progvt.frontend import compute_features
from progvt.model import init_params, save_checkpoint
from progvt.synthgen import CorpusManifest, ManifestEntry, TRIGGER, \
    UtteranceSpec
from progvt.trainer import AdamState, LOG_COLUMNS, TrainingData, \
    adam_step, clip_gradients, make_views, train, view_bounds

from conftest import tiny_model_config, tiny_train_config


def _entry(duration, trigger_end=.6, label="positive"):
    spec = UtteranceSpec(utterance_id="u", label=label,
                         phone_sequence=list(TRIGGER),
                         trigger_end=trigger_end if label == "positive"
                         else None)
    return ManifestEntry(path="wav/u.wav", spec=spec, split="train",
                         duration=duration)


def test_views_of_a_long_positive():
    bounds = view_bounds(_entry(3.6))
    assert [end for _, end in bounds] == pytest.approx([.6, 1.1, 1.6, 2.1,
                                                        2.6, 3.6])
    assert all(start == 0. for start, _ in bounds)


def test_views_collapse_on_short_positive():
    bounds = view_bounds(_entry(.8))
    assert [end for _, end in bounds] == pytest.approx([.6, .8])


def test_views_of_a_negative():
    assert view_bounds(_entry(2.5, label="negative")) == [(0., 2.5)]


def test_views_need_trigger_end():
    entry = _entry(2.)
    entry.spec.trigger_end = None
    with pytest.raises(TrainingError):
        view_bounds(entry)


def test_make_views(tiny_corpus, frontend_cfg):
    entry = tiny_corpus.select(split="train", label="positive")[0]
    views = make_views(entry, tiny_corpus.load_audio(entry),
                       tiny_train_config(), frontend_cfg)
    assert len(views) == len(view_bounds(entry))
    lengths = [features.num_windows for features, _ in views]
    assert lengths == sorted(lengths)
    assert all(positive for _, positive in views)


def test_clip_gradients():
    clipped, norm = clip_gradients({"a": np.array([40., 0.])}, 20.)
    assert norm == pytest.approx(40.)
    assert np.allclose(clipped["a"], [20., 0.])
    same, norm = clip_gradients({"a": np.array([3., 4.])}, 20.)
    assert norm == pytest.approx(5.)
    assert np.array_equal(same["a"], [3., 4.])


def test_adam_zero_gradient_keeps_params():
    ckpt = init_params(tiny_model_config(), seed=0)
    before = {k: v.copy() for k, v in ckpt.params.items()}
    state = AdamState.zeros(ckpt)
    state.m["phonetic.b"] = np.ones_like(state.m["phonetic.b"])
    grads = {k: np.zeros_like(v) for k, v in ckpt.params.items()}
    cfg = tiny_train_config()
    cfg.learning_rate = 0.
    adam_step(ckpt, grads, state, cfg)
    for name, value in before.items():
        assert np.array_equal(ckpt.params[name], value)
    assert np.allclose(state.m["phonetic.b"], .9)
    assert state.t == 1


def test_adam_rejects_non_finite_gradient():
    ckpt = init_params(tiny_model_config(), seed=0)
    grads = {k: np.zeros_like(v) for k, v in ckpt.params.items()}
    grads["phonetic.W"][0, 0] = np.nan
    with pytest.raises(NumericError) as e:
        adam_step(ckpt, grads, AdamState.zeros(ckpt), tiny_train_config())
    assert "phonetic.W" in str(e.value)


def test_batches_are_deterministic(tiny_corpus, frontend_cfg):
    cfg = tiny_train_config()
    a = TrainingData(tiny_corpus, cfg, frontend_cfg)
    b = TrainingData(tiny_corpus, cfg, frontend_cfg)
    for step in range(5):
        phon_a, views_a = a.batch(step)
        phon_b, views_b = b.batch(step)
        assert [e.utterance_id for e in phon_a] == \
            [e.utterance_id for e in phon_b]
        assert [(v.entry.utterance_id, v.end) for v in views_a] == \
            [(v.entry.utterance_id, v.end) for v in views_b]
        assert len(phon_a) == 2 and len(views_a) == 2


def test_training_needs_train_split(tiny_corpus, frontend_cfg):
    manifest = CorpusManifest(root=tiny_corpus.root,
                              entries=tiny_corpus.select(split="test"))
    with pytest.raises(TrainingError) as e:
        train(manifest, tiny_model_config(), tiny_train_config(),
              frontend_cfg)
    assert "dataset empty" in str(e.value)


def test_training_checks_phonetic_classes(tiny_corpus, frontend_cfg):
    with pytest.raises(ConfigError):
        train(tiny_corpus, tiny_model_config(phonetic_classes=10),
              tiny_train_config(), frontend_cfg)


def test_zero_steps_returns_initial_model(tiny_corpus, frontend_cfg):
    session = train(tiny_corpus, tiny_model_config(),
                    tiny_train_config(max_steps=0), frontend_cfg)
    initial = init_params(tiny_model_config(), tiny_train_config().seed)
    assert session.checkpoint.step == 0
    for name in initial.param_names():
        assert np.array_equal(session.checkpoint.params[name],
                              initial.params[name])


def test_training_is_deterministic(tiny_corpus, frontend_cfg):
    a = train(tiny_corpus, tiny_model_config(), tiny_train_config(),
              frontend_cfg, threads=1)
    b = train(tiny_corpus, tiny_model_config(), tiny_train_config(),
              frontend_cfg, threads=3)
    for name in a.checkpoint.param_names():
        assert np.array_equal(a.checkpoint.params[name],
                              b.checkpoint.params[name])
    assert a.history == b.history


def test_resume_matches_uninterrupted_run(tiny_corpus, frontend_cfg,
                                          tmp_path):
    full = train(tiny_corpus, tiny_model_config(),
                 tiny_train_config(max_steps=4), frontend_cfg)
    first = train(tiny_corpus, tiny_model_config(),
                  tiny_train_config(max_steps=2), frontend_cfg)
    path = str(tmp_path / "half.ckpt")
    save_checkpoint(first.checkpoint, path, optimizer_state=first.state)
    resumed = train(tiny_corpus, tiny_model_config(),
                    tiny_train_config(max_steps=4), frontend_cfg,
                    resume=path)
    assert resumed.checkpoint.step == 4
    for name in full.checkpoint.param_names():
        assert np.array_equal(full.checkpoint.params[name],
                              resumed.checkpoint.params[name])
    assert resumed.history == full.history[2:]


def test_non_finite_weights_diverge(tiny_corpus, frontend_cfg):
    ckpt = init_params(tiny_model_config(), seed=0)
    ckpt.params["layer0.fwd.W"][0, 0] = np.nan
    with pytest.raises(DivergenceError) as e:
        train(tiny_corpus, tiny_model_config(), tiny_train_config(),
              frontend_cfg, resume=ckpt)
    assert e.value.last_good_step == 0
    assert "step 1" in str(e.value)


def test_cached_features_match_segment_features(tiny_corpus, frontend_cfg):
    data = TrainingData(tiny_corpus, tiny_train_config(), frontend_cfg)
    positive = [v for v in data.views if v.positive][0]
    entry = positive.entry
    audio = tiny_corpus.load_audio(entry)
    whole = data.features(entry)
    assert np.allclose(whole.windows,
                       compute_features(audio, frontend_cfg).windows)
    for view in [v for v in data.views if v.entry is entry]:
        features = data.features(entry, view.start, view.end)
        expected = compute_features(
            extract_segment(audio, view.start, view.end), frontend_cfg,
            origin_offset=view.start)
        assert features.windows.shape == expected.windows.shape
        assert np.allclose(features.windows, expected.windows)
        assert features.origin_offset == expected.origin_offset


def test_training_log(tiny_corpus, frontend_cfg, tmp_path):
    path = str(tmp_path / "train_log.csv")
    train(tiny_corpus, tiny_model_config(), tiny_train_config(),
          frontend_cfg, log_path=path)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == LOG_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3]
    assert all(float(r[3]) >= 0. for r in rows[1:])


def test_training_reduces_loss(tiny_corpus, frontend_cfg):
    session = train(tiny_corpus, tiny_model_config(),
                    tiny_train_config(max_steps=40, learning_rate=.01),
                    frontend_cfg)
    totals = [r["phonetic_loss"] + r["disc_loss"] for r in session.history]
    assert len(totals) == 40
    assert np.mean(totals[-5:]) < np.mean(totals[:5])
    assert all(np.isfinite(totals))


def test_lambda_zero_leaves_discriminative_head(tiny_corpus, frontend_cfg):
    cfg = tiny_train_config(lambda_disc=0.)
    session = train(tiny_corpus, tiny_model_config(), cfg, frontend_cfg)
    initial = init_params(tiny_model_config(), cfg.seed)
    assert np.array_equal(session.checkpoint.params["discriminative.W"],
                          initial.params["discriminative.W"])


def test_model_config_default_matches_alphabet():
    assert ModelConfig().phonetic_classes == 23
