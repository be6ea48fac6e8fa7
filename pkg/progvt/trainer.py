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

r"""Multi-task training loop

Every batch mixes phonetic items (whole utterances with their phone
sequence) and discriminative items (views of utterances) 1:1. The items
of step s only depend on (seed, s): each task stream walks through
per-epoch permutations seeded by (seed, task, epoch), so a run resumed
from a checkpoint at step k matches an uninterrupted run.

"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from atom.api import Atom, Dict, Float, Int, List, Typed, Value

from progvt.audio import extract_segment
from progvt.exceptions import AlignmentError, ConfigError, \
    DivergenceError, FrontendError, NumericError, TrainingError
from progvt.frontend import compute_features, compute_mel_frames, \
    estimate_normalizer, stack_and_downsample
from progvt.losses import LabelSequence, LossItem, mtl_loss
from progvt.messages import TRAINER_PROGRESS, send
from progvt.model import backward, forward, init_params, load_checkpoint
from progvt.synthgen import PhoneAlphabet
from progvt.utils import derive_seed, format_float

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "phonetic_loss", "disc_loss", "grad_norm_preclip"]


class View(Atom):
    r"""A [start, end) slice of an utterance used as a discriminative item"""
    entry = Value()
    start = Float()
    end = Float()
    positive = Value()


def view_bounds(entry, view_lengths=(0., .5, 1., 1.5, 2.), include_whole=True):
    r"""(start, end) pairs of the views of a manifest entry

    Positives get the trigger plus each post-trigger length; a view
    running past the utterance end collapses to the whole utterance and
    duplicates are removed. Negatives get the whole utterance only.

    Parameters
    ----------
    entry : progvt.synthgen.ManifestEntry
    view_lengths : sequence of float
        Seconds of audio kept after trigger_end
    include_whole : bool

    Returns
    -------
    list of (float, float)

    Raises
    ------
    TrainingError
        If a positive has no trigger_end

    """
    duration = entry.duration
    if not entry.is_positive:
        return [(0., duration)]
    spec = entry.spec
    if spec.trigger_end is None:
        raise TrainingError("positive %s has no trigger_end"
                            % entry.utterance_id)
    ends = [min(spec.trigger_end + length, duration)
            for length in view_lengths]
    if include_whole:
        ends.append(duration)
    bounds, seen = [], set()
    for end in ends:
        key = round(end, 6)
        if key not in seen:
            seen.add(key)
            bounds.append((spec.trigger_start, end))
    return bounds


def make_views(entry, audio, train_cfg, frontend_cfg):
    r"""Feature sequences of the views of an utterance

    Returns
    -------
    list of (FeatureSequence, bool)
        Features and whether the view is a positive example

    """
    views = []
    for start, end in view_bounds(entry, train_cfg.view_lengths,
                                  train_cfg.include_whole):
        segment = extract_segment(audio, start, end)
        views.append((compute_features(segment, frontend_cfg,
                                       origin_offset=start),
                      entry.is_positive))
    return views


class AdamState(Atom):
    r"""First and second moments, and the number of updates t"""
    t = Int(0)
    m = Dict()
    v = Dict()

    @classmethod
    def zeros(cls, ckpt):
        return cls(m={k: np.zeros_like(p) for k, p in ckpt.params.items()},
                   v={k: np.zeros_like(p) for k, p in ckpt.params.items()})

    @classmethod
    def from_checkpoint(cls, ckpt):
        if ckpt.optimizer is None:
            return cls.zeros(ckpt)
        return cls(t=int(ckpt.optimizer["t"]),
                   m={k: np.array(a) for k, a in ckpt.optimizer["m"].items()},
                   v={k: np.array(a) for k, a in ckpt.optimizer["v"].items()})


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64)))
                             for g in grads.values())))


def clip_gradients(grads, clip_norm):
    r"""Scale all gradients by clip_norm / ||g|| if ||g|| > clip_norm

    Returns
    -------
    (dict, float)
        Clipped gradients and the norm before clipping

    """
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


def adam_step(ckpt, grads, state, cfg):
    r"""Clip the gradients and apply one Adam update in place

    Parameters
    ----------
    ckpt : ModelCheckpoint
        Updated in place
    grads : dict
    state : AdamState
        Updated in place
    cfg : TrainConfig

    Returns
    -------
    float
        Global gradient norm before clipping

    Raises
    ------
    NumericError
        Naming the first parameter tensor with a non-finite gradient

    """
    for name in ckpt.param_names():
        if not np.all(np.isfinite(grads[name])):
            raise NumericError("non-finite gradient in parameter tensor %s"
                               % name)
    grads, norm = clip_gradients(grads, cfg.clip_norm)
    state.t += 1
    correction1 = 1. - cfg.beta1 ** state.t
    correction2 = 1. - cfg.beta2 ** state.t
    for name in ckpt.param_names():
        g = grads[name].astype(ckpt.params[name].dtype)
        m = state.m[name] = cfg.beta1 * state.m[name] + (1. - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] \
            + (1. - cfg.beta2) * g * g
        update = cfg.learning_rate * (m / correction1) \
            / (np.sqrt(v / correction2) + cfg.epsilon)
        ckpt.params[name] = (ckpt.params[name] - update).astype(
            ckpt.params[name].dtype)
    return norm


class TrainingData(Atom):
    r"""Training items drawn from the train split of a manifest"""
    manifest = Value()
    alphabet = Typed(PhoneAlphabet)
    train_cfg = Value()
    frontend_cfg = Value()
    phonetic = List()
    views = List()
    holdout = List()
    _frames = Dict()

    def __init__(self, manifest, train_cfg, frontend_cfg, alphabet=None,
                 **kwargs):
        super(TrainingData, self).__init__(
            manifest=manifest, train_cfg=train_cfg, frontend_cfg=frontend_cfg,
            alphabet=PhoneAlphabet() if alphabet is None else alphabet,
            **kwargs)
        entries = manifest.select(split="train")
        if len(entries) == 0:
            raise TrainingError("dataset empty: no training utterances in %s"
                                % manifest.root)
        order = np.random.default_rng(
            derive_seed(train_cfg.seed, "holdout")).permutation(len(entries))
        n_holdout = int(round(train_cfg.holdout_fraction * len(entries)))
        if n_holdout >= len(entries):
            n_holdout = 0
        self.holdout = [entries[i] for i in sorted(order[:n_holdout])]
        self.phonetic = [entries[i] for i in sorted(order[n_holdout:])]
        self.views = [View(entry=e, start=s, end=t, positive=e.is_positive)
                      for e in self.phonetic
                      for s, t in view_bounds(e, train_cfg.view_lengths,
                                              train_cfg.include_whole)]
        logger.info("Training data: %d utterances, %d discriminative views, "
                    "%d held out", len(self.phonetic), len(self.views),
                    len(self.holdout))

    def mel_frames(self, entry, start=0.):
        r"""Log-Mel frames of entry from start to the utterance end

        Memoized per (utterance, start): every view of a positive starts
        at trigger_start, so its frames are a prefix of these.

        """
        key = (entry.utterance_id, round(start, 6))
        if key not in self._frames:
            audio = self.manifest.load_audio(entry)
            if start > 0.:
                audio = extract_segment(audio, start, audio.duration)
            self._frames[key] = compute_mel_frames(audio, self.frontend_cfg)
        return self._frames[key]

    def features(self, entry, start=None, end=None):
        cfg = self.frontend_cfg
        if start is None:
            frames, start = self.mel_frames(entry), 0.
        else:
            n = int(round((end - start) * cfg.sample_rate))
            if n < cfg.win_length:
                raise FrontendError("segment too short: %d samples < window "
                                    "of %d" % (n, cfg.win_length))
            frames = self.mel_frames(entry, start)[
                :1 + (n - cfg.win_length) // cfg.hop_length]
        return stack_and_downsample(frames, cfg.stack_size, cfg.downsample,
                                    origin_offset=start,
                                    hop=cfg.hop_ms / 1000.)

    def labels(self, entry):
        return LabelSequence(self.alphabet.labels(entry.spec.phone_sequence),
                             blank_index=self.alphabet.blank_index)

    def _pick(self, pool, task, step, count):
        n = len(pool)
        picked = []
        for j in range(step * count, (step + 1) * count):
            epoch, position = divmod(j, n)
            order = np.random.default_rng(
                derive_seed(self.train_cfg.seed, task, epoch)).permutation(n)
            picked.append(pool[order[position]])
        return picked

    def batch(self, step):
        r"""(phonetic entries, discriminative views) of a training step"""
        n_phonetic = self.train_cfg.batch_size // 2
        n_disc = self.train_cfg.batch_size - n_phonetic
        return (self._pick(self.phonetic, "phon", step, n_phonetic),
                self._pick(self.views, "disc", step, n_disc))

    def estimate_normalizer(self):
        count = min(self.train_cfg.norm_utterances, len(self.phonetic))
        order = np.random.default_rng(
            derive_seed(self.train_cfg.seed, "normalizer")).permutation(
                len(self.phonetic))
        return estimate_normalizer(self.features(self.phonetic[i])
                                   for i in sorted(order[:count]))


class TrainingSession(Atom):
    r"""Observable state of a training run

    Observers of "step_completed" receive a dict with the LOG_COLUMNS
    keys after every optimizer step.

    """
    checkpoint = Value()
    state = Typed(AdamState)
    history = List()
    holdout_accuracy = Value()

    def record(self, step, phonetic_loss, disc_loss, grad_norm):
        row = {"step": step, "phonetic_loss": phonetic_loss,
               "disc_loss": disc_loss, "grad_norm_preclip": grad_norm}
        self.history.append(row)
        self.notify("step_completed", row)


class TrainingLogWriter(object):
    r"""Append TrainingSession steps to a CSV file

    Parameters
    ----------
    path : str
    append : bool
        Keep existing rows (resumed runs)

    """
    def __init__(self, path, append=False):
        self.path = path
        self._file = open(path, "a" if append else "w", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        if not append:
            self._writer.writerow(LOG_COLUMNS)

    def on_step_completed(self, row):
        self._writer.writerow([row["step"]] + [format_float(row[c])
                                               for c in LOG_COLUMNS[1:]])
        self._file.flush()

    def close(self):
        self._file.close()


def _forward_item(job):
    ckpt, features, target = job
    posteriors, cache = forward(ckpt, features, return_cache=True)
    if isinstance(target, LabelSequence):
        item = LossItem(task="phonetic", posteriors=posteriors, labels=target,
                        context=cache)
    else:
        item = LossItem(task="discriminative", posteriors=posteriors,
                        positive=bool(target), context=cache)
    return item


def discriminative_accuracy(ckpt, data, entries, threshold=.5):
    r"""Fraction of whole utterances whose max y^p is on the right side of
    threshold"""
    if len(entries) == 0:
        return None
    correct = 0
    for entry in entries:
        score = float(np.max(forward(ckpt, data.features(entry)).positive))
        correct += int((score >= threshold) == entry.is_positive)
    return correct / float(len(entries))


def train(manifest, model_cfg, train_cfg, frontend_cfg, resume=None,
          log_path=None, threads=1, alphabet=None):
    r"""Train the two-head model

    Parameters
    ----------
    manifest : progvt.synthgen.CorpusManifest
    model_cfg : ModelConfig
    train_cfg : TrainConfig
    frontend_cfg : FrontendConfig
    resume : str or ModelCheckpoint or None
        Continue from a checkpoint (with its Adam state) up to
        train_cfg.max_steps total steps
    log_path : str or None
        Per-step CSV log
    threads : int
        Items of a batch are processed in parallel; the gradient sum
        order does not depend on it
    alphabet : PhoneAlphabet or None

    Returns
    -------
    TrainingSession
        .checkpoint, .state (Adam), .history, .holdout_accuracy

    Raises
    ------
    TrainingError
        "dataset empty"
    DivergenceError
        If the head logits or the loss become non-finite
    NumericError
        On a non-finite gradient

    """
    train_cfg.validate()
    data = TrainingData(manifest, train_cfg, frontend_cfg, alphabet)
    if model_cfg.phonetic_classes != data.alphabet.num_output_units:
        raise ConfigError("[model] phonetic_classes is %d, the phone alphabet "
                          "needs %d" % (model_cfg.phonetic_classes,
                                        data.alphabet.num_output_units))
    if resume is None:
        ckpt = init_params(model_cfg, train_cfg.seed, frontend=frontend_cfg)
        state = AdamState.zeros(ckpt)
        if train_cfg.max_steps > 0:
            logger.info("Estimating feature normalisation ...")
            ckpt.normalizer = data.estimate_normalizer()
    else:
        loaded = load_checkpoint(resume) if isinstance(resume, str) \
            else resume
        state = AdamState.from_checkpoint(loaded)
        ckpt = loaded.copy()
        logger.info("Resuming training at step %d", ckpt.step)

    session = TrainingSession(checkpoint=ckpt, state=state)
    writer = None
    if log_path is not None:
        writer = TrainingLogWriter(log_path, append=resume is not None)
        session.observe("step_completed", writer.on_step_completed)

    executor = ThreadPoolExecutor(max_workers=max(1, threads))
    try:
        while ckpt.step < train_cfg.max_steps:
            step = ckpt.step
            phonetic, views = data.batch(step)
            jobs = []
            for entry in phonetic:
                try:
                    jobs.append((ckpt, data.features(entry),
                                 data.labels(entry)))
                except FrontendError as e:
                    logger.warning("Skipping %s: %s", entry.utterance_id, e)
            for view in views:
                jobs.append((ckpt, data.features(view.entry, view.start,
                                                 view.end),
                             view.positive))
            items = list(executor.map(_forward_item, jobs))
            if not all(_finite(i.posteriors) for i in items):
                raise DivergenceError("non-finite network outputs at step %d"
                                      % (step + 1), last_good_step=step)
            items = [i for i in items if _alignable(i)]
            result = mtl_loss(items, train_cfg.lambda_disc)
            if np.isnan(result.total):
                raise DivergenceError("loss is NaN at step %d" % (step + 1),
                                      last_good_step=step)
            grads = {k: np.zeros_like(p, dtype=np.float64)
                     for k, p in ckpt.params.items()}
            for item, (g_phon, g_disc) in zip(items, result.grads):
                for k, g in backward(ckpt, item.context, g_phon,
                                     g_disc).items():
                    grads[k] += g
            norm = adam_step(ckpt, grads, state, train_cfg)
            ckpt.step = step + 1
            session.record(ckpt.step, result.phonetic_loss, result.disc_loss,
                           norm)
            if ckpt.step % train_cfg.log_every == 0 \
                    or ckpt.step == train_cfg.max_steps:
                logger.info("step %d: phonetic %.4f, discriminative %.4f, "
                            "|g| %.3f", ckpt.step, result.phonetic_loss,
                            result.disc_loss, norm)
                send(TRAINER_PROGRESS, step=ckpt.step,
                     max_steps=train_cfg.max_steps,
                     phonetic_loss=result.phonetic_loss,
                     disc_loss=result.disc_loss)
    finally:
        executor.shutdown()
        if writer is not None:
            session.unobserve("step_completed", writer.on_step_completed)
            writer.close()

    if train_cfg.max_steps > 0 and len(data.holdout) > 0:
        session.holdout_accuracy = discriminative_accuracy(ckpt, data,
                                                           data.holdout)
        logger.info("Held-out discriminative accuracy: %.3f",
                    session.holdout_accuracy)
        if session.holdout_accuracy < train_cfg.accuracy_floor:
            logger.warning("Held-out accuracy %.3f below the floor %.3f",
                           session.holdout_accuracy, train_cfg.accuracy_floor)
    return session


def _finite(posteriors):
    return bool(np.isfinite(posteriors.phonetic_logits).all()
                and np.isfinite(posteriors.discriminative_logits).all())


def _alignable(item):
    r"""False (with a warning) for phonetic items too short for their labels"""
    if item.task != "phonetic":
        return True
    if item.posteriors.num_windows < item.labels.min_frames:
        logger.warning("Skipping phonetic item: %s", AlignmentError(
            "alignment impossible: %d windows for %d labels"
            % (item.posteriors.num_windows, len(item.labels))))
        return False
    return True
