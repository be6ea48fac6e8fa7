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

r"""Tests of the log-Mel front-end"""

import numpy as np
import pytest

from progvt.audio import AudioBuffer
from progvt.config import FrontendConfig
from progvt.exceptions import FrontendError
from progvt.frontend import compute_features, compute_mel_frames, \
    estimate_normalizer, mel_center_frequencies, mel_filterbank, \
    min_samples, stack_and_downsample


def _sine(freq, seconds=1., rate=16000):
    t = np.arange(int(seconds * rate)) / float(rate)
    return AudioBuffer((.5 * 32767 * np.sin(2 * np.pi * freq * t))
                       .astype(np.int16), sample_rate=rate)


def test_frame_count(frontend_cfg):
    frames = compute_mel_frames(_sine(440.), frontend_cfg)
    assert frames.shape == (98, 40)


def test_silence_is_log_floor(frontend_cfg):
    frames = compute_mel_frames(AudioBuffer(np.zeros(16000, dtype=np.int16)),
                                frontend_cfg)
    assert np.all(frames == np.log(frontend_cfg.log_floor))


def test_sine_peaks_at_nearest_mel_bin(frontend_cfg):
    frames = compute_mel_frames(_sine(1000.), frontend_cfg)
    expected = int(np.argmin(np.abs(mel_center_frequencies(frontend_cfg)
                                    - 1000.)))
    assert np.all(np.argmax(frames, axis=1) == expected)


def test_empty_input(frontend_cfg):
    with pytest.raises(FrontendError) as e:
        compute_mel_frames(AudioBuffer(np.zeros(0, dtype=np.int16)),
                           frontend_cfg)
    assert "empty input" in str(e.value)


def test_rate_mismatch(frontend_cfg):
    audio = AudioBuffer(np.zeros(8000, dtype=np.int16), sample_rate=8000)
    with pytest.raises(FrontendError) as e:
        compute_mel_frames(audio, frontend_cfg)
    assert "rate mismatch" in str(e.value)


def test_filterbank_weights(frontend_cfg):
    fb = mel_filterbank(frontend_cfg)
    assert fb.shape == (40, 257)
    assert np.all(fb >= 0.)
    assert np.all(fb.sum(axis=0) <= 1. + 1e-6)
    # adjacent filters overlap
    assert np.all((fb[:-1] * fb[1:]).sum(axis=1) > 0.)


def test_stack_and_downsample_shapes():
    seq = stack_and_downsample(np.zeros((98, 40)))
    assert seq.windows.shape == (31, 280)
    assert stack_and_downsample(np.zeros((7, 40))).num_windows == 1


def test_stack_indexing():
    frames = np.repeat(np.arange(20.)[:, None], 2, axis=1)
    seq = stack_and_downsample(frames, stack=7, factor=3)
    assert set(seq.windows[1]) == set(range(3, 10))


def test_stacking_is_reindexing(rng):
    frames = rng.standard_normal((20, 3))
    seq = stack_and_downsample(frames, stack=7, factor=3)
    multiplicity = np.zeros(20)
    for i in range(seq.num_windows):
        multiplicity[3 * i:3 * i + 7] += 1
    assert seq.windows.sum() == pytest.approx(
        (frames.sum(axis=1) * multiplicity).sum())


def test_stack_too_short():
    with pytest.raises(FrontendError) as e:
        stack_and_downsample(np.zeros((6, 40)))
    assert "segment too short" in str(e.value)


def test_time_bookkeeping():
    seq = stack_and_downsample(np.zeros((50, 40)), origin_offset=1.5)
    assert seq.time_of(0) == 1.5
    assert seq.time_of(4) - seq.time_of(3) == pytest.approx(.03, abs=1e-12)
    assert seq.frame_shift_effective == pytest.approx(.03)


def test_features_are_deterministic(frontend_cfg, rng):
    audio = AudioBuffer((rng.standard_normal(12000) * 1000).astype(np.int16))
    a = compute_features(audio, frontend_cfg)
    b = compute_features(audio, frontend_cfg)
    assert np.array_equal(a.windows, b.windows)
    assert np.all(np.isfinite(a.windows))
    assert a.dim == frontend_cfg.feature_dim


def test_min_samples_gives_one_window(frontend_cfg):
    n = min_samples(frontend_cfg)
    audio = AudioBuffer(np.ones(n, dtype=np.int16))
    assert compute_features(audio, frontend_cfg).num_windows == 1
    with pytest.raises(FrontendError):
        compute_features(AudioBuffer(np.ones(n - 1, dtype=np.int16)),
                         frontend_cfg)


def test_normalizer(rng):
    seqs = [stack_and_downsample(rng.normal(3., 2., (40, 4)), 7, 3)
            for _ in range(5)]
    norm = estimate_normalizer(seqs)
    normed = np.concatenate([norm.apply(s.windows) for s in seqs])
    assert np.allclose(normed.mean(axis=0), 0., atol=1e-9)
    assert np.allclose(normed.std(axis=0), 1., atol=1e-9)


def test_custom_mel_count():
    cfg = FrontendConfig(n_mels=20)
    assert compute_mel_frames(_sine(300.), cfg).shape[1] == 20
