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

r"""Audio front-end: log-Mel filterbank frames, stacked and downsampled

Framing rule: frame t covers samples [t * hop, t * hop + win), so a buffer
of N >= win samples yields 1 + floor((N - win) / hop) frames. A periodic
Hann window and an n_fft point real FFT give the power spectrum, which is
projected on triangular mel filters (HTK mel scale, no area normalisation)
before taking log(energy + log_floor).

Stacking rule: window i is the concatenation of frames
[i * factor, i * factor + stack); trailing frames that cannot fill a whole
stack are dropped.

"""

import logging

import numpy as np
from atom.api import Atom, Float, Int, Typed

from progvt.exceptions import FrontendError

logger = logging.getLogger(__name__)


def hz_to_mel(f):
    r"""HTK mel scale"""
    return 2595. * np.log10(1. + np.asarray(f, dtype=np.float64) / 700.)


def mel_to_hz(m):
    r"""Inverse of hz_to_mel"""
    return 700. * (10. ** (np.asarray(m, dtype=np.float64) / 2595.) - 1.)


def mel_center_frequencies(cfg):
    r"""Center frequencies (Hz) of the cfg.n_mels filters"""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax),
                       cfg.n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(cfg):
    r"""Triangular mel filterbank

    Parameters
    ----------
    cfg : progvt.config.FrontendConfig

    Returns
    -------
    np.ndarray
        [n_mels x (n_fft // 2 + 1)] nonnegative weights; the weights of
        adjacent filters sum to 1 between their centers

    """
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax),
                                  cfg.n_mels + 2))
    bins = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / float(cfg.n_fft)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    return np.maximum(0., np.minimum(rising, falling))


def _window(cfg):
    # periodic Hann
    return np.hanning(cfg.win_length + 1)[:-1]


def compute_mel_frames(audio, cfg):
    r"""Log-Mel energies at 100 frames per second

    Parameters
    ----------
    audio : progvt.audio.AudioBuffer
    cfg : progvt.config.FrontendConfig

    Returns
    -------
    np.ndarray
        [T x n_mels] float64, T = 1 + floor((N - win) / hop)

    Raises
    ------
    FrontendError
        "empty input", "rate mismatch" or "segment too short"

    """
    if len(audio.samples) == 0:
        raise FrontendError("empty input")
    if audio.sample_rate != cfg.sample_rate:
        raise FrontendError("rate mismatch: audio at %d Hz, front-end at %d Hz"
                            % (audio.sample_rate, cfg.sample_rate))
    win, hop = cfg.win_length, cfg.hop_length
    x = audio.as_float()
    if len(x) < win:
        raise FrontendError("segment too short: %d samples < window of %d"
                            % (len(x), win))
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    spectrum = np.fft.rfft(frames * _window(cfg), n=cfg.n_fft, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    energies = power @ mel_filterbank(cfg).T
    return np.log(energies + cfg.log_floor)


class FeatureSequence(Atom):
    r"""Model input X: downsampled stacked log-Mel windows of one segment

    Window i starts at frame index i * downsample, i.e. at source time
    origin_offset + i * frame_shift_effective.

    """
    windows = Typed(np.ndarray)
    frame_shift_effective = Float(0.03)
    origin_offset = Float(0.)
    hop = Float(0.01)
    downsample = Int(3)

    @property
    def num_windows(self):
        return self.windows.shape[0]

    @property
    def dim(self):
        return self.windows.shape[1]

    def frame_index(self, i):
        r"""Index (in frames from origin) of the first frame of window i"""
        return i * self.downsample

    def time_of(self, i):
        r"""Source time in seconds of window i"""
        return self.origin_offset + self.frame_index(i) * self.hop


def stack_and_downsample(frames, stack=7, factor=3, origin_offset=0.,
                         hop=0.01):
    r"""Stack contiguous frames into windows and keep every factor-th window

    Parameters
    ----------
    frames : np.ndarray
        [T x n_mels]
    stack : int
    factor : int
    origin_offset : float
        Source time of frame 0, in seconds
    hop : float
        Frame shift in seconds

    Returns
    -------
    FeatureSequence
        T_down = floor((T - stack) / factor) + 1 windows of dimension
        n_mels * stack

    Raises
    ------
    FrontendError
        "segment too short" if T < stack

    """
    frames = np.asarray(frames)
    t = frames.shape[0]
    if t < stack:
        raise FrontendError("segment too short: %d frames < stack of %d"
                            % (t, stack))
    t_down = (t - stack) // factor + 1
    index = np.arange(t_down)[:, None] * factor + np.arange(stack)[None, :]
    windows = frames[index].reshape(t_down, stack * frames.shape[1])
    return FeatureSequence(windows=windows,
                           frame_shift_effective=factor * hop,
                           origin_offset=float(origin_offset),
                           hop=float(hop),
                           downsample=int(factor))


def compute_features(audio, cfg, origin_offset=0.):
    r"""AudioBuffer -> FeatureSequence with the front-end of cfg"""
    frames = compute_mel_frames(audio, cfg)
    return stack_and_downsample(frames, cfg.stack_size, cfg.downsample,
                                origin_offset=origin_offset,
                                hop=cfg.hop_ms / 1000.)


def min_samples(cfg):
    r"""Smallest number of samples giving at least one stacked window"""
    return cfg.win_length + (cfg.stack_size - 1) * cfg.hop_length


class Normalizer(Atom):
    r"""Global affine feature normalisation, (x - mean) / std"""
    mean = Typed(np.ndarray)
    std = Typed(np.ndarray)

    @classmethod
    def identity(cls, dim):
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def apply(self, windows):
        return (windows - self.mean) / self.std


def estimate_normalizer(sequences, min_std=1e-5):
    r"""Estimate mean and std over all windows of several sequences

    Parameters
    ----------
    sequences : iterable of FeatureSequence
    min_std : float
        Floor of the standard deviation

    Returns
    -------
    Normalizer

    """
    total, total_sq, count = None, None, 0
    for seq in sequences:
        w = seq.windows.astype(np.float64)
        if total is None:
            total = np.zeros(w.shape[1])
            total_sq = np.zeros(w.shape[1])
        total += w.sum(axis=0)
        total_sq += (w ** 2).sum(axis=0)
        count += w.shape[0]
    if count == 0:
        raise FrontendError("empty input: no windows to estimate statistics")
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean ** 2, 0.))
    logger.debug("Normalizer estimated over %d windows", count)
    return Normalizer(mean=mean, std=np.maximum(std, min_std))
