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

r"""Audio buffers, WAV input/output and segment extraction

Audio is 16-bit PCM mono; WAV files are RIFF PCM_16 read and written
through soundfile.

"""

import logging

import numpy as np
import soundfile as sf
from atom.api import Atom, Int, Typed

from progvt.exceptions import DataError, FrontendError

logger = logging.getLogger(__name__)

PCM_SCALE = 32768.


class AudioBuffer(Atom):
    r"""Mono 16-bit PCM audio

    Parameters
    ----------
    samples : array-like of int
        Signed 16-bit amplitudes
    sample_rate : int
        In Hz

    """
    samples = Typed(np.ndarray)
    sample_rate = Int(16000)

    def __init__(self, samples, sample_rate=16000, **kwargs):
        samples = np.asarray(samples)
        if samples.ndim != 1:
            raise FrontendError("audio must be mono, got shape %s"
                                % (samples.shape,))
        if sample_rate <= 0:
            raise FrontendError("sample_rate must be > 0")
        super(AudioBuffer, self).__init__(
            samples=samples.astype(np.int16, copy=False),
            sample_rate=int(sample_rate), **kwargs)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        r"""Duration in seconds"""
        return len(self.samples) / float(self.sample_rate)

    def as_float(self):
        r"""Samples scaled to [-1, 1) as float64"""
        return self.samples.astype(np.float64) / PCM_SCALE


def read_wav(path):
    r"""Read a RIFF PCM_16 mono WAV file

    Parameters
    ----------
    path : str

    Returns
    -------
    AudioBuffer

    Raises
    ------
    DataError
        If the file is missing, not mono or not 16-bit PCM

    """
    try:
        info = sf.info(path)
    except (RuntimeError, IOError) as e:
        raise DataError("Cannot read WAV file: %s" % e, path)
    if info.channels != 1:
        raise DataError("Expected mono audio, got %d channels"
                        % info.channels, path)
    if info.subtype != "PCM_16":
        raise DataError("Expected 16-bit PCM, got %s" % info.subtype, path)
    data, rate = sf.read(path, dtype="int16", always_2d=False)
    return AudioBuffer(data, sample_rate=rate)


def write_wav(path, audio):
    r"""Write an AudioBuffer as a RIFF PCM_16 mono WAV file

    Parameters
    ----------
    path : str
    audio : AudioBuffer

    """
    try:
        sf.write(path, audio.samples, audio.sample_rate,
                 subtype="PCM_16", format="WAV")
    except (RuntimeError, IOError) as e:
        raise DataError("Cannot write WAV file: %s" % e, path)


def extract_segment(audio, start, end):
    r"""Samples of audio in [start, end)

    Parameters
    ----------
    audio : AudioBuffer
    start : float
        Seconds
    end : float
        Seconds

    Returns
    -------
    AudioBuffer
        round((end - start) * rate) samples

    Raises
    ------
    FrontendError
        "empty segment", "start out of range" or "end out of range"

    """
    if end <= start:
        raise FrontendError("empty segment: [%g, %g)" % (start, end))
    if start < 0 or start >= audio.duration:
        raise FrontendError("start out of range: %g not in [0, %g)"
                            % (start, audio.duration))
    # tolerate float noise at the very end of the buffer
    if end > audio.duration + 0.5 / audio.sample_rate:
        raise FrontendError("end out of range: %g > %g"
                            % (end, audio.duration))
    i0 = int(round(start * audio.sample_rate))
    n = int(round((end - start) * audio.sample_rate))
    return AudioBuffer(audio.samples[i0:i0 + n],
                       sample_rate=audio.sample_rate)
