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

r"""Exceptions raised by progvt"""


class ProgvtError(Exception):
    r"""Base class of all progvt errors"""


class ConfigError(ProgvtError, ValueError):
    r"""Invalid or unreadable configuration"""


class FrontendError(ProgvtError, ValueError):
    r"""Audio cannot be turned into features"""


class SynthesisError(ProgvtError, ValueError):
    r"""Synthetic utterance cannot be rendered"""


class DataError(ProgvtError):
    r"""Missing, unreadable or inconsistent data on disk

    Parameters
    ----------
    message : str
    path : str or None
        The offending path, if any

    """
    def __init__(self, message, path=None):
        if path is not None:
            message = "%s [%s]" % (message, path)
        super(DataError, self).__init__(message)
        self.path = path


class ShapeError(ProgvtError, ValueError):
    r"""Array shapes do not match the model configuration"""


class AlignmentError(ProgvtError, ValueError):
    r"""A label sequence cannot be aligned to the available frames"""


class CheckpointError(DataError):
    r"""Corrupt or incompatible checkpoint file"""


class NumericError(ProgvtError, ArithmeticError):
    r"""Non-finite values where finite ones are required"""


class DivergenceError(NumericError):
    r"""Training produced a NaN loss

    Parameters
    ----------
    message : str
    last_good_step : int

    """
    def __init__(self, message, last_good_step):
        super(DivergenceError, self).__init__(
            "%s (last good step: %d)" % (message, last_good_step))
        self.last_good_step = last_good_step


class DeferredEvaluationError(ProgvtError):
    r"""The late score of a deferred candidate could not be computed"""


class TrainingError(ProgvtError, ValueError):
    r"""Training data or batches cannot be used"""
