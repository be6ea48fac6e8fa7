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

r"""progvt's __init__"""

__name__ = "progvt"
__description__ = "Progressive voice trigger detection: two-head biLSTM, " \
                  "early/late decision policy and DET/latency evaluation"

__version__ = "0.1.0"
__release__ = __version__
__author__ = "The progvt authors"
__author_email__ = "progvt@users.noreply.github.com"
__license__ = 'GPL v3 or later'
__url__ = "https://github.com/progvt/progvt"
__download_url__ = "https://github.com/progvt/progvt/releases/tag/" + \
    __release__
