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

r"""progvt utilities"""

import csv
import hashlib
import logging
import math
from os import makedirs
from os.path import abspath, dirname, isdir, join

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.9g"


def path_to_file(p_root, p_rel):
    r"""Path of a file shipped next to a module

    Parameters
    ----------
    p_root : str
        Usually the __file__ of the calling module
    p_rel : str
        Path relative to the directory of p_root

    Returns
    -------
    str

    """
    return abspath(join(dirname(p_root), p_rel))


def get_file_extension(filename):
    """Return the file extension, including the point (.)

    Parameters
    ----------
    filename : str
        The name of the file which extension we are interested in.
        It can be a standalone file name or a path to the file.

    """
    if not isdir(filename):
        index = filename.rfind('.')
        if index > -1:
            return filename[index:].strip().lower()
        return ''
    else:
        return 'directory'


def derive_seed(master_seed, *labels):
    r"""Derive a 32 bit seed from a master seed and a sequence of labels

    The derivation only depends on its arguments, so that serial and
    parallel executions draw the same random streams.

    Parameters
    ----------
    master_seed : int
    labels : str or int

    Returns
    -------
    int

    """
    h = hashlib.sha256(str(int(master_seed)).encode("utf-8"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:4], "little")


def format_float(value):
    r"""Serialize a float with 9 significant digits"""
    if value is None:
        return ""
    return FLOAT_FORMAT % value


def json_number(value):
    r"""value, or None (JSON null) for an infinite or NaN float"""
    if value is None or not math.isfinite(value):
        return None
    return value


def ensure_dir(path):
    r"""Create a directory (and parents) if needed, return its path"""
    if not isdir(path):
        logger.debug("Creating directory %s", path)
        makedirs(path)
    return path


def write_csv(path, header, rows):
    r"""Write rows to a CSV file, floats with 9 significant digits

    Parameters
    ----------
    path : str
    header : list of str
    rows : iterable of sequences

    Returns
    -------
    int
        Number of data rows written

    """
    n = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, float) else v
                             for v in row])
            n += 1
    logger.debug("Wrote %d rows to %s", n, path)
    return n


def read_csv(path):
    r"""Read a CSV file written by write_csv as a list of dicts"""
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
