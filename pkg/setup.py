#!/usr/bin/env python
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

"""setuptools based setup module"""

from setuptools import setup
# To use a consistent encoding
import codecs
from os import path

import progvt

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with codecs.open(path.join(here, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()


setup(
    name=progvt.__name__,
    version=progvt.__version__,
    description=progvt.__description__,
    long_description=long_description,
    url=progvt.__url__,
    download_url=progvt.__download_url__,
    author=progvt.__author__,
    author_email=progvt.__author_email__,
    license=progvt.__license__,
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Topic :: Multimedia :: Sound/Audio :: Speech',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8'
    ],
    keywords=['voice trigger', 'wake word', 'keyword spotting', 'CTC',
              'LSTM', 'DET curve'],
    packages=['progvt'],
    install_requires=['numpy', 'soundfile', 'matplotlib', 'configobj',
                      'atom', 'PyPubSub'],
    extras_require={'dev': [],
                    'test': ['pytest', 'coverage'], },
    package_data={'progvt': ['progvt.ini']},
    entry_points={},
    scripts=['bin/progvt']
    )
