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

r"""Shared fixtures: tiny configurations, a tiny corpus and checkpoint"""

import numpy as np
import pytest

from progvt.config import FrontendConfig, GenConfig, ModelConfig, \
    StubConfig, TrainConfig
from progvt.model import init_params
from progvt.synthgen import generate_corpus


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the desk-scale training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale run (--runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_gen_config(**kwargs):
    cfg = GenConfig(n_positive=6, n_negative=4, test_fraction=.5,
                    negative_timeline_hours=20. / 3600., timeline_chunk_s=12.,
                    seed=3)
    for key, value in kwargs.items():
        setattr(cfg, key, value)
    return cfg


def tiny_model_config(**kwargs):
    cfg = ModelConfig(num_layers=1, hidden_per_direction=6)
    for key, value in kwargs.items():
        setattr(cfg, key, value)
    return cfg


def tiny_train_config(**kwargs):
    cfg = TrainConfig(batch_size=4, max_steps=3, seed=5, log_every=1,
                      holdout_fraction=0., norm_utterances=4)
    for key, value in kwargs.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture(scope="session")
def frontend_cfg():
    return FrontendConfig()


@pytest.fixture(scope="session")
def stub_cfg():
    return StubConfig()


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    r"""6 positives, 4 negatives and 20 s of timeline"""
    out = str(tmp_path_factory.mktemp("corpus"))
    return generate_corpus(tiny_gen_config(), out)


@pytest.fixture
def tiny_ckpt():
    return init_params(tiny_model_config(), seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
