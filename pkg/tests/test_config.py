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

r"""Tests of the configuration layers"""

import json

import pytest

from progvt.config import FrontendConfig, GenConfig, RunConfig, \
    TrainConfig, get_config, load_run_config, read_config_file
from progvt.exceptions import ConfigError


def _write(tmp_path, name, content):
    path = tmp_path / name
    path.write_text(content)
    return str(path)


def test_packaged_defaults_match_members():
    run = load_run_config()
    assert run.to_dict() == RunConfig().validate().to_dict()
    assert get_config() is not None


def test_frontend_derived_values():
    cfg = FrontendConfig()
    assert cfg.win_length == 400
    assert cfg.hop_length == 160
    assert cfg.feature_dim == 280
    assert cfg.frame_shift_effective == pytest.approx(.03)


def test_json_file_and_overrides(tmp_path):
    path = _write(tmp_path, "c.json",
                  json.dumps({"seed": 5, "train": {"max_steps": 10},
                              "scorer": {"contexts": [.3, 2.]}}))
    run = load_run_config(path, {"train": {"batch_size": 4}})
    assert run.seed == 5
    assert run.train.max_steps == 10
    assert run.train.batch_size == 4
    assert run.scorer.contexts == [.3, 2.]
    assert run.train.learning_rate == pytest.approx(.0008)


def test_overrides_win_over_file(tmp_path):
    path = _write(tmp_path, "c.json", json.dumps({"train": {"max_steps": 10}}))
    run = load_run_config(path, {"train": {"max_steps": 3}})
    assert run.train.max_steps == 3


def test_ini_file(tmp_path):
    path = _write(tmp_path, "c.ini",
                  "[run]\nseed = 9\n[synthgen]\nn_positive = 12\n"
                  "condition_weights = 1, 0, 0, 0\n"
                  "[train]\ninclude_whole = no\n")
    run = load_run_config(path)
    assert run.seed == 9
    assert run.synthgen.n_positive == 12
    assert run.synthgen.condition_weights == [1., 0., 0., 0.]
    assert run.train.include_whole is False


def test_missing_config_file(tmp_path):
    path = str(tmp_path / "nope.json")
    with pytest.raises(ConfigError) as e:
        load_run_config(path)
    assert path in str(e.value)


def test_malformed_config_file(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(_write(tmp_path, "c.json", "{not json"))
    with pytest.raises(ConfigError):
        read_config_file(_write(tmp_path, "l.json", "[1, 2]"))


def test_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, "a.json",
                               json.dumps({"train": {"nope": 1}})))
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, "b.json", json.dumps({"nope": 1})))


def test_bad_values():
    with pytest.raises(ConfigError):
        TrainConfig().update({"max_steps": "many"})
    with pytest.raises(ConfigError):
        TrainConfig().update({"max_steps": 2.5})
    with pytest.raises(ConfigError):
        RunConfig().update({"scorer": {"aggregation": "median"}})


def test_section_invariants():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1).validate()
    with pytest.raises(ConfigError):
        GenConfig(vocab_size=10).validate()
    with pytest.raises(ConfigError):
        RunConfig().update({"model": {"input_dim": 100}}).validate()


def test_run_config_roundtrip(tmp_path):
    run = load_run_config(None, {"seed": 3, "decision": {"late_scope":
                                                         "deferred"}})
    path = str(tmp_path / "run.json")
    run.save(path)
    with open(path) as f:
        again = RunConfig.from_dict(json.load(f)).validate()
    assert again.to_dict() == run.to_dict()
