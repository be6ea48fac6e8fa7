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

r"""Configuration of the progvt pipeline

Every configuration section is an Atom with typed members whose defaults
are the desk-scale values. Sections are layered: member defaults,
then the packaged progvt.ini (configobj), then a user file (JSON or ini),
then command line overrides.

"""

import json
import logging
from os.path import exists

import configobj
from atom.api import Atom, Bool, Enum, Float, Int, List, Str, Typed

from progvt.exceptions import ConfigError
from progvt.utils import get_file_extension, path_to_file

logger = logging.getLogger(__name__)

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


def _list_item(member):
    r"""Item member of an atom List member (None for untyped lists)"""
    item = getattr(member, "item", None)
    if item is None:
        item = member.validate_mode[1]
    return item


def _coerce(member, value, name):
    r"""Convert a raw (possibly string) value to the type of an Atom member

    Parameters
    ----------
    member : atom.api.Member
    value : object
        Value coming from JSON, configobj or the command line
    name : str
        Dotted name used in error messages

    """
    try:
        if isinstance(member, Bool):
            if isinstance(value, str):
                if value.strip().lower() in _TRUE:
                    return True
                if value.strip().lower() in _FALSE:
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(member, Int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(member, Float):
            return float(value)
        if isinstance(member, List):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip() != ""]
            elif not isinstance(value, (list, tuple)):
                value = [value]
            item = _list_item(member)
            if item is None:
                return list(value)
            return [_coerce(item, v, name) for v in value]
        if isinstance(member, Enum):
            value = str(value).strip()
            if value not in member.items:
                raise ValueError(value)
            return value
        if isinstance(member, Str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError("Invalid value %r for %s" % (value, name))
    return value


class ConfigSection(Atom):
    r"""Base of the configuration sections"""

    #: Name of the section in ini / JSON files
    section = ""

    def to_dict(self):
        r"""Plain dict of the section values"""
        d = {}
        for name in sorted(type(self).members()):
            v = getattr(self, name)
            d[name] = list(v) if isinstance(v, list) else v
        return d

    def update(self, mapping, origin="config"):
        r"""Update the section from a mapping of raw values

        Parameters
        ----------
        mapping : dict
        origin : str
            Where the values come from, for error messages

        """
        members = type(self).members()
        for key, value in mapping.items():
            if key not in members:
                raise ConfigError("Unknown key '%s.%s' in %s"
                                  % (self.section, key, origin))
            setattr(self, key,
                    _coerce(members[key], value,
                            "%s.%s" % (self.section, key)))
        return self

    @classmethod
    def from_dict(cls, mapping):
        r"""Build a section from a mapping produced by to_dict()"""
        return cls().update(mapping, origin="dict")

    def validate(self):
        r"""Check the section invariants, raise ConfigError if broken"""

    def _require(self, condition, message):
        if not condition:
            raise ConfigError("[%s] %s" % (self.section, message))


class FrontendConfig(ConfigSection):
    r"""Log-Mel front-end: 25 ms Hann window, 10 ms hop, 512-point FFT"""
    section = "frontend"

    sample_rate = Int(16000)
    win_ms = Float(25.0)
    hop_ms = Float(10.0)
    n_fft = Int(512)
    n_mels = Int(40)
    fmin = Float(0.0)
    fmax = Float(8000.0)
    log_floor = Float(1e-10)
    stack_size = Int(7)
    downsample = Int(3)

    @property
    def win_length(self):
        r"""Window length in samples"""
        return int(round(self.win_ms * self.sample_rate / 1000.))

    @property
    def hop_length(self):
        r"""Hop length in samples"""
        return int(round(self.hop_ms * self.sample_rate / 1000.))

    @property
    def feature_dim(self):
        r"""Dimension D of a stacked window"""
        return self.n_mels * self.stack_size

    @property
    def frame_shift_effective(self):
        r"""Time between consecutive downsampled windows, in seconds"""
        return self.downsample * self.hop_ms / 1000.

    def validate(self):
        self._require(self.sample_rate > 0, "sample_rate must be > 0")
        self._require(self.win_length >= self.hop_length > 0,
                      "window length must be >= hop length > 0")
        self._require(self.n_fft >= self.win_length,
                      "n_fft must be >= window length")
        self._require(0 <= self.fmin < self.fmax <= self.sample_rate / 2.,
                      "need 0 <= fmin < fmax <= sample_rate / 2")
        self._require(self.n_mels > 0 and self.stack_size > 0
                      and self.downsample > 0,
                      "n_mels, stack_size and downsample must be > 0")
        self._require(self.log_floor > 0, "log_floor must be > 0")


class GenConfig(ConfigSection):
    r"""Synthetic corpus generation"""
    section = "synthgen"

    n_positive = Int(2000)
    n_negative = Int(600)
    test_fraction = Float(0.2)
    confusable_fraction = Float(0.5)
    mumbled_fraction = Float(0.15)
    repeated_fraction = Float(0.05)
    negative_timeline_hours = Float(2.0)
    timeline_chunk_s = Float(600.0)
    vocab_size = Int(100)
    zipf_s = Float(1.5)
    min_payload_words = Int(2)
    max_payload_words = Int(7)
    condition_weights = List(Float(), default=[1.0, 1.0, 1.0, 1.0])
    seed = Int(0)

    def validate(self):
        self._require(self.n_positive >= 0 and self.n_negative >= 0,
                      "counts must be >= 0")
        for name in ("test_fraction", "confusable_fraction",
                     "mumbled_fraction", "repeated_fraction"):
            self._require(0. <= getattr(self, name) <= 1.,
                          "%s must be in [0, 1]" % name)
        self._require(self.mumbled_fraction + self.repeated_fraction <= 1.,
                      "mumbled_fraction + repeated_fraction must be <= 1")
        self._require(self.negative_timeline_hours >= 0,
                      "negative_timeline_hours must be >= 0")
        self._require(self.timeline_chunk_s > 0,
                      "timeline_chunk_s must be > 0")
        self._require(self.vocab_size >= 20, "vocab too small")
        self._require(1 <= self.min_payload_words <= self.max_payload_words,
                      "need 1 <= min_payload_words <= max_payload_words")
        self._require(len(self.condition_weights) == 4
                      and min(self.condition_weights) >= 0
                      and sum(self.condition_weights) > 0,
                      "condition_weights needs 4 nonnegative weights")


class ModelConfig(ConfigSection):
    r"""Two-head biLSTM (production scale: 4 layers x 256 units)"""
    section = "model"

    num_layers = Int(2)
    hidden_per_direction = Int(64)
    input_dim = Int(280)
    phonetic_classes = Int(23)
    discriminative_classes = Int(2)

    def validate(self):
        self._require(self.num_layers > 0 and self.hidden_per_direction > 0
                      and self.input_dim > 0 and self.phonetic_classes > 1,
                      "all dimensions must be positive")
        self._require(self.discriminative_classes == 2,
                      "discriminative_classes must be 2")


class TrainConfig(ConfigSection):
    r"""Training loop settings (Adam, lr 0.0008, clipping at 20)"""
    section = "train"

    learning_rate = Float(0.0008)
    clip_norm = Float(20.0)
    batch_size = Int(16)
    max_steps = Int(3000)
    seed = Int(0)
    lambda_disc = Float(1.0)
    view_lengths = List(Float(), default=[0.0, 0.5, 1.0, 1.5, 2.0])
    include_whole = Bool(True)
    beta1 = Float(0.9)
    beta2 = Float(0.999)
    epsilon = Float(1e-8)
    holdout_fraction = Float(0.05)
    accuracy_floor = Float(0.8)
    log_every = Int(50)
    norm_utterances = Int(200)

    def validate(self):
        self._require(self.learning_rate > 0, "learning_rate must be > 0")
        self._require(self.clip_norm > 0, "clip_norm must be > 0")
        self._require(self.batch_size >= 2, "batch_size must be >= 2")
        self._require(self.max_steps >= 0, "max_steps must be >= 0")
        self._require(self.lambda_disc >= 0, "lambda_disc must be >= 0")
        self._require(all(v >= 0 for v in self.view_lengths),
                      "view_lengths must be >= 0")
        self._require(0. <= self.holdout_fraction < 1.,
                      "holdout_fraction must be in [0, 1)")


class ScorerConfig(ConfigSection):
    r"""Post-trigger context grid and score aggregation"""
    section = "scorer"

    contexts = List(Float(), default=[0.3, 0.5, 1.0, 1.5, 2.0])
    early_context = Float(0.3)
    late_context = Float(2.0)
    aggregation = Enum("max", "mean")

    def validate(self):
        self._require(len(self.contexts) > 0
                      and all(c >= 0 for c in self.contexts),
                      "contexts must be a non-empty list of values >= 0")
        self._require(0 <= self.early_context <= self.late_context,
                      "need 0 <= early_context <= late_context")


class StubConfig(ConfigSection):
    r"""Energy based stand-in for the always-on first pass"""
    section = "stub"

    energy_threshold_db = Float(-40.0)
    frame_ms = Float(10.0)
    min_duration = Float(0.3)
    min_gap = Float(0.2)
    trigger_duration = Float(0.7)
    rescan_interval = Float(1.5)
    max_overlap = Float(0.0)

    def validate(self):
        self._require(self.frame_ms > 0, "frame_ms must be > 0")
        self._require(self.trigger_duration > 0,
                      "trigger_duration must be > 0")
        self._require(self.rescan_interval > 0, "rescan_interval must be > 0")
        self._require(self.max_overlap >= 0, "max_overlap must be >= 0")


class DecisionConfig(ConfigSection):
    r"""Two-stage calibration targets and evaluation operating point"""
    section = "decision"

    early_frr = Float(0.03)
    late_frr = Float(0.01)
    late_scope = Enum("all", "deferred")
    fa_count_target = Int(50)
    hours_per_fa_target = Float(100.0)
    calibration_split = Enum("test", "train")

    def validate(self):
        self._require(0 <= self.early_frr < 1 and 0 <= self.late_frr < 1,
                      "FRR targets must be in [0, 1)")
        self._require(self.fa_count_target >= 0,
                      "fa_count_target must be >= 0")
        self._require(self.hours_per_fa_target > 0,
                      "hours_per_fa_target must be > 0")


SECTIONS = (FrontendConfig, GenConfig, ModelConfig, TrainConfig,
            ScorerConfig, StubConfig, DecisionConfig)


class RunConfig(Atom):
    r"""All the configuration of a progvt run"""

    seed = Int(0)
    threads = Int(0)
    corpus_dir = Str()
    checkpoint = Str()
    out_dir = Str()

    frontend = Typed(FrontendConfig, factory=FrontendConfig)
    synthgen = Typed(GenConfig, factory=GenConfig)
    model = Typed(ModelConfig, factory=ModelConfig)
    train = Typed(TrainConfig, factory=TrainConfig)
    scorer = Typed(ScorerConfig, factory=ScorerConfig)
    stub = Typed(StubConfig, factory=StubConfig)
    decision = Typed(DecisionConfig, factory=DecisionConfig)

    _TOP = ("seed", "threads", "corpus_dir", "checkpoint", "out_dir")

    def sections(self):
        r"""The configuration sections, in a fixed order"""
        return [getattr(self, cls.section) for cls in SECTIONS]

    def update(self, mapping, origin="config"):
        r"""Update from a nested mapping ({"seed": .., "train": {..}, ..})

        The [run] section of ini files holds the top level values.

        """
        members = type(self).members()
        for key, value in mapping.items():
            if key == "run":
                self.update(value, origin)
            elif key in self._TOP:
                setattr(self, key, _coerce(members[key], value, key))
            elif key in [cls.section for cls in SECTIONS]:
                if not isinstance(value, dict):
                    raise ConfigError("Section '%s' must be a mapping in %s"
                                      % (key, origin))
                getattr(self, key).update(value, origin)
            else:
                raise ConfigError("Unknown section or key '%s' in %s"
                                  % (key, origin))
        return self

    def to_dict(self):
        r"""Nested plain dict, round-trips through JSON"""
        d = {key: getattr(self, key) for key in self._TOP}
        for section in self.sections():
            d[section.section] = section.to_dict()
        return d

    @classmethod
    def from_dict(cls, mapping):
        return cls().update(mapping, origin="dict")

    def validate(self):
        r"""Validate every section and cross-section invariants"""
        for section in self.sections():
            section.validate()
        if self.model.input_dim != self.frontend.feature_dim:
            raise ConfigError("[model] input_dim (%d) must equal n_mels x "
                              "stack_size (%d)" % (self.model.input_dim,
                                                   self.frontend.feature_dim))
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        return self

    def save(self, path):
        r"""Write the configuration as JSON"""
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def get_config():
    r"""Get the ConfigObj object from the packaged progvt.ini file

    Returns
    -------
    configobj.ConfigObj or None

    """
    inifile = path_to_file(__file__, "progvt.ini")

    if not exists(inifile):
        logger.warning("No progvt.ini, using default values")
        return None
    else:
        config = configobj.ConfigObj(inifile)
    return config


def read_config_file(path):
    r"""Read a user configuration file (JSON, or ini through configobj)

    Parameters
    ----------
    path : str

    Returns
    -------
    dict

    Raises
    ------
    ConfigError
        If the file does not exist or cannot be parsed

    """
    if not exists(path):
        raise ConfigError("Config file not found: %s" % path)
    ext = get_file_extension(path)
    try:
        if ext in (".ini", ".cfg"):
            return configobj.ConfigObj(path, file_error=True).dict()
        with open(path) as f:
            data = json.load(f)
    except (ValueError, configobj.ConfigObjError) as e:
        raise ConfigError("Cannot parse config file %s: %s" % (path, e))
    if not isinstance(data, dict):
        raise ConfigError("Config file %s must contain a JSON object" % path)
    return data


def load_run_config(path=None, overrides=None):
    r"""Build the effective RunConfig

    Parameters
    ----------
    path : str or None
        User configuration file
    overrides : dict or None
        Nested mapping of command line overrides (highest precedence)

    Returns
    -------
    RunConfig

    """
    run = RunConfig()
    defaults = get_config()
    if defaults is not None:
        run.update(defaults.dict(), origin="progvt.ini")
    if path is not None:
        logger.info("Reading configuration from %s", path)
        run.update(read_config_file(path), origin=path)
    if overrides:
        run.update(overrides, origin="command line")
    return run.validate()
