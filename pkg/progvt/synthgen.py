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

r"""Synthetic labelled corpus for desk-scale trigger detection experiments

Utterances are rendered phone by phone: a glottal pulse train (voiced
phones) or white noise (unvoiced phones) is shaped in the frequency domain
by the phone's formant prototype, then white noise or synthetic music is
mixed in at the utterance SNR. Every random draw is seeded from
(master seed, utterance id), so serial and parallel generation agree and a
corpus regenerated from the same seed is byte-identical.

Positives are <trigger> <payload words>; payload words come from a
vocabulary built on one phone subset, while the speech following
confusable negatives comes from a disjoint vocabulary built on another
subset, so post-trigger audio carries a real signal about the label.

"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from os.path import exists, join

import numpy as np
from atom.api import Atom, Bool, Dict, Enum, Float, Int, List, Str, Tuple, \
    Typed, Value

from progvt.audio import AudioBuffer, read_wav, write_wav
from progvt.exceptions import DataError, SynthesisError
from progvt.messages import CORPUS_PROGRESS, send
from progvt.utils import derive_seed, ensure_dir

logger = logging.getLogger(__name__)

WORD_BOUNDARY = "<wb>"
SENTENCE_BOUNDARY = "<sb>"
BOUNDARIES = (WORD_BOUNDARY, SENTENCE_BOUNDARY)

VOWELS = ("aa", "ae", "eh", "er", "ih", "iy", "ow", "uw")
CONSONANTS = ("b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "z")

TRIGGER = ("k", "aa", "m", "p", "uw", "t", "er")
PAYLOAD_PHONES = ("aa", "ae", "ow", "uw", "b", "d", "g", "l", "m", "r")
BACKGROUND_PHONES = ("eh", "ih", "iy", "er", "k", "n", "p", "s", "t", "z")

CONDITIONS = ("quiet", "noise", "music_medium", "music_loud")
_CONDITION_SNR = {"quiet": (25., 35.),
                  "noise": (10., 20.),
                  "music_medium": (10., 20.),
                  "music_loud": (0., 8.)}

# (formant Hz, bandwidth Hz, gain) triples
_PROTOTYPES = {
    "aa": ((730, 90, 1.), (1090, 110, .5), (2440, 170, .25)),
    "ae": ((660, 80, 1.), (1720, 100, .5), (2410, 150, .25)),
    "eh": ((530, 70, 1.), (1840, 100, .5), (2480, 150, .25)),
    "er": ((490, 70, 1.), (1350, 100, .6), (1690, 120, .4)),
    "ih": ((390, 60, 1.), (1990, 100, .5), (2550, 150, .3)),
    "iy": ((270, 60, 1.), (2290, 100, .5), (3010, 200, .3)),
    "ow": ((570, 80, 1.), (840, 90, .6), (2410, 150, .2)),
    "uw": ((300, 60, 1.), (870, 90, .5), (2240, 150, .2)),
    "b": ((200, 100, 1.), (1100, 200, .3), (2150, 250, .1)),
    "d": ((200, 100, 1.), (1600, 200, .3), (2600, 250, .15)),
    "g": ((200, 100, 1.), (1990, 200, .3), (2850, 250, .15)),
    "k": ((1800, 400, 1.), (2500, 500, .6), (3500, 600, .3)),
    "l": ((360, 80, 1.), (1300, 150, .4), (2700, 200, .2)),
    "m": ((250, 60, 1.), (1200, 200, .2), (2200, 250, .1)),
    "n": ((250, 60, 1.), (1600, 200, .2), (2600, 250, .1)),
    "p": ((800, 400, 1.), (1500, 500, .5), (2500, 600, .2)),
    "r": ((420, 80, 1.), (1300, 120, .5), (1600, 150, .4)),
    "s": ((4500, 800, .8), (6000, 1000, 1.), (7200, 800, .6)),
    "t": ((3500, 600, 1.), (5000, 800, .6), (6500, 800, .4)),
    "z": ((250, 80, .6), (4500, 800, .6), (6000, 1000, .5)),
}

_SOURCES = dict([(v, "voiced") for v in VOWELS]
                + [(c, "voiced") for c in ("b", "d", "g", "l", "m", "n", "r")]
                + [(c, "noise") for c in ("k", "p", "s", "t")]
                + [("z", "mixed")])

_LEVELS = {"voiced": 1., "noise": .35, "mixed": .6}


def _duration_range(phone):
    if phone in VOWELS:
        return .08, .16
    if phone in ("b", "d", "g", "k", "p", "t"):
        return .04, .08
    if phone in ("s", "z"):
        return .07, .13
    return .05, .10


_PAUSES = {WORD_BOUNDARY: (.03, .08), SENTENCE_BOUNDARY: (.10, .20)}


class PhoneAlphabet(Atom):
    r"""Phone inventory with spectral prototypes and duration ranges

    The CTC blank is not part of the alphabet; it is appended after the
    boundary symbols in the phonetic output layer.

    """
    phones = List(Str())
    prototypes = Dict()
    durations = Dict()
    sources = Dict()

    def __init__(self, phones=None, **kwargs):
        phones = list(VOWELS + CONSONANTS) if phones is None else list(phones)
        if len(set(phones)) != len(phones):
            raise SynthesisError("duplicate phone symbols in alphabet")
        if any(p in BOUNDARIES for p in phones):
            raise SynthesisError("boundary symbols are not phones")
        kwargs.setdefault("prototypes", {p: _PROTOTYPES[p] for p in phones})
        kwargs.setdefault("durations", {p: _duration_range(p) for p in phones})
        kwargs.setdefault("sources", {p: _SOURCES[p] for p in phones})
        super(PhoneAlphabet, self).__init__(phones=phones, **kwargs)

    @property
    def symbols(self):
        r"""Phones followed by the word and sentence boundaries"""
        return list(self.phones) + list(BOUNDARIES)

    @property
    def blank_index(self):
        return len(self.symbols)

    @property
    def num_output_units(self):
        r"""Phonetic output layer size: phones + 2 boundaries + blank"""
        return len(self.symbols) + 1

    def index(self, symbol):
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise SynthesisError("unknown phone symbol '%s'" % symbol)

    def labels(self, phone_sequence):
        r"""Phonetic class indices of a phone sequence"""
        return [self.index(s) for s in phone_sequence]


class UtteranceSpec(Atom):
    r"""What to synthesize, and the ground truth measured while doing so"""
    utterance_id = Str()
    phone_sequence = List(Str())
    label = Enum("positive", "negative")
    trigger_start = Float(0.)
    trigger_end = Value()
    candidate_end = Value()
    payload_words = List(Int())
    snr_db = Float(30.)
    condition = Enum(*CONDITIONS)
    articulation = Enum("clear", "mumbled", "repeated")
    confusable = Bool(False)

    def validate(self):
        r"""Check the label invariants of a generated spec"""
        if self.label == "positive":
            if tuple(self.phone_sequence[:len(TRIGGER)]) != TRIGGER:
                raise SynthesisError("positive %s does not start with the "
                                     "trigger" % self.utterance_id)
            if self.trigger_end is None or self.trigger_end <= 0:
                raise SynthesisError("positive %s has no trigger_end"
                                     % self.utterance_id)
        elif self.trigger_end is not None:
            raise SynthesisError("negative %s has a trigger_end"
                                 % self.utterance_id)

    def to_dict(self):
        return {"id": self.utterance_id,
                "phone_sequence": list(self.phone_sequence),
                "label": self.label,
                "trigger_start": self.trigger_start,
                "trigger_end": self.trigger_end,
                "candidate_end": self.candidate_end,
                "payload_words": list(self.payload_words),
                "snr_db": self.snr_db,
                "condition": self.condition,
                "articulation": self.articulation,
                "confusable": self.confusable}

    @classmethod
    def from_dict(cls, d):
        return cls(utterance_id=d["id"],
                   phone_sequence=list(d["phone_sequence"]),
                   label=d["label"],
                   trigger_start=float(d.get("trigger_start", 0.)),
                   trigger_end=d.get("trigger_end"),
                   candidate_end=d.get("candidate_end"),
                   payload_words=list(d.get("payload_words", [])),
                   snr_db=float(d["snr_db"]),
                   condition=d.get("condition", "quiet"),
                   articulation=d.get("articulation", "clear"),
                   confusable=bool(d.get("confusable", False)))


class SynthesizedAudio(AudioBuffer):
    r"""Audio plus the synthesizer's exact phone timing log"""
    #: list of (symbol, start s, end s)
    phone_times = List(Tuple())
    trigger_end = Value()
    candidate_end = Value()


def _shape(source, prototype, sample_rate):
    n = len(source)
    spectrum = np.fft.rfft(source)
    freqs = np.fft.rfftfreq(n, 1. / sample_rate)
    response = np.zeros_like(freqs)
    for formant, bandwidth, gain in prototype:
        response += gain / (1. + ((freqs - formant) / (.5 * bandwidth)) ** 2)
    return np.fft.irfft(spectrum * response, n)


def _render_phone(phone, n, rng, f0, alphabet, sample_rate, prototype=None,
                  gain=1.):
    kind = alphabet.sources[phone]
    prototype = alphabet.prototypes[phone] if prototype is None else prototype
    source = np.zeros(n)
    if kind in ("voiced", "mixed"):
        period = sample_rate / f0
        phase = rng.uniform(0., period)
        source[np.arange(phase, n, period).astype(int)] = 1.
    if kind in ("noise", "mixed"):
        source += (.5 if kind == "mixed" else 1.) * rng.standard_normal(n)
    y = _shape(source, prototype, sample_rate)
    rms = np.sqrt(np.mean(y ** 2))
    y *= _LEVELS[kind] * gain / (rms + 1e-12)
    fade = min(n // 2, int(.005 * sample_rate))
    if fade > 0:
        ramp = .5 - .5 * np.cos(np.pi * np.arange(fade) / fade)
        y[:fade] *= ramp
        y[-fade:] *= ramp[::-1]
    return y


def _music(n, rng, sample_rate):
    out = np.zeros(n)
    pos = 0
    while pos < n:
        length = int(rng.uniform(.4, .8) * sample_rate)
        root = 110. * 2. ** (rng.integers(0, 24) / 12.)
        t = np.arange(min(length, n - pos)) / float(sample_rate)
        for ratio in (1., 2. ** (4 / 12.), 2. ** (7 / 12.)):
            for h in range(1, 5):
                out[pos:pos + len(t)] += np.sin(2 * np.pi * root * ratio * h
                                                * t) / h
        pos += length
    return out


def interference(condition, n, rng, sample_rate):
    r"""Unit-power interference of an acoustic condition"""
    if condition.startswith("music"):
        x = _music(n, rng, sample_rate)
    else:
        x = rng.standard_normal(n)
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def _mumbled_positions(spec, rng):
    r"""Trigger phone positions rendered with a wrong prototype"""
    if spec.label != "positive" or spec.articulation == "clear":
        return {}
    count = int(rng.integers(1, 3))
    positions = rng.choice(len(TRIGGER), size=count, replace=False)
    return {int(p): str(rng.choice([q for q in VOWELS + CONSONANTS
                                    if q != TRIGGER[int(p)]]))
            for p in positions}


def to_pcm16(x):
    r"""Float signal in [-1, 1) to int16"""
    return np.clip(np.round(x * 32767.), -32768, 32767).astype(np.int16)


def synthesize_utterance(spec, seed, alphabet=None, sample_rate=16000,
                         speech_rms=.1):
    r"""Render an UtteranceSpec

    Parameters
    ----------
    spec : UtteranceSpec
    seed : int
    alphabet : PhoneAlphabet or None
    sample_rate : int
    speech_rms : float
        RMS of the active speech before interference is added

    Returns
    -------
    SynthesizedAudio
        Samples plus the per-phone timing log; trigger_end is the end of
        the first len(TRIGGER) phones for positives, candidate_end the
        same instant for negatives

    Raises
    ------
    SynthesisError
        "empty sequence" or "unknown phone symbol"

    """
    alphabet = PhoneAlphabet() if alphabet is None else alphabet
    if len(spec.phone_sequence) == 0:
        raise SynthesisError("empty sequence")
    for symbol in spec.phone_sequence:
        if symbol not in alphabet.phones and symbol not in BOUNDARIES:
            raise SynthesisError("unknown phone symbol '%s'" % symbol)

    rng = np.random.default_rng(seed)
    f0 = rng.uniform(95., 220.)
    mumbled = _mumbled_positions(spec, rng)
    chunks, times = [], []
    position = 0
    phone_count = 0
    marker = None
    for symbol in spec.phone_sequence:
        if symbol in BOUNDARIES:
            lo, hi = _PAUSES[symbol]
            n = int(round(rng.uniform(lo, hi) * sample_rate))
            chunk = np.zeros(n)
        else:
            lo, hi = alphabet.durations[symbol]
            n = max(1, int(round(rng.uniform(lo, hi) * sample_rate)))
            if phone_count in mumbled:
                substitute = mumbled[phone_count]
                chunk = _render_phone(
                    symbol, n, rng, f0, alphabet, sample_rate,
                    prototype=alphabet.prototypes[substitute], gain=.5)
            else:
                chunk = _render_phone(symbol, n, rng, f0, alphabet,
                                      sample_rate)
            phone_count += 1
        chunks.append(chunk)
        times.append((symbol, position / float(sample_rate),
                      (position + n) / float(sample_rate)))
        position += n
        if phone_count == len(TRIGGER) and marker is None:
            marker = position / float(sample_rate)
    if marker is None:
        marker = position / float(sample_rate)

    speech = np.concatenate(chunks)
    active = speech[speech != 0.]
    if len(active) > 0:
        speech *= speech_rms / np.sqrt(np.mean(active ** 2))
    noise_rms = speech_rms / 10. ** (spec.snr_db / 20.)
    mixed = speech + noise_rms * interference(spec.condition, len(speech),
                                              rng, sample_rate)

    positive = spec.label == "positive"
    return SynthesizedAudio(to_pcm16(mixed), sample_rate=sample_rate,
                            phone_times=times,
                            trigger_end=marker if positive else None,
                            candidate_end=None if positive else marker)


def build_vocabulary(seed, size, phones):
    r"""size distinct words (tuples of 2 to 4 phones, CV patterns)

    Parameters
    ----------
    seed : int
    size : int
    phones : sequence of str
        The phone subset words are built from

    Returns
    -------
    list of tuple of str

    """
    vowels = [p for p in phones if p in VOWELS]
    consonants = [p for p in phones if p in CONSONANTS]
    rng = np.random.default_rng(seed)
    words, seen = [], set()
    patterns = ("CV", "VC", "CVC", "CVCV", "CVCVC")
    while len(words) < size:
        pattern = patterns[int(rng.integers(0, len(patterns)))]
        word = tuple(str(rng.choice(consonants if c == "C" else vowels))
                     for c in pattern)
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def payload_vocabulary(seed, size=100):
    return build_vocabulary(derive_seed(seed, "payload_vocabulary"), size,
                            PAYLOAD_PHONES)


def background_vocabulary(seed, size=100):
    return build_vocabulary(derive_seed(seed, "background_vocabulary"), size,
                            BACKGROUND_PHONES)


def zipf_probabilities(vocab_size, s):
    r"""p(k) proportional to k^-s, k = 1 .. vocab_size"""
    weights = np.arange(1, vocab_size + 1, dtype=np.float64) ** -s
    return weights / weights.sum()


def zipf_masses(vocab_size, s):
    r"""(top-10 mass, top-20 mass) of a Zipf law over vocab_size words"""
    p = zipf_probabilities(vocab_size, s)
    return float(p[:10].sum()), float(p[:20].sum())


def calibrate_zipf_exponent(vocab_size, top10_target=.8, tol=1e-6):
    r"""Exponent s whose top-10 mass equals top10_target (bisection)"""
    lo, hi = .01, 10.
    while hi - lo > tol:
        mid = .5 * (lo + hi)
        if zipf_masses(vocab_size, mid)[0] < top10_target:
            lo = mid
        else:
            hi = mid
    return .5 * (lo + hi)


def _check_vocab(vocab):
    if vocab is None:
        return 100
    if len(vocab) < 20:
        raise SynthesisError("vocab too small: %d words, need >= 20"
                             % len(vocab))
    return len(vocab)


def sample_payload(rng_seed, zipf_s=1.5, vocab=None, min_words=2,
                   max_words=7):
    r"""Payload word ids following the trigger

    The first payload word follows a Zipf law; with the default 100 word
    vocabulary and s = 1.5 the top-10 words carry ~83% of the mass and the
    top-20 words ~90%.

    Parameters
    ----------
    rng_seed : int
    zipf_s : float or None
        Zipf exponent, None to calibrate it on an 80% top-10 mass
    vocab : list or None
        Payload vocabulary (>= 20 words), None for 100 words
    min_words, max_words : int

    Returns
    -------
    list of int

    """
    vocab_size = _check_vocab(vocab)
    if zipf_s is None:
        zipf_s = calibrate_zipf_exponent(vocab_size)
    rng = np.random.default_rng(rng_seed)
    count = int(rng.integers(min_words, max_words + 1))
    p = zipf_probabilities(vocab_size, zipf_s)
    return [int(w) for w in rng.choice(vocab_size, size=count, p=p)]


def sample_first_words(rng_seed, count, zipf_s=1.5, vocab=None):
    r"""count first-payload-word ids drawn at once"""
    vocab_size = _check_vocab(vocab)
    if zipf_s is None:
        zipf_s = calibrate_zipf_exponent(vocab_size)
    rng = np.random.default_rng(rng_seed)
    return rng.choice(vocab_size, size=count,
                      p=zipf_probabilities(vocab_size, zipf_s))


def edit_distance(a, b):
    r"""Levenshtein distance between two symbol sequences"""
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        current = [i]
        for j, y in enumerate(b, 1):
            current.append(min(previous[j] + 1, current[j - 1] + 1,
                               previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


def confusable_trigger(rng):
    r"""The trigger with 1 or 2 substituted phones"""
    phones = list(TRIGGER)
    count = int(rng.integers(1, 3))
    for p in rng.choice(len(TRIGGER), size=count, replace=False):
        phones[int(p)] = str(rng.choice([q for q in VOWELS + CONSONANTS
                                         if q != TRIGGER[int(p)]]))
    return phones


def _join_words(words):
    out = []
    for i, word in enumerate(words):
        if i > 0:
            out.append(WORD_BOUNDARY)
        out.extend(word)
    return out


def _condition(rng, weights):
    w = np.asarray(weights, dtype=np.float64)
    condition = CONDITIONS[int(rng.choice(len(CONDITIONS), p=w / w.sum()))]
    lo, hi = _CONDITION_SNR[condition]
    return condition, float(rng.uniform(lo, hi))


def make_positive_spec(utterance_id, cfg, payload_vocab):
    r"""Draw a positive UtteranceSpec (trigger, then payload)"""
    rng = np.random.default_rng(derive_seed(cfg.seed, utterance_id, "spec"))
    u = rng.uniform()
    if u < cfg.repeated_fraction:
        articulation = "repeated"
    elif u < cfg.repeated_fraction + cfg.mumbled_fraction:
        articulation = "mumbled"
    else:
        articulation = "clear"
    words = sample_payload(derive_seed(cfg.seed, utterance_id, "payload"),
                           cfg.zipf_s, payload_vocab, cfg.min_payload_words,
                           cfg.max_payload_words)
    phones = list(TRIGGER)
    if articulation == "repeated":
        phones += [WORD_BOUNDARY] + list(TRIGGER)
    phones += [WORD_BOUNDARY] + _join_words([payload_vocab[w] for w in words])
    phones.append(SENTENCE_BOUNDARY)
    condition, snr = _condition(rng, cfg.condition_weights)
    return UtteranceSpec(utterance_id=utterance_id, phone_sequence=phones,
                         label="positive", payload_words=words, snr_db=snr,
                         condition=condition, articulation=articulation)


def make_negative_spec(utterance_id, cfg, background_vocab, confusable=None):
    r"""Draw a negative UtteranceSpec (confusable or background speech)"""
    rng = np.random.default_rng(derive_seed(cfg.seed, utterance_id, "spec"))
    if confusable is None:
        confusable = bool(rng.uniform() < cfg.confusable_fraction)
    count = int(rng.integers(cfg.min_payload_words, cfg.max_payload_words + 1))
    words = [background_vocab[int(w)]
             for w in rng.integers(0, len(background_vocab), size=count)]
    phones = confusable_trigger(rng) + [WORD_BOUNDARY] if confusable else []
    phones += _join_words(words) + [SENTENCE_BOUNDARY]
    condition, snr = _condition(rng, cfg.condition_weights)
    return UtteranceSpec(utterance_id=utterance_id, phone_sequence=phones,
                         label="negative", snr_db=snr, condition=condition,
                         confusable=confusable)


class ManifestEntry(Atom):
    r"""One utterance of the corpus"""
    path = Str()
    spec = Typed(UtteranceSpec)
    split = Enum("train", "test")
    duration = Float()

    @property
    def utterance_id(self):
        return self.spec.utterance_id

    @property
    def is_positive(self):
        return self.spec.label == "positive"

    def to_dict(self):
        d = self.spec.to_dict()
        d.update({"path": self.path, "split": self.split,
                  "duration": self.duration})
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(path=d["path"], spec=UtteranceSpec.from_dict(d),
                   split=d["split"], duration=float(d["duration"]))


class TimelineChunk(Atom):
    r"""One WAV file of the continuous negative timeline"""
    path = Str()
    duration = Float()
    #: list of dicts {kind, start, end}
    segments = List()

    def to_dict(self):
        return {"path": self.path, "duration": self.duration,
                "segments": list(self.segments)}


class CorpusManifest(Atom):
    r"""Index of a generated corpus

    Paths are relative to root.

    """
    root = Str()
    entries = List(Typed(ManifestEntry))
    timeline = List(Typed(TimelineChunk))

    MANIFEST = "manifest.jsonl"
    TIMELINE = "timeline.json"

    @property
    def negative_timeline_hours(self):
        return sum(c.duration for c in self.timeline) / 3600.

    def path_of(self, relative):
        return join(self.root, relative)

    def select(self, split=None, label=None):
        r"""Entries of a split ('train'/'test') and/or label"""
        return [e for e in self.entries
                if (split is None or e.split == split)
                and (label is None or e.spec.label == label)]

    def entry(self, utterance_id):
        for e in self.entries:
            if e.utterance_id == utterance_id:
                return e
        raise DataError("Unknown utterance id '%s'" % utterance_id,
                        self.root)

    def load_audio(self, entry):
        return read_wav(self.path_of(entry.path))

    def save(self):
        r"""Write manifest.jsonl and timeline.json under root"""
        with open(join(self.root, self.MANIFEST), "w") as f:
            for e in self.entries:
                f.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
        with open(join(self.root, self.TIMELINE), "w") as f:
            json.dump([c.to_dict() for c in self.timeline], f, indent=1,
                      sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, root):
        r"""Read a corpus directory, checking every referenced file exists

        Raises
        ------
        DataError

        """
        manifest_path = join(root, cls.MANIFEST)
        if not exists(manifest_path):
            raise DataError("No corpus manifest", manifest_path)
        entries = []
        with open(manifest_path) as f:
            for number, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    entries.append(ManifestEntry.from_dict(json.loads(line)))
                except (ValueError, KeyError) as e:
                    raise DataError("Bad manifest line %d: %s" % (number, e),
                                    manifest_path)
        timeline = []
        timeline_path = join(root, cls.TIMELINE)
        if exists(timeline_path):
            with open(timeline_path) as f:
                timeline = [TimelineChunk(path=c["path"],
                                          duration=float(c["duration"]),
                                          segments=c.get("segments", []))
                            for c in json.load(f)]
        manifest = cls(root=root, entries=entries, timeline=timeline)
        for relative in [e.path for e in entries] + [c.path for c in timeline]:
            if not exists(manifest.path_of(relative)):
                raise DataError("Missing corpus file",
                                manifest.path_of(relative))
        ids = [e.utterance_id for e in entries]
        if len(set(ids)) != len(ids):
            raise DataError("Duplicate utterance ids in manifest",
                            manifest_path)
        return manifest


def split_of(index, count, test_fraction):
    r"""Evenly spread, deterministic train/test assignment"""
    if math.floor((index + 1) * test_fraction) \
            > math.floor(index * test_fraction):
        return "test"
    return "train"


def _write_utterance(job):
    spec, seed, root, sample_rate, split = job
    audio = synthesize_utterance(spec, seed, sample_rate=sample_rate)
    spec.trigger_end = audio.trigger_end
    spec.candidate_end = audio.candidate_end
    spec.validate()
    relative = join("wav", "%s.wav" % spec.utterance_id)
    write_wav(join(root, relative), audio)
    return ManifestEntry(path=relative, spec=spec, split=split,
                         duration=audio.duration)


def _timeline_segment(kind, seed, cfg, payload_vocab, background_vocab,
                      sample_rate):
    rng = np.random.default_rng(seed)
    condition, snr = _condition(rng, cfg.condition_weights)
    if kind == "music":
        n = int(rng.uniform(1., 3.) * sample_rate)
        return .1 * interference("music_medium", n, rng, sample_rate)
    if kind == "payload_speech":
        count = int(rng.integers(cfg.min_payload_words,
                                 cfg.max_payload_words + 1))
        phones = _join_words([payload_vocab[int(w)] for w in
                              rng.integers(0, len(payload_vocab), size=count)])
        spec = UtteranceSpec(phone_sequence=phones + [SENTENCE_BOUNDARY],
                             label="negative", snr_db=snr, condition=condition)
    else:
        spec = make_negative_spec("timeline_%d" % seed, cfg,
                                  background_vocab,
                                  confusable=(kind == "confusable"))
        spec.snr_db, spec.condition = snr, condition
    audio = synthesize_utterance(spec, derive_seed(seed, "audio"),
                                 sample_rate=sample_rate)
    return audio.as_float()


_TIMELINE_KINDS = ("background", "confusable", "payload_speech", "music")
_TIMELINE_WEIGHTS = (.55, .25, .12, .08)


def generate_timeline_chunk(index, duration, cfg, payload_vocab,
                            background_vocab, sample_rate=16000):
    r"""Continuous trigger-free audio: speech, confusables and music

    Returns
    -------
    (np.ndarray, list of dict)
        Float samples and the list of rendered segments

    """
    rng = np.random.default_rng(derive_seed(cfg.seed, "timeline", index))
    n_total = int(round(duration * sample_rate))
    out = .001 * rng.standard_normal(n_total)
    segments = []
    position = 0
    j = 0
    while True:
        position += int(rng.uniform(.3, 2.) * sample_rate)
        kind = _TIMELINE_KINDS[int(rng.choice(len(_TIMELINE_KINDS),
                                              p=_TIMELINE_WEIGHTS))]
        x = _timeline_segment(kind,
                              derive_seed(cfg.seed, "timeline", index, j),
                              cfg, payload_vocab, background_vocab,
                              sample_rate)
        j += 1
        if position + len(x) > n_total:
            break
        out[position:position + len(x)] += x
        segments.append({"kind": kind, "start": position / float(sample_rate),
                         "end": (position + len(x)) / float(sample_rate)})
        position += len(x)
    return out, segments


def generate_corpus(cfg, out_dir, sample_rate=16000, threads=1):
    r"""Generate WAVs, manifest and negative timeline under out_dir

    Parameters
    ----------
    cfg : progvt.config.GenConfig
    out_dir : str
    sample_rate : int
    threads : int
        Number of worker threads; results do not depend on it

    Returns
    -------
    CorpusManifest

    """
    cfg.validate()
    logger.info("Generating corpus in %s ...", out_dir)
    ensure_dir(join(out_dir, "wav"))
    ensure_dir(join(out_dir, "timeline"))
    payload_vocab = payload_vocabulary(cfg.seed, cfg.vocab_size)
    background_vocab = background_vocabulary(cfg.seed, cfg.vocab_size)

    jobs = []
    for i in range(cfg.n_positive):
        uid = "pos_%05d" % i
        jobs.append((make_positive_spec(uid, cfg, payload_vocab),
                     derive_seed(cfg.seed, uid, "audio"), out_dir,
                     sample_rate, split_of(i, cfg.n_positive,
                                           cfg.test_fraction)))
    for i in range(cfg.n_negative):
        uid = "neg_%05d" % i
        jobs.append((make_negative_spec(uid, cfg, background_vocab),
                     derive_seed(cfg.seed, uid, "audio"), out_dir,
                     sample_rate, split_of(i, cfg.n_negative,
                                           cfg.test_fraction)))

    entries = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        for entry in executor.map(_write_utterance, jobs):
            entries.append(entry)
            if len(entries) % 100 == 0 or len(entries) == len(jobs):
                send(CORPUS_PROGRESS, kind=entry.spec.label,
                     done=len(entries), total=len(jobs))

    timeline = []
    remaining = cfg.negative_timeline_hours * 3600.
    index = 0
    while remaining > 1e-9:
        duration = min(cfg.timeline_chunk_s, remaining)
        samples, segments = generate_timeline_chunk(
            index, duration, cfg, payload_vocab, background_vocab, sample_rate)
        relative = join("timeline", "timeline_%03d.wav" % index)
        audio = AudioBuffer(to_pcm16(samples), sample_rate=sample_rate)
        write_wav(join(out_dir, relative), audio)
        timeline.append(TimelineChunk(path=relative, duration=audio.duration,
                                      segments=segments))
        remaining -= duration
        index += 1
        send(CORPUS_PROGRESS, kind="timeline", done=index,
             total=int(math.ceil(cfg.negative_timeline_hours * 3600.
                                 / cfg.timeline_chunk_s)))

    manifest = CorpusManifest(root=out_dir, entries=entries, timeline=timeline)
    manifest.save()
    with open(join(out_dir, "gen_config.json"), "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("... done: %d positives, %d negatives, %.3f h of timeline",
                cfg.n_positive, cfg.n_negative,
                manifest.negative_timeline_hours)
    return manifest
