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

r"""Two-head bidirectional LSTM in numpy

A stack of bidirectional LSTM layers is shared by two softmax heads: the
phonetic head (phones, word and sentence boundaries, CTC blank) and the
discriminative head (column 0 negative, column 1 positive). Both heads are
affine maps of the top layer output [T x 2H].

LSTM gates are packed in the order [input, forget, cell, output]:
W is [4H x D_in], U is [4H x H] and b is [4H]. The backward direction
reads the input reversed in time.

Gradient convention: backward() takes gradients with respect to the
pre-softmax logits of each head.

"""

import json
import logging
import struct
from collections import OrderedDict

import numpy as np
from atom.api import Atom, Dict, Int, Typed, Value

from progvt.config import FrontendConfig, ModelConfig
from progvt.exceptions import CheckpointError, ShapeError
from progvt.frontend import FeatureSequence, Normalizer
from progvt.utils import derive_seed

logger = logging.getLogger(__name__)

NEGATIVE = 0
POSITIVE = 1

CHECKPOINT_MAGIC = b"PVTC"
CHECKPOINT_VERSION = 1

DIRECTIONS = ("fwd", "bwd")


def param_shapes(cfg):
    r"""Ordered parameter names and shapes of a model configuration

    Parameters
    ----------
    cfg : ModelConfig

    Returns
    -------
    OrderedDict
        name -> shape tuple

    """
    shapes = OrderedDict()
    h = cfg.hidden_per_direction
    for layer in range(cfg.num_layers):
        d_in = cfg.input_dim if layer == 0 else 2 * h
        for direction in DIRECTIONS:
            prefix = "layer%d.%s." % (layer, direction)
            shapes[prefix + "W"] = (4 * h, d_in)
            shapes[prefix + "U"] = (4 * h, h)
            shapes[prefix + "b"] = (4 * h,)
    shapes["phonetic.W"] = (cfg.phonetic_classes, 2 * h)
    shapes["phonetic.b"] = (cfg.phonetic_classes,)
    shapes["discriminative.W"] = (cfg.discriminative_classes, 2 * h)
    shapes["discriminative.b"] = (cfg.discriminative_classes,)
    return shapes


class ModelCheckpoint(Atom):
    r"""Parameters of the two-head model and what is needed to run it

    The checkpoint is not mutated by inference and may be shared between
    threads; the trainer works on its own copy.

    """
    config = Typed(ModelConfig)
    frontend = Typed(FrontendConfig)
    params = Dict()
    normalizer = Typed(Normalizer)
    step = Int(0)
    #: optimizer moments read back from a file, or None
    optimizer = Value()

    @property
    def dtype(self):
        return self.params["phonetic.W"].dtype

    def param_names(self):
        return list(param_shapes(self.config).keys())

    def copy(self):
        r"""Deep copy of the parameters"""
        return ModelCheckpoint(config=self.config, frontend=self.frontend,
                               params={k: v.copy()
                                       for k, v in self.params.items()},
                               normalizer=self.normalizer, step=self.step)

    def astype(self, dtype):
        r"""Copy with parameters cast to dtype (float64 for gradient checks)"""
        ckpt = self.copy()
        ckpt.params = {k: v.astype(dtype) for k, v in ckpt.params.items()}
        return ckpt

    def validate(self):
        r"""Check parameter shapes and finiteness

        Raises
        ------
        ShapeError

        """
        for name, shape in param_shapes(self.config).items():
            if name not in self.params:
                raise ShapeError("missing parameter tensor %s" % name)
            if self.params[name].shape != shape:
                raise ShapeError("parameter %s: expected shape %s, got %s"
                                 % (name, shape, self.params[name].shape))
            if not np.all(np.isfinite(self.params[name])):
                raise ShapeError("parameter %s is not finite" % name)
        return self


def init_params(cfg, seed, frontend=None, dtype=np.float32):
    r"""Glorot-uniform initialisation, forget-gate biases at 1.0

    Parameters
    ----------
    cfg : ModelConfig
    seed : int
    frontend : FrontendConfig or None
    dtype : numpy dtype

    Returns
    -------
    ModelCheckpoint

    """
    cfg.validate()
    rng = np.random.default_rng(derive_seed(seed, "init_params"))
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            r = np.sqrt(6. / (shape[0] + shape[1]))
            params[name] = rng.uniform(-r, r, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    h = cfg.hidden_per_direction
    for name in params:
        if name.startswith("layer") and name.endswith(".b"):
            params[name][h:2 * h] = 1.
    return ModelCheckpoint(config=cfg,
                           frontend=FrontendConfig() if frontend is None
                           else frontend,
                           params=params,
                           normalizer=Normalizer.identity(cfg.input_dim))


class FramePosteriors(Atom):
    r"""Per-window posteriors of both heads"""
    phonetic = Typed(np.ndarray)
    discriminative = Typed(np.ndarray)
    phonetic_log = Typed(np.ndarray)
    discriminative_log = Typed(np.ndarray)
    phonetic_logits = Typed(np.ndarray)
    discriminative_logits = Typed(np.ndarray)

    @property
    def positive(self):
        r"""y_t^p"""
        return self.discriminative[:, POSITIVE]

    @property
    def negative(self):
        r"""y_t^n"""
        return self.discriminative[:, NEGATIVE]

    @property
    def num_windows(self):
        return self.discriminative.shape[0]


def sigmoid(a):
    return .5 * (1. + np.tanh(.5 * a))


def log_softmax(logits):
    r"""Row-wise log-softmax"""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _lstm_forward(x, w, u, b):
    steps = x.shape[0]
    h_size = u.shape[1]
    pre = x @ w.T + b
    h = np.zeros(h_size, dtype=x.dtype)
    c = np.zeros(h_size, dtype=x.dtype)
    gates = np.empty((steps, 4 * h_size), dtype=x.dtype)
    cells = np.empty((steps, h_size), dtype=x.dtype)
    hidden = np.empty((steps, h_size), dtype=x.dtype)
    ifo = np.r_[0:2 * h_size, 3 * h_size:4 * h_size]
    for t in range(steps):
        a = pre[t] + u @ h
        gates[t, ifo] = sigmoid(a[ifo])
        gates[t, 2 * h_size:3 * h_size] = np.tanh(a[2 * h_size:3 * h_size])
        i, f, g, o = np.split(gates[t], 4)
        c = f * c + i * g
        h = o * np.tanh(c)
        cells[t] = c
        hidden[t] = h
    return hidden, (x, gates, cells, hidden)


def _lstm_backward(d_hidden, cache, w, u):
    x, gates, cells, hidden = cache
    steps, h_size = hidden.shape
    i, f, g, o = np.split(gates, 4, axis=1)
    c_prev = np.vstack([np.zeros((1, h_size), dtype=x.dtype), cells[:-1]])
    tc = np.tanh(cells)
    # per-step factors of the gate pre-activation gradients
    dc_from_dh = o * (1. - tc ** 2)
    d_i = g * i * (1. - i)
    d_f = c_prev * f * (1. - f)
    d_g = i * (1. - g ** 2)
    d_o = tc * o * (1. - o)
    d_pre = np.zeros((steps, 4 * h_size), dtype=x.dtype)
    dh_next = np.zeros(h_size, dtype=x.dtype)
    dc_next = np.zeros(h_size, dtype=x.dtype)
    for t in reversed(range(steps)):
        dh = d_hidden[t] + dh_next
        dc = dh * dc_from_dh[t] + dc_next
        da = d_pre[t]
        da[:h_size] = dc * d_i[t]
        da[h_size:2 * h_size] = dc * d_f[t]
        da[2 * h_size:3 * h_size] = dc * d_g[t]
        da[3 * h_size:] = dh * d_o[t]
        dh_next = da @ u
        dc_next = dc * f[t]
    # h_{-1} = 0, so step 0 adds nothing to dU
    d_u = d_pre[1:].T @ hidden[:-1]
    return d_pre @ w, d_pre.T @ x, d_u, d_pre.sum(axis=0)


def _windows(ckpt, x):
    windows = x.windows if isinstance(x, FeatureSequence) else np.asarray(x)
    if windows.ndim != 2 or windows.shape[1] != ckpt.config.input_dim:
        raise ShapeError("input dimension mismatch: expected [T x %d], got %s"
                         % (ckpt.config.input_dim, windows.shape))
    if windows.shape[0] < 1:
        raise ShapeError("input has no windows")
    return ckpt.normalizer.apply(windows).astype(ckpt.dtype)


def forward(ckpt, x, return_cache=False):
    r"""Run the network on a feature sequence

    Parameters
    ----------
    ckpt : ModelCheckpoint
    x : FeatureSequence or np.ndarray
        [T_down x input_dim] un-normalised windows
    return_cache : bool
        Also return the activations needed by backward()

    Returns
    -------
    FramePosteriors or (FramePosteriors, dict)

    Raises
    ------
    ShapeError
        On an input dimension mismatch

    """
    p = ckpt.params
    layer_input = _windows(ckpt, x)
    caches = []
    for layer in range(ckpt.config.num_layers):
        prefix = "layer%d." % layer
        h_fwd, c_fwd = _lstm_forward(layer_input, p[prefix + "fwd.W"],
                                     p[prefix + "fwd.U"], p[prefix + "fwd.b"])
        h_bwd, c_bwd = _lstm_forward(layer_input[::-1], p[prefix + "bwd.W"],
                                     p[prefix + "bwd.U"], p[prefix + "bwd.b"])
        caches.append((c_fwd, c_bwd))
        layer_input = np.concatenate([h_fwd, h_bwd[::-1]], axis=1)

    top = layer_input
    phonetic_logits = top @ p["phonetic.W"].T + p["phonetic.b"]
    disc_logits = top @ p["discriminative.W"].T + p["discriminative.b"]
    phonetic_log = log_softmax(phonetic_logits)
    disc_log = log_softmax(disc_logits)
    posteriors = FramePosteriors(phonetic=np.exp(phonetic_log),
                                 discriminative=np.exp(disc_log),
                                 phonetic_log=phonetic_log,
                                 discriminative_log=disc_log,
                                 phonetic_logits=phonetic_logits,
                                 discriminative_logits=disc_logits)
    if return_cache:
        return posteriors, {"layers": caches, "top": top}
    return posteriors


def backward(ckpt, cache, grad_phonetic, grad_discriminative):
    r"""Back-propagate head logit gradients to every parameter

    Parameters
    ----------
    ckpt : ModelCheckpoint
    cache : dict
        From forward(..., return_cache=True)
    grad_phonetic : np.ndarray or None
        dL/d phonetic logits [T x phonetic_classes], None for zeros
    grad_discriminative : np.ndarray or None
        dL/d discriminative logits [T x 2], None for zeros

    Returns
    -------
    dict
        name -> gradient, same shapes as ckpt.params

    Raises
    ------
    ShapeError

    """
    p = ckpt.params
    top = cache["top"]
    steps = top.shape[0]
    dtype = top.dtype

    def _grad(g, classes, name):
        if g is None:
            return np.zeros((steps, classes), dtype=dtype)
        g = np.asarray(g, dtype=dtype)
        if g.shape != (steps, classes):
            raise ShapeError("%s gradient: expected shape %s, got %s"
                             % (name, (steps, classes), g.shape))
        return g

    g_phon = _grad(grad_phonetic, ckpt.config.phonetic_classes, "phonetic")
    g_disc = _grad(grad_discriminative, ckpt.config.discriminative_classes,
                   "discriminative")

    grads = {"phonetic.W": g_phon.T @ top,
             "phonetic.b": g_phon.sum(axis=0),
             "discriminative.W": g_disc.T @ top,
             "discriminative.b": g_disc.sum(axis=0)}
    # both heads feed the shared trunk
    d_top = g_phon @ p["phonetic.W"] + g_disc @ p["discriminative.W"]

    h = ckpt.config.hidden_per_direction
    for layer in reversed(range(ckpt.config.num_layers)):
        prefix = "layer%d." % layer
        c_fwd, c_bwd = cache["layers"][layer]
        dx_fwd, grads[prefix + "fwd.W"], grads[prefix + "fwd.U"], \
            grads[prefix + "fwd.b"] = _lstm_backward(
                d_top[:, :h], c_fwd, p[prefix + "fwd.W"], p[prefix + "fwd.U"])
        dx_bwd, grads[prefix + "bwd.W"], grads[prefix + "bwd.U"], \
            grads[prefix + "bwd.b"] = _lstm_backward(
                d_top[::-1, h:], c_bwd, p[prefix + "bwd.W"],
                p[prefix + "bwd.U"])
        d_top = dx_fwd + dx_bwd[::-1]
    return grads


def _tensor_bytes(array):
    return np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")) \
        .tobytes()


def save_checkpoint(ckpt, path, optimizer_state=None):
    r"""Write a checkpoint container

    Layout: magic b"PVTC", header length (uint32, little-endian), JSON
    header, then the raw little-endian tensors at the offsets listed in
    the header (relative to the end of the header).

    Parameters
    ----------
    ckpt : ModelCheckpoint
    path : str
    optimizer_state : object or None
        Anything with t (int), m and v (dicts of arrays named like the
        parameters); stored so that training can resume exactly

    """
    tensors = [(name, ckpt.params[name]) for name in ckpt.param_names()]
    tensors.append(("normalizer.mean", np.asarray(ckpt.normalizer.mean)))
    tensors.append(("normalizer.std", np.asarray(ckpt.normalizer.std)))
    header = {"version": CHECKPOINT_VERSION,
              "model": ckpt.config.to_dict(),
              "frontend": ckpt.frontend.to_dict(),
              "step": ckpt.step,
              "optimizer": None,
              "tensors": []}
    if optimizer_state is not None:
        header["optimizer"] = {"t": int(optimizer_state.t)}
        for name in ckpt.param_names():
            tensors.append(("adam.m." + name, optimizer_state.m[name]))
            tensors.append(("adam.v." + name, optimizer_state.v[name]))
    offset = 0
    blobs = []
    for name, array in tensors:
        blob = _tensor_bytes(array)
        header["tensors"].append({"name": name,
                                  "shape": list(array.shape),
                                  "dtype": array.dtype.newbyteorder("<").str,
                                  "offset": offset,
                                  "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(encoded)))
        f.write(encoded)
        for blob in blobs:
            f.write(blob)
    logger.debug("Saved checkpoint (step %d) to %s", ckpt.step, path)


def load_checkpoint(path):
    r"""Read a checkpoint container written by save_checkpoint

    Returns
    -------
    ModelCheckpoint
        With .optimizer set to {"t", "m", "v"} when optimizer moments
        were stored, None otherwise

    Raises
    ------
    CheckpointError

    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except IOError as e:
        raise CheckpointError("Cannot read checkpoint: %s" % e, path)
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("Not a progvt checkpoint", path)
    try:
        (length,) = struct.unpack("<I", data[4:8])
        header = json.loads(data[8:8 + length].decode("utf-8"))
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError("Corrupt checkpoint header: %s" % e, path)
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError("Unsupported checkpoint version %r"
                              % header.get("version"), path)
    body = data[8 + length:]
    tensors = {}
    for entry in header["tensors"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(body):
            raise CheckpointError("Truncated tensor %s" % entry["name"], path)
        array = np.frombuffer(body[start:stop], dtype=np.dtype(entry["dtype"]))
        tensors[entry["name"]] = array.reshape(entry["shape"]).astype(
            np.dtype(entry["dtype"]).newbyteorder("="))

    cfg = ModelConfig.from_dict(header["model"])
    names = list(param_shapes(cfg).keys())
    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = {"t": header["optimizer"]["t"],
                     "m": {n: tensors["adam.m." + n] for n in names},
                     "v": {n: tensors["adam.v." + n] for n in names}}
    try:
        ckpt = ModelCheckpoint(config=cfg,
                               frontend=FrontendConfig.from_dict(
                                   header["frontend"]),
                               params={n: tensors[n] for n in names},
                               normalizer=Normalizer(
                                   mean=tensors["normalizer.mean"],
                                   std=tensors["normalizer.std"]),
                               step=int(header["step"]),
                               optimizer=optimizer)
        ckpt.validate()
    except (KeyError, ShapeError) as e:
        raise CheckpointError("Inconsistent checkpoint: %s" % e, path)
    return ckpt
