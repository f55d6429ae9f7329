"""Layer stack, parameter initialization and whole-model forward/backward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from . import layers as L

LOGIT_INIT_STD = 0.01
KINDS = ("conv", "maxpool", "relu", "flatten", "dense", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int | None = None
    kernel: int | None = None
    padding: str | None = None
    size: int | None = None
    stride: int | None = None
    units: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and (self.kernel is None or self.kernel % 2 == 0):
            raise ValueError("conv kernels must be odd-sized")

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def conv(filters, kernel=5, padding="valid"):
    return LayerSpec("conv", filters=filters, kernel=kernel, padding=padding)


def maxpool(size=2, stride=2):
    return LayerSpec("maxpool", size=size, stride=stride)


def relu():
    return LayerSpec("relu")


def flatten():
    return LayerSpec("flatten")


def dense(units):
    return LayerSpec("dense", units=units)


def softmax():
    return LayerSpec("softmax")


def cry_cnn_layers(n_classes: int = 2):
    """Three 5x5 conv blocks (20/32/20 filters, only the first 'same'), dense 256, softmax."""
    return [
        conv(20, 5, "same"), relu(), maxpool(),
        conv(32, 5, "valid"), relu(), maxpool(),
        conv(20, 5, "valid"), relu(), maxpool(),
        flatten(), dense(256), relu(), dense(n_classes), softmax(),
    ]


def shape_chain(layers, input_shape):
    """Output shape after each layer; raises ShapeMismatch on an impossible stack."""
    shape = tuple(input_shape)
    out = []
    for i, spec in enumerate(layers):
        if spec.kind == "conv":
            if len(shape) != 3:
                raise ShapeMismatch(f"layer {i}: conv needs [H,W,C], got {shape}")
            h, w, _ = shape
            p = L.conv_pad(spec.kernel, spec.padding)
            h, w = h + 2 * p - spec.kernel + 1, w + 2 * p - spec.kernel + 1
            if h < 1 or w < 1:
                raise ShapeMismatch(f"layer {i}: input {shape} too small for {spec.kernel}x{spec.kernel} kernel")
            shape = (h, w, spec.filters)
        elif spec.kind == "maxpool":
            if len(shape) != 3 or shape[0] % spec.size or shape[1] % spec.size:
                raise ShapeMismatch(f"layer {i}: cannot pool {shape} by {spec.size}")
            shape = (shape[0] // spec.size, shape[1] // spec.size, shape[2])
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dense":
            if len(shape) != 1:
                raise ShapeMismatch(f"layer {i}: dense needs a flat input, got {shape}")
            shape = (spec.units,)
        elif spec.kind == "softmax" and (len(shape) != 1 or shape[0] < 2):
            raise ShapeMismatch(f"layer {i}: softmax needs >= 2 logits, got {shape}")
        out.append(shape)
    return out


class Model:
    """An ordered layer stack with trainable conv/dense parameters.

    Parameters are He-normal (fan-in) with zero biases, except the final
    logit layer (normal, std ``LOGIT_INIT_STD``); all are drawn from
    ``rng_seed``. ``dtype`` sets storage and arithmetic precision.
    """

    def __init__(self, layers, input_shape=(64, 64, 1), rng_seed: int = 0, dtype=np.float64):
        self.layers = list(layers)
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ShapeMismatch("the last layer must be softmax")
        self.input_shape = tuple(input_shape)
        self.rng_seed = int(rng_seed)
        self.dtype = np.dtype(dtype)
        self.shapes = shape_chain(self.layers, self.input_shape)
        self.n_classes = self.shapes[-1][0]
        self.params = self._init_params()

    def _init_params(self):
        rng = np.random.default_rng(self.rng_seed)
        params = []
        shape = self.input_shape
        logit_layer = max(i for i, s in enumerate(self.layers) if s.kind in ("dense", "conv"))
        for idx, (spec, out_shape) in enumerate(zip(self.layers, self.shapes)):
            if spec.kind == "conv":
                fan_in = spec.kernel * spec.kernel * shape[2]
                w = rng.standard_normal((spec.kernel, spec.kernel, shape[2], spec.filters)) * np.sqrt(2.0 / fan_in)
                params.append({"W": w.astype(self.dtype), "b": np.zeros(spec.filters, self.dtype)})
            elif spec.kind == "dense":
                # the logit layer starts small so initial predictions sit near uniform
                std = LOGIT_INIT_STD if idx == logit_layer else np.sqrt(2.0 / shape[0])
                w = rng.standard_normal((shape[0], spec.units)) * std
                params.append({"W": w.astype(self.dtype), "b": np.zeros(spec.units, self.dtype)})
            else:
                params.append(None)
            shape = out_shape
        return params

    def param_list(self):
        """Flat list of (layer index, name, array) for every trainable tensor."""
        return [(i, k, p[k]) for i, p in enumerate(self.params) if p is not None for k in ("W", "b")]

    def n_params(self) -> int:
        return sum(a.size for _, _, a in self.param_list())

    def copy(self) -> "Model":
        m = Model.__new__(Model)
        m.__dict__.update(self.__dict__)
        m.params = [None if p is None else {k: v.copy() for k, v in p.items()} for p in self.params]
        return m

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == len(self.input_shape) + 1 and x.shape[1:] == self.input_shape:
            return x
        if x.shape == self.input_shape:
            return x[None]
        if x.shape == self.input_shape[:2] or x.shape[1:] == self.input_shape[:2]:
            return x.reshape(x.shape + (1,)) if x.ndim == 3 else x.reshape((1,) + x.shape + (1,))
        raise ShapeMismatch(f"input shape {x.shape} does not match model input {self.input_shape}")

    def forward(self, x, keep_cache: bool = False):
        """Class probabilities ``[N, n_classes]`` (and per-layer caches if requested)."""
        h = self._check_input(x)
        caches = []
        first_conv = True
        for spec, p in zip(self.layers, self.params):
            cache = None
            if spec.kind == "conv":
                h, cache = L.conv2d_forward(h, p["W"], p["b"], spec.padding)
                cache = (cache, not first_conv)
                first_conv = False
            elif spec.kind == "maxpool":
                h, cache = L.maxpool_forward(h, spec.size, spec.stride)
            elif spec.kind == "relu":
                h, cache = L.relu_forward(h)
            elif spec.kind == "flatten":
                cache = h.shape
                h = h.reshape(h.shape[0], -1)
            elif spec.kind == "dense":
                h, cache = L.dense_forward(h, p["W"], p["b"])
            elif spec.kind == "softmax":
                h = L.softmax(h)
            if keep_cache:
                caches.append(cache)
        return (h, caches) if keep_cache else h

    def loss_and_grads(self, x, labels):
        """Mean cross-entropy, parameter gradients (aligned with ``params``) and probabilities."""
        labels = np.asarray(labels, dtype=int)
        probs, caches = self.forward(x, keep_cache=True)
        loss = L.cross_entropy(probs, labels)
        g = L.softmax_xent_backward(probs, labels).astype(self.dtype)
        grads = [None] * len(self.layers)
        # the softmax layer is folded into the cross-entropy gradient above
        for i in range(len(self.layers) - 2, -1, -1):
            spec, cache = self.layers[i], caches[i]
            if spec.kind == "dense":
                g, gw, gb = L.dense_backward(g, cache, self.params[i]["W"])
                grads[i] = {"W": gw, "b": gb}
            elif spec.kind == "relu":
                g = L.relu_backward(g, cache)
            elif spec.kind == "flatten":
                g = g.reshape(cache)
            elif spec.kind == "maxpool":
                g = L.maxpool_backward(g, cache)
            elif spec.kind == "conv":
                conv_cache, need_input = cache
                g, gw, gb = L.conv2d_backward(g, conv_cache, need_input_grad=need_input)
                grads[i] = {"W": gw, "b": gb}
                if g is None:
                    break
        return loss, grads, probs


def cry_cnn(n_classes: int = 2, rng_seed: int = 0, dtype=np.float64) -> Model:
    return Model(cry_cnn_layers(n_classes), (64, 64, 1), rng_seed, dtype)
