"""Forward-only inference over linear chains of layers.

All forward passes are batched: arrays carry a leading batch axis. The
public helpers also accept a single unbatched input and strip the axis
again on the way out.

When ``quantized`` is set, weights are fake-quantized with their layer's
``weight_quant`` and every layer output that has an ``act_quant`` is
passed through quantize/dequantize. Accumulation itself is done in
float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .quant import (
    QuantConfig,
    dequantize_words,
    fake_quantize,
    quantize_words,
    rmse,
    tensor_stats,
)


class ShapeError(ValueError):
    pass


# --------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Layer:
    act_quant: QuantConfig | None = field(default=None, kw_only=True)

    parametric = False
    kind = "layer"

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def params_shape(self):
        return None

    def fan_in(self) -> int:
        raise TypeError(f"{self.kind} has no weights")

    def forward(self, x, weight=None, bias=None, corrections=None):
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


@dataclass(frozen=True)
class Conv2D(Layer):
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    weight_quant: QuantConfig | None = field(default=None, kw_only=True)

    parametric = True
    kind = "conv2d"

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel", "stride"):
            if getattr(self, name) < 1:
                raise ShapeError(f"conv2d {name} must be positive")
        if self.padding < 0:
            raise ShapeError("conv2d padding must be non-negative")

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ShapeError(f"conv2d expects ({self.in_channels}, H, W), got {shape}")
        _, h, w = shape
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d kernel {self.kernel} larger than input {shape}")
        return (self.out_channels, ho, wo)

    def params_shape(self):
        return (self.out_channels, self.in_channels, self.kernel, self.kernel), (self.out_channels,)

    def fan_in(self):
        return self.kernel * self.kernel * self.in_channels

    def _windows(self, x):
        p, s = self.padding, self.stride
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(x, (self.kernel, self.kernel), axis=(2, 3))
        return x, win[:, :, ::s, ::s]

    def forward(self, x, weight=None, bias=None, corrections=None):
        xp, win = self._windows(x)
        out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))  # B,Ho,Wo,O
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        out += bias[None, :, None, None]
        if corrections:
            _, ho, wo = out.shape[1:]
            s = self.stride
            for b, flat_idx, dvals in corrections:
                o, i, ky, kx = np.unravel_index(flat_idx, weight.shape)
                for oo, ii, yy, xx, d in zip(o, i, ky, kx, dvals):
                    out[b, oo] += d * xp[b, ii, yy:yy + s * (ho - 1) + 1:s, xx:xx + s * (wo - 1) + 1:s]
        return out

    def describe(self):
        return (f"conv2d in={self.in_channels} out={self.out_channels} kernel={self.kernel} "
                f"stride={self.stride} padding={self.padding}")


@dataclass(frozen=True)
class FullyConnected(Layer):
    in_features: int
    out_features: int
    weight_quant: QuantConfig | None = field(default=None, kw_only=True)

    parametric = True
    kind = "fc"

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ShapeError("fc dimensions must be positive")

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeError(f"fc expects ({self.in_features},), got {shape}")
        return (self.out_features,)

    def params_shape(self):
        return (self.out_features, self.in_features), (self.out_features,)

    def fan_in(self):
        return self.in_features

    def forward(self, x, weight=None, bias=None, corrections=None):
        out = x @ weight.T + bias
        if corrections:
            for b, flat_idx, dvals in corrections:
                o, i = np.unravel_index(flat_idx, weight.shape)
                np.add.at(out[b], o, dvals * x[b, i])
        return out

    def describe(self):
        return f"fc in={self.in_features} out={self.out_features}"


@dataclass(frozen=True)
class ReLU(Layer):
    kind = "relu"

    def forward(self, x, weight=None, bias=None, corrections=None):
        return np.maximum(x, 0.0)


@dataclass(frozen=True)
class _Pool(Layer):
    window: int = 2

    def __post_init__(self):
        if self.window < 1:
            raise ShapeError("pool window must be positive")

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"{self.kind} expects (C, H, W), got {shape}")
        c, h, w = shape
        if h < self.window or w < self.window:
            raise ShapeError(f"{self.kind} window {self.window} larger than input {shape}")
        return (c, h // self.window, w // self.window)

    def _blocks(self, x):
        b, c, h, w = x.shape
        k = self.window
        x = x[:, :, : h - h % k, : w - w % k]
        return x.reshape(b, c, h // k, k, w // k, k)

    def describe(self):
        return f"{self.kind} window={self.window}"


@dataclass(frozen=True)
class MaxPool(_Pool):
    kind = "maxpool"

    def forward(self, x, weight=None, bias=None, corrections=None):
        return self._blocks(x).max(axis=(3, 5))


@dataclass(frozen=True)
class AvgPool(_Pool):
    kind = "avgpool"

    def forward(self, x, weight=None, bias=None, corrections=None):
        return self._blocks(x).mean(axis=(3, 5))


@dataclass(frozen=True)
class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, weight=None, bias=None, corrections=None):
        return x.reshape(x.shape[0], -1)


# --------------------------------------------------------------------------
# network


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Immutable chain of layers plus their (real-valued) parameters.

    ``params[i]`` is ``(weight, bias)`` for parametric layers and ``None``
    otherwise.
    """

    layers: tuple
    input_shape: tuple
    params: tuple
    class_count: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if len(self.params) != len(self.layers):
            raise ShapeError("params must have one entry per layer")
        frozen = []
        for i, (layer, p) in enumerate(zip(self.layers, self.params)):
            if layer.parametric:
                if p is None:
                    raise ShapeError(f"layer {i} ({layer.kind}) is missing weights")
                wshape, bshape = layer.params_shape()
                w, b = (_frozen(p[0]), _frozen(p[1]))
                if w.shape != wshape or b.shape != bshape:
                    raise ShapeError(f"layer {i}: weight shape {w.shape}/{b.shape}, expected {wshape}/{bshape}")
                frozen.append((w, b))
            else:
                if p is not None:
                    raise ShapeError(f"layer {i} ({layer.kind}) takes no weights")
                frozen.append(None)
        object.__setattr__(self, "params", tuple(frozen))
        shapes = self.shapes  # validates the chain
        if int(np.prod(shapes[-1])) != self.class_count:
            raise ShapeError(f"final layer emits {shapes[-1]}, expected {self.class_count} classes")
        if self.class_count < 2:
            raise ShapeError("class_count must be >= 2")

    def __len__(self):
        return len(self.layers)

    @cached_property
    def shapes(self) -> list[tuple]:
        """Output shape of every layer."""
        out, shape = [], self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i}: {e}") from None
            out.append(shape)
        return out

    def input_shape_of(self, layer: int) -> tuple:
        return self.input_shape if layer == 0 else self.shapes[layer - 1]

    @property
    def parametric_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.parametric]

    @property
    def quant_sites(self) -> list[int]:
        """Layers whose outputs are quantized (and can take activation faults)."""
        return [i for i, l in enumerate(self.layers) if l.act_quant is not None]

    @cached_property
    def quantized_params(self) -> tuple:
        out = []
        for layer, p in zip(self.layers, self.params):
            if p is None:
                out.append(None)
                continue
            w = fake_quantize(p[0], layer.weight_quant)
            w.setflags(write=False)
            out.append((w, p[1]))
        return tuple(out)

    @cached_property
    def weight_words(self) -> dict:
        """Quantized weight words per parametric layer with a weight_quant."""
        return {i: quantize_words(self.params[i][0], l.weight_quant)
                for i, l in enumerate(self.layers) if l.parametric and l.weight_quant is not None}

    def replace_layer(self, index: int, layer: Layer) -> "NetworkGraph":
        layers = list(self.layers)
        layers[index] = layer
        return NetworkGraph(tuple(layers), self.input_shape, self.params, self.class_count)

    def with_layers(self, layers) -> "NetworkGraph":
        return NetworkGraph(tuple(layers), self.input_shape, self.params, self.class_count)


def default_quant_sites(layers: Sequence[Layer]) -> list[int]:
    """Outputs that get stored and consumed by a weighted layer, plus the logits."""
    sites = [i for i in range(len(layers) - 1) if layers[i + 1].parametric]
    sites.append(len(layers) - 1)
    return sites


def configure_quantization(net: NetworkGraph, bits: int, act_bounds: dict | None = None,
                           weight_bounds: dict | None = None) -> NetworkGraph:
    """Attach QuantConfigs. Missing weight bounds default to max |w|.

    ``act_bounds`` maps layer index to bound; layers not in it get no
    activation quantization.
    """
    act_bounds = act_bounds or {}
    weight_bounds = weight_bounds or {}
    layers = []
    for i, layer in enumerate(net.layers):
        changes = {"act_quant": QuantConfig(bits, float(act_bounds[i])) if i in act_bounds else None}
        if layer.parametric:
            wb = weight_bounds.get(i)
            if wb is None:
                wb = float(np.max(np.abs(net.params[i][0])))
            changes["weight_quant"] = QuantConfig(bits, wb)
        layers.append(replace(layer, **changes))
    return net.with_layers(layers)


def with_bits(net: NetworkGraph, bits: int) -> NetworkGraph:
    """Same bounds, different word width."""
    layers = []
    for layer in net.layers:
        changes = {}
        if layer.act_quant is not None:
            changes["act_quant"] = layer.act_quant.with_bits(bits)
        if getattr(layer, "weight_quant", None) is not None:
            changes["weight_quant"] = layer.weight_quant.with_bits(bits)
        layers.append(replace(layer, **changes))
    return net.with_layers(layers)


def scale_act_bounds(net: NetworkGraph, factor: float, layers: Sequence[int] | None = None) -> NetworkGraph:
    idx = set(net.quant_sites if layers is None else layers)
    out = []
    for i, layer in enumerate(net.layers):
        if i in idx and layer.act_quant is not None:
            layer = replace(layer, act_quant=layer.act_quant.with_bound(layer.act_quant.bound * factor))
        out.append(layer)
    return net.with_layers(out)


def calibrate(net: NetworkGraph, images, bits: int = 8, percentile: float = 99.9,
              sites: Sequence[int] | None = None) -> NetworkGraph:
    """Activation bounds from the given percentile of |activation| on a
    calibration batch; weight bounds from max |w|."""
    trace = forward_full(net, images, quantized=False)
    if sites is None:
        sites = default_quant_sites(net.layers)
    bounds = {}
    for i in sites:
        b = float(np.percentile(np.abs(trace.outputs[i]), percentile))
        bounds[i] = b if b > 0 else 1.0
    return configure_quantization(net, bits, act_bounds=bounds)


# --------------------------------------------------------------------------
# forward passes


@dataclass
class ActivationTrace:
    """Per-layer outputs for layers ``start .. len(net)-1``.

    ``outputs[k]`` belongs to layer ``start + k``. Arrays have a leading
    batch axis when ``batched`` is true.
    """

    outputs: list
    start: int = 0
    batched: bool = False

    def __len__(self):
        return len(self.outputs)

    def layer(self, index: int):
        return self.outputs[index - self.start]

    @property
    def final(self):
        return self.outputs[-1]


ActHook = Callable[[int, np.ndarray, QuantConfig], np.ndarray]


def run_batch(net: NetworkGraph, x, start: int = 0, quantized: bool = True, *,
              act_hook: ActHook | None = None, weight_corrections: dict | None = None,
              keep: str = "all", stop: int | None = None):
    """Core batched pass over layers ``start..stop-1``.

    ``act_hook(layer, words, cfg)`` may return mutated words for quantized
    layer outputs. ``weight_corrections[layer]`` is a list of
    ``(batch_index, flat_weight_indices, value_deltas)`` applied as exact
    sparse updates on top of the golden weights. ``keep`` is ``"all"`` or
    ``"last"``.
    """
    stop = len(net.layers) if stop is None else stop
    expected = net.input_shape_of(start)
    if tuple(x.shape[1:]) != tuple(expected):
        raise ShapeError(f"layer {start}: input shape {tuple(x.shape[1:])}, expected {tuple(expected)}")
    params = net.quantized_params if quantized else net.params
    outputs = []
    h = np.asarray(x, dtype=np.float64)
    for i in range(start, stop):
        layer = net.layers[i]
        p = params[i]
        corr = weight_corrections.get(i) if weight_corrections else None
        if p is None:
            h = layer.forward(h)
        else:
            h = layer.forward(h, p[0], p[1], corr)
        if quantized and layer.act_quant is not None:
            words = quantize_words(h, layer.act_quant)
            if act_hook is not None:
                words = act_hook(i, words, layer.act_quant)
            h = dequantize_words(words, layer.act_quant)
        if keep == "all":
            outputs.append(h)
    if keep != "all":
        outputs.append(h)
    return outputs


def _as_batch(net, x, start):
    x = np.asarray(x, dtype=np.float64)
    shape = tuple(net.input_shape_of(start))
    if x.shape == shape:
        return x[None], False
    if x.shape[1:] == shape:
        return x, True
    raise ShapeError(f"layer {start}: input shape {x.shape}, expected {shape} or (batch, *{shape})")


def forward_from(net: NetworkGraph, start: int, activation, quantized: bool = True) -> ActivationTrace:
    """Run layers ``start..end`` on the activation feeding layer ``start``."""
    if not 0 <= start < len(net.layers):
        raise ShapeError(f"start layer {start} out of range")
    xb, batched = _as_batch(net, activation, start)
    outs = run_batch(net, xb, start, quantized)
    if not batched:
        outs = [o[0] for o in outs]
    return ActivationTrace(outs, start, batched)


def forward_full(net: NetworkGraph, x, quantized: bool = True) -> ActivationTrace:
    return forward_from(net, 0, x, quantized)


def predict(net: NetworkGraph, images, quantized: bool = True, batch_size: int = 500) -> np.ndarray:
    """Final-layer outputs for a stack of inputs."""
    images = np.asarray(images, dtype=np.float64)
    outs = [run_batch(net, images[i:i + batch_size], 0, quantized, keep="last")[0]
            for i in range(0, len(images), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, net.class_count))


def delta_trace(golden: ActivationTrace, faulty: ActivationTrace) -> list[tuple[float, float]]:
    """Per-layer (RMSE, RRMSE) of faulty against golden.

    RRMSE is NaN for a layer whose golden output has zero variance.
    """
    if golden.start != faulty.start or len(golden) != len(faulty):
        raise ShapeError("traces cover different layers")
    out = []
    for g, f in zip(golden.outputs, faulty.outputs):
        if g.shape != f.shape:
            raise ShapeError(f"trace shapes differ: {g.shape} vs {f.shape}")
        e = rmse(f - g)
        _, var = tensor_stats(g)
        out.append((e, e / math.sqrt(var) if var > 0 else float("nan")))
    return out


# --------------------------------------------------------------------------
# construction


def init_random_network(layers: Sequence[Layer], input_shape, class_count: int | None = None,
                        weight_std_rule=None, seed: int = 0) -> NetworkGraph:
    """Zero-mean normal weights, zero biases.

    ``weight_std_rule`` is ``None`` (std = 1/sqrt(fan-in)), a float, or a
    callable ``layer -> std``.
    """
    layers = tuple(layers)
    rng = np.random.default_rng(seed)
    params = []
    for layer in layers:
        if not layer.parametric:
            params.append(None)
            continue
        if weight_std_rule is None:
            std = 1.0 / math.sqrt(layer.fan_in())
        elif callable(weight_std_rule):
            std = float(weight_std_rule(layer))
        else:
            std = float(weight_std_rule)
        wshape, bshape = layer.params_shape()
        params.append((rng.normal(0.0, std, size=wshape), np.zeros(bshape)))
    if class_count is None:
        # derive from the chain's last shape
        shape = tuple(input_shape)
        for i, layer in enumerate(layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i}: {e}") from None
        class_count = int(np.prod(shape))
    return NetworkGraph(layers, tuple(input_shape), tuple(params), class_count)
