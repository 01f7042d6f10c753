"""Minimal minibatch SGD trainer for chain networks (float64, no
quantization). Only meant to produce the fixtures the campaigns run on."""
from __future__ import annotations

import logging
import math

import numpy as np

from .network import (
    AvgPool,
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool,
    NetworkGraph,
    ReLU,
    calibrate,
    init_random_network,
)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


def _conv_backward(layer: Conv2D, cache, w, grad_out):
    xp, win = cache
    k, s, p = layer.kernel, layer.stride, layer.padding
    # dW[o,c,i,j] = sum_{b,h,w} g[b,o,h,w] * win[b,c,h,w,i,j]
    gw = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    gb = grad_out.sum(axis=(0, 2, 3))
    gxp = np.zeros_like(xp)
    _, _, ho, wo = grad_out.shape
    for i in range(k):
        for j in range(k):
            # contribution of kernel tap (i, j): g[b,o,h,w] * w[o,c,i,j]
            contrib = np.tensordot(grad_out, w[:, :, i, j], axes=([1], [0]))  # b,h,w,c
            gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += contrib.transpose(0, 3, 1, 2)
    if p:
        gxp = gxp[:, :, p:-p, p:-p]
    return gxp, gw, gb


def _forward_train(net, params, x):
    caches = []
    h = x
    for layer, prm in zip(net.layers, params):
        if isinstance(layer, Conv2D):
            xp, win = layer._windows(h)
            out = np.tensordot(win, prm[0], axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2) + prm[1][None, :, None, None]
            caches.append((xp, win))
            h = np.ascontiguousarray(out)
        elif isinstance(layer, FullyConnected):
            caches.append(h)
            h = h @ prm[0].T + prm[1]
        elif isinstance(layer, ReLU):
            caches.append(h > 0)
            h = np.maximum(h, 0.0)
        elif isinstance(layer, MaxPool):
            blocks = layer._blocks(h)
            out = blocks.max(axis=(3, 5))
            caches.append((h.shape, blocks == out[:, :, :, None, :, None]))
            h = out
        elif isinstance(layer, AvgPool):
            caches.append(h.shape)
            h = layer._blocks(h).mean(axis=(3, 5))
        elif isinstance(layer, Flatten):
            caches.append(h.shape)
            h = h.reshape(len(h), -1)
        else:
            raise TypeError(f"cannot train layer {layer.kind}")
    return h, caches


def _backward(net, params, caches, g):
    grads = [None] * len(net.layers)
    for idx in range(len(net.layers) - 1, -1, -1):
        layer, cache = net.layers[idx], caches[idx]
        if isinstance(layer, Conv2D):
            g, gw, gb = _conv_backward(layer, cache, params[idx][0], g)
            grads[idx] = (gw, gb)
        elif isinstance(layer, FullyConnected):
            grads[idx] = (g.T @ cache, g.sum(axis=0))
            g = g @ params[idx][0]
        elif isinstance(layer, ReLU):
            g = g * cache
        elif isinstance(layer, MaxPool):
            shape, mask = cache
            k = layer.window
            # ties share the gradient; measure-zero for real-valued inputs
            gb = mask * g[:, :, :, None, :, None]
            full = np.zeros(shape)
            b, c, h, w = shape
            full[:, :, : h - h % k, : w - w % k] = gb.reshape(b, c, (h // k) * k, (w // k) * k)
            g = full
        elif isinstance(layer, AvgPool):
            shape = cache
            k = layer.window
            b, c, h, w = shape
            full = np.zeros(shape)
            full[:, :, : h - h % k, : w - w % k] = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
            g = full
        elif isinstance(layer, Flatten):
            g = g.reshape(cache)
    return grads


def softmax_cross_entropy(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(labels)), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(len(labels)), labels] -= 1.0
    return loss, grad / len(labels)


def train_fixture(dataset, layers, epochs: int = 10, seed: int = 0, lr: float = 0.1,
                  batch_size: int = 32, bits: int = 8, calibration_images: int = 500,
                  percentile: float = 99.9) -> NetworkGraph:
    """Train ``layers`` on ``dataset`` with plain SGD on softmax
    cross-entropy, then attach calibrated quantization.

    Parameters are rounded to float32 at the end so that the returned
    network survives a save/load round trip unchanged.
    """
    net = init_random_network(layers, dataset.image_shape, dataset.class_count, seed=seed)
    rng = np.random.default_rng([seed, 0x7261696E])
    params = [None if p is None else [p[0].copy(), p[1].copy()] for p in net.params]
    n = len(dataset)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            logits, caches = _forward_train(net, params, dataset.images[idx])
            loss, g = softmax_cross_entropy(logits, dataset.labels[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"loss became {loss} in epoch {epoch}")
            total += loss * len(idx)
            for p, gr in zip(params, _backward(net, params, caches, g)):
                if p is not None:
                    p[0] -= lr * gr[0]
                    p[1] -= lr * gr[1]
        log.info("epoch %d loss %.4f", epoch, total / n)
    f32 = np.finfo(np.float32).max
    if any(p is not None and not all(np.all(np.abs(a) < f32) for a in p) for p in params):
        raise DivergenceError("parameters overflowed float32")
    params = tuple(None if p is None else (p[0].astype(np.float32).astype(np.float64),
                                           p[1].astype(np.float32).astype(np.float64)) for p in params)
    trained = NetworkGraph(net.layers, net.input_shape, params, net.class_count)
    return calibrate(trained, dataset.images[:calibration_images], bits=bits, percentile=percentile)
