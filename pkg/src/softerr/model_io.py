"""Model container, IDX datasets and golden-output caching.

Model container layout (one file)::

    softerr-model
    format_version = 1
    class_count = 10
    input_shape = 1 28 28
    layer.0 = conv2d in=1 out=6 kernel=5 stride=1 padding=0
    layer.0.weight_quant = 8 0.512
    layer.0.act_quant = 8 3.1
    blob.0.weight = <offset> <count> 6 1 5 5
    blob.0.bias = <offset> <count> 6
    blob_length = <bytes>
    checksum = <sha256 of the blob>
    end-manifest
    <raw little-endian float32 blob>

Offsets and counts are in float32 elements.
"""
from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .network import (
    AvgPool,
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool,
    NetworkGraph,
    ReLU,
    predict,
    run_batch,
)
from .quant import QuantConfig

FORMAT_VERSION = 1
MAGIC = "softerr-model"
END = "end-manifest"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class ModelFormatError(ValueError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class DatasetError(ValueError):
    pass


# --------------------------------------------------------------------------
# model container


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _layer_line(layer) -> str:
    return layer.describe()


def _parse_layer(text: str):
    kind, *rest = text.split()
    kv = {}
    for item in rest:
        k, _, v = item.partition("=")
        kv[k] = int(v)
    try:
        if kind == "conv2d":
            return Conv2D(kv["in"], kv["out"], kv["kernel"], kv.get("stride", 1), kv.get("padding", 0))
        if kind == "fc":
            return FullyConnected(kv["in"], kv["out"])
        if kind == "relu":
            return ReLU()
        if kind == "maxpool":
            return MaxPool(kv["window"])
        if kind == "avgpool":
            return AvgPool(kv["window"])
        if kind == "flatten":
            return Flatten()
    except KeyError as e:
        raise ModelFormatError(f"layer {text!r} is missing {e}") from None
    raise ModelFormatError(f"unknown layer kind {kind!r}")


def _parse_quant(text: str) -> QuantConfig:
    bits, bound = text.split()
    return QuantConfig(int(bits), float(bound))


def network_to_bytes(net: NetworkGraph) -> bytes:
    lines = [MAGIC, f"format_version = {FORMAT_VERSION}", f"class_count = {net.class_count}",
             "input_shape = " + " ".join(str(d) for d in net.input_shape)]
    chunks, offset = [], 0
    for i, layer in enumerate(net.layers):
        lines.append(f"layer.{i} = {_layer_line(layer)}")
        wq = getattr(layer, "weight_quant", None)
        if wq is not None:
            lines.append(f"layer.{i}.weight_quant = {wq.bits} {_fmt_float(wq.bound)}")
        if layer.act_quant is not None:
            lines.append(f"layer.{i}.act_quant = {layer.act_quant.bits} {_fmt_float(layer.act_quant.bound)}")
        if net.params[i] is not None:
            for name, arr in zip(("weight", "bias"), net.params[i]):
                a32 = arr.astype("<f4")
                lines.append(f"blob.{i}.{name} = {offset} {a32.size} " + " ".join(str(d) for d in arr.shape))
                chunks.append(a32.tobytes())
                offset += a32.size
    blob = b"".join(chunks)
    lines.append(f"blob_length = {len(blob)}")
    lines.append(f"checksum = {hashlib.sha256(blob).hexdigest()}")
    lines.append(END)
    return ("\n".join(lines) + "\n").encode("utf-8") + blob


def network_from_bytes(data: bytes) -> NetworkGraph:
    marker = ("\n" + END + "\n").encode()
    cut = data.find(marker)
    if not data.startswith(MAGIC.encode()) or cut < 0:
        raise ModelFormatError("not a softerr model container")
    header = data[:cut].decode("utf-8").splitlines()[1:]
    blob = data[cut + len(marker):]
    kv = {}
    for line in header:
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise ModelFormatError(f"malformed manifest line {line!r}")
        kv[k.strip()] = v.strip()
    try:
        version = int(kv["format_version"])
    except (KeyError, ValueError):
        raise ModelFormatError("manifest has no format_version") from None
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    if int(kv.get("blob_length", -1)) != len(blob):
        raise ChecksumError(f"blob is {len(blob)} bytes, manifest says {kv.get('blob_length')}")
    if hashlib.sha256(blob).hexdigest() != kv.get("checksum"):
        raise ChecksumError("weight blob checksum mismatch")

    values = np.frombuffer(blob, dtype="<f4")
    n_layers = sum(1 for k in kv if k.startswith("layer.") and k.count(".") == 1)
    layers, params = [], []
    used = []
    for i in range(n_layers):
        if f"layer.{i}" not in kv:
            raise ModelFormatError(f"manifest is missing layer.{i}")
        layer = _parse_layer(kv[f"layer.{i}"])
        changes = {}
        if f"layer.{i}.act_quant" in kv:
            changes["act_quant"] = _parse_quant(kv[f"layer.{i}.act_quant"])
        if f"layer.{i}.weight_quant" in kv:
            changes["weight_quant"] = _parse_quant(kv[f"layer.{i}.weight_quant"])
        if changes:
            layer = replace(layer, **changes)
        layers.append(layer)
        if layer.parametric:
            arrs = []
            for name in ("weight", "bias"):
                spec = kv.get(f"blob.{i}.{name}")
                if spec is None:
                    raise ModelFormatError(f"manifest is missing blob.{i}.{name}")
                off, count, *shape = (int(t) for t in spec.split())
                if off < 0 or off + count > values.size or int(np.prod(shape)) != count:
                    raise ModelFormatError(f"blob.{i}.{name} is out of bounds or inconsistent")
                used.append((off, off + count))
                arrs.append(values[off:off + count].astype(np.float64).reshape(shape))
            params.append(tuple(arrs))
        else:
            params.append(None)
    used.sort()
    for (a0, a1), (b0, b1) in zip(used, used[1:]):
        if b0 < a1:
            raise ModelFormatError("weight blobs overlap")
    shape = tuple(int(t) for t in kv["input_shape"].split())
    return NetworkGraph(tuple(layers), shape, tuple(params), int(kv["class_count"]))


def save_network(net: NetworkGraph, path) -> None:
    Path(path).write_bytes(network_to_bytes(net))


def load_network(path) -> NetworkGraph:
    return network_from_bytes(Path(path).read_bytes())


def network_checksum(net: NetworkGraph) -> str:
    return hashlib.sha256(network_to_bytes(net)).hexdigest()


def round_to_float32(net: NetworkGraph) -> NetworkGraph:
    """Parameters rounded to float32, i.e. exactly what save/load preserves."""
    params = tuple(None if p is None else tuple(a.astype(np.float32).astype(np.float64) for a in p)
                   for p in net.params)
    return NetworkGraph(net.layers, net.input_shape, params, net.class_count)


# --------------------------------------------------------------------------
# IDX datasets


@dataclass(frozen=True, eq=False)
class DatasetHandle:
    images: np.ndarray  # (N, 1, H, W) in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_count: int

    def __post_init__(self):
        if len(self.images) == 0:
            raise DatasetError("dataset is empty")
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise DatasetError(f"labels outside [0, {self.class_count})")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    @property
    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()

    def subset(self, index) -> "DatasetHandle":
        return DatasetHandle(self.images[index].copy(), self.labels[index].copy(), self.class_count)


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an IDX file of unsigned bytes (gzip accepted)."""
    raw = _read_maybe_gzip(path)
    if len(raw) < 4:
        raise DatasetError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise DatasetError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise DatasetError(f"{path}: only unsigned-byte IDX payloads are supported (magic 0x{magic:08x})")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head != count:
        raise DatasetError(f"{path}: payload has {len(raw) - head} bytes, header implies {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def write_idx(path, array, compress: bool | None = None) -> None:
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise DatasetError("write_idx only writes unsigned bytes")
    header = struct.pack(">I", 0x0800 | a.ndim) + struct.pack(f">{a.ndim}I", *a.shape)
    data = header + a.tobytes()
    if compress is None:
        compress = str(path).endswith(".gz")
    if compress:
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def load_idx_dataset(images_path, labels_path, class_count: int = 10) -> DatasetHandle:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise DatasetError(f"{len(images)} images but {len(labels)} labels")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return DatasetHandle(x, labels.astype(np.int64), class_count)


# --------------------------------------------------------------------------
# golden outputs


@dataclass
class GoldenCache:
    logits: np.ndarray  # (N, nc), quantized fault-free logits
    layer_var: np.ndarray  # (L,) mean per-image population variance of each layer output
    model_checksum: str
    dataset_checksum: str

    @property
    def logit_var(self) -> np.ndarray:
        """Per-image population variance of the golden logits."""
        return self.logits.var(axis=1)


_memory_cache: dict = {}


def compute_golden(net: NetworkGraph, dataset: DatasetHandle, batch_size: int = 500):
    logits = []
    var_sum = np.zeros(len(net.layers))
    for i in range(0, len(dataset), batch_size):
        outs = run_batch(net, dataset.images[i:i + batch_size], 0, True, keep="all")
        logits.append(outs[-1])
        for l, o in enumerate(outs):
            var_sum[l] += o.reshape(len(o), -1).var(axis=1).sum()
    return np.concatenate(logits), var_sum / len(dataset)


def cache_golden_outputs(net: NetworkGraph, dataset: DatasetHandle, cache_dir=None) -> GoldenCache:
    """Golden logits and per-layer variance table keyed by
    (model checksum, dataset checksum); stored in memory and, when
    ``cache_dir`` is given, as an ``.npz`` there."""
    key = (network_checksum(net), dataset.checksum)
    hit = _memory_cache.get(key)
    if hit is not None:
        return hit
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"golden-{key[0][:16]}-{key[1][:16]}.npz"
        if path.exists():
            with np.load(path) as z:
                if str(z["model"]) == key[0] and str(z["dataset"]) == key[1]:
                    cache = GoldenCache(z["logits"], z["layer_var"], *key)
                    _memory_cache[key] = cache
                    return cache
    logits, layer_var = compute_golden(net, dataset)
    cache = GoldenCache(logits, layer_var, *key)
    _memory_cache[key] = cache
    if path is not None:
        os.makedirs(path.parent, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, logits=logits, layer_var=layer_var, model=key[0], dataset=key[1])
        os.replace(tmp, path)
    return cache


def clear_memory_cache():
    _memory_cache.clear()


def clean_accuracy(net: NetworkGraph, dataset: DatasetHandle, quantized: bool = True) -> float:
    return float(np.mean(predict(net, dataset.images, quantized).argmax(axis=1) == dataset.labels))
