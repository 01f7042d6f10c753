"""Symmetric fixed-point quantization, two's-complement bit flips and
disturbance metrics.

Words are stored in ``int64`` arrays regardless of the logical width; the
logical width lives in :class:`QuantConfig`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORTED_BITS = (8, 16)

# Guards floor() against x/step landing one ulp below an exact integer,
# which would make quantize(dequantize(q)) != q for non power-of-two bounds.
_FLOOR_SLACK = 1e-9


class QuantError(ValueError):
    pass


class DegenerateReferenceError(QuantError):
    """Reference tensor has zero variance, so RRMSE is undefined."""


@dataclass(frozen=True)
class QuantConfig:
    bits: int
    bound: float

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise QuantError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if not (np.isfinite(self.bound) and self.bound > 0):
            raise QuantError(f"bound must be positive and finite, got {self.bound}")

    @property
    def scale(self) -> float:
        """Words per unit of real value, 2**(bits-1)/bound."""
        return float(2 ** (self.bits - 1)) / self.bound

    @property
    def step(self) -> float:
        return self.bound / float(2 ** (self.bits - 1))

    @property
    def qmin(self) -> int:
        return -(2 ** (self.bits - 1))

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1

    def with_bits(self, bits: int) -> "QuantConfig":
        return QuantConfig(bits, self.bound)

    def with_bound(self, bound: float) -> "QuantConfig":
        return QuantConfig(self.bits, bound)


@dataclass(frozen=True)
class QuantTensor:
    words: np.ndarray
    config: QuantConfig

    def __post_init__(self):
        w = self.words
        if w.dtype != np.int64:
            raise QuantError(f"words must be int64, got {w.dtype}")
        if w.size and (w.min() < self.config.qmin or w.max() > self.config.qmax):
            raise QuantError("word outside the representable range")
        w.setflags(write=False)

    @property
    def shape(self):
        return self.words.shape

    @property
    def size(self) -> int:
        return self.words.size


def _check_finite(x: np.ndarray):
    bad = ~np.isfinite(x)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise QuantError(f"non-finite value {x[idx]!r} at index {idx}")


def quantize_words(x, cfg: QuantConfig) -> np.ndarray:
    """floor(2**(bits-1) * x / bound), saturated. Returns raw int64 words."""
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    w = np.floor(x / cfg.step + _FLOOR_SLACK)
    np.clip(w, cfg.qmin, cfg.qmax, out=w)
    return w.astype(np.int64)


def quantize(x, cfg: QuantConfig) -> QuantTensor:
    return QuantTensor(quantize_words(x, cfg), cfg)


def dequantize_words(words, cfg: QuantConfig) -> np.ndarray:
    return np.asarray(words, dtype=np.float64) * cfg.step


def dequantize(q: QuantTensor) -> np.ndarray:
    return dequantize_words(q.words, q.config)


def fake_quantize(x, cfg: QuantConfig | None) -> np.ndarray:
    """dequantize(quantize(x)); identity when cfg is None."""
    if cfg is None:
        return np.asarray(x, dtype=np.float64)
    return dequantize_words(quantize_words(x, cfg), cfg)


def flip_words(words: np.ndarray, bit_index, bits: int) -> np.ndarray:
    """XOR-toggle bit ``bit_index`` (0 = LSB) of two's-complement words.

    Works elementwise; ``bit_index`` broadcasts against ``words``.
    """
    words = np.asarray(words, dtype=np.int64)
    mask = (1 << bits) - 1
    u = (words & mask) ^ (np.int64(1) << np.asarray(bit_index, dtype=np.int64))
    return np.where(u >= (1 << (bits - 1)), u - (1 << bits), u)


def flip_bit(q: QuantTensor, index, bit: int) -> QuantTensor:
    """Return a copy of ``q`` with one bit of one word toggled.

    ``index`` is a flat word position or a full multi-index; ``bit`` counts
    from the LSB, so ``bit == bits - 1`` is the sign bit.
    """
    bits = q.config.bits
    if not 0 <= bit < bits:
        raise QuantError(f"bit {bit} out of range for {bits}-bit words")
    flat = q.words.reshape(-1).copy()
    if np.ndim(index) == 0:
        pos = int(index)
        if not 0 <= pos < flat.size:
            raise QuantError(f"word index {pos} out of range (size {flat.size})")
    else:
        try:
            pos = int(np.ravel_multi_index(tuple(index), q.shape))
        except ValueError as e:
            raise QuantError(f"word index {index} out of range for shape {q.shape}") from e
    flat[pos] = flip_words(flat[pos], bit, bits)
    return QuantTensor(flat.reshape(q.shape), q.config)


def tensor_stats(x) -> tuple[float, float]:
    """Mean and population variance."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise QuantError("tensor_stats of an empty tensor")
    mean = float(x.mean())
    return mean, float(np.mean((x - mean) ** 2))


def rmse(delta) -> float:
    """Root of the mean squared entry (uncentered)."""
    d = np.asarray(delta, dtype=np.float64).reshape(-1)
    if d.size == 0:
        raise QuantError("rmse of an empty tensor")
    return float(np.sqrt(np.mean(d * d)))


def rrmse(delta, reference) -> float:
    _, var = tensor_stats(reference)
    if var <= 0:
        raise DegenerateReferenceError("reference tensor has zero variance")
    return rmse(delta) / float(np.sqrt(var))
