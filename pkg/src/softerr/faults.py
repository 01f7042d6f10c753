"""Seeded bit-flip injection into quantized weights or activations.

Every (campaign seed, trial, layer, target) tuple owns an independent
random stream, so a trial's faults never depend on batching, worker count
or on which other layers are being injected in the same run.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .network import NetworkGraph, ShapeError, run_batch
from .quant import QuantTensor

TARGETS = ("weights", "activations")
MODES = ("random_bit", "msb_only")
_TARGET_KEY = {"weights": 0, "activations": 1}


class FaultSpecError(ValueError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    """Where, how and how often to flip bits.

    ``rate`` is a per-bit probability in ``random_bit`` mode and a per-word
    probability (of flipping the MSB) in ``msb_only`` mode.
    """

    target: str = "activations"
    mode: str = "random_bit"
    rate: float = 0.0
    layers: object = "all"
    seed: int = 0

    def __post_init__(self):
        if self.target not in TARGETS:
            raise FaultSpecError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.mode not in MODES:
            raise FaultSpecError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise FaultSpecError(f"rate must lie in [0, 1], got {self.rate}")
        if self.layers != "all":
            object.__setattr__(self, "layers", tuple(sorted({int(i) for i in self.layers})))
        if not 0 <= int(self.seed) < 2 ** 64:
            raise FaultSpecError("seed must be a 64-bit unsigned integer")

    def resolve_layers(self, net: NetworkGraph) -> list[int]:
        """Validated list of layer indices this spec touches."""
        if self.target == "weights":
            eligible = [i for i in net.parametric_layers if net.layers[i].weight_quant is not None]
        else:
            eligible = net.quant_sites
        if self.layers == "all":
            return list(eligible)
        for i in self.layers:
            if not 0 <= i < len(net.layers):
                raise FaultSpecError(f"layer {i} does not exist")
            if i not in eligible:
                what = "quantized weights" if self.target == "weights" else "a quantized output"
                raise FaultSpecError(f"layer {i} ({net.layers[i].kind}) has no {what}")
        return list(self.layers)

    def replace(self, **kw) -> "FaultSpec":
        d = dict(target=self.target, mode=self.mode, rate=self.rate, layers=self.layers, seed=self.seed)
        d.update(kw)
        return FaultSpec(**d)


@dataclass
class InjectionRecord:
    """Flipped (word index, bit index) pairs per layer."""

    flips: dict = field(default_factory=dict)

    def add(self, layer: int, word_idx, bit_idx):
        if layer in self.flips:
            w0, b0 = self.flips[layer]
            word_idx, bit_idx = np.concatenate([w0, word_idx]), np.concatenate([b0, bit_idx])
        self.flips[layer] = (np.asarray(word_idx, dtype=np.int64), np.asarray(bit_idx, dtype=np.int64))

    @property
    def counts(self) -> dict:
        return {l: len(w) for l, (w, _) in self.flips.items()}

    @property
    def total(self) -> int:
        return sum(len(w) for w, _ in self.flips.values())

    def __eq__(self, other):
        if not isinstance(other, InjectionRecord) or self.flips.keys() != other.flips.keys():
            return False
        return all(np.array_equal(self.flips[k][0], other.flips[k][0])
                   and np.array_equal(self.flips[k][1], other.flips[k][1]) for k in self.flips)


def trial_rng(seed: int, trial: int, layer: int, target: str = "activations") -> np.random.Generator:
    return np.random.default_rng([int(seed), int(trial), int(layer), _TARGET_KEY[target]])


def sample_flips(n_words: int, bits: int, mode: str, rate: float, rng: np.random.Generator):
    """Draw flip positions for a tensor of ``n_words`` words.

    The flip count is binomial and positions are uniform without
    replacement, which is distributionally identical to an independent
    Bernoulli trial per bit (or per word, for ``msb_only``).
    Returns sorted ``(word_idx, bit_idx)``.
    """
    if rate <= 0.0 or n_words == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    if mode == "random_bit":
        population = n_words * bits
        k = int(rng.binomial(population, rate))
        pos = np.sort(rng.choice(population, size=k, replace=False)) if k else np.zeros(0, np.int64)
        pos = pos.astype(np.int64)
        return pos // bits, pos % bits
    k = int(rng.binomial(n_words, rate))
    words = np.sort(rng.choice(n_words, size=k, replace=False)).astype(np.int64) if k else np.zeros(0, np.int64)
    return words, np.full(len(words), bits - 1, dtype=np.int64)


def apply_flips(flat_words: np.ndarray, word_idx, bit_idx, bits: int):
    """Return (touched word indices, their new values) after XOR-ing all flips."""
    if len(word_idx) == 0:
        return word_idx, flat_words[word_idx]
    uniq, inv = np.unique(word_idx, return_inverse=True)
    masks = np.zeros(len(uniq), dtype=np.int64)
    np.bitwise_or.at(masks, inv, np.int64(1) << bit_idx)
    full = (1 << bits) - 1
    u = (flat_words[uniq] & full) ^ masks
    new = np.where(u >= (1 << (bits - 1)), u - (1 << bits), u)
    return uniq, new


def inject(q: QuantTensor, spec: FaultSpec, rng: np.random.Generator, layer: int = 0):
    """Flip bits of ``q`` per ``spec``. Returns the faulty copy and a record."""
    record = InjectionRecord()
    bits = q.config.bits
    w_idx, b_idx = sample_flips(q.size, bits, spec.mode, spec.rate, rng)
    record.add(layer, w_idx, b_idx)
    if len(w_idx) == 0:
        return q, record
    flat = q.words.reshape(-1).copy()
    uniq, new = apply_flips(flat, w_idx, b_idx, bits)
    flat[uniq] = new
    return QuantTensor(flat.reshape(q.shape), q.config), record


def expected_flip_count(net: NetworkGraph, spec: FaultSpec) -> float:
    total = 0.0
    for i in spec.resolve_layers(net):
        if spec.target == "weights":
            n, bits = net.params[i][0].size, net.layers[i].weight_quant.bits
        else:
            n, bits = int(np.prod(net.shapes[i])), net.layers[i].act_quant.bits
        total += n * (bits if spec.mode == "random_bit" else 1) * spec.rate
    return total


class FaultInjector:
    """Batched faulty inference for one network and a set of fault specs.

    Specs are applied together; two specs may not target the same
    (layer, target) pair since they would share a random stream.
    """

    def __init__(self, net: NetworkGraph, specs: FaultSpec | Sequence[FaultSpec]):
        if isinstance(specs, FaultSpec):
            specs = [specs]
        self.net = net
        self.specs = list(specs)
        self._act = {}
        self._wgt = {}
        for spec in self.specs:
            table = self._wgt if spec.target == "weights" else self._act
            for layer in spec.resolve_layers(net):
                if layer in table:
                    raise FaultSpecError(f"layer {layer} targeted twice for {spec.target}")
                if spec.rate > 0:
                    table[layer] = spec

    @property
    def active(self) -> bool:
        return bool(self._act or self._wgt)

    def run(self, x, trials: Iterable[int], keep: str = "last", records: bool = False):
        """Faulty pass over a batch. ``trials[b]`` seeds the faults of row b.

        Returns ``(outputs, flip_counts)`` or, with ``records``, also a list
        of per-row :class:`InjectionRecord`.
        """
        net = self.net
        trials = [int(t) for t in trials]
        if len(trials) != len(x):
            raise ShapeError("one trial index per batch row is required")
        counts = np.zeros(len(trials), dtype=np.int64)
        recs = [InjectionRecord() for _ in trials] if records else None

        corrections = {}
        for layer, spec in self._wgt.items():
            cfg = net.layers[layer].weight_quant
            flat = net.weight_words[layer].reshape(-1)
            rows = []
            for b, t in enumerate(trials):
                w_idx, b_idx = sample_flips(flat.size, cfg.bits, spec.mode, spec.rate,
                                            trial_rng(spec.seed, t, layer, "weights"))
                counts[b] += len(w_idx)
                if recs is not None:
                    recs[b].add(layer, w_idx, b_idx)
                if len(w_idx):
                    uniq, new = apply_flips(flat, w_idx, b_idx, cfg.bits)
                    rows.append((b, uniq, (new - flat[uniq]) * cfg.step))
            if rows:
                corrections[layer] = rows

        act = self._act

        def hook(layer, words, cfg):
            spec = act.get(layer)
            if spec is None:
                return words
            words = words.copy()
            rows = words.reshape(len(words), -1)
            n = rows.shape[1]
            for b, t in enumerate(trials):
                w_idx, b_idx = sample_flips(n, cfg.bits, spec.mode, spec.rate,
                                            trial_rng(spec.seed, t, layer, "activations"))
                if len(w_idx):
                    counts[b] += len(w_idx)
                    if recs is not None:
                        recs[b].add(layer, w_idx, b_idx)
                    uniq, new = apply_flips(rows[b], w_idx, b_idx, cfg.bits)
                    rows[b, uniq] = new
            return words

        outs = run_batch(net, np.asarray(x, dtype=np.float64), 0, True,
                         act_hook=hook if act else None, weight_corrections=corrections, keep=keep)
        if records:
            return outs, counts, recs
        return outs, counts


def faulty_forward(net: NetworkGraph, x, spec: FaultSpec | Sequence[FaultSpec], trial_index: int):
    """One faulty inference. Returns ``(ActivationTrace, InjectionRecord)``."""
    from .network import ActivationTrace, _as_batch

    xb, batched = _as_batch(net, x, 0)
    if batched and len(xb) != 1:
        raise ShapeError("faulty_forward takes a single input")
    outs, _, recs = FaultInjector(net, spec).run(xb, [trial_index], keep="all", records=True)
    return ActivationTrace([o[0] for o in outs], 0, False), recs[0]
