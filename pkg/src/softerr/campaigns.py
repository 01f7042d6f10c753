"""Fault-simulation campaigns: RRMSE/accuracy measurement, BER sweeps
(standard and model-accelerated), propagation, aggregation, bound,
bit-width and class-count studies, and fragile-layer selection.

A *trial* is one faulty inference on one image. Trial ``t`` always gets
the same image and the same fault streams, whatever the chunking or
worker count, and all reductions run over arrays in trial order, so every
number is reproducible bit for bit.

RRMSE over many trials is pooled in quadrature,
``sqrt(mean_t(RRMSE_t^2))``: squared errors of independent faults add, so
this is the estimator under which the aggregation and sqrt(BER) laws hold.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from .faults import FaultInjector, FaultSpec
from .model_io import DatasetHandle, cache_golden_outputs, network_checksum
from .network import NetworkGraph, run_batch, scale_act_bounds, with_bits
from .stat_models import (
    AccuracyModelEmpirical,
    aggregate_rrmse,
    ber_rrmse_scaling,
    fit_empirical,
    msb_to_standard_rrmse,
    sigma_delta,
)

CHUNK = 200
SAMPLING = ("single_image", "multi_image")


class CampaignError(ValueError):
    pass


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SOFTERR_THREADS", "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# trial engine


@dataclass
class TrialResults:
    """Raw per-trial outcomes, in trial order."""

    sq_rrmse: np.ndarray  # squared final-output RRMSE per trial
    correct: np.ndarray  # bool
    flips: np.ndarray  # realized flip count per trial
    images: np.ndarray  # dataset index per trial
    layer_sq: np.ndarray | None = None  # (trials, layers) squared per-layer RRMSE
    faulty_inferences: int = 0

    @property
    def n(self) -> int:
        return len(self.sq_rrmse)

    @property
    def rrmse(self) -> float:
        return float(math.sqrt(np.mean(self.sq_rrmse))) if self.n else 0.0

    @property
    def rrmse_stderr(self) -> float:
        r = self.rrmse
        if self.n < 2 or r == 0:
            return 0.0
        se_sq = float(np.std(self.sq_rrmse, ddof=1) / math.sqrt(self.n))
        return se_sq / (2.0 * r)

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.correct)) if self.n else float("nan")

    @property
    def accuracy_stderr(self) -> float:
        if self.n < 2:
            return 0.0
        return float(np.std(self.correct.astype(np.float64), ddof=1) / math.sqrt(self.n))

    @property
    def flips_total(self) -> int:
        return int(self.flips.sum())

    def layer_rrmse(self) -> np.ndarray:
        return np.sqrt(np.mean(self.layer_sq, axis=0))


_CTX: dict = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _run_chunk(args):
    trials, image_idx = args
    ctx = _CTX
    net: NetworkGraph = ctx["net"]
    x = ctx["images"][image_idx]
    labels = ctx["labels"][image_idx]
    classes = ctx["classes"]
    injector = FaultInjector(net, ctx["specs"])
    keep = "all" if ctx["per_layer"] else "last"
    if injector.active:
        outs, flips = injector.run(x, trials, keep=keep)
    else:
        outs = run_batch(net, x, 0, True, keep=keep)
        flips = np.zeros(len(trials), dtype=np.int64)
    golden_logits = ctx["golden_logits"][image_idx]
    f = outs[-1]
    if classes is not None:
        f, g = f[:, classes], golden_logits[:, classes]
        correct = np.asarray(classes)[f.argmax(axis=1)] == labels
    else:
        g = golden_logits
        correct = f.argmax(axis=1) == labels
    sq = np.mean((f - g) ** 2, axis=1) / g.var(axis=1)
    layer_sq = None
    if ctx["per_layer"]:
        gold = run_batch(net, x, 0, True, keep="all")
        layer_sq = np.empty((len(trials), len(outs)))
        for l, (fo, go) in enumerate(zip(outs, gold)):
            fo, go = fo.reshape(len(fo), -1), go.reshape(len(go), -1)
            var = go.var(axis=1)
            err = np.mean((fo - go) ** 2, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                layer_sq[:, l] = np.where(var > 0, err / np.where(var > 0, var, 1.0), np.where(err > 0, np.inf, 0.0))
    return sq, correct, flips, layer_sq


def select_images(dataset: DatasetHandle, trials: int, sampling: str, seed: int,
                  single_index: int | None = None, golden_logits=None, pool=None) -> np.ndarray:
    """Dataset index used by each trial.

    ``multi_image`` walks seeded permutations of ``pool`` (default: every
    image) without replacement; ``single_image`` repeats one image, by
    default the first one the fault-free network classifies correctly.
    """
    if sampling not in SAMPLING:
        raise CampaignError(f"sampling must be one of {SAMPLING}")
    pool = np.arange(len(dataset)) if pool is None else np.asarray(pool)
    if len(pool) == 0:
        raise CampaignError("dataset is empty")
    if sampling == "single_image":
        if single_index is None:
            ok = pool[golden_logits[pool].argmax(axis=1) == dataset.labels[pool]]
            single_index = int(ok[0] if len(ok) else pool[0])
        return np.full(trials, single_index, dtype=np.int64)
    out, k = [], 0
    while sum(len(o) for o in out) < trials:
        out.append(pool[np.random.default_rng([int(seed), k, 0x696D67]).permutation(len(pool))])
        k += 1
    return np.concatenate(out)[:trials].astype(np.int64) if out else np.zeros(0, np.int64)


def run_trials(net: NetworkGraph, dataset: DatasetHandle, specs, trials: int, *,
               sampling: str = "multi_image", seed: int = 0, classes=None, per_layer: bool = False,
               single_index: int | None = None, workers: int | None = None,
               trial_offset: int = 0) -> TrialResults:
    """Run ``trials`` faulty inferences and collect per-trial outcomes."""
    if trials < 1:
        raise CampaignError("trials must be >= 1")
    if isinstance(specs, FaultSpec):
        specs = [specs]
    golden = cache_golden_outputs(net, dataset)
    pool = None
    if classes is not None:
        classes = tuple(int(c) for c in classes)
        pool = np.flatnonzero(np.isin(dataset.labels, classes))
    image_idx = select_images(dataset, trials, sampling, seed, single_index, golden.logits, pool)
    trial_ids = np.arange(trial_offset, trial_offset + trials)
    ctx = dict(net=net, images=dataset.images, labels=dataset.labels, specs=list(specs),
               golden_logits=golden.logits, classes=classes, per_layer=per_layer)
    jobs = [(trial_ids[i:i + CHUNK], image_idx[i:i + CHUNK]) for i in range(0, trials, CHUNK)]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    else:
        _init_worker(ctx)
        try:
            parts = [_run_chunk(j) for j in jobs]
        finally:
            _CTX.clear()
    injector_active = FaultInjector(net, specs).active
    return TrialResults(
        sq_rrmse=np.concatenate([p[0] for p in parts]),
        correct=np.concatenate([p[1] for p in parts]),
        flips=np.concatenate([p[2] for p in parts]),
        images=image_idx,
        layer_sq=np.concatenate([p[3] for p in parts]) if per_layer else None,
        faulty_inferences=trials if injector_active else 0,
    )


# --------------------------------------------------------------------------
# campaign specs and results


@dataclass(frozen=True)
class CampaignSpec:
    fault: FaultSpec = field(default_factory=FaultSpec)
    bers: tuple = (1e-4,)
    trials: int = 1000
    sampling: str = "multi_image"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bers", tuple(float(b) for b in self.bers))
        if self.trials < 1:
            raise CampaignError("trials must be >= 1")
        if not self.bers:
            raise CampaignError("BER list must not be empty")
        if any(b < 0 or b > 1 for b in self.bers):
            raise CampaignError("BERs must lie in [0, 1]")
        if self.sampling not in SAMPLING:
            raise CampaignError(f"sampling must be one of {SAMPLING}")

    def fault_at(self, ber: float, **kw) -> FaultSpec:
        return self.fault.replace(rate=ber, seed=self.seed, **kw)


def _provenance(net, dataset, **extra) -> dict:
    prov = {"tool_version": __version__, "model_checksum": network_checksum(net),
            "dataset_checksum": dataset.checksum}
    prov.update(extra)
    return prov


@dataclass
class SweepRow:
    ber: float
    mode: str
    trials: int
    images: int
    flips_total: int
    rrmse_mean: float
    rrmse_stderr: float
    accuracy: float
    accuracy_stderr: float
    seed: int


@dataclass
class SweepResult:
    rows: list
    provenance: dict
    faulty_inferences: int = 0
    model: AccuracyModelEmpirical | None = None

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.rows])

    @property
    def rrmses(self) -> np.ndarray:
        return np.array([r.rrmse_mean for r in self.rows])


@dataclass
class ConvergenceTrace:
    counts: np.ndarray  # images processed
    values: np.ndarray  # (seeds, len(counts))
    seeds: tuple


def _running(values: np.ndarray, kind: str) -> np.ndarray:
    n = np.arange(1, len(values) + 1)
    c = np.cumsum(values)
    return np.sqrt(c / n) if kind == "rrmse" else c / n


def measure_rrmse(net, dataset, spec: CampaignSpec, ber: float | None = None, workers=None):
    """Pooled final-logit RRMSE at one BER plus its running estimate."""
    ber = spec.bers[0] if ber is None else ber
    res = run_trials(net, dataset, spec.fault_at(ber), spec.trials, sampling=spec.sampling,
                     seed=spec.seed, workers=workers)
    trace = ConvergenceTrace(np.arange(1, res.n + 1), _running(res.sq_rrmse, "rrmse")[None], (spec.seed,))
    return res.rrmse, trace


def measure_accuracy(net, dataset, spec: CampaignSpec, ber: float | None = None, workers=None) -> float:
    ber = spec.bers[0] if ber is None else ber
    res = run_trials(net, dataset, spec.fault_at(ber), spec.trials, sampling=spec.sampling,
                     seed=spec.seed, workers=workers)
    return res.accuracy


def _row(ber, mode, res: TrialResults, seed) -> SweepRow:
    return SweepRow(ber=ber, mode=mode, trials=res.n, images=int(len(np.unique(res.images))),
                    flips_total=res.flips_total, rrmse_mean=res.rrmse, rrmse_stderr=res.rrmse_stderr,
                    accuracy=res.accuracy, accuracy_stderr=res.accuracy_stderr, seed=seed)


def ber_sweep_standard(net, dataset, spec: CampaignSpec, workers=None) -> SweepResult:
    rows, count = [], 0
    for ber in spec.bers:
        res = run_trials(net, dataset, spec.fault_at(ber), spec.trials, sampling=spec.sampling,
                         seed=spec.seed, workers=workers)
        rows.append(_row(ber, spec.fault.mode, res, spec.seed))
        count += res.faulty_inferences
    prov = _provenance(net, dataset, command="sweep", sweep_mode="standard", seed=spec.seed,
                       trials=spec.trials, sampling=spec.sampling, fault=asdict(spec.fault),
                       bers=list(spec.bers), faulty_inferences=count)
    return SweepResult(rows, prov, count)


def _word_bits(net: NetworkGraph, fault: FaultSpec) -> int:
    layers = fault.resolve_layers(net)
    cfgs = [net.layers[l].weight_quant if fault.target == "weights" else net.layers[l].act_quant for l in layers]
    bits = {c.bits for c in cfgs}
    if len(bits) != 1:
        raise CampaignError("accelerated campaigns need one word width across injected layers")
    return bits.pop()


def msb_equivalent_rate(ber: float, bits: int) -> float:
    """Per-word MSB rate whose RRMSE matches random-bit faults at ``ber``.

    Random-bit faults give ``bits*ber`` flips per word of mean square
    ``sigma_delta^2``; MSB faults give ``q`` flips of ``bound^2``.
    """
    return min(1.0, ber * bits * sigma_delta(bits, 1.0) ** 2)


def ber_sweep_accelerated(net, dataset, spec: CampaignSpec, anchor_count: int = 4,
                          anchor_trials: int | None = None, mode: str = "msb_only",
                          anchors: Sequence[float] | None = None, workers=None) -> SweepResult:
    """Predict the accuracy-vs-BER curve from a few anchor simulations.

    At each anchor BER ``p`` the network runs with ``mode`` faults (MSB by
    default, at the per-word rate with the same expected RRMSE as
    random-bit faults at ``p``). The anchors give (RRMSE, accuracy) pairs
    for the empirical accuracy model. Grid RRMSEs come from the nearest
    anchor (in log-BER), converted to random-bit terms and rescaled with
    the sqrt(BER) law.

    MSB flips of non-negative activations always push values negative,
    which ReLUs largely absorb, so activation-target anchors understate
    the damage of random-bit faults. Weight targets are symmetric and
    track the standard sweep much more closely.
    """
    if anchor_count < 2:
        raise CampaignError("anchor_count must be >= 2")
    positive = [b for b in spec.bers if b > 0]
    if not positive:
        raise CampaignError("accelerated sweep needs positive BERs")
    if anchors is None:
        anchors = np.geomspace(min(positive), max(positive), anchor_count)
    anchors = [float(a) for a in anchors]
    anchor_trials = anchor_trials or spec.trials
    bits = _word_bits(net, spec.fault)
    golden = cache_golden_outputs(net, dataset)

    if spec.sampling == "single_image":
        acc_clean = 1.0
    else:
        acc_clean = float(np.mean(golden.logits.argmax(axis=1) == dataset.labels))

    points, equiv, count, flips, anchor_rows = [], [], 0, 0, []
    for p in anchors:
        rate = msb_equivalent_rate(p, bits) if mode == "msb_only" else p
        fault = spec.fault.replace(mode=mode, rate=rate, seed=spec.seed)
        res = run_trials(net, dataset, fault, anchor_trials, sampling=spec.sampling, seed=spec.seed,
                         workers=workers)
        count += res.faulty_inferences
        flips += res.flips_total
        points.append((res.rrmse, res.accuracy))
        if mode == "msb_only":
            # same flip count under random-bit faults happens at rate/bits
            equiv.append((rate / bits, msb_to_standard_rrmse(res.rrmse, bits)))
        else:
            equiv.append((p, res.rrmse))
        anchor_rows.append(_row(p, mode, res, spec.seed))
    model = fit_empirical(points, acc_clean, net.class_count)

    log_anchor = np.log([a for a in anchors])
    rows = []
    for ber in spec.bers:
        if ber > 0:
            # rescale from the anchor closest in log-BER
            near = int(np.argmin(np.abs(log_anchor - math.log(ber))))
            p_eq, r_eq = equiv[near]
            r = ber_rrmse_scaling(r_eq, p_eq, ber) if r_eq > 0 else 0.0
            acc = float(model(r))
        else:
            r, acc = 0.0, acc_clean
        rows.append(SweepRow(ber=ber, mode="accelerated", trials=0, images=0, flips_total=0,
                             rrmse_mean=r, rrmse_stderr=float("nan"), accuracy=acc,
                             accuracy_stderr=float("nan"), seed=spec.seed))
    prov = _provenance(net, dataset, command="sweep", sweep_mode="accelerated", seed=spec.seed,
                       anchor_trials=anchor_trials, anchor_mode=mode, anchors=anchors,
                       sampling=spec.sampling, fault=asdict(spec.fault), bers=list(spec.bers),
                       faulty_inferences=count, anchor_flips=flips, model_m=model.m, model_s=model.s,
                       model_residual=model.residual, anchor_equivalents=[list(e) for e in equiv],
                       anchor_points=[list(p) for p in points])
    out = SweepResult(rows, prov, count, model)
    out.anchor_rows = anchor_rows
    return out


# --------------------------------------------------------------------------
# resilience studies


def layer_propagation_experiment(net, dataset, ber: float, inject_layer: int, trials: int = 500,
                                 mode: str = "random_bit", seed: int = 0, workers=None) -> np.ndarray:
    """Pooled RRMSE of every layer output with activation faults at ``inject_layer`` only."""
    fault = FaultSpec("activations", mode, ber, (inject_layer,), seed)
    res = run_trials(net, dataset, fault, trials, seed=seed, per_layer=True, workers=workers)
    return res.layer_rrmse()


@dataclass
class AggregationRow:
    rates: dict
    measured: float
    predicted: float

    @property
    def relative_error(self) -> float:
        return abs(self.measured - self.predicted) / self.measured if self.measured > 0 else 0.0


def aggregation_validation(net, dataset, bers=(1e-4, 2e-4), n_combos: int = 32, trials: int = 400,
                           target: str = "activations", mode: str = "random_bit", seed: int = 0,
                           layers: Sequence[int] | None = None, common_random_numbers: bool = True,
                           workers=None) -> list[AggregationRow]:
    """Compare multi-layer injections with the quadrature sum of the
    single-layer RRMSEs at the same per-layer BERs.

    By default combo runs reuse the single-layer fault streams and images
    (common random numbers), so the comparison isolates interaction
    effects from Monte-Carlo noise. Cross terms between layers are still
    measured, not assumed away.
    """
    probe = FaultSpec(target, mode, 0.0, "all" if layers is None else layers, seed)
    layers = probe.resolve_layers(net)
    single = {}
    for l in layers:
        for b in bers:
            res = run_trials(net, dataset, FaultSpec(target, mode, b, (l,), seed), trials, seed=seed,
                             workers=workers)
            single[(l, b)] = res.rrmse
    rng = np.random.default_rng([seed, 0x636F6D62])
    choices = (0.0,) + tuple(bers)
    rows, seen = [], set()
    while len(rows) < n_combos:
        pick = tuple(float(choices[i]) for i in rng.integers(0, len(choices), len(layers)))
        if sum(p > 0 for p in pick) < 2 or pick in seen:
            if len(seen) >= len(choices) ** len(layers):
                break
            continue
        seen.add(pick)
        rates = {l: p for l, p in zip(layers, pick) if p > 0}
        cseed = seed if common_random_numbers else seed + 1 + len(rows)
        specs = [FaultSpec(target, mode, p, (l,), cseed) for l, p in rates.items()]
        res = run_trials(net, dataset, specs, trials, seed=cseed, workers=workers)
        pred = aggregate_rrmse(single[(l, p)] for l, p in rates.items())
        rows.append(AggregationRow(rates, res.rrmse, pred))
    return rows


def bound_sweep(net, dataset, ber: float, factors=(1, 2, 4, 8), trials: int = 1000, seed: int = 0,
                mode: str = "random_bit", workers=None):
    """RRMSE and clean accuracy when every activation bound is multiplied by each factor.

    Returns a list of ``(factor, rrmse, rrmse_stderr, clean_accuracy)``.
    """
    out = []
    for f in factors:
        scaled = scale_act_bounds(net, f)
        res = run_trials(scaled, dataset, FaultSpec("activations", mode, ber, "all", seed), trials,
                         seed=seed, workers=workers)
        golden = cache_golden_outputs(scaled, dataset)
        clean = float(np.mean(golden.logits.argmax(axis=1) == dataset.labels))
        out.append((float(f), res.rrmse, res.rrmse_stderr, clean))
    return out


def linear_fit_r2(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0


def bitwidth_comparison(net, dataset, ber: float, trials: int = 2000, seed: int = 0,
                        target: str = "activations", workers=None):
    """RRMSE at int8 and int16 with identical bounds and BER."""
    out = []
    for bits in (8, 16):
        n = with_bits(net, bits)
        res = run_trials(n, dataset, FaultSpec(target, "random_bit", ber, "all", seed), trials,
                         seed=seed, workers=workers)
        out.append(res)
    return out[0].rrmse, out[1].rrmse, out


def class_subset_experiment(net, dataset, subset_sizes=(2, 5, 10), bers=(1e-4,), trials: int = 1000,
                            seed: int = 0, target: str = "activations", mode: str = "random_bit",
                            workers=None) -> dict:
    """Accuracy per BER when classification is restricted to labels
    ``0..nc-1``. Returns ``{nc: [accuracy per BER]}``."""
    out = {}
    for nc in subset_sizes:
        if not 2 <= nc <= net.class_count:
            raise CampaignError(f"subset size {nc} outside [2, {net.class_count}]")
        classes = tuple(range(nc))
        accs = []
        for ber in bers:
            res = run_trials(net, dataset, FaultSpec(target, mode, ber, "all", seed), trials, seed=seed,
                             classes=classes, workers=workers)
            accs.append(res.accuracy)
        out[nc] = accs
    return out


def convergence_study(net, dataset, fault: FaultSpec, n_images: int = 100, seeds=range(8), workers=None):
    """Running RRMSE and accuracy over the first ``n_images`` for several seeds."""
    seeds = tuple(int(s) for s in seeds)
    r_vals, a_vals = [], []
    for s in seeds:
        res = run_trials(net, dataset, fault.replace(seed=s), n_images, seed=s, workers=workers)
        r_vals.append(_running(res.sq_rrmse, "rrmse"))
        a_vals.append(_running(res.correct.astype(np.float64), "accuracy"))
    counts = np.arange(1, n_images + 1)
    return ConvergenceTrace(counts, np.array(r_vals), seeds), ConvergenceTrace(counts, np.array(a_vals), seeds)


def relative_std(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    m = v.mean()
    return float(v.std(ddof=1) / abs(m)) if m != 0 else float("inf")


# --------------------------------------------------------------------------
# fragile layers


@dataclass
class FragileLayerReport:
    method: str
    k: int
    layers: list  # candidate layer indices
    layer_scores: dict  # per-layer RRMSE (accelerated) or empty
    ranking: list  # [(protected subset, score)], best first
    faulty_inferences: int
    higher_is_better: bool
    provenance: dict = field(default_factory=dict)

    @property
    def chosen(self) -> tuple:
        return self.ranking[0][0]

    def score_of(self, subset) -> float:
        key = tuple(sorted(subset))
        for s, v in self.ranking:
            if s == key:
                return v
        raise KeyError(subset)


def _candidates(net, target):
    return FaultSpec(target, "random_bit", 0.0, "all").resolve_layers(net)


def fragile_layers_bruteforce(net, dataset, ber: float, k: int, trials: int = 500, seed: int = 0,
                              target: str = "weights", workers=None) -> FragileLayerReport:
    """Protect every k-subset in turn, inject everything else, rank by accuracy."""
    layers = _candidates(net, target)
    if not 0 <= k <= len(layers):
        raise CampaignError(f"k must lie in [0, {len(layers)}]")
    ranking, count = [], 0
    for protected in itertools.combinations(layers, k):
        exposed = [l for l in layers if l not in protected]
        specs = [FaultSpec(target, "random_bit", ber, exposed, seed)] if exposed else []
        res = run_trials(net, dataset, specs, trials, seed=seed, workers=workers)
        count += res.faulty_inferences
        ranking.append((tuple(protected), res.accuracy))
    ranking.sort(key=lambda t: (-t[1], t[0]))
    prov = _provenance(net, dataset, command="fragile", method="bruteforce", ber=ber, k=k, trials=trials,
                       seed=seed, target=target, faulty_inferences=count)
    return FragileLayerReport("bruteforce", k, layers, {}, ranking, count, True, prov)


def per_layer_rrmse(net, dataset, ber: float, trials: int, seed: int = 0, target: str = "weights",
                    mode: str = "msb_only", workers=None):
    """Standard-equivalent output RRMSE caused by faults in each layer alone."""
    layers = _candidates(net, target)
    scores, count = {}, 0
    for l in layers:
        cfg = net.layers[l].weight_quant if target == "weights" else net.layers[l].act_quant
        if mode == "msb_only":
            rate = msb_equivalent_rate(ber, cfg.bits)
            res = run_trials(net, dataset, FaultSpec(target, mode, rate, (l,), seed), trials, seed=seed,
                             workers=workers)
            r = ber_rrmse_scaling(msb_to_standard_rrmse(res.rrmse, cfg.bits), rate / cfg.bits, ber)
        else:
            res = run_trials(net, dataset, FaultSpec(target, mode, ber, (l,), seed), trials, seed=seed,
                             workers=workers)
            r = res.rrmse
        scores[l] = r
        count += res.faulty_inferences
    return scores, count


def fragile_layers_accelerated(net, dataset, ber: float, k: int, trials: int = 100, seed: int = 0,
                               target: str = "weights", workers=None) -> FragileLayerReport:
    """One MSB campaign per layer, then score every k-subset by the
    aggregated RRMSE of the layers left unprotected (lower is better)."""
    layers = _candidates(net, target)
    if not 0 <= k <= len(layers):
        raise CampaignError(f"k must lie in [0, {len(layers)}]")
    scores, count = per_layer_rrmse(net, dataset, ber, trials, seed, target, "msb_only", workers)
    ranking = []
    for protected in itertools.combinations(layers, k):
        exposed = [scores[l] for l in layers if l not in protected]
        ranking.append((tuple(protected), aggregate_rrmse(exposed)))
    ranking.sort(key=lambda t: (t[1], t[0]))
    prov = _provenance(net, dataset, command="fragile", method="accelerated", ber=ber, k=k, trials=trials,
                       seed=seed, target=target, faulty_inferences=count)
    return FragileLayerReport("accelerated", k, layers, scores, ranking, count, False, prov)
