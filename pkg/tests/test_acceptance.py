"""Acceptance suite: the thirteen headline properties, each at its stated
tolerance. Every test prints one ``PASS``/``FAIL`` line (visible with
``pytest -s`` or ``pytest -v``) before asserting.

Run on its own with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``. Expect roughly 15 to 20 minutes on one
core.
"""
import math
import sys

import numpy as np
import pytest
from scipy import integrate

from softerr.campaigns import (
    CampaignSpec,
    aggregation_validation,
    ber_sweep_accelerated,
    ber_sweep_standard,
    bitwidth_comparison,
    bound_sweep,
    class_subset_experiment,
    convergence_study,
    fragile_layers_accelerated,
    fragile_layers_bruteforce,
    layer_propagation_experiment,
    linear_fit_r2,
    relative_std,
    run_trials,
)
from softerr.cli import main as cli_main
from softerr.faults import FaultSpec
from softerr.fixtures import gaussian_dataset, linear_fixture, load_fixture, load_mnist5k
from softerr.network import Conv2D, ReLU, init_random_network, run_batch, with_bits
from softerr.quant import QuantConfig, dequantize_words, flip_words, quantize_words
from softerr.stat_models import (
    binary_accuracy,
    multiclass_accuracy,
    predict_rmse_activation_fault,
    predict_rmse_weight_fault,
    sigma_delta,
    variance_product,
)

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


def test_01_variance_product(report):
    rng = np.random.default_rng(101)
    n = 10**6
    errs = []
    for vx, vy in ((1.0, 1.0), (0.25, 4.0), (2.0, 0.01)):
        x = rng.normal(0, math.sqrt(vx), n)
        y = rng.normal(0, math.sqrt(vy), n)
        errs.append(abs(np.var(x * y) / variance_product(vx, vy) - 1))
    # non-Gaussian factors: uniform and Laplace
    x = rng.uniform(-1, 1, n)
    y = rng.laplace(0, 1, n)
    errs.append(abs(np.var(x * y) / variance_product(1 / 3, 2.0) - 1))
    ok = max(errs) <= 0.02
    assert report(1, ok, f"10^6 pairs, max relative error {max(errs):.4f} (tol 0.02)")


def _variance_ratios(relu: bool):
    layers = []
    for _ in range(4):
        layers.append(Conv2D(32, 32, 3))  # fan-in 288
        if relu:
            layers.append(ReLU())
    net = init_random_network(layers, (32, 16, 16), seed=1)
    x = np.random.default_rng(2).normal(size=(16, 32, 16, 16))
    outs = run_batch(net, x, 0, False, keep="all")
    ratios, h = [], x
    for i, (layer, o) in enumerate(zip(net.layers, outs)):
        if isinstance(layer, Conv2D):
            w = net.params[i][0]
            ratios.append(o.var() / (layer.fan_in() * h.var() * w.var()))
        h = o
    return np.array(ratios)


def test_02_layer_variance_lemmas(report):
    lin = _variance_ratios(False)
    rel = _variance_ratios(True)
    ok_lin = bool(np.all((lin >= 0.9) & (lin <= 1.1)))
    ok_rel = bool(np.all((rel >= 0.5) & (rel <= 2.0)))
    # after a ReLU the inputs have nonzero mean; E[x^2]/var(x) = 1/(1 - 1/pi) for a rectified normal
    assert report(2, ok_lin and ok_rel,
                  f"fan-in 288 linear ratios {np.round(lin, 3).tolist()} in [0.9,1.1]; "
                  f"ReLU ratios {np.round(rel, 3).tolist()} in [0.5,2.0]")


def _downstream_ratio(prop, layer):
    down = prop[layer:]
    down = down[down > 0]
    return float(down.max() / down.min())


def test_03_propagation(report):
    lin = linear_fixture(0)
    gds = gaussian_dataset(lin.input_shape, 200, lin.class_count)
    lin_ratios = [_downstream_ratio(layer_propagation_experiment(lin, gds, 1e-5, l, trials=2000), l)
                  for l in (0, 1, 2)]
    net, ds = load_fixture("lenet5"), load_mnist5k("test")
    relu_ratios = [_downstream_ratio(layer_propagation_experiment(net, ds, 1e-5, l, trials=8000), l)
                   for l in (2, 6, 8)]
    ok = max(lin_ratios) <= 2 and max(relu_ratios) <= 3
    assert report(3, ok, f"BER 1e-5 max/min downstream RRMSE: linear {np.round(lin_ratios, 3).tolist()} (<=2), "
                         f"LeNet {np.round(relu_ratios, 3).tolist()} (<=3)")


def test_04_sigma_delta(report):
    exact8 = sigma_delta(8, 1.0) * math.sqrt(6)
    exact16 = sigma_delta(16, 1.0) * math.sqrt(12)
    sum_ok = abs(exact8 - 1) <= 1e-4 and abs(exact16 - 1) <= 1e-4
    rng = np.random.default_rng(4)
    emp = []
    for bits, bound in ((8, 1.5), (16, 0.75)):
        cfg = QuantConfig(bits, bound)
        words = quantize_words(rng.uniform(-bound, bound, 10**5), cfg)
        flipped = flip_words(words, rng.integers(0, bits, 10**5), bits)
        d = dequantize_words(flipped, cfg) - dequantize_words(words, cfg)
        emp.append(math.sqrt(np.mean(d ** 2)) / sigma_delta(bits, bound))
    emp_ok = all(abs(e - 1) <= 0.02 for e in emp)
    assert report(4, sum_ok and emp_ok,
                  f"sqrt(6)*sigma8 = {exact8:.6f}, sqrt(12)*sigma16 = {exact16:.6f} (tol 1e-4); "
                  f"10^5 flips RMS/sigma = {np.round(emp, 4).tolist()} (tol 0.02)")


def _single_fault_ratios(bits, trials=1000, K=3, ic=16, oc=16, H=16, seed=5):
    rng = np.random.default_rng(seed)
    std = 1 / math.sqrt(K * K * ic)
    layer = Conv2D(ic, oc, K, padding=K // 2)
    cfg = QuantConfig(bits, 4 * std)
    w_words = quantize_words(rng.normal(0, std, (oc, ic, K, K)), cfg)
    w = dequantize_words(w_words, cfg)
    b = np.zeros(oc)
    sq_w, sq_a = [], []
    for _ in range(trials):
        x_words = quantize_words(rng.normal(0, std, (1, ic, H, H)), cfg)
        x = dequantize_words(x_words, cfg)
        base = layer.forward(x, w, b)
        fw = w_words.ravel().copy()
        j = rng.integers(fw.size)
        fw[j] = flip_words(fw[j], rng.integers(bits), bits)
        sq_w.append(np.mean((layer.forward(x, dequantize_words(fw.reshape(w.shape), cfg), b) - base) ** 2))
        fx = x_words.ravel().copy()
        j = rng.integers(fx.size)
        fx[j] = flip_words(fx[j], rng.integers(bits), bits)
        sq_a.append(np.mean((layer.forward(dequantize_words(fx.reshape(x.shape), cfg), w, b) - base) ** 2))
    sd = sigma_delta(bits, cfg.bound)
    rw = math.sqrt(np.mean(sq_w)) / predict_rmse_weight_fault(K, ic, oc, sd)
    ra = math.sqrt(np.mean(sq_a)) / predict_rmse_activation_fault(H, ic, sd)
    return rw, ra


def test_05_single_fault_predictions(report):
    ratios = [r for bits in (8, 16) for r in _single_fault_ratios(bits)]
    ok = all(abs(r - 1) <= 0.25 for r in ratios)
    assert report(5, ok, f"measured/predicted RMSE (w8, a8, w16, a16) = {np.round(ratios, 3).tolist()} (tol 0.25)")


def test_06_aggregation(report):
    net, ds = load_fixture("lenet5"), load_mnist5k("test")
    rows = aggregation_validation(net, ds, bers=(1e-3, 3e-3), n_combos=32, trials=1000, target="activations",
                                  common_random_numbers=False)
    err = float(np.mean([r.relative_error for r in rows]))
    ok = len(rows) == 32 and err <= 0.15
    assert report(6, ok, f"{len(rows)} combos, independent streams, mean relative error {err:.4f} (tol 0.15)")


def test_07_msb_scaling(report):
    lin = linear_fixture(0)
    gds = gaussian_dataset(lin.input_shape, 200, lin.class_count)
    lenet, mnist = load_fixture("lenet5"), load_mnist5k("test")
    cases = [("linear", lin, gds, "activations", 1e-4, 2000), ("linear", lin, gds, "weights", 1e-3, 2000),
             ("lenet5", lenet, mnist, "weights", 1e-3, 2000), ("lenet5", lenet, mnist, "activations", 1e-3, 4000)]
    parts, ok = [], True
    for bits, target_ratio in ((8, math.sqrt(6)), (16, math.sqrt(12))):
        for name, net, ds, target, p, trials in cases:
            n = with_bits(net, bits)
            rnd = run_trials(n, ds, FaultSpec(target, "random_bit", p), trials)
            msb = run_trials(n, ds, FaultSpec(target, "msb_only", p * bits), trials)
            ratio = msb.rrmse / rnd.rrmse
            good = abs(ratio / target_ratio - 1) <= 0.10
            ok &= good
            parts.append(f"{name}/{target}/int{bits} {ratio:.3f}")
    assert report(7, ok, "msb/random at equal flip counts (sqrt6=2.449, sqrt12=3.464, tol 10%): " + ", ".join(parts))


def test_08_bound_and_bitwidth(report):
    net, ds = load_fixture("lenet5"), load_mnist5k("test")
    rows = bound_sweep(net, ds, 1e-3, factors=(1, 2, 4, 8), trials=1000)
    r2 = linear_fit_r2([r[0] for r in rows], [r[1] for r in rows])
    r8, r16, _ = bitwidth_comparison(net, ds, 1e-3, trials=2000, target="weights")
    rel = abs(r8 - r16) / r8
    a8, a16, _ = bitwidth_comparison(net, ds, 1e-4, trials=2000, target="activations")
    ok = r2 >= 0.95 and rel <= 0.15
    assert report(8, ok, f"bound R^2 {r2:.4f} (>=0.95); weight faults int8 {r8:.4f} vs int16 {r16:.4f}, "
                         f"rel diff {rel:.4f} (<=0.15) [activation faults, informational: {a8:.4f} vs {a16:.4f}, "
                         f"rel diff {abs(a8 - a16) / a8:.3f}]")


def test_09_accuracy_models(report):
    oracle = 0.5 + integrate.quad(lambda t: math.exp(-t * t), 0, 1)[0] / math.sqrt(math.pi)
    b_ok = abs(binary_accuracy(1.0) - 0.92135) <= 1e-4 and abs(binary_accuracy(1.0) - oracle) <= 1e-4
    lim = [(abs(multiclass_accuracy(1e-6, nc) - 1), abs(multiclass_accuracy(1e9, nc) - 1 / nc)) for nc in (2, 5, 10)]
    l_ok = all(a <= 1e-3 and b <= 1e-3 for a, b in lim)
    net, ds = load_fixture("lenet5"), load_mnist5k("test")
    bers = tuple(np.geomspace(1e-3, 1e-1, 6))
    curves = class_subset_experiment(net, ds, (2, 5, 10), bers=bers, trials=1000, target="weights")
    c2, c5, c10 = (np.array(curves[nc]) for nc in (2, 5, 10))
    m_ok = bool(np.all(c2 >= c5) and np.all(c5 >= c10))
    ok = b_ok and l_ok and m_ok
    assert report(9, ok, f"binary(1) = {binary_accuracy(1.0):.6f} (quad {oracle:.6f}); multiclass limits within 1e-3: "
                         f"{l_ok}; nc=2/5/10 sweep {np.round(c2, 3).tolist()} >= {np.round(c5, 3).tolist()} >= "
                         f"{np.round(c10, 3).tolist()}")


def test_10_accelerated_sweep(report):
    net, ds = load_fixture("lenet5"), load_mnist5k("test")
    spec = CampaignSpec(FaultSpec("weights"), tuple(np.geomspace(1e-3, 1e-1, 16)), trials=2000)
    std = ber_sweep_standard(net, ds, spec)
    acc = ber_sweep_accelerated(net, ds, spec, anchor_count=5, anchor_trials=128)
    mae = float(np.mean(np.abs(std.accuracies - acc.accuracies)))
    speedup = std.faulty_inferences / acc.faulty_inferences
    ok = mae <= 0.05 and speedup >= 50
    assert report(10, ok, f"16-point grid MAE {mae:.4f} (<=0.05); faulty inferences {std.faulty_inferences} vs "
                          f"{acc.faulty_inferences} = {speedup:.1f}x (>=50)")


def test_11_fragile_layers(report):
    net, ds = load_fixture("lenet5"), load_mnist5k("test")
    brute = fragile_layers_bruteforce(net, ds, 1e-2, 3, trials=2000, target="weights")
    fast = fragile_layers_accelerated(net, ds, 1e-2, 3, trials=1000, target="weights")
    best = brute.ranking[0][1]
    got = brute.score_of(fast.chosen)
    match = fast.chosen == brute.chosen or best - got <= 0.01
    deep = load_fixture("deep8")
    brute8 = fragile_layers_bruteforce(deep, ds, 1e-2, 3, trials=500, target="weights")
    fast8 = fragile_layers_accelerated(deep, ds, 1e-2, 3, trials=64, target="weights")
    speedup = brute8.faulty_inferences / fast8.faulty_inferences
    ok = match and speedup >= 50
    assert report(11, ok, f"LeNet k=3 BER 1e-2: accelerated {fast.chosen} scores {got:.4f}, brute-force best "
                          f"{brute.chosen} {best:.4f} (tie tol 0.01); deep8 {brute8.faulty_inferences} vs "
                          f"{fast8.faulty_inferences} faulty inferences = {speedup:.1f}x (>=50) "
                          f"[deep8 picks: accelerated {fast8.chosen}, brute force {brute8.chosen}]")


def test_12_convergence(report):
    net, ds = load_fixture("lenet5"), load_mnist5k("test")
    r, a = convergence_study(net, ds, FaultSpec("weights", "random_bit", 1e-2), n_images=100, seeds=range(8))
    sr, sa = relative_std(r.values[:, -1]), relative_std(a.values[:, -1])
    ok = sr < sa
    assert report(12, ok, f"8 seeds at 100 images, BER 1e-2 weights: rel. std RRMSE {sr:.4f} < accuracy {sa:.4f}")


def test_13_reproducible_csv(report, tmp_path):
    outs = []
    for threads in (1, 2, 3):
        out = tmp_path / f"t{threads}"
        code = cli_main(["sweep", "--bers", "1e-3,1e-2", "--trials", "650", "--target", "weights",
                         "--seed", "13", "--threads", str(threads), "--out", str(out)])
        assert code == 0
        outs.append((out / "sweep.csv").read_bytes())
    replay = tmp_path / "replay"
    assert cli_main(["sweep", "--config", str(tmp_path / "t1" / "sweep.provenance"), "--out", str(replay)]) == 0
    outs.append((replay / "sweep.csv").read_bytes())
    ok = all(o == outs[0] for o in outs)
    assert report(13, ok, "sweep CSV byte-identical for 1, 2, 3 workers and provenance replay")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
