import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from softerr.stat_models import (
    AccuracyModelEmpirical,
    DegenerateSamplesError,
    FitError,
    ModelError,
    QuadratureError,
    adaptive_simpson,
    aggregate_rrmse,
    ber_rrmse_scaling,
    binary_accuracy,
    empirical_accuracy,
    fit_empirical,
    msb_to_standard_rrmse,
    multiclass_accuracy,
    normality_diagnostics,
    predict_rmse_activation_fault,
    predict_rmse_weight_fault,
    sigma_delta,
    variance_product,
)


def _exact_sigma(bits, bound):
    s = sum(Fraction(1, 4 ** b) for b in range(bits))
    return bound * math.sqrt(float(s / bits))


@pytest.mark.parametrize("bits,bound,approx", [(8, 1.0, 0.408248), (16, 2.0, 0.577349)])
def test_sigma_delta_examples(bits, bound, approx):
    assert sigma_delta(bits, bound) == pytest.approx(_exact_sigma(bits, bound), rel=1e-14)
    assert sigma_delta(bits, bound) == pytest.approx(approx, abs=5e-6)


@pytest.mark.parametrize("bits,div", [(8, 6), (16, 12)])
def test_sigma_delta_near_closed_forms(bits, div):
    for bound in (0.5, 1.0, 7.0):
        assert abs(sigma_delta(bits, bound) / (bound / math.sqrt(div)) - 1) < 1e-4


def test_sigma_delta_scaling_laws():
    assert sigma_delta(8, 4.0) == pytest.approx(2 * sigma_delta(8, 2.0), rel=1e-15)
    assert sigma_delta(8, 1.0) / sigma_delta(16, 1.0) == pytest.approx(math.sqrt(2), rel=1e-3)


def test_single_fault_formulas():
    assert predict_rmse_weight_fault(3, 16, 16, 1.0) == pytest.approx(1 / 48)
    assert predict_rmse_weight_fault(3, 32, 32, 1.0) == pytest.approx(0.5 / 48)
    assert predict_rmse_activation_fault(32, 16, 1.0) == pytest.approx(1 / 128)
    # general form agrees with the default when var(x) = 1/(K^2 ic)
    assert predict_rmse_weight_fault(3, 16, 8, 0.7, input_var=1 / (9 * 16)) == pytest.approx(
        predict_rmse_weight_fault(3, 16, 8, 0.7))


def test_variance_product(rng):
    assert variance_product(1, 1) == 1
    assert variance_product(0, 3.5) == 0
    x, y = rng.normal(0, 1.5, 10**6), rng.normal(0, 0.4, 10**6)
    assert np.var(x * y) == pytest.approx(variance_product(1.5**2, 0.4**2), rel=0.02)


def test_binary_accuracy():
    assert binary_accuracy(0) == 1.0
    assert binary_accuracy(1e-9) == 1.0
    assert binary_accuracy(1e12) == pytest.approx(0.5, abs=1e-9)
    # erf(1) from its defining integral
    erf1 = 2 / math.sqrt(math.pi) * integrate.quad(lambda t: math.exp(-t * t), 0, 1, epsabs=1e-14)[0]
    assert binary_accuracy(1.0) == pytest.approx(0.5 * erf1 + 0.5, abs=1e-12)
    assert binary_accuracy(1.0) == pytest.approx(0.92135, abs=1e-4)


def test_multiclass_two_classes_closed_form():
    for r in (0.3, 1.0, 2.5):
        assert multiclass_accuracy(r, 2) == pytest.approx(0.5 * math.erfc(-1 / (math.sqrt(2) * r) / math.sqrt(2)),
                                                          abs=1e-7)
    assert multiclass_accuracy(1.0, 2) == pytest.approx(0.76025, abs=1e-5)


def test_multiclass_limits():
    for nc in (2, 5, 10, 100):
        assert multiclass_accuracy(1e9, nc) == pytest.approx(1 / nc, abs=1e-3)
        assert multiclass_accuracy(1e-3, nc) == pytest.approx(1.0, abs=1e-3)
        assert multiclass_accuracy(0, nc) == 1.0


def test_multiclass_matches_scipy_quadrature():
    from scipy.stats import norm
    for r, nc in ((0.5, 10), (2.0, 5), (0.2, 1000)):
        ref = integrate.quad(lambda x: norm.pdf(x) * norm.cdf(x + 1 / r) ** (nc - 1), -np.inf, np.inf,
                             epsabs=1e-12, limit=200)[0]
        assert multiclass_accuracy(r, nc) == pytest.approx(ref, abs=1e-6)


def test_multiclass_strictly_decreasing():
    # below r ~ 0.15 the error rate is under float64 resolution of 1.0
    rs = [0.3, 1.0, 3.0, 10.0]
    for nc in (2, 5, 10):
        vals = [multiclass_accuracy(r, nc) for r in rs]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    for r in rs:
        vals = [multiclass_accuracy(r, nc) for nc in (2, 5, 10)]
        assert vals[0] > vals[1] > vals[2]


def test_binary_and_two_class_models_differ():
    # the two margin conventions are kept as they are
    assert binary_accuracy(1.0) != pytest.approx(multiclass_accuracy(1.0, 2), abs=1e-3)
    assert binary_accuracy(2.0) == pytest.approx(multiclass_accuracy(1.0, 2), abs=1e-9)


def test_adaptive_simpson():
    assert adaptive_simpson(math.sin, 0, math.pi) == pytest.approx(2.0, abs=1e-10)
    with pytest.raises(QuadratureError):
        adaptive_simpson(lambda x: 1 / math.sqrt(abs(x) + 1e-300), -1.0, 1.0, depth=5, panels=1)


def test_empirical_model_limits():
    model = AccuracyModelEmpirical(0.5, 8.0, 0.97, 10)
    assert model(0.0) == pytest.approx(0.97, abs=1e-15)
    assert model(1e6) == pytest.approx(0.1, abs=1e-12)
    vals = empirical_accuracy(model, np.linspace(0, 5, 100))
    assert np.all(np.diff(vals) <= 0)
    assert np.all((vals >= 0.1) & (vals <= 0.97))
    with pytest.raises(ModelError):
        model(-1.0)
    with pytest.raises(ModelError):
        AccuracyModelEmpirical(0.5, -1.0, 0.97, 10)
    with pytest.raises(ModelError):
        AccuracyModelEmpirical(0.5, 1.0, 0.05, 10)


def test_fit_recovers_known_model():
    truth = AccuracyModelEmpirical(0.5, 8.0, 0.97, 10)
    r = np.linspace(0.05, 1.5, 8)
    fit = fit_empirical(list(zip(r, truth(r))), 0.97, 10)
    assert fit.m == pytest.approx(0.5, rel=0.01)
    assert fit.s == pytest.approx(8.0, rel=0.01)
    assert fit.residual < 1e-12


def test_fit_duplicate_point_same_optimum():
    # points that the model family reproduces exactly, so the optimum is
    # unique and reweighting one of them cannot move it
    truth = AccuracyModelEmpirical(1.2, 3.0, 0.9, 10)
    pts = [(r, float(truth(r))) for r in [0.2, 0.8, 1.3, 2.5]]
    a = fit_empirical(pts, 0.9, 10)
    b = fit_empirical(pts + [pts[1]], 0.9, 10)
    assert a.m == pytest.approx(b.m, rel=1e-4) and a.s == pytest.approx(b.s, rel=1e-4)
    assert fit_empirical(pts, 0.9, 10) == a  # deterministic


def test_fit_four_points_predict_synthetic_sweep():
    # 31-point sweep drawn from a sigmoid with binomial sampling noise
    # (10k images per point); fit on 4 evenly chosen points
    truth = AccuracyModelEmpirical(0.5, 8.0, 0.98, 10)
    r = np.linspace(0.0, 1.5, 31)
    rng = np.random.default_rng(7)
    acc = rng.binomial(10000, truth(r)) / 10000
    idx = [0, 10, 20, 30]
    fit = fit_empirical(list(zip(r[idx], acc[idx])), 0.98, 10)
    held = np.setdiff1d(np.arange(31), idx)
    assert np.max(np.abs(fit(r[held]) - acc[held])) <= 0.02


def test_sigmoid_cannot_follow_analytic_multiclass_tail():
    # the analytic curve decays like 1/r, not exponentially; even a fit on
    # all 31 points misses it by more than the 4-point tolerance above
    r = np.geomspace(0.05, 5, 31)
    acc = np.array([multiclass_accuracy(v, 10) for v in r])
    fit = fit_empirical(list(zip(r, acc)), 1.0, 10)
    assert np.max(np.abs(fit(r) - acc)) > 0.05


def test_fit_errors():
    with pytest.raises(FitError):
        fit_empirical([(0.5, 0.9), (0.5, 0.8)], 0.95, 10)
    with pytest.raises(FitError):
        fit_empirical([(0.1, 1.2), (0.5, 0.8)], 0.95, 10)


def test_aggregate_examples():
    assert aggregate_rrmse([0.1, 0.1]) == pytest.approx(0.141421, abs=1e-6)
    assert aggregate_rrmse([0.37]) == 0.37
    assert aggregate_rrmse([]) == 0.0
    with pytest.raises(ModelError):
        aggregate_rrmse([0.1, -0.1])


@given(st.lists(st.floats(0, 1e3), max_size=10), st.lists(st.floats(0, 1e3), max_size=10), st.randoms())
def test_aggregate_properties(a, b, rnd):
    shuffled = list(a)
    rnd.shuffle(shuffled)
    assert aggregate_rrmse(shuffled) == pytest.approx(aggregate_rrmse(a), rel=1e-12)
    assert aggregate_rrmse([aggregate_rrmse(a), aggregate_rrmse(b)]) == pytest.approx(aggregate_rrmse(a + b),
                                                                                    rel=1e-12)


def test_msb_conversion():
    assert msb_to_standard_rrmse(1.0, 8) == pytest.approx(0.40825, abs=1e-5)
    assert msb_to_standard_rrmse(1.0, 16) == pytest.approx(0.28868, abs=1e-5)
    with pytest.raises(ModelError):
        msb_to_standard_rrmse(1.0, 4)


def test_ber_scaling():
    assert ber_rrmse_scaling(0.1, 1e-6, 4e-6) == pytest.approx(0.2)
    assert ber_rrmse_scaling(0.3, 2e-5, 2e-5) == 0.3
    with pytest.raises(ModelError):
        ber_rrmse_scaling(0.3, 0, 1e-5)


def test_normality_diagnostics(rng):
    rep = normality_diagnostics(rng.normal(3, 2, 10**5))
    assert abs(rep.skewness) < 0.05 and abs(rep.excess_kurtosis) < 0.1 and rep.ks_distance < 0.01
    assert rep.n == 10**5 and rep.mean == pytest.approx(3, abs=0.05)
    assert normality_diagnostics(rng.uniform(size=10**5)).excess_kurtosis == pytest.approx(-1.2, abs=0.05)
    with pytest.raises(DegenerateSamplesError):
        normality_diagnostics(np.ones(500))
    with pytest.raises(DegenerateSamplesError):
        normality_diagnostics(np.arange(50.0))
