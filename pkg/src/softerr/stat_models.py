"""Closed-form and fitted models of bit-flip disturbance and its effect on
classification accuracy.

Two accuracy models are provided. :func:`binary_accuracy` and
:func:`multiclass_accuracy` with ``nc=2`` do *not* agree: the binary form
uses ``erf(1/rrmse)`` (a margin of two output standard deviations) while
the integral form reduces to ``normcdf(1/(sqrt(2) * rrmse))``. Both are
kept as written; pick one and stick with it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ModelError(ValueError):
    pass


class QuadratureError(ModelError):
    pass


class FitError(ModelError):
    pass


class DegenerateSamplesError(ModelError):
    pass


# --------------------------------------------------------------------------
# disturbance magnitudes


def sigma_delta(bits: int, bound: float) -> float:
    """RMS value change caused by one uniformly random bit flip.

    Bit ``b`` counted from the MSB moves the value by ``bound / 2**b``.
    """
    if bits < 2 or bound <= 0:
        raise ModelError("sigma_delta needs bits >= 2 and bound > 0")
    s = math.fsum(4.0 ** -b for b in range(bits))
    return bound * math.sqrt(s / bits)


def predict_rmse_weight_fault(K: int, ic: int, oc: int, sigma_delta: float,
                              input_var: float | None = None) -> float:
    """Output RMSE of a conv layer after one weight is disturbed by ``sigma_delta``.

    By default the input variance is taken equal to the default-init
    weight variance ``1/(K^2 ic)``, which gives ``sigma_delta/(K sqrt(ic oc))``.
    With an explicit ``input_var`` the general ``sigma_delta*sqrt(input_var/oc)``
    is returned.
    """
    if min(K, ic, oc) <= 0 or sigma_delta < 0:
        raise ModelError("K, ic, oc must be positive")
    if input_var is None:
        return sigma_delta / (K * math.sqrt(ic * oc))
    return sigma_delta * math.sqrt(input_var / oc)


def predict_rmse_activation_fault(H: int, ic: int, sigma_delta: float) -> float:
    """Output RMSE of a same-padded conv layer (default init) after one
    input activation is disturbed by ``sigma_delta``."""
    if min(H, ic) <= 0 or sigma_delta < 0:
        raise ModelError("H, ic must be positive")
    return sigma_delta / (H * math.sqrt(ic))


def variance_product(var_x: float, var_y: float) -> float:
    """Variance of X*Y for independent zero-mean X, Y."""
    if var_x < 0 or var_y < 0:
        raise ModelError("variances must be non-negative")
    return var_x * var_y


# --------------------------------------------------------------------------
# RRMSE -> accuracy


def normcdf(x: float) -> float:
    return 0.5 * math.erfc(-x / SQRT2)


def normpdf(x: float) -> float:
    return INV_SQRT_2PI * math.exp(-0.5 * x * x)


def binary_accuracy(rrmse: float) -> float:
    if rrmse < 0:
        raise ModelError("rrmse must be non-negative")
    if rrmse == 0:
        return 1.0
    return 0.5 * math.erf(1.0 / rrmse) + 0.5


def _simpson(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    if depth <= 0:
        raise QuadratureError(f"adaptive Simpson did not converge on [{a}, {b}]")
    return (_simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1)
            + _simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1))


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10, depth: int = 50,
                     panels: int = 16) -> float:
    """Adaptive Simpson over ``panels`` equal sub-intervals of [a, b].

    Starting from several panels keeps narrow features from slipping
    between the first three sample points.
    """
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    ptol = tol / panels
    for lo, hi in zip(edges[:-1], edges[1:]):
        lo, hi = float(lo), float(hi)
        mid = 0.5 * (lo + hi)
        flo, fmid, fhi = f(lo), f(mid), f(hi)
        whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
        total += _simpson(f, lo, hi, flo, fmid, fhi, whole, ptol, depth)
    return total


def multiclass_accuracy(rrmse: float, nc: int, tol: float = 1e-10) -> float:
    """Probability that the true-class logit stays the largest of ``nc``
    when every logit carries independent N(0, rrmse^2) noise relative to a
    unit margin."""
    if nc < 2:
        raise ModelError("nc must be >= 2")
    if rrmse < 0:
        raise ModelError("rrmse must be non-negative")
    if rrmse == 0:
        return 1.0
    c = 1.0 / rrmse
    p = nc - 1

    def integrand(x):
        return normpdf(x) * normcdf(x + c) ** p

    # normpdf is below 1e-22 outside [-10, 10]; clip the last-digit
    # quadrature error so the result stays a probability
    return min(1.0, max(0.0, adaptive_simpson(integrand, -10.0, 10.0, tol=tol)))


@dataclass(frozen=True)
class AccuracyModelEmpirical:
    """Sigmoid in RRMSE from ``acc_clean`` at zero error down to ``1/nc``.

    ``residual`` is the sum of squared residuals when produced by
    :func:`fit_empirical`.
    """

    m: float
    s: float
    acc_clean: float
    nc: int
    residual: float | None = None

    def __post_init__(self):
        if self.nc < 2:
            raise ModelError("nc must be >= 2")
        if not self.s > 0:
            raise ModelError("steepness s must be positive")
        if not 1.0 / self.nc < self.acc_clean <= 1.0:
            raise ModelError("acc_clean must lie in (1/nc, 1]")

    def __call__(self, rrmse):
        return empirical_accuracy(self, rrmse)


def _sigmoid_acc(m, s, acc_clean, nc, r):
    inv = 1.0 / nc
    # (1+e^{-ms}) / (1+e^{s(r-m)}), written with logaddexp to survive large s
    log_num = np.logaddexp(0.0, -m * s)
    log_den = np.logaddexp(0.0, s * (np.asarray(r, dtype=np.float64) - m))
    return (acc_clean - inv) * np.exp(log_num - log_den) + inv


def empirical_accuracy(model: AccuracyModelEmpirical, rrmse):
    r = np.asarray(rrmse, dtype=np.float64)
    if np.any(r < 0):
        raise ModelError("rrmse must be non-negative")
    out = _sigmoid_acc(model.m, model.s, model.acc_clean, model.nc, r)
    return float(out) if np.ndim(out) == 0 else out


FIT_M_GRID = np.logspace(-3, 1, 16)
FIT_S_GRID = np.logspace(-1, 3, 16)


def fit_empirical(points, acc_clean: float, nc: int) -> AccuracyModelEmpirical:
    """Least-squares (m, s) from ``(rrmse, accuracy)`` points.

    Coarse log-spaced grid, then Nelder-Mead on ``(m, log s)``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    r, acc = pts[:, 0], pts[:, 1]
    if len(np.unique(r)) < 2:
        raise FitError("fit needs at least two points with distinct RRMSE")
    if np.any((acc < 0) | (acc > 1)) or np.any(r < 0):
        raise FitError("accuracies must lie in [0, 1] and RRMSE must be non-negative")
    AccuracyModelEmpirical(1.0, 1.0, acc_clean, nc)  # validates acc_clean / nc

    def sse(m, s):
        res = _sigmoid_acc(m, s, acc_clean, nc, r) - acc
        return float(np.dot(res, res))

    best = min(((sse(m, s), m, s) for m in FIT_M_GRID for s in FIT_S_GRID), key=lambda t: t[0])
    _, m0, s0 = best
    res = optimize.minimize(lambda p: sse(p[0], math.exp(p[1])), x0=[m0, math.log(s0)],
                            method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 20000, "maxfev": 40000})
    m, s = float(res.x[0]), math.exp(float(res.x[1]))
    final = sse(m, s)
    if not np.isfinite(final):
        raise FitError("fit produced a non-finite residual")
    if final > best[0]:
        m, s, final = best[1], best[2], best[0]
    return AccuracyModelEmpirical(m, s, acc_clean, nc, residual=final)


# --------------------------------------------------------------------------
# aggregation and rescaling


def aggregate_rrmse(parts) -> float:
    """Independent error sources add in quadrature."""
    a = np.asarray(list(parts), dtype=np.float64)
    if np.any(a < 0):
        raise ModelError("RRMSE contributions must be non-negative")
    return float(math.sqrt(math.fsum(a * a)))


def msb_to_standard_rrmse(rrmse_msb: float, bits: int) -> float:
    """RRMSE of random-bit faults given the RRMSE of the same number of MSB
    faults (divides by bound/sigma_delta, about sqrt(6) for int8 and
    sqrt(12) for int16)."""
    if bits not in (8, 16):
        raise ModelError(f"unsupported word width {bits}")
    return rrmse_msb * sigma_delta(bits, 1.0)


def ber_rrmse_scaling(rrmse_at_p: float, p: float, p_target: float) -> float:
    """Flip count is linear in BER, so RRMSE goes with its square root."""
    if p <= 0 or p_target <= 0:
        raise ModelError("bit error rates must be positive")
    return rrmse_at_p * math.sqrt(p_target / p)


# --------------------------------------------------------------------------
# normality


@dataclass(frozen=True)
class NormalityReport:
    n: int
    mean: float
    var: float
    skewness: float
    excess_kurtosis: float
    ks_distance: float


def normality_diagnostics(samples) -> NormalityReport:
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size < 100:
        raise DegenerateSamplesError(f"need at least 100 samples, got {x.size}")
    mean = float(x.mean())
    var = float(np.mean((x - mean) ** 2))
    if not var > 0:
        raise DegenerateSamplesError("samples have zero variance")
    ks = stats.kstest(x, "norm", args=(mean, math.sqrt(var))).statistic
    return NormalityReport(
        n=int(x.size),
        mean=mean,
        var=var,
        skewness=float(stats.skew(x)),
        excess_kurtosis=float(stats.kurtosis(x, fisher=True)),
        ks_distance=float(ks),
    )
