import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dicke.core import ModelParams
from dicke.scaling import (
    CurveEvaluator,
    Degenerate,
    EmptyCommonSupport,
    NoInteriorPeak,
    SignMixture,
    SweepRecord,
    alpha_exponents,
    collapse,
    find_fs_peak,
    find_peak,
    fit_loglog,
    optimize_nu,
    read_records,
    write_records,
)

NS = (128, 256, 512, 1024, 2048)


def synthetic_curves(nu=2 / 3, ns=(512, 1024, 2048), xs=np.linspace(-4, 4, 81)):
    out = {}
    for n in ns:
        lam = 0.5 + xs / n**nu
        out[n] = (lam, 1 / (1 + (n**nu * (lam - 0.5)) ** 2))
    return out


# -- peaks ------------------------------------------------------------------

def test_find_peak_parabola():
    x, y, cache = find_peak(lambda t: -(t - 0.5) ** 2, (0.3, 0.8), tol_lambda=5e-5)
    assert abs(x - 0.5) <= 5e-5
    assert y <= 0
    assert len(cache) < 60


def test_find_peak_widens_once():
    x, _, _ = find_peak(lambda t: -(t - 0.85) ** 2, (0.3, 0.8))
    assert abs(x - 0.85) <= 5e-5


def test_find_peak_monotone_raises():
    with pytest.raises(NoInteriorPeak):
        find_peak(lambda t: t, (0.0, 1.0))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(0.55, 0.95))
def test_find_peak_bracket_invariance(lo, hi):
    f = lambda t: 1 / (1 + 50 * (t - 0.5123) ** 2)  # noqa: E731
    x, _, _ = find_peak(f, (lo, hi), tol_lambda=1e-5)
    assert abs(x - 0.5123) <= 1e-5


def test_find_fs_peak_small_system():
    p = ModelParams(1, 1, 0.5, 32)
    ev = CurveEvaluator(p.with_lam(0.55))
    lam, chi = find_fs_peak(p, (0.4, 0.7), tol_lambda=1e-4, evaluator=ev)
    assert 0.45 < lam < 0.65
    assert chi >= ev(lam - 0.01) and chi >= ev(lam + 0.01)


def test_curve_evaluator_is_memoized_and_rejects_unknown_kind():
    ev = CurveEvaluator(ModelParams(1, 1, 0.5, 8), "neg_d2e")
    a = ev(0.5)
    assert ev(0.5) == a and len(ev.values) == 1
    with pytest.raises(ValueError):
        CurveEvaluator(ModelParams(1, 1, 0.5, 8), "energy")


# -- fits -------------------------------------------------------------------

def test_exact_power_law():
    fit = fit_loglog([(n, 3 * n ** (-4 / 3)) for n in NS])
    assert fit.slope == pytest.approx(-4 / 3, abs=1e-12)
    assert fit.stderr < 1e-12
    assert fit.extrapolated_slope == pytest.approx(-4 / 3, abs=1e-12)
    assert len(fit.local_slopes) == len(NS) - 1


def test_negative_values_fit_by_magnitude():
    fit = fit_loglog([(n, -2 * n**0.5) for n in NS])
    assert fit.sign == -1
    assert fit.slope == pytest.approx(0.5, abs=1e-12)


def test_fit_errors():
    with pytest.raises(Degenerate):
        fit_loglog([(64, 1.0), (128, 0.5), (256, 0.25)])
    with pytest.raises(SignMixture):
        fit_loglog([(64, 1.0), (128, -0.5), (256, 0.25), (512, 0.1)])


def test_noisy_fit_stderr_brackets_noise():
    rng = np.random.default_rng(11)
    ns = np.array([64, 128, 256, 512, 1024, 2048, 4096, 8192])
    t95 = stats.t.ppf(0.975, ns.size - 2)
    hits = 0
    for _ in range(400):
        v = ns**0.33 * np.exp(rng.normal(0, 0.01, ns.size))
        fit = fit_loglog(list(zip(ns, v)))
        hits += abs(fit.slope - 0.33) <= t95 * fit.stderr
    assert 0.92 <= hits / 400 <= 0.98


def test_asymptotic_slope_handles_cube_root_corrections():
    ns = [64, 128, 256, 512, 1024, 2048]
    fit = fit_loglog([(n, n ** (-2 / 3) * (1 - 0.8 * n ** (-1 / 3))) for n in ns])
    assert abs(fit.asymptotic_slope + 2 / 3) < abs(fit.extrapolated_slope + 2 / 3)
    assert fit.asymptotic_slope == pytest.approx(-2 / 3, abs=0.01)


# -- collapse ---------------------------------------------------------------

def test_exact_collapse():
    res = collapse(synthetic_curves(), 2 / 3)
    assert res.residual < 1e-10
    assert res.residual >= 0


def test_optimize_nu_recovers_exponent():
    nu, best, (nus, scan) = optimize_nu(synthetic_curves())
    assert nu == pytest.approx(2 / 3, abs=0.005)
    assert best.residual <= scan.min() + 1e-15


def test_collapse_invariant_under_value_rescaling():
    c = synthetic_curves(nu=0.7)
    scaled = {n: (lam, 7.5 * v) for n, (lam, v) in c.items()}
    assert collapse(c, 2 / 3).residual == pytest.approx(collapse(scaled, 2 / 3).residual, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.55, 0.85), st.floats(0.2, 2.0), st.floats(0.2, 1.0))
def test_integrated_residual_monotone_in_window(nu, window, shrink):
    c = synthetic_curves(nu=0.7)
    wide = collapse(c, nu, window=window)
    narrow = collapse(c, nu, window=window * shrink)
    assert narrow.integrated <= wide.integrated * (1 + 1e-12) + 1e-300


def test_collapse_errors():
    c = synthetic_curves()
    with pytest.raises(Degenerate):
        collapse({512: c[512], 1024: c[1024]}, 2 / 3)
    # peaks placed off the sampled range push the scaled supports apart
    far = {n: (0.5 + 10 * (i - 1), 1.0) for i, n in enumerate(c)}
    with pytest.raises(EmptyCommonSupport):
        collapse(c, 2 / 3, peaks=far)


def test_collapse_uses_supplied_peaks():
    c = synthetic_curves()
    res = collapse(c, 2 / 3, peaks={n: (0.5, 1.0) for n in c})
    assert res.lambda_max_per_n[512] == (0.5, 1.0)


# -- exponents and records --------------------------------------------------

def test_alpha():
    assert alpha_exponents(1 / 3, 2 / 3) == pytest.approx(0.5)
    assert alpha_exponents(4 / 3, 2 / 3) == pytest.approx(2)
    assert alpha_exponents(0, 2 / 3) == 0
    with pytest.raises(ZeroDivisionError):
        alpha_exponents(1, 0)


def test_records_roundtrip(tmp_path):
    recs = [SweepRecord(64, 1.0, 0.5, "chi_f", 1.2345678901234567, 30, 1e-10, 0),
            SweepRecord(128, 0.1, 0.45, "e0", -0.05, 45, 1e-10, 3)]
    path = tmp_path / "s.csv"
    write_records(path, recs)
    assert path.read_text().splitlines()[0] == "n_atoms,D,lambda,observable,value,n_tr,tol_energy,seed"
    assert read_records(path) == recs


def test_record_rejects_nonfinite():
    with pytest.raises(ValueError):
        SweepRecord(8, 1.0, 0.5, "chi_f", math.nan, 20, 1e-10)
