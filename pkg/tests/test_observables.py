import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dicke.core import (
    FockBasis,
    FockTruncationWarning,
    ModelParams,
    assemble_number_fock,
    check_fock_truncation,
)
from dicke.eigen import GroundStateSolution, fock_lowest, ground_state, solve_fixed
from dicke.observables import (
    DegenerateGap,
    GridTooCoarse,
    NonConvergentExtrapolation,
    StepTooSmall,
    WavefunctionGrid,
    driving_expectation,
    energy_second_derivative,
    fidelity,
    fs_fock_full_spectrum,
    fs_overlap_route,
    fs_sum_route,
    grid_peaks,
    gs_energy_per_atom,
    gs_parity_fock,
    hermite_functions,
    infidelity,
    peak_stretch,
    photon_number_per_atom,
    regular_energy_terms,
    singular_energy,
    spin_rotation,
    spin_z_mean,
    state_overlap,
    stretch,
    wavefunction_grid,
    _fs_sum_from,
)


def fock_e0(p, m_tr=120):
    return fock_lowest(p, FockBasis(p.n_atoms, m_tr)).eigenvalues[0]


# -- energies ---------------------------------------------------------------

def test_regular_terms_resonance():
    c0, c1 = regular_energy_terms(ModelParams(1, 1, 0.5, 8))
    assert c0 == -0.5
    assert c1 == pytest.approx(-0.2928932188134524, abs=1e-15)


def test_singular_energy_of_regular_part_vanishes():
    p = ModelParams(1, 1, 0.5, 64)
    c0, c1 = regular_energy_terms(p)
    assert singular_energy(c0 + c1 / 64, p) == pytest.approx(0, abs=1e-16)


def test_singular_energy_warns_off_critical():
    with pytest.warns(RuntimeWarning):
        singular_energy(-0.5, ModelParams(1, 1, 0.4, 8))


def test_energy_per_atom_decoupled():
    sol, _ = ground_state(ModelParams(1, 1.7, 0.0, 12))
    assert gs_energy_per_atom(sol) == pytest.approx(-0.85, abs=1e-12)


def test_energy_per_atom_matches_fock():
    p = ModelParams(1, 1, 0.3, 8)
    sol, _ = ground_state(p)
    assert gs_energy_per_atom(sol) == pytest.approx(fock_e0(p) / 8, abs=1e-9)


# -- photon number ----------------------------------------------------------

def test_photon_number_decoupled():
    sol, _ = ground_state(ModelParams(1, 1, 0.0, 8))
    assert photon_number_per_atom(sol) == pytest.approx(0, abs=1e-14)


def test_photon_number_matches_fock():
    p = ModelParams(1, 1, 0.6, 8)
    sol, _ = ground_state(p, energy_tol=1e-12)
    basis = FockBasis(8, 120)
    v = fock_lowest(p, basis).eigenvectors[:, 0]
    ref = assemble_number_fock(p, basis).expectation(v) / 8
    assert photon_number_per_atom(sol) == pytest.approx(ref, abs=1e-8)


def test_spin_z_mean_limits():
    sol, _ = ground_state(ModelParams(1, 1, 0.0, 10))
    assert spin_z_mean(sol) == pytest.approx(-5, abs=1e-10)


# -- fidelity ---------------------------------------------------------------

def test_overlap_with_itself_is_one():
    sol = solve_fixed(ModelParams(1, 1, 0.55, 10), 30)
    g = sol.basis.displacements
    assert state_overlap(sol.ground, g, sol.ground, g) == pytest.approx(1, abs=1e-13)
    assert infidelity(sol.ground, g, sol.ground, g) == pytest.approx(0, abs=1e-28)


def test_overlap_across_truncations():
    p = ModelParams(1, 1, 0.45, 8)
    a = solve_fixed(p, 30)
    b = solve_fixed(p, 45)
    f = state_overlap(a.ground, a.basis.displacements, b.ground, b.basis.displacements)
    assert f == pytest.approx(1, abs=1e-10)


def test_fidelity_approaches_one_monotonically():
    p = ModelParams(1, 1, 0.45, 8)
    sol, _ = ground_state(p)
    fs = [fidelity(p, d, sol=sol).fidelity for d in (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)]
    assert all(a < b for a, b in zip(fs, fs[1:]))
    assert fs[-1] <= 1 and 1 - fs[-1] < 1e-5


def test_fidelity_decoupled_limit():
    r = fidelity(ModelParams(1, 1, 0.0, 8), 1e-4)
    assert r.s_f == pytest.approx(0.25, rel=1e-6)
    assert r.chi_f * 8 == pytest.approx(r.s_f)


def test_fidelity_matches_fock_overlap():
    p = ModelParams(1, 1, 0.45, 8)
    d = 1e-4
    r = fidelity(p, d)
    basis = FockBasis(8, 120)
    v0 = fock_lowest(p, basis).eigenvectors[:, 0]
    v1 = fock_lowest(p.with_lam(p.lam + d), basis).eigenvectors[:, 0]
    assert r.fidelity == pytest.approx(abs(v0 @ v1), abs=1e-8)


def test_fidelity_self_consistency():
    """sqrt(1 - d^2 S_F) reproduces the symmetric-pair fidelity to O(d^4)."""
    p = ModelParams(1, 1, 0.45, 8)
    s_f = fs_overlap_route(p).s_f
    gaps = []
    for d in (2e-2, 1e-2):
        a = solve_fixed(p.with_lam(p.lam - d / 2), 45)
        b = solve_fixed(p.with_lam(p.lam + d / 2), 45)
        f = abs(state_overlap(a.ground, a.basis.displacements, b.ground, b.basis.displacements))
        gaps.append(abs(math.sqrt(1 - d * d * s_f) - f) / d**4)
    assert gaps[0] == pytest.approx(gaps[1], rel=0.01)


def test_overlap_route_decoupled():
    p = ModelParams(1, 3.0, 0.0, 6)
    assert fs_overlap_route(p).s_f == pytest.approx(1 / 16, rel=1e-8)


@pytest.mark.parametrize("n,d,lam", [(8, 1, 0.45), (16, 0.1, 0.5), (32, 5, 0.6), (64, 1, 0.52)])
def test_routes_agree(n, d, lam):
    p = ModelParams.reduced(d, lam, n)
    a = fs_overlap_route(p)
    b = fs_sum_route(p)
    assert b.complete
    assert a.s_f == pytest.approx(b.s_f, rel=1e-6)


def test_sum_route_matches_full_fock_spectrum():
    p = ModelParams(1, 1, 0.45, 8)
    ref = fs_fock_full_spectrum(p, FockBasis(8, 60))
    assert fs_sum_route(p).s_f == pytest.approx(ref, rel=1e-8)


def test_sum_route_decoupled_single_term():
    p = ModelParams(1, 1, 0.0, 6)
    est = fs_sum_route(p, n_states=10)
    assert est.s_f == pytest.approx(0.25, abs=1e-12)


def test_degenerate_gap():
    p = ModelParams(1, 1, 0.9, 4)
    sol = solve_fixed(p, 20, n_eig=3, sector=None)
    fake = GroundStateSolution(p, sol.basis, np.array([0.0, 0.0, 1.0]), sol.coefficients,
                               sol.residual_norms, None)
    with pytest.raises(DegenerateGap):
        _fs_sum_from(fake, exhausted=False)


def test_nonconvergent_extrapolation():
    with pytest.raises(NonConvergentExtrapolation):
        fs_overlap_route(ModelParams(1, 1, 0.5, 64), steps=(0.2, 0.1))


def test_default_steps_are_halved_until_consistent(monkeypatch):
    import dicke.observables as obs
    monkeypatch.setattr(obs, "FS_STEPS", (0.04, 0.02))
    p = ModelParams(1, 1, 0.52, 64)
    est = fs_overlap_route(p)
    assert len(est.detail["steps"]) > 2
    fine = fs_overlap_route(p, steps=(2e-4, 1e-4))
    assert est.s_f == pytest.approx(fine.s_f, rel=1e-3)


def test_default_steps_scale_with_coupling_units():
    p = ModelParams.reduced(4.0, 0.45, 8)
    assert fs_overlap_route(p).detail["steps"][:2] == pytest.approx([4e-4, 2e-4])


def test_overlap_route_rejects_single_step():
    with pytest.raises(ValueError):
        fs_overlap_route(ModelParams(1, 1, 0.5, 8), steps=(1e-4,))


@settings(max_examples=12, deadline=None)
@given(st.floats(0.0, 1.0), st.sampled_from([2, 5, 8]))
def test_fs_positive(lam, n):
    assert fs_overlap_route(ModelParams(1, 1, lam, n), check=False).s_f >= 0


def test_intensivity_on_either_side_of_critical_point():
    """Below lam_c the total S_F is N-stable; above it chi_F = S_F/N is.

    A parity cat of two coherent branches with displacement ~ sqrt(N) gives
    S_F ~ N above lam_c, while the normal phase is a squeezed vacuum with
    N-independent S_F. The opposite assignment quoted with the figure data
    is contradicted by these values.
    """
    s = [fs_overlap_route(ModelParams(1, 1, 0.4, n)).s_f for n in (512, 1024)]
    assert abs(s[0] / s[1] - 1) < 0.05
    chi = [fs_overlap_route(ModelParams(1, 1, 0.6, n)).chi_f for n in (512, 1024)]
    assert abs(chi[0] / chi[1] - 1) < 0.05


# -- energy curvature -------------------------------------------------------

def test_second_derivative_decoupled_point():
    p = ModelParams(1, 1, 0.0, 8)
    h = 1e-3
    dense = {s: fock_e0(p.with_lam(abs(s)), 60) / 8 for s in (0.0, h, h / 2)}
    d1 = (2 * dense[h] - 2 * dense[0.0]) / h**2
    d2 = (2 * dense[h / 2] - 2 * dense[0.0]) / (h / 2) ** 2
    ref = (4 * d2 - d1) / 3
    val = energy_second_derivative(p)
    assert val == pytest.approx(ref, abs=1e-6)
    # second order perturbation theory: e0 = -w0/2 - lam^2 / (N (w + w0))
    assert val == pytest.approx(-2 / (8 * 2), abs=1e-6)


def test_second_derivative_step_too_small():
    with pytest.raises(StepTooSmall):
        energy_second_derivative(ModelParams(1, 1, 0.5, 8), h=1e-9)


def test_hellmann_feynman():
    p = ModelParams(1, 1, 0.55, 24)
    sol, rep = ground_state(p, energy_tol=1e-12)
    h = 1e-5
    ep = solve_fixed(p.with_lam(p.lam + h), sol.n_tr).e0
    em = solve_fixed(p.with_lam(p.lam - h), sol.n_tr).e0
    assert driving_expectation(sol) == pytest.approx((ep - em) / (2 * h), abs=1e-6)


# -- parity -----------------------------------------------------------------

def test_parity_decoupled():
    assert gs_parity_fock(ModelParams(1, 1, 0.0, 8)).parity == pytest.approx(1, abs=1e-12)


def test_parity_definite_below_critical():
    r = gs_parity_fock(ModelParams(1, 1, 0.4, 8))
    assert abs(abs(r.parity) - 1) < 1e-8
    assert not r.degenerate


def test_parity_above_critical():
    r = gs_parity_fock(ModelParams(1, 1, 0.8, 8))
    assert r.degenerate or abs(abs(r.parity) - 1) < 1e-8


def test_fock_truncation_flag():
    p = ModelParams(1, 1, 1.0, 8)
    with pytest.warns(FockTruncationWarning):
        fock_lowest(p, FockBasis(8, 6))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v = fock_lowest(p, FockBasis.default(p)).eigenvectors[:, 0]
        assert check_fock_truncation(v, FockBasis.default(p))


# -- wavefunction -----------------------------------------------------------

def test_hermite_low_orders():
    x = np.linspace(-3, 3, 13)
    h = hermite_functions(2, x)
    g = np.pi**-0.25 * np.exp(-x * x / 2)
    np.testing.assert_allclose(h[0], g, atol=1e-15)
    np.testing.assert_allclose(h[1], math.sqrt(2) * x * g, atol=1e-15)
    np.testing.assert_allclose(h[2], (2 * x * x - 1) / math.sqrt(2) * g, atol=1e-14)


def test_hermite_orthonormal_and_stable():
    x = np.linspace(-40, 40, 8001)
    h = hermite_functions(300, x)
    assert np.all(np.isfinite(h))
    gram = h @ h.T * (x[1] - x[0])
    np.testing.assert_allclose(gram, np.eye(301), atol=1e-8)


def test_spin_rotation_diagonalizes_jx():
    n = 7
    u = spin_rotation(n)
    from dicke.core import spin_ladder
    jx = np.diag(spin_ladder(n), 1)
    jx = jx + jx.T
    np.testing.assert_allclose(u.T @ jx @ u, np.diag(np.arange(n + 1) - n / 2), atol=1e-12)
    jz = np.diag(np.arange(n + 1) - n / 2)
    off = np.diag(u.T @ jz @ u, 1)
    np.testing.assert_allclose(off, spin_ladder(n), atol=1e-12)


def test_wavefunction_decoupled_is_single_gaussian():
    sol, _ = ground_state(ModelParams(1, 1, 0.0, 20))
    g = wavefunction_grid(sol, (-6, 6), (-6, 6), 121)
    assert g.norm_estimate == pytest.approx(1, abs=0.02)
    assert grid_peaks(g) == [(0.0, 0.0)]
    xx, yy = np.meshgrid(g.x_axis, g.y_axis)
    ref = np.exp(-(xx**2 + yy**2) / 2) / math.sqrt(math.pi)
    np.testing.assert_allclose(np.abs(g.values), ref, atol=1e-10)


def test_wavefunction_default_grid_norm():
    sol, _ = ground_state(ModelParams(1, 1, 0.6, 16))
    g = wavefunction_grid(sol)
    assert abs(g.norm_estimate - 1) < 0.02


def test_wavefunction_norm_independent_of_spin_frame():
    """Norm of the grid equals the norm of the state for a stretched state."""
    sol, _ = ground_state(ModelParams(1, 1, 0.52, 200))
    g = wavefunction_grid(sol, resolution=301)
    assert g.norm_estimate == pytest.approx(1, abs=1e-3)
    angle, ratio = stretch(g)
    assert abs(abs(angle) - math.pi / 4) < 0.1
    assert ratio > 1.5


def test_grid_too_coarse():
    sol, _ = ground_state(ModelParams(1, 1, 0.6, 16))
    with pytest.raises(GridTooCoarse, match="resolution"):
        wavefunction_grid(sol, resolution=8)


def test_grid_roundtrip(tmp_path):
    sol, _ = ground_state(ModelParams(1, 1, 0.3, 6))
    g = wavefunction_grid(sol, resolution=(31, 21))
    path = tmp_path / "psi.dat"
    g.save(path)
    back = WavefunctionGrid.load(path)
    np.testing.assert_allclose(back.values, g.values, rtol=1e-9)
    np.testing.assert_allclose(back.x_axis, g.x_axis)
    assert back.meta["n_atoms"] == 6
    assert back.norm_estimate == pytest.approx(g.norm_estimate)


def test_peaks_prominence_merges_plateau():
    x = np.linspace(-3, 3, 61)
    xx, yy = np.meshgrid(x, x)
    # two bumps closer than their width form one peak; far apart, two
    near = np.exp(-((xx - 0.2) ** 2 + yy**2)) + np.exp(-((xx + 0.2) ** 2 + yy**2))
    far = np.exp(-((xx - 1.5) ** 2 + yy**2) * 4) + np.exp(-((xx + 1.5) ** 2 + yy**2) * 4)
    assert len(grid_peaks(WavefunctionGrid(x, x, near, 1.0))) == 1
    assert len(grid_peaks(WavefunctionGrid(x, x, far, 1.0))) == 2


def test_peak_stretch_of_gaussian():
    x = np.linspace(-4, 4, 81)
    xx, yy = np.meshgrid(x, x)
    u, v = (xx + yy) / math.sqrt(2), (xx - yy) / math.sqrt(2)
    psi = np.exp(-(u**2) / (2 * 9) - v**2 / 2)
    angle, ratio = peak_stretch(WavefunctionGrid(x, x, psi, 1.0))
    assert angle == pytest.approx(math.pi / 4, abs=1e-6)
    assert ratio == pytest.approx(3, rel=1e-6)
