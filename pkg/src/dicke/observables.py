"""Physical quantities computed from extended-basis eigenstates."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy import ndimage

from .core import (
    ExtendedBasis,
    FockBasis,
    ModelParams,
    assemble_driving_extended,
    assemble_hamiltonian_fock,
    assemble_number_extended,
    critical_coupling,
    displaced_overlap_stack,
    parity_matrix_fock,
    spin_ladder,
)
from .eigen import GroundStateSolution, fock_lowest, ground_state, solve_fixed


class NonConvergentExtrapolation(RuntimeError):
    pass


class DegenerateGap(RuntimeError):
    pass


class StepTooSmall(ValueError):
    pass


class GridTooCoarse(RuntimeError):
    pass


FS_STEPS = (2e-4, 1e-4)  # in units of sqrt(omega*omega0), i.e. reduced coupling
CURVATURE_STEP = 1e-3  # same units
# residual tolerance for states entering fidelity overlaps, relative to omega0*N
FS_TOL_REL = 1e-11


def _fs_tol(p: ModelParams) -> float:
    return FS_TOL_REL * max(1.0, p.omega0 * p.n_atoms)


# --------------------------------------------------------------------------
# energies

def regular_energy_terms(p: ModelParams) -> tuple[float, float]:
    """Coefficients (c0, c1) of the regular part c0 + c1/N of E0/N at lam_c."""
    c0 = -p.omega0 / 2
    c1 = 0.5 * (-p.omega - p.omega0 + math.hypot(p.omega, p.omega0))
    return c0, c1


def gs_energy_per_atom(sol: GroundStateSolution, p: ModelParams | None = None) -> float:
    p = p or sol.params
    return sol.e0 / p.n_atoms


def singular_energy(e0: float, p: ModelParams, n_atoms: int | None = None) -> float:
    """e0 - (c0 + c1/N); meaningful at the critical coupling only."""
    n = p.n_atoms if n_atoms is None else n_atoms
    if not math.isclose(p.lam, critical_coupling(p), rel_tol=1e-9):
        warnings.warn("singular_energy expects lam = lam_c", RuntimeWarning, stacklevel=2)
    c0, c1 = regular_energy_terms(p)
    return e0 - (c0 + c1 / n)


def photon_number_per_atom(sol: GroundStateSolution, p: ModelParams | None = None,
                           basis: ExtendedBasis | None = None) -> float:
    p = p or sol.params
    basis = basis or sol.basis
    op = assemble_number_extended(p, basis)
    return max(op.expectation(sol.ground), 0.0) / p.n_atoms


def driving_expectation(sol: GroundStateSolution) -> float:
    """<Psi0|H1|Psi0> = dE0/dlam by Hellmann-Feynman."""
    return assemble_driving_extended(sol.params, sol.basis).expectation(sol.ground)


# --------------------------------------------------------------------------
# fidelity

def state_overlap(c_a: np.ndarray, g_a: np.ndarray, c_b: np.ndarray, g_b: np.ndarray) -> float:
    """<a|b> for coefficient tables over displaced bases with displacements g_a, g_b.

    Each mu block contributes c_a[mu]^T D(g_a[mu] - g_b[mu]) c_b[mu]; the
    tables may have different truncations.
    """
    n = max(c_a.shape[1], c_b.shape[1])
    o = displaced_overlap_stack(g_a - g_b, n - 1)
    o = o[:, :c_a.shape[1], :c_b.shape[1]]
    return float(np.einsum("ik,ikl,il->", c_a, o, c_b))


LEAK_LEVELS = 40


def infidelity(c_a: np.ndarray, g_a: np.ndarray, c_b: np.ndarray, g_b: np.ndarray) -> float:
    """1 - |<a|b>|^2 for normalized states, evaluated without cancellation.

    |b> is split into its projection b~ on the truncated basis of |a> and
    the remainder beyond it (computed from extra displacement-matrix rows).
    Then 1 - F^2 = (leak + ||b~ - t a||^2) / ||b||^2 with t = a.b~/|a|^2,
    every term a sum of squares.
    """
    n_a, n_b = c_a.shape[1], c_b.shape[1]
    n = max(n_a + LEAK_LEVELS, n_b)
    o = displaced_overlap_stack(g_a - g_b, n - 1)[:, :, :n_b]
    proj = np.einsum("ikl,il->ik", o, c_b)
    b_in, b_out = proj[:, :n_a], proj[:, n_a:]
    leak = float(np.sum(b_out * b_out))
    t = float(np.sum(c_a * b_in)) / float(np.sum(c_a * c_a))
    r = b_in - t * c_a
    norm_b = float(np.sum(b_in * b_in)) + leak
    return (leak + float(np.sum(r * r))) / norm_b


def _state_at(p: ModelParams, lam: float, n_tr: int, v0, tol):
    """Ground coefficients and displacements at a signed coupling.

    Negative couplings use the a -> -a symmetry: C_{mu,k} -> (-1)^k C_{mu,k}
    and g -> -g.
    """
    sol = solve_fixed(p.with_lam(abs(lam)), n_tr, tol=tol, v0=v0)
    c, g = sol.ground, sol.basis.displacements
    if lam < 0:
        c = c * (-1.0) ** np.arange(c.shape[1])
        g = -g
    return c, g, sol


@dataclass
class FidelityResult:
    lam: float
    delta_lambda: float
    fidelity: float
    s_f: float
    chi_f: float


def fidelity(p: ModelParams, delta_lambda: float = 1e-4, sol: GroundStateSolution | None = None,
             tol: float | None = None) -> FidelityResult:
    """F = |<Psi0(lam)|Psi0(lam + delta)>| and S_F = (1 - F^2)/delta^2."""
    if delta_lambda == 0:
        raise ValueError("delta_lambda must be nonzero")
    tol = _fs_tol(p) if tol is None else tol
    if sol is None:
        sol, _ = ground_state(p, tol=tol)
    c1, g1, _ = _state_at(p, p.lam + delta_lambda, sol.n_tr, sol.ground, tol)
    f = min(abs(state_overlap(sol.ground, sol.basis.displacements, c1, g1)), 1.0)
    s_f = infidelity(sol.ground, sol.basis.displacements, c1, g1) / delta_lambda**2
    return FidelityResult(p.lam, delta_lambda, f, s_f, s_f / p.n_atoms)


@dataclass
class FSEstimate:
    """Fidelity susceptibility S_F with an error estimate."""

    s_f: float
    error: float
    n_atoms: int
    complete: bool = True
    n_tr: int = 0
    detail: dict = field(default_factory=dict)
    state: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def chi_f(self) -> float:
        return self.s_f / self.n_atoms


def fs_overlap_route(p: ModelParams, steps=None, n_tr: int | None = None,
                     tol: float | None = None, energy_tol: float = 1e-12,
                     v0=None, check: bool = True, max_halvings: int = 3) -> FSEstimate:
    """S_F from ground-state overlaps, Richardson-extrapolated in the step.

    For each step s the overlap is taken between lam - s/2 and lam + s/2, so
    (1 - F^2)/s^2 = S_F + O(s^2); the two smallest steps are combined to
    cancel the O(s^2) term. Default steps are FS_STEPS scaled by
    sqrt(omega*omega0), so they are the same fraction of the critical
    window for every D. With default steps, the smallest step is halved (up
    to ``max_halvings`` times) while the last two estimates differ by more
    than 1%; explicit steps are used as given.
    """
    if steps is None:
        steps = [s * p.coupling_scale for s in FS_STEPS]
    else:
        max_halvings = 0
    steps = sorted({float(s) for s in steps}, reverse=True)
    if len(steps) < 2 or steps[-1] <= 0:
        raise ValueError("need at least two distinct positive steps")
    tol = _fs_tol(p) if tol is None else tol
    if n_tr is None:
        sol, _ = ground_state(p, energy_tol=energy_tol, tol=tol, v0=v0)
        n_tr, v0 = sol.n_tr, sol.ground

    def estimate(s):
        nonlocal v0
        ca, ga, sa = _state_at(p, p.lam - s / 2, n_tr, v0, tol)
        cb, gb, _ = _state_at(p, p.lam + s / 2, n_tr, sa.ground, tol)
        v0 = sa.ground
        return infidelity(ca, ga, cb, gb) / (s * s)

    estimates = [estimate(s) for s in steps]

    def spread():
        return abs(estimates[-2] - estimates[-1]) > 0.01 * abs(estimates[-1])

    while spread() and max_halvings > 0:
        steps.append(steps[-1] / 2)
        estimates.append(estimate(steps[-1]))
        max_halvings -= 1
    h1, h2 = steps[-2], steps[-1]
    s1, s2 = estimates[-2], estimates[-1]
    r = (h1 / h2) ** 2
    value = (r * s2 - s1) / (r - 1)
    err = abs(s2 - value)
    if check and abs(s1 - s2) > 0.01 * max(abs(value), 1e-300):
        raise NonConvergentExtrapolation(
            f"step estimates {estimates} differ by more than 1%")
    return FSEstimate(value, err, p.n_atoms, True, n_tr,
                      {"steps": steps, "estimates": estimates}, v0)


def _excited_states(p: ModelParams, n_states: int, tol, energy_tol):
    sol, _ = ground_state(p, energy_tol=energy_tol, tol=tol, n_eig=1)
    return solve_fixed(p, sol.n_tr, n_eig=n_states + 1, tol=tol, v0=sol.ground)


def fs_sum_route(p: ModelParams, n_states: int = 60, tol: float | None = None,
                 energy_tol: float = 1e-12) -> FSEstimate:
    """Spectral sum over excited states of |<n|H1|0>|^2/(E_n - E_0)^2.

    Only the ground parity sector contributes since H1 conserves parity. The
    result is flagged incomplete when the last ten terms carry more than
    1e-8 of the total and the spectrum was not exhausted.
    """
    tol = _fs_tol(p) if tol is None else tol
    sol = _excited_states(p, n_states, tol, energy_tol)
    return _fs_sum_from(sol, exhausted=False)


def _fs_sum_from(sol: GroundStateSolution, exhausted: bool) -> FSEstimate:
    p = sol.params
    e = sol.energies
    if len(e) < 2:
        raise DegenerateGap("no excited states available")
    if e[1] - e[0] < 1e-12:
        raise DegenerateGap(f"E1 - E0 = {e[1] - e[0]:.3e}")
    h1 = assemble_driving_extended(p, sol.basis)
    v = h1.matvec(sol.ground).ravel()
    c = sol.coefficients[1:].reshape(len(e) - 1, -1)
    amp = c @ v
    terms = amp**2 / (e[1:] - e[0]) ** 2
    total = float(terms.sum())
    tail = float(terms[-10:].sum()) / total if total > 0 else 0.0
    complete = exhausted or tail < 1e-8 or len(e) == sol.space_dim
    return FSEstimate(total, float(terms[-10:].sum()), p.n_atoms, complete, sol.n_tr,
                      {"n_terms": len(terms), "tail_fraction": tail})


def fs_sum_full_spectrum(p: ModelParams, n_tr: int, sector="ground") -> FSEstimate:
    """Spectral sum with every eigenpair of the (sector) matrix, by dense diagonalization."""
    sol = solve_fixed(p, n_tr, n_eig=10**9, sector=sector)
    return _fs_sum_from(sol, exhausted=True)


def fs_fock_full_spectrum(p: ModelParams, basis: FockBasis | None = None) -> float:
    """Spectral sum in the truncated Fock basis with all eigenpairs."""
    from .core import assemble_driving_fock
    basis = basis or FockBasis.default(p)
    h = assemble_hamiltonian_fock(p, basis).toarray()
    w, v = la.eigh(h)
    if w[1] - w[0] < 1e-12:
        raise DegenerateGap(f"E1 - E0 = {w[1] - w[0]:.3e}")
    h1 = assemble_driving_fock(p, basis).matrix
    amp = v[:, 1:].T @ (h1 @ v[:, 0])
    return float(np.sum(amp**2 / (w[1:] - w[0]) ** 2))


# --------------------------------------------------------------------------
# energy curvature

def energy_second_derivative(p: ModelParams, h: float | None = None, n_tr: int | None = None,
                             tol: float | None = None, energy_tol: float = 1e-12,
                             budget: float = 1e-6, v0=None) -> float:
    """d^2 e0/dlam^2 by central differences at h and h/2, Richardson-combined.

    h defaults to CURVATURE_STEP * sqrt(omega*omega0).
    All five energies share one truncation so truncation error is smooth in
    lam. E0 is even in lam, which covers points below zero.
    """
    return second_derivative_with_state(p, h, n_tr, tol, energy_tol, budget, v0)[0]


def second_derivative_with_state(p: ModelParams, h: float | None = None, n_tr: int | None = None,
                                 tol: float | None = None, energy_tol: float = 1e-12,
                                 budget: float = 1e-6, v0=None):
    """As :func:`energy_second_derivative`; also returns the ground table at lam."""
    if h is None:
        h = CURVATURE_STEP * p.coupling_scale
    if h <= 0:
        raise ValueError("h must be positive")
    tol = _fs_tol(p) if tol is None else tol
    if n_tr is None:
        sol, _ = ground_state(p, energy_tol=energy_tol, tol=tol, v0=v0)
        n_tr = sol.n_tr
    else:
        sol = solve_fixed(p, n_tr, tol=tol, v0=v0)
    n = p.n_atoms
    e = {0.0: sol.e0 / n}
    for s in (-h, -h / 2, h / 2, h):
        e[s] = solve_fixed(p.with_lam(abs(p.lam + s)), n_tr, tol=tol, v0=sol.ground).e0 / n
    noise = 64 * np.finfo(float).eps * max(abs(x) for x in e.values())
    if 16 * noise / (h / 2) ** 2 > budget * max(1.0, abs(e[0.0])):
        raise StepTooSmall(f"h={h} amplifies energy rounding ({noise:.2e}) beyond budget")
    d1 = (e[h] - 2 * e[0.0] + e[-h]) / h**2
    d2 = (e[h / 2] - 2 * e[0.0] + e[-h / 2]) / (h / 2) ** 2
    return (4 * d2 - d1) / 3, sol


# --------------------------------------------------------------------------
# Fock-oracle parity

@dataclass
class ParityResult:
    parity: float
    gap: float
    degenerate: bool
    parities: tuple = ()


def gs_parity_fock(p: ModelParams, m_tr: int | None = None) -> ParityResult:
    """<Psi0|Pi|Psi0> from the truncated Fock oracle (full space).

    When E1 - E0 < 1e-10 the flag ``degenerate`` is set and the parities of
    both states are reported, since the doublet may mix.
    """
    basis = FockBasis(p.n_atoms, m_tr) if m_tr else FockBasis.default(p)
    res = fock_lowest(p, basis, 2)
    pi = parity_matrix_fock(p, basis)
    vals = tuple(pi.expectation(res.eigenvectors[:, i]) for i in range(2))
    gap = float(res.eigenvalues[1] - res.eigenvalues[0])
    return ParityResult(vals[0], gap, gap < 1e-10, vals)


# --------------------------------------------------------------------------
# wavefunction in the x-y representation

def hermite_functions(n_max: int, x: np.ndarray) -> np.ndarray:
    """Oscillator eigenfunctions phi_0..phi_{n_max}(x), shape (n_max+1, len(x)).

    Upward three-term recurrence carried with a running log-scale so that
    large orders at large |x| neither underflow nor overflow.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros((n_max + 1,) + x.shape)
    logscale = -0.5 * x * x
    prev = np.zeros_like(x)
    cur = np.full_like(x, np.pi**-0.25)
    out[0] = cur * np.exp(logscale)
    for n in range(n_max):
        nxt = math.sqrt(2 / (n + 1)) * x * cur - math.sqrt(n / (n + 1)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > 1e100
        if np.any(big):
            cur = np.where(big, cur * 1e-100, cur)
            prev = np.where(big, prev * 1e-100, prev)
            logscale = np.where(big, logscale + 100 * math.log(10), logscale)
        with np.errstate(under="ignore"):
            out[n + 1] = cur * np.exp(logscale)
    return out


def spin_rotation(n_atoms: int) -> np.ndarray:
    """Matrix U whose column mu is the J_x eigenvector with eigenvalue mu (J_z basis).

    Signs are fixed so that U^T J_z U has positive off-diagonal elements,
    i.e. U maps rotated-frame spin amplitudes back to the original frame.
    """
    lad = spin_ladder(n_atoms)
    w, u = la.eigh_tridiagonal(np.zeros(n_atoms + 1), lad)
    jz = np.arange(n_atoms + 1) - n_atoms / 2
    for i in range(n_atoms):
        if u[:, i + 1] @ (jz * u[:, i]) < 0:
            u[:, i + 1] *= -1
    return u


@dataclass
class WavefunctionGrid:
    x_axis: np.ndarray
    y_axis: np.ndarray
    values: np.ndarray  # shape (len(y), len(x))
    norm_estimate: float
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        """gnuplot 'nonuniform matrix' text plus a JSON sidecar ``<path>.json``."""
        with open(path, "w") as fh:
            fh.write(" ".join([str(len(self.x_axis))] + [f"{x:.10g}" for x in self.x_axis]) + "\n")
            for y, row in zip(self.y_axis, self.values):
                fh.write(" ".join([f"{y:.10g}"] + [f"{v:.10e}" for v in row]) + "\n")
        with open(str(path) + ".json", "w") as fh:
            json.dump({**self.meta, "norm_estimate": self.norm_estimate,
                       "nx": len(self.x_axis), "ny": len(self.y_axis)}, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "WavefunctionGrid":
        data = np.loadtxt(path)
        meta = {}
        try:
            with open(str(path) + ".json") as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            pass
        x, y, v = data[0, 1:], data[1:, 0], data[1:, 1:]
        return cls(x, y, v, meta.pop("norm_estimate", float("nan")), meta)


def spin_z_mean(sol: GroundStateSolution) -> float:
    """<J_z> in the original frame, i.e. <J_x> over the rotated-frame table."""
    c, basis = sol.ground, sol.basis
    o = displaced_overlap_stack(np.diff(basis.displacements), basis.n_tr)
    hop = np.einsum("ik,ikl,il->i", c[1:], o, c[:-1])
    return float(2 * np.dot(spin_ladder(basis.n_atoms), hop))


def auto_ranges(sol: GroundStateSolution, margin: float = 3.0):
    """Symmetric (x_range, y_range) covering the state.

    x: displacement support of the mu blocks carrying weight plus the extent
    of the highest occupied displaced level. y: turning point of the
    Holstein-Primakoff level j + <J_z> padded by a few standard deviations.
    """
    c, basis = sol.ground, sol.basis
    w_mu = np.sum(c * c, axis=1)
    live = w_mu > 1e-10 * w_mu.max()
    w_k = np.sum(c * c, axis=0)
    k_top = int(np.nonzero(w_k > 1e-10 * w_k.max())[0].max())
    x_max = math.sqrt(2) * np.abs(basis.displacements[live]).max() + math.sqrt(2 * k_top + 1) + margin
    n_mean = max(basis.n_atoms / 2 + spin_z_mean(sol), 0.0)
    n_top = min(n_mean + 5 * math.sqrt(n_mean + 1), basis.n_atoms)
    y_max = math.sqrt(2 * n_top + 1) + margin
    return (-x_max, x_max), (-y_max, y_max)


def wavefunction_grid(sol: GroundStateSolution, x_range=None, y_range=None,
                      resolution=201, check: bool = True) -> WavefunctionGrid:
    """Ground state Psi(x, y) with x = (a + a^+)/sqrt(2) and y the spin oscillator.

    The spin is mapped back to the original J_z basis and |j, m> is
    represented by the oscillator level j + m (Holstein-Primakoff picture).
    The photon displacement is kept, so the grid shows the raw state.
    A range given as None is chosen by :func:`auto_ranges`.
    """
    p, basis = sol.params, sol.basis
    if x_range is None or y_range is None:
        ax, ay = auto_ranges(sol)
        x_range = ax if x_range is None else x_range
        y_range = ay if y_range is None else y_range
    if np.isscalar(resolution):
        nx = ny = int(resolution)
    else:
        nx, ny = map(int, resolution)
    x = np.linspace(*x_range, nx)
    y = np.linspace(*y_range, ny)
    c = sol.ground
    # B[mu, x] = sum_k C[mu, k] phi_k(x + sqrt(2) g_mu)
    b = np.empty((basis.n_mu, nx))
    shifted = x[None, :] + math.sqrt(2) * basis.displacements[:, None]
    phi = hermite_functions(basis.n_tr, shifted)  # (n_k, n_mu, nx)
    b = np.einsum("mk,kmx->mx", c, phi)
    u = spin_rotation(p.n_atoms)
    spin = u @ b  # original J_z amplitudes, rows m = -j..j
    hy = hermite_functions(p.n_atoms, y)  # rows j + m
    psi = hy.T @ spin  # (ny, nx)
    dx = x[1] - x[0] if nx > 1 else 1.0
    dy = y[1] - y[0] if ny > 1 else 1.0
    norm = float(np.sum(psi**2) * dx * dy)
    # the same sum on every other node; a resolved grid gives the same value
    half = float(np.sum(psi[::2, ::2] ** 2) * 4 * dx * dy)
    grid = WavefunctionGrid(x, y, psi, norm, {
        "n_atoms": p.n_atoms, "omega": p.omega, "omega0": p.omega0, "lambda": p.lam,
        "n_tr": basis.n_tr, "x_range": list(x_range), "y_range": list(y_range),
        "norm_half_resolution": half})
    if check and (abs(norm - 1) > 0.05 or abs(half - norm) > 0.05):
        raise GridTooCoarse(
            f"grid norm {norm:.4f} (half resolution {half:.4f}) is off by more than 5%; "
            f"widen the ranges or increase the resolution (currently {nx}x{ny})")
    return grid


def grid_peaks(grid: WavefunctionGrid, rel_threshold: float = 0.1,
               prominence: float = 0.05) -> list[tuple[float, float]]:
    """Distinct local maxima of |Psi| above rel_threshold of the global maximum.

    A maximum of height h counts only if every path to a higher accepted
    maximum dips below (1 - prominence) h, so ripples on a flat ridge are
    not reported as separate peaks. Returned as (x, y), highest first.
    """
    a = np.abs(grid.values)
    local = ndimage.maximum_filter(a, size=3, mode="constant", cval=-1.0) == a
    iy, ix = np.nonzero(local & (a >= rel_threshold * a.max()))
    accepted: list[tuple[int, int]] = []
    for i in np.argsort(-a[iy, ix], kind="stable"):
        cand = (iy[i], ix[i])
        if accepted:
            labels, _ = ndimage.label(a >= (1 - prominence) * a[cand])
            if any(labels[q] == labels[cand] for q in accepted):
                continue
        accepted.append(cand)
    return [(float(grid.x_axis[c[1]]), float(grid.y_axis[c[0]])) for c in accepted]


def peak_stretch(grid: WavefunctionGrid, half_width: int = 2) -> tuple[float, float]:
    """Soft-axis angle and curvature ratio of log|Psi| at its global maximum.

    A quadratic is fitted to log|Psi| on a (2w+1)^2 patch; the ratio is
    sqrt(kappa_hard / kappa_soft), which diverges where the packet flattens
    before splitting.
    """
    a = np.abs(grid.values)
    iy, ix = np.unravel_index(int(np.argmax(a)), a.shape)
    w = half_width
    ys = slice(max(iy - w, 0), min(iy + w + 1, a.shape[0]))
    xs = slice(max(ix - w, 0), min(ix + w + 1, a.shape[1]))
    dx, dy = np.meshgrid(grid.x_axis[xs] - grid.x_axis[ix], grid.y_axis[ys] - grid.y_axis[iy])
    with np.errstate(divide="ignore"):
        z = np.log(a[ys, xs]).ravel()
    dx, dy = dx.ravel(), dy.ravel()
    ok = np.isfinite(z)
    design = np.column_stack([np.ones_like(dx), dx, dy, dx * dx / 2, dx * dy, dy * dy / 2])[ok]
    coef, *_ = np.linalg.lstsq(design, z[ok], rcond=None)
    hess = np.array([[coef[3], coef[4]], [coef[4], coef[5]]])
    kap, vec = np.linalg.eigh(-hess)  # ascending curvature
    v = vec[:, 0]
    angle = _fold_angle(math.atan2(v[1], v[0]))
    if kap[0] <= 0:
        return angle, math.inf
    return angle, math.sqrt(kap[1] / kap[0])


def _fold_angle(angle: float) -> float:
    if angle <= -math.pi / 2:
        angle += math.pi
    elif angle > math.pi / 2:
        angle -= math.pi
    return angle


def stretch(grid: WavefunctionGrid) -> tuple[float, float]:
    """Principal-axis angle (radians, in (-pi/2, pi/2]) and axis ratio of |Psi|^2."""
    w = grid.values**2
    xx, yy = np.meshgrid(grid.x_axis, grid.y_axis)
    tot = w.sum()
    mx, my = (w * xx).sum() / tot, (w * yy).sum() / tot
    cxx = (w * (xx - mx) ** 2).sum() / tot
    cyy = (w * (yy - my) ** 2).sum() / tot
    cxy = (w * (xx - mx) * (yy - my)).sum() / tot
    evals, evecs = np.linalg.eigh(np.array([[cxx, cxy], [cxy, cyy]]))
    v = evecs[:, 1]
    return _fold_angle(math.atan2(v[1], v[0])), math.sqrt(evals[1] / evals[0])
