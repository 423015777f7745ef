"""Lanczos eigensolver and the truncation-convergence loop.

The Lanczos iteration keeps every basis vector and reorthogonalizes each new
direction against all of them (classical Gram-Schmidt, repeated when needed). When
the basis reaches ``max_basis`` vectors it is thick-restarted from the
lowest Ritz vectors, which keeps memory bounded for large problems.

Results are deterministic for a fixed seed and a fixed BLAS thread count;
all reductions go through numpy/BLAS in a fixed order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .core import (
    ExtendedBasis,
    FockBasis,
    ModelParams,
    assemble_hamiltonian_extended,
    assemble_hamiltonian_fock,
    check_fock_truncation,
    ground_sector,
    parity_embedding,
)

log = logging.getLogger(__name__)

N_TR_START = 20
N_TR_CEILING = 300


class NoConvergence(RuntimeError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


class DimensionTooSmall(ValueError):
    pass


class TruncationCeiling(RuntimeError):
    pass


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    residual_norms: np.ndarray
    iterations: int


def _as_matvec(h):
    if hasattr(h, "matvec"):
        return h.matvec, h.dim
    if sp.issparse(h) or isinstance(h, np.ndarray):
        return (lambda v: h @ v), h.shape[0]
    raise TypeError(f"cannot apply {type(h).__name__}")


def _orthogonalize(V, k, w):
    """Project w out of span(V[:, :k]); returns (w, coefficients).

    The two newest directions are removed first (the three-term recurrence),
    then one classical Gram-Schmidt pass over all k vectors. A further pass
    runs only when that pass shrank w noticeably (Kahan-Parlett test).
    """
    coef = np.zeros(k)
    lo = max(k - 2, 0)
    c = V[:, lo:k].T @ w
    w = w - V[:, lo:k] @ c
    coef[lo:k] += c
    Q = V[:, :k]
    for _ in range(3):
        before = np.linalg.norm(w)
        c = Q.T @ w
        w = w - Q @ c
        coef += c
        if np.linalg.norm(w) >= 0.7 * before:
            break
    return w, coef


def lanczos_lowest(h, n_eig: int = 1, tol: float = 1e-9, max_iter: int = 20000,
                   seed: int = 0, v0: np.ndarray | None = None,
                   max_basis: int | None = None) -> EigenResult:
    """Lowest ``n_eig`` eigenpairs of a real symmetric operator.

    ``h`` is anything with ``matvec``/``dim`` or a (sparse) matrix.
    Convergence requires ||H v - theta v|| <= tol for every requested pair;
    the returned residuals are recomputed from the Ritz vectors.
    ``v0`` overrides the seeded random start vector (warm start).
    """
    matvec, dim = _as_matvec(h)
    if n_eig < 1:
        raise ValueError("n_eig must be >= 1")
    if n_eig >= dim:
        raise DimensionTooSmall(f"n_eig={n_eig} >= dim={dim}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_basis is None:
        max_basis = max(3 * n_eig + 20, 45)
    max_basis = min(max_basis, dim)
    keep = min(max(n_eig + (max_basis - n_eig) // 3, n_eig + 1), max_basis - 1)

    rng = np.random.default_rng(seed)
    if v0 is None:
        # one matvec tilts the random start toward the spectral extremes
        v = rng.standard_normal(dim)
        v = matvec(v / np.linalg.norm(v))
    else:
        v = np.array(v0, dtype=float).ravel()
        if v.size != dim:
            raise ValueError("start vector has wrong size")
    v = v / np.linalg.norm(v)

    V = np.empty((dim, max_basis + 1))
    T = np.zeros((max_basis, max_basis))
    V[:, 0] = v
    k = 0  # number of vectors whose projections are complete
    iterations = 0
    while True:
        w = matvec(V[:, k])
        iterations += 1
        w, c = _orthogonalize(V, k + 1, w)
        T[:k + 1, k] = c
        T[k, :k + 1] = c
        beta = np.linalg.norm(w)
        k += 1
        theta, y = la.eigh(T[:k, :k])
        m = min(n_eig, k)
        est = np.abs(beta * y[k - 1, :m])
        done = k >= n_eig and (np.all(est <= 0.5 * tol) or k == dim)
        if done or iterations >= max_iter:
            X = V[:, :k] @ y[:, :m]
            res = np.array([np.linalg.norm(matvec(X[:, i]) - theta[i] * X[:, i]) for i in range(m)])
            if done and np.all(res <= tol) or k == dim:
                return EigenResult(theta[:m].copy(), X, res, iterations)
            if iterations >= max_iter:
                raise NoConvergence(
                    f"Lanczos did not converge in {max_iter} iterations (residuals {res})",
                    EigenResult(theta[:m].copy(), X, res, iterations))
            # estimates were optimistic; keep iterating
        if beta < 1e-14 * max(1.0, abs(theta).max()):
            # invariant subspace: continue with a fresh direction
            w, _ = _orthogonalize(V, k, rng.standard_normal(dim))
            beta = 0.0
            w /= np.linalg.norm(w)
        else:
            w /= beta
        if k == max_basis:
            # thick restart on the lowest Ritz vectors; T becomes arrowhead
            V[:, :keep] = V[:, :k] @ y[:, :keep]
            T[:] = 0
            T[np.arange(keep), np.arange(keep)] = theta[:keep]
            k = keep
            w, _ = _orthogonalize(V, k, w)
            w /= np.linalg.norm(w)
        V[:, k] = w


def dense_lowest(h, n_eig: int) -> EigenResult:
    """Dense reference diagonalization; for small dimensions and oracles."""
    a = h.toarray() if hasattr(h, "toarray") else np.asarray(h)
    w, v = la.eigh(a)
    n = min(n_eig, len(w))
    r = np.linalg.norm(a @ v[:, :n] - v[:, :n] * w[:n], axis=0)
    return EigenResult(w[:n], v[:, :n], r, 0)


def fock_lowest(p: ModelParams, basis: FockBasis | None = None, n_eig: int = 1,
                tol: float | None = None, dense_limit: int = 4000) -> EigenResult:
    """Lowest eigenpairs of the truncated-Fock oracle, with the truncation check."""
    basis = basis or FockBasis.default(p)
    h = assemble_hamiltonian_fock(p, basis)
    if basis.dim <= dense_limit:
        res = dense_lowest(h, n_eig)
    else:
        res = lanczos_lowest(h, n_eig, tol=tol or default_tol(p))
    check_fock_truncation(res.eigenvectors[:, 0], basis)
    return res


# --------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    n_tr_sequence: list = field(default_factory=list)
    e0_sequence: list = field(default_factory=list)
    converged: bool = False
    final_n_tr: int = 0


@dataclass
class GroundStateSolution:
    """Eigenpairs of the extended-basis Hamiltonian.

    ``coefficients[n]`` is the (N+1, n_tr+1) table C_{mu,k} of eigenstate n.
    """

    params: ModelParams
    basis: ExtendedBasis
    energies: np.ndarray
    coefficients: np.ndarray
    residual_norms: np.ndarray
    sector: int | None
    iterations: int = 0
    space_dim: int = 0

    @property
    def e0(self) -> float:
        return float(self.energies[0])

    @property
    def ground(self) -> np.ndarray:
        return self.coefficients[0]

    @property
    def n_tr(self) -> int:
        return self.basis.n_tr


class SectorOperator:
    """H restricted to a parity eigenspace through an isometry E: E^T H E."""

    def __init__(self, op, embedding):
        self.op = op
        self.embedding = embedding
        self.embedding_t = embedding.T.tocsr()

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    def matvec(self, x):
        return self.embedding_t @ self.op.matvec(self.embedding @ x)

    def toarray(self):
        e = self.embedding
        return (self.embedding_t @ self.op.tocsr() @ e).toarray()


def default_tol(p: ModelParams) -> float:
    """Residual tolerance scaled with the spectral width ~ omega0 * N."""
    return 1e-11 * max(1.0, p.omega0 * p.n_atoms, p.omega)


DENSE_LIMIT = 600


def solve_fixed(p: ModelParams, n_tr: int, n_eig: int = 1, sector: int | None | str = "ground",
                tol: float | None = None, seed: int = 0, v0: np.ndarray | None = None,
                max_iter: int = 20000) -> GroundStateSolution:
    """Lowest eigenpairs at fixed truncation.

    ``sector`` is ``"ground"`` (parity sector holding the ground state),
    +1/-1, or None for the full space. ``v0`` is a coefficient table used
    as warm start (resized when n_tr differs).
    """
    basis = ExtendedBasis.build(p, n_tr)
    h = assemble_hamiltonian_extended(p, basis)
    if sector == "ground":
        sector = ground_sector(p.n_atoms)
    if sector is None:
        op, emb = h, None
    else:
        emb = parity_embedding(basis, sector)
        op = SectorOperator(h, emb)
    if tol is None:
        tol = default_tol(p)
    start = None
    if v0 is not None:
        full = _resize_table(np.asarray(v0), basis.n_k).ravel()
        start = full if emb is None else emb.T @ full
        if np.linalg.norm(start) < 1e-8:
            start = None
    if op.dim <= DENSE_LIMIT or n_eig >= op.dim - 1:
        res = dense_lowest(op, n_eig)
    else:
        res = lanczos_lowest(op, n_eig, tol=tol, max_iter=max_iter, seed=seed, v0=start)
    vecs = res.eigenvectors if emb is None else emb @ res.eigenvectors
    coeffs = vecs.T.reshape(-1, basis.n_mu, basis.n_k)
    for c in coeffs:
        _fix_sign(c)
    return GroundStateSolution(p, basis, res.eigenvalues, coeffs, res.residual_norms,
                               sector, res.iterations, op.dim)


def _resize_table(c: np.ndarray, n_k: int) -> np.ndarray:
    out = np.zeros((c.shape[0], n_k))
    m = min(n_k, c.shape[1])
    out[:, :m] = c[:, :m]
    return out


def _fix_sign(c: np.ndarray) -> None:
    """Make the largest-magnitude coefficient positive (in place)."""
    flat = c.ravel()
    i = int(np.argmax(np.abs(flat)))
    if flat[i] < 0:
        flat *= -1


def truncation_schedule(start: int = N_TR_START):
    n = start
    while True:
        yield n
        n = int(round(n * 1.5))


def ground_state(p: ModelParams, energy_tol: float = 1e-10, n_eig: int = 1,
                 sector: int | None | str = "ground", tol: float | None = None,
                 seed: int = 0, n_tr_start: int = N_TR_START,
                 n_tr_ceiling: int = N_TR_CEILING, v0=None
                 ) -> tuple[GroundStateSolution, ConvergenceReport]:
    """Solve with growing n_tr (x1.5) until E0/N changes by less than energy_tol."""
    if energy_tol <= 0:
        raise ValueError("energy_tol must be positive")
    report = ConvergenceReport()
    prev = None
    start = v0
    for n_tr in truncation_schedule(n_tr_start):
        if n_tr > n_tr_ceiling:
            raise TruncationCeiling(
                f"no convergence below n_tr={n_tr_ceiling}: {report.e0_sequence}")
        sol = solve_fixed(p, n_tr, n_eig=n_eig, sector=sector, tol=tol, seed=seed, v0=start)
        e = sol.e0 / p.n_atoms
        report.n_tr_sequence.append(n_tr)
        report.e0_sequence.append(sol.e0)
        log.debug("N=%d lam=%.6g n_tr=%d e0=%.15g", p.n_atoms, p.lam, n_tr, e)
        if prev is not None and abs(e - prev) < energy_tol:
            report.converged = True
            report.final_n_tr = n_tr
            return sol, report
        prev = e
        start = sol.ground
