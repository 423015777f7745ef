"""Dicke model definition, working bases and operator assembly.

Two representations are provided:

* the extended coherent-state basis, where the spin is rotated so that the
  atom-field coupling is diagonal in the spin projection ``mu`` and the
  boson is expanded in Fock states of the displaced operator
  ``A = a + g_mu``;
* a plain truncated Fock basis in the original frame, used as an oracle.

Rotation convention: the spin is rotated about the y axis so that
``J_x -> J_z``. In the rotated frame

    H = omega a^+a + omega0 J_x + (2 lam / sqrt(N)) (a^+ + a) J_z

with the spin-ladder elements ``<mu+1|J_x|mu>`` taken positive. Spectra and
every observable used here are invariant under this rotation.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class TruncationError(ValueError):
    pass


class FockTruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the Dicke Hamiltonian.

    ``lam`` is the coupling in the same energy units as ``omega``. Use
    :meth:`reduced` to specify it in units where the critical point sits at
    0.5 for every ``D = omega0/omega``.
    """

    omega: float
    omega0: float
    lam: float
    n_atoms: int

    def __post_init__(self):
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not (self.omega0 > 0 and math.isfinite(self.omega0)):
            raise ValueError(f"omega0 must be positive, got {self.omega0}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be an integer >= 1, got {self.n_atoms}")
        object.__setattr__(self, "n_atoms", int(self.n_atoms))

    @classmethod
    def reduced(cls, d_ratio: float, lam_reduced: float, n_atoms: int,
                omega: float = 1.0) -> "ModelParams":
        """Build params with omega0 = D*omega and lam = lam_reduced * sqrt(omega*omega0).

        In these units the thermodynamic critical coupling is 0.5 for all D.
        """
        omega0 = d_ratio * omega
        return cls(omega, omega0, lam_reduced * math.sqrt(omega * omega0), n_atoms)

    @property
    def d_ratio(self) -> float:
        return self.omega0 / self.omega

    @property
    def j(self) -> float:
        return self.n_atoms / 2

    @property
    def coupling_scale(self) -> float:
        """d(lam)/d(lam_reduced); physical coupling per unit of reduced coupling."""
        return math.sqrt(self.omega * self.omega0)

    @property
    def lam_reduced(self) -> float:
        return self.lam / self.coupling_scale

    def with_lam(self, lam: float) -> "ModelParams":
        return ModelParams(self.omega, self.omega0, lam, self.n_atoms)


def critical_coupling(p: ModelParams) -> float:
    """Thermodynamic-limit critical coupling sqrt(omega*omega0)/2."""
    return math.sqrt(p.omega * p.omega0) / 2


def spin_projections(n_atoms: int) -> np.ndarray:
    """Projections -j, -j+1, ..., j as floats (half-integers for odd N)."""
    return np.arange(n_atoms + 1, dtype=float) - n_atoms / 2


def spin_ladder(n_atoms: int) -> np.ndarray:
    """<mu+1|J_x|mu> for mu = -j .. j-1 (length N)."""
    j = n_atoms / 2
    mu = spin_projections(n_atoms)[:-1]
    return 0.5 * np.sqrt(j * (j + 1) - mu * (mu + 1))


@dataclass(frozen=True)
class ExtendedBasis:
    """Product basis |mu> (x) |k>_A with A = a + g_mu.

    Flat index of (mu, k) is ``(mu + j) * (n_tr + 1) + k``.
    """

    n_atoms: int
    n_tr: int
    displacements: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, p: ModelParams, n_tr: int) -> "ExtendedBasis":
        if int(n_tr) != n_tr or n_tr < 0:
            raise TruncationError(f"n_tr must be a non-negative integer, got {n_tr}")
        g = 2 * p.lam * spin_projections(p.n_atoms) / (p.omega * math.sqrt(p.n_atoms))
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite displacement")
        g.setflags(write=False)
        return cls(p.n_atoms, int(n_tr), g)

    @property
    def n_mu(self) -> int:
        return self.n_atoms + 1

    @property
    def n_k(self) -> int:
        return self.n_tr + 1

    @property
    def dim(self) -> int:
        return self.n_mu * self.n_k

    @property
    def mu(self) -> np.ndarray:
        return spin_projections(self.n_atoms)

    @property
    def gap(self) -> float:
        """Uniform displacement step g_{mu+1} - g_mu."""
        if self.n_atoms == 0:
            return 0.0
        return float(self.displacements[1] - self.displacements[0])

    def index(self, mu: float, k: int) -> int:
        i = mu + self.n_atoms / 2
        if i != int(i) or not 0 <= i <= self.n_atoms or not 0 <= k <= self.n_tr:
            raise IndexError(f"({mu}, {k}) not in basis")
        return int(i) * self.n_k + k

    def entry(self, index: int) -> tuple[float, int]:
        i, k = divmod(index, self.n_k)
        if not 0 <= i < self.n_mu:
            raise IndexError(index)
        return i - self.n_atoms / 2, k

    def entries(self):
        return [(float(m), k) for m in self.mu for k in range(self.n_k)]


@dataclass(frozen=True)
class FockBasis:
    """Product basis |mu> (x) |n> in the original frame, n <= m_tr."""

    n_atoms: int
    m_tr: int

    @classmethod
    def default(cls, p: ModelParams) -> "FockBasis":
        m_tr = max(60, int(math.ceil(8 * p.n_atoms * p.lam**2 / p.omega**2 + 40)))
        return cls(p.n_atoms, m_tr)

    @property
    def n_mu(self) -> int:
        return self.n_atoms + 1

    @property
    def n_k(self) -> int:
        return self.m_tr + 1

    @property
    def dim(self) -> int:
        return self.n_mu * self.n_k

    def index(self, mu: float, n: int) -> int:
        i = mu + self.n_atoms / 2
        if i != int(i) or not 0 <= i <= self.n_atoms or not 0 <= n <= self.m_tr:
            raise IndexError(f"({mu}, {n}) not in basis")
        return int(i) * self.n_k + n

    def entries(self):
        mus = spin_projections(self.n_atoms)
        return [(float(m), n) for m in mus for n in range(self.n_k)]


# --------------------------------------------------------------------------
# displacement-operator matrix elements

def _displacement_recurrence(d: np.ndarray, n: int) -> np.ndarray:
    """<k|D(d)|l> for a batch of real d, shape (len(d), n, n).

    Each diagonal l - k = a is a normalized associated Laguerre sequence in k,
    seeded by the first row and advanced by its three-term recurrence; the
    lower triangle follows from <l+a|D|l> = (-1)^a <l|D|l+a>.
    """
    out = np.zeros((d.size, n, n))
    x = (d * d)[:, None]
    a = np.arange(n, dtype=float)
    with np.errstate(over="raise", invalid="raise"):
        seed = np.empty((d.size, n))
        seed[:, 0] = np.exp(-0.5 * d * d)
        for l in range(1, n):
            seed[:, l] = -d * seed[:, l - 1] / math.sqrt(l)
        prev, cur = np.zeros_like(seed), seed
        for k in range(n):
            m = n - k  # diagonals that still reach row k
            out[:, k, k:] = cur[:, :m]
            if k + 1 == n:
                break
            nxt = ((2 * k + 1 + a[:m] - x) * cur[:, :m]
                   - math.sqrt(k) * np.sqrt(k + a[:m]) * prev[:, :m]) \
                / (math.sqrt(k + 1) * np.sqrt(k + 1 + a[:m]))
            prev, cur = cur, nxt
    sign = np.where(np.subtract.outer(np.arange(n), np.arange(n)) % 2, -1.0, 1.0)
    lower = np.tril_indices(n, -1)
    out[:, lower[0], lower[1]] = (out.transpose(0, 2, 1) * sign)[:, lower[0], lower[1]]
    out[d == 0] = np.eye(n)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite displacement matrix element")
    return out


@functools.lru_cache(maxsize=256)
def _cached_overlap(d: float, n_tr: int) -> np.ndarray:
    out = _displacement_recurrence(np.array([d]), n_tr + 1)[0]
    out.setflags(write=False)
    return out


def displaced_overlap_matrix(d: float, n_tr: int) -> np.ndarray:
    """Matrix O[k, l] = <k|D(d)|l> of the displacement operator, real d.

    Built by a normalized Laguerre recurrence along each diagonal, seeded
    with exp(-d^2/2) so no factorials appear. The returned array
    is shared and read-only.
    """
    if n_tr < 0:
        raise TruncationError(f"n_tr must be >= 0, got {n_tr}")
    if not math.isfinite(d):
        raise ValueError("displacement must be finite")
    if 0.5 * d * d > 700:
        raise FloatingPointError(f"displacement {d} underflows the vacuum overlap")
    return _cached_overlap(float(d), int(n_tr))


def displaced_overlap_stack(ds, n_tr: int) -> np.ndarray:
    """Vectorized :func:`displaced_overlap_matrix` over many displacements."""
    ds = np.asarray(ds, dtype=float).ravel()
    if np.any(0.5 * ds * ds > 700):
        raise FloatingPointError("displacement underflows the vacuum overlap")
    return _displacement_recurrence(ds, n_tr + 1)


# --------------------------------------------------------------------------
# operators

@dataclass(frozen=True)
class SparseOperator:
    """Real symmetric operator stored as a scipy CSR matrix."""

    matrix: sp.csr_matrix = field(repr=False)
    basis_tag: str

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def tocsr(self) -> sp.csr_matrix:
        return self.matrix

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def expectation(self, v: np.ndarray) -> float:
        return float(v @ self.matvec(v))


@dataclass(frozen=True)
class MuBlockOperator:
    """Operator on the extended basis with |Delta mu| <= 1 block structure.

    Within a mu block the operator is tridiagonal in k (``diag``, ``offdiag``);
    neighbouring blocks mu+1 <- mu are coupled by ``ladder[i] * overlap`` and
    the transpose in the opposite direction. Because the displacement gap is
    uniform, a single ``overlap`` matrix serves every pair of blocks.

    Vectors are flat arrays of length dim or tables of shape (N+1, n_tr+1).
    """

    diag: np.ndarray = field(repr=False)
    offdiag: np.ndarray | None = field(repr=False, default=None)
    ladder: np.ndarray | None = field(repr=False, default=None)
    overlap: np.ndarray | None = field(repr=False, default=None)
    basis_tag: str = "extended"

    @property
    def shape2d(self) -> tuple[int, int]:
        return self.diag.shape

    @property
    def dim(self) -> int:
        return self.diag.size

    def matvec(self, v: np.ndarray) -> np.ndarray:
        x = np.reshape(v, self.diag.shape)
        y = self.diag * x
        if self.offdiag is not None:
            y[:, 1:] += self.offdiag * x[:, :-1]
            y[:, :-1] += self.offdiag * x[:, 1:]
        if self.ladder is not None and x.shape[0] > 1:
            c = self.ladder[:, None]
            y[1:] += c * (x[:-1] @ self.overlap.T)
            y[:-1] += c * (x[1:] @ self.overlap)
        return y.reshape(np.shape(v))

    def expectation(self, v: np.ndarray) -> float:
        return float(np.vdot(np.ravel(v), np.ravel(self.matvec(v))))

    def tocsr(self) -> sp.csr_matrix:
        n_mu, n_k = self.diag.shape
        blocks = [[None] * n_mu for _ in range(n_mu)]
        for i in range(n_mu):
            b = sp.diags(self.diag[i])
            if self.offdiag is not None:
                b = b + sp.diags([self.offdiag[i], self.offdiag[i]], [-1, 1])
            blocks[i][i] = b
            if self.ladder is not None and i + 1 < n_mu:
                blocks[i + 1][i] = sp.csr_matrix(self.ladder[i] * self.overlap)
                blocks[i][i + 1] = sp.csr_matrix(self.ladder[i] * self.overlap.T)
        return sp.bmat(blocks, format="csr")

    def toarray(self) -> np.ndarray:
        return self.tocsr().toarray()


def _check_basis(p: ModelParams, basis: ExtendedBasis):
    if basis.n_atoms != p.n_atoms:
        raise ValueError("basis was built for a different N")
    if basis.n_tr < 0:
        raise TruncationError("n_tr must be >= 0")
    if not np.all(np.isfinite(basis.displacements)):
        raise ValueError("non-finite displacement")


def _a_plus_adag_offdiag(n_mu: int, n_k: int) -> np.ndarray:
    return np.broadcast_to(np.sqrt(np.arange(1, n_k, dtype=float)), (n_mu, n_k - 1))


def assemble_hamiltonian_extended(p: ModelParams, basis: ExtendedBasis) -> MuBlockOperator:
    """Hamiltonian in the rotated frame over the extended coherent-state basis.

    Diagonal blocks: omega*(k - g_mu^2). Spin ladder: (omega0/2)
    sqrt(j(j+1) - mu(mu+1)) times <k|D(g_{mu+1} - g_mu)|l> between bra
    mu+1 and ket mu.
    """
    _check_basis(p, basis)
    g = basis.displacements
    k = np.arange(basis.n_k, dtype=float)
    diag = p.omega * (k[None, :] - (g * g)[:, None])
    ladder = p.omega0 * spin_ladder(p.n_atoms)
    overlap = displaced_overlap_matrix(basis.gap, basis.n_tr)
    return MuBlockOperator(diag, None, ladder, overlap, "extended")


def assemble_driving_extended(p: ModelParams, basis: ExtendedBasis) -> MuBlockOperator:
    """Driving term (2/sqrt(N)) (a^+ + a) J_z in the rotated frame, i.e. dH/dlam."""
    _check_basis(p, basis)
    g = basis.displacements
    mu = basis.mu
    pref = 2 * mu / math.sqrt(p.n_atoms)
    diag = np.broadcast_to((-2 * pref * g)[:, None], (basis.n_mu, basis.n_k)).copy()
    off = pref[:, None] * _a_plus_adag_offdiag(basis.n_mu, basis.n_k)
    return MuBlockOperator(diag, off, None, None, "extended")


def assemble_number_extended(p: ModelParams, basis: ExtendedBasis) -> MuBlockOperator:
    """Photon number a^+a with a = A - g_mu in each mu block."""
    _check_basis(p, basis)
    g = basis.displacements
    k = np.arange(basis.n_k, dtype=float)
    diag = k[None, :] + (g * g)[:, None]
    off = -g[:, None] * _a_plus_adag_offdiag(basis.n_mu, basis.n_k)
    return MuBlockOperator(diag, off, None, None, "extended")


def parity_extended(basis: ExtendedBasis, v: np.ndarray) -> np.ndarray:
    """Apply the rotated-frame parity |mu, k> -> (-1)^k |-mu, k> to a vector.

    Up to a global phase this is exp(i pi (J_z + N/2 + a^+a)) of the original
    frame; the ground state lies in the (-1)^N eigenspace.
    """
    x = np.reshape(v, (basis.n_mu, basis.n_k))
    sign = (-1.0) ** np.arange(basis.n_k)
    return (x[::-1] * sign).reshape(np.shape(v))


def ground_sector(n_atoms: int) -> int:
    """Parity eigenvalue of the ground state under :func:`parity_extended`."""
    return 1 if n_atoms % 2 == 0 else -1


def parity_embedding(basis: ExtendedBasis, sector: int) -> sp.csr_matrix:
    """Isometry E (dim x dim_sector) onto the parity eigenspace with eigenvalue ``sector``."""
    if sector not in (1, -1):
        raise ValueError("sector must be +1 or -1")
    n_mu, n_k = basis.n_mu, basis.n_k
    rows, cols, vals = [], [], []
    col = 0
    r = 1 / math.sqrt(2)
    for i in range((n_mu + 1) // 2):
        partner = n_mu - 1 - i
        for k in range(n_k):
            s = sector * (-1) ** k
            if partner == i:
                if s == 1:
                    rows.append(i * n_k + k); cols.append(col); vals.append(1.0)
                    col += 1
                continue
            rows += [i * n_k + k, partner * n_k + k]
            cols += [col, col]
            vals += [r, s * r]
            col += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, col))


# --------------------------------------------------------------------------
# Fock oracle

def _spin_ops(n_atoms: int):
    jz = sp.diags(spin_projections(n_atoms))
    lad = spin_ladder(n_atoms)
    jx = sp.diags([lad, lad], [-1, 1])
    return jz, jx


def _boson_ops(m_tr: int):
    n = sp.diags(np.arange(m_tr + 1, dtype=float))
    s = np.sqrt(np.arange(1, m_tr + 1, dtype=float))
    x = sp.diags([s, s], [-1, 1])
    return n, x


def _check_fock(p: ModelParams, basis: FockBasis):
    if basis.n_atoms != p.n_atoms:
        raise ValueError("basis was built for a different N")
    if basis.m_tr < 1:
        raise TruncationError("m_tr must be >= 1")


def assemble_hamiltonian_fock(p: ModelParams, basis: FockBasis) -> SparseOperator:
    """Original-frame Hamiltonian in the truncated Fock basis."""
    _check_fock(p, basis)
    jz, jx = _spin_ops(p.n_atoms)
    n, x = _boson_ops(basis.m_tr)
    ispin = sp.identity(basis.n_mu)
    iboson = sp.identity(basis.n_k)
    h = (p.omega * sp.kron(ispin, n) + p.omega0 * sp.kron(jz, iboson)
         + (2 * p.lam / math.sqrt(p.n_atoms)) * sp.kron(jx, x))
    return SparseOperator(h.tocsr(), "fock")


def assemble_driving_fock(p: ModelParams, basis: FockBasis) -> SparseOperator:
    _check_fock(p, basis)
    _, jx = _spin_ops(p.n_atoms)
    _, x = _boson_ops(basis.m_tr)
    return SparseOperator(((2 / math.sqrt(p.n_atoms)) * sp.kron(jx, x)).tocsr(), "fock")


def assemble_number_fock(p: ModelParams, basis: FockBasis) -> SparseOperator:
    _check_fock(p, basis)
    n, _ = _boson_ops(basis.m_tr)
    return SparseOperator(sp.kron(sp.identity(basis.n_mu), n).tocsr(), "fock")


def parity_matrix_fock(p: ModelParams, basis: FockBasis) -> SparseOperator:
    """Diagonal parity exp(i pi (J_z + N/2 + a^+a)) = (-1)^(mu + j + n)."""
    i = np.arange(basis.n_mu)[:, None]
    n = np.arange(basis.n_k)[None, :]
    d = np.where((i + n) % 2 == 0, 1.0, -1.0).ravel()
    return SparseOperator(sp.diags(d).tocsr(), "fock")


def fock_truncation_leak(v: np.ndarray, basis: FockBasis) -> float:
    """Weight of a state on the highest retained photon level."""
    x = np.reshape(v, (basis.n_mu, basis.n_k))
    return float(np.sum(x[:, -1] ** 2) / np.sum(x * x))


FOCK_LEAK_LIMIT = 1e-12


def check_fock_truncation(v: np.ndarray, basis: FockBasis) -> bool:
    """True if m_tr is adequate; warns with FockTruncationWarning otherwise."""
    leak = fock_truncation_leak(v, basis)
    if leak > FOCK_LEAK_LIMIT:
        warnings.warn(f"photon level m_tr={basis.m_tr} holds {leak:.2e} of the norm",
                      FockTruncationWarning, stacklevel=2)
        return False
    return True


# --------------------------------------------------------------------------
# debug serialization

def write_triples(op, path) -> None:
    """Write nonzeros as "row col value" lines, preceded by a "# dim basis" header."""
    m = op.tocsr().tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {m.shape[0]} {op.basis_tag}\n")
        for r, c, v in zip(m.row, m.col, m.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


def read_triples(path) -> SparseOperator:
    with open(path) as fh:
        header = fh.readline().split()
        dim, tag = int(header[1]), header[2]
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        m = sp.csr_matrix((dim, dim))
    else:
        m = sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                          shape=(dim, dim))
    return SparseOperator(m, tag)
