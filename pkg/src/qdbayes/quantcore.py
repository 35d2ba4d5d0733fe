"""Dense state and operator helpers shared by the rest of the package.

Everything here works on plain complex ``numpy`` arrays; there are no
wrapper classes.  Matrices are small (at most a few hundred rows), so
all operations are dense.
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np

HERMITIAN_REJECT_TOL = 1e-8

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def tensor(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Kronecker product of square matrices (or vectors) in listed order."""
    if len(factors) == 0:
        raise ValueError("tensor() needs at least one factor")
    mats = [np.asarray(f) for f in factors]
    for m in mats:
        if m.ndim == 2 and m.shape[0] != m.shape[1]:
            raise ValueError(f"tensor factors must be square, got shape {m.shape}")
    return reduce(np.kron, mats)


def _fix_phases(vecs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # first component above tol made real positive, column by column
    vecs = vecs.copy()
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        idx = np.flatnonzero(np.abs(col) > tol)
        if idx.size:
            c = col[idx[0]]
            vecs[:, k] = col * (abs(c) / c)
    return vecs


def symmetrize(H: np.ndarray) -> np.ndarray:
    """Return ``(H + H^dagger)/2`` after checking ``H`` is nearly Hermitian."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    asym = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if asym > HERMITIAN_REJECT_TOL * scale:
        raise ValueError(f"matrix is not Hermitian (asymmetry {asym:.3e})")
    return 0.5 * (H + H.conj().T)


def herm_eig(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix.

    Eigenvalues come back ascending; each eigenvector column has its first
    non-negligible component real and positive so results are reproducible.
    """
    Hs = symmetrize(H)
    vals, vecs = np.linalg.eigh(Hs)
    return vals, _fix_phases(vecs)


def is_hermitian(H: np.ndarray, tol: float = 1e-12) -> bool:
    H = np.asarray(H)
    return H.ndim == 2 and H.shape[0] == H.shape[1] and bool(
        np.max(np.abs(H - H.conj().T)) <= tol
    )


def normalize(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ValueError("cannot normalize the zero vector")
    return psi / nrm


def dm_from_pure(psi: np.ndarray) -> np.ndarray:
    """Projector ``|psi><psi|`` of a (re-normalized) state vector."""
    psi = normalize(psi)
    return np.outer(psi, psi.conj())


def check_density_matrix(rho: np.ndarray, tol: float = 1e-12, psd_tol: float = 1e-10) -> None:
    """Raise ``ValueError`` if ``rho`` is not a valid density matrix."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got {rho.shape}")
    asym = np.max(np.abs(rho - rho.conj().T))
    if asym > tol:
        raise ValueError(f"density matrix not Hermitian (asymmetry {asym:.3e})")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise ValueError(f"density matrix trace {tr!r} != 1")
    lmin = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lmin < -psd_tol:
        raise ValueError(f"density matrix has negative eigenvalue {lmin:.3e}")


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    rho = np.asarray(rho)
    sigma = np.asarray(sigma)
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    diff = rho - sigma
    ev = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return 0.5 * float(np.sum(np.abs(ev)))


def fidelity_pure(psi: np.ndarray, phi: np.ndarray) -> float:
    """``|<psi|phi>|^2`` for normalized vectors."""
    return float(abs(np.vdot(psi, phi)) ** 2)


def basis_state(bits: str) -> np.ndarray:
    """Computational basis ket for a bit string such as ``"01"``."""
    vec = np.zeros(2 ** len(bits), dtype=complex)
    vec[int(bits, 2)] = 1.0
    return vec


KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)
KET_PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)
KET_MINUS = np.array([1, -1], dtype=complex) / np.sqrt(2)
KET_PLUS_I = np.array([1, 1j], dtype=complex) / np.sqrt(2)
