"""Closed-form single-dot channel of the box model and its N-dot extension.

A single dot evolves as

    rho00 -> A rho00 + (1-A) rho11
    rho11 -> (1-A) rho00 + A rho11
    rho01 -> E rho01

with ``A = sum P_Km |X_Km|^2`` and ``E = sum P_Km X_Km X_K,m-1``.  Both
``X`` factors enter unconjugated: the electron-up amplitude of the
``(K,m)`` doublet is ``e^{i alpha t/4} X_Km`` and the conjugated
electron-down amplitude is ``e^{-i alpha t/4} X_K,m-1``, so the common
phases cancel.  This matches brute-force evolution of the full
Hamiltonian (see ``tests/test_boxchannel.py``).

For N identical independent dots the channel is diagonal in a
per-qubit "sum/difference" representation in which the population pair
``(rho00, rho11)`` is replaced by ``(rho00 + rho11, rho00 - rho11)``.  In
that representation each qubit contributes a factor from
``[[1, E], [conj(E), 2A-1]]`` and the N-dot map is an element-wise
product with the Kronecker power of that 2x2 table.  The dual map uses
the complex conjugate table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantcore import is_hermitian
from .spinbath import GAAS, BathSpec, omega_rad_ns


@dataclass(frozen=True)
class MixingData:
    K: float
    m: float
    chi: float
    sin_theta: float
    cos_theta: float
    e_m: float
    m_km: float
    e_plus: float


@dataclass(frozen=True)
class ChannelCoeffs:
    A: float
    E: complex
    B: float = float("nan")
    t: float = float("nan")

    def __post_init__(self):
        if not (-1e-12 <= self.A <= 1 + 1e-12):
            raise ValueError(f"A={self.A!r} outside [0, 1]")
        if abs(self.E) > self.A + 1e-10:
            raise ValueError(f"|E|={abs(self.E)!r} exceeds A={self.A!r}")


IDENTITY = ChannelCoeffs(1.0, 1.0 + 0j)


def _mixing_arrays(K, m, Omega, alpha):
    """Vectorized ``(D/chi, (M/chi)^2, chi)`` for the 2x2 doublet blocks.

    ``D = (E_m + E_{m+1})/2`` is the signed half-splitting of the diagonal,
    so ``cos^2 theta = (1 + D/chi)/2`` and ``sin^2 theta = (1 - D/chi)/2``.
    In the uncoupled boundary blocks (``M = 0``) this reduces to a pure
    phase whose sign follows ``D``.
    """
    K = np.asarray(K, dtype=float)
    m = np.asarray(m, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    two_m1 = 2.0 * m + 1.0
    D = 0.5 * Omega + 0.25 * alpha * two_m1
    M2 = 0.25 * alpha**2 * np.maximum(K * (K + 1.0) - m * (m + 1.0), 0.0)
    chi2 = 0.25 * (Omega**2 + Omega * alpha * two_m1 + 0.25 * alpha**2 + alpha**2 * K * (K + 1.0))
    chi = np.sqrt(np.maximum(chi2, 0.0))
    safe = chi > 0
    inv = np.where(safe, 1.0 / np.where(safe, chi, 1.0), 0.0)
    ratio_d = np.clip(D * inv, -1.0, 1.0)
    ratio_m2 = np.clip(M2 * inv**2, 0.0, 1.0)
    return ratio_d, ratio_m2, chi


def mixing(K: float, m: float, Omega: float, alpha: float) -> MixingData:
    """Mixing angle and splitting of the ``(|0,m>, |1,m+1>)`` doublet."""
    if K < 0 or alpha <= 0:
        raise ValueError("need K >= 0 and alpha > 0")
    steps = m + K + 1
    if abs(steps - round(steps)) > 1e-9 or not (-K - 1 - 1e-9 <= m <= K + 1e-9):
        raise ValueError(f"m={m} outside -K-1..K for K={K}")
    e_m = 0.5 * (Omega + alpha * m)
    e_m1 = 0.5 * (Omega + alpha * (m + 1))
    m_km = 0.5 * alpha * np.sqrt(max(K * (K + 1) - m * (m + 1), 0.0))
    e_plus = -alpha / 4 + 0.5 * np.sqrt((e_m + e_m1) ** 2 + 4 * m_km**2)
    ratio_d, _, chi = _mixing_arrays(K, m, Omega, alpha)
    cos2 = 0.5 * (1.0 + float(ratio_d))
    sin2 = 0.5 * (1.0 - float(ratio_d))
    if m_km == 0:
        # uncoupled boundary block: the angle is exactly 0 or pi/2
        sin2 = 0.0 if ratio_d >= 0 else 1.0
        cos2 = 1.0 - sin2
    return MixingData(K=float(K), m=float(m), chi=float(chi), sin_theta=float(np.sqrt(sin2)),
                      cos_theta=float(np.sqrt(cos2)), e_m=float(e_m), m_km=float(m_km),
                      e_plus=float(e_plus))


def _x_from_mixing(ratio_d, chi, t):
    # cos^2 e^{-i chi t} + sin^2 e^{+i chi t}, written so X(t=0) == 1 exactly
    phase = chi * t
    return np.cos(phase) - 1j * ratio_d * np.sin(phase)


def amplitude_X(K, m, B, t, alpha, g: float = GAAS.g_factor):
    """``X_Km(t) = cos^2(theta) e^{-i chi t} + sin^2(theta) e^{+i chi t}``."""
    ratio_d, _, chi = _mixing_arrays(K, m, omega_rad_ns(B, g), alpha)
    return _x_from_mixing(ratio_d, chi, np.asarray(t, dtype=float))


def channel_arrays(bath: BathSpec, B, t, g: float = GAAS.g_factor) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``(A, E)`` over broadcastable arrays of field (T) and time (ns).

    ``A`` is accumulated over ``m <-> -m-1`` pairs so that ``A(B) == A(-B)``
    holds bit for bit.
    """
    B = np.asarray(B, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(B.shape, t.shape)
    Om = np.broadcast_to(omega_rad_ns(B, g), shape)[..., None]
    tt = np.broadcast_to(t, shape)[..., None]
    a = bath.alpha
    P = bath.P
    p_total = np.sum(P)

    rd0, rm0, chi0 = _mixing_arrays(bath.K, bath.m, Om, a)
    rd1, _, chi1 = _mixing_arrays(bath.K, bath.m - 1.0, Om, a)
    x0 = _x_from_mixing(rd0, chi0, tt)
    x1 = _x_from_mixing(rd1, chi1, tt)
    E = np.sum(P * x0 * x1, axis=-1) / p_total

    loss = P * rm0 * np.sin(chi0 * tt) ** 2
    loss = np.concatenate([loss, np.zeros(shape + (1,))], axis=-1)
    lo, hi = bath.mirror_pairs
    pair = loss[..., lo] + loss[..., hi]
    A = 1.0 - np.sum(pair, axis=-1) / p_total
    return A, E


def coefficients_AE(bath: BathSpec, B: float, t: float, g: float = GAAS.g_factor) -> ChannelCoeffs:
    A, E = channel_arrays(bath, B, t, g)
    return ChannelCoeffs(A=float(A), E=complex(E), B=float(B), t=float(t))


# --- Kraus form ---------------------------------------------------------------

def kraus_set(c: ChannelCoeffs) -> list[np.ndarray]:
    A, E = float(c.A), complex(c.E)
    absE = abs(E)
    if absE > A + 1e-10:
        raise ValueError(f"|E|={absE!r} > A={A!r}: not a valid channel")
    phase = absE / E.conjugate() if absE > 0 else 1.0
    k1 = np.sqrt(max(1 - A, 0.0)) * np.array([[0, 1], [0, 0]], dtype=complex)
    k2 = np.sqrt(max(1 - A, 0.0)) * np.array([[0, 0], [1, 0]], dtype=complex)
    k3 = np.sqrt(0.5 * (A + absE)) * np.array([[phase, 0], [0, 1]], dtype=complex)
    k4 = np.sqrt(0.5 * max(A - absE, 0.0)) * np.array([[-phase, 0], [0, 1]], dtype=complex)
    return [k1, k2, k3, k4]


def kraus_completeness(kraus: list[np.ndarray]) -> np.ndarray:
    return sum(k.conj().T @ k for k in kraus)


def apply_kraus(rho: np.ndarray, kraus: list[np.ndarray]) -> np.ndarray:
    return sum(k @ rho @ k.conj().T for k in kraus)


def choi_matrix(c: ChannelCoeffs) -> np.ndarray:
    out = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for j in range(2):
            eij = np.zeros((2, 2), dtype=complex)
            eij[i, j] = 1.0
            out += np.kron(eij, apply_single(eij, c))
    return out


# --- affine application ----------------------------------------------------------

def apply_single(rho: np.ndarray, c: ChannelCoeffs) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError("apply_single expects a 2x2 matrix")
    A, E = c.A, c.E
    out = np.empty((2, 2), dtype=complex)
    out[0, 0] = A * rho[0, 0] + (1 - A) * rho[1, 1]
    out[1, 1] = (1 - A) * rho[0, 0] + A * rho[1, 1]
    out[0, 1] = E * rho[0, 1]
    out[1, 0] = np.conj(E) * rho[1, 0]
    return out


def n_qubits(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 2 or 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def to_sum_diff(X: np.ndarray) -> np.ndarray:
    """Replace each qubit's population pair by its sum and difference.

    Works on a single ``2^N x 2^N`` matrix or a stack of them.
    """
    return _sum_diff(X, 1.0)


def from_sum_diff(Y: np.ndarray) -> np.ndarray:
    return _sum_diff(Y, 0.5)


def _sum_diff(X: np.ndarray, scale: float) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    N = n_qubits(X.shape[-1])
    b = X.ndim - 2
    T = X.reshape(X.shape[:-2] + (2,) * (2 * N)).copy()
    for k in range(N):
        v = np.moveaxis(T, (b + k, b + N + k), (0, 1))
        a = scale * (v[0, 0] + v[1, 1])
        d = scale * (v[0, 0] - v[1, 1])
        v[0, 0] = a
        v[1, 1] = d
    return T.reshape(X.shape)


def single_factor(A, E) -> np.ndarray:
    """Per-qubit multiplier table ``[[1, E], [conj(E), 2A-1]]`` (batched)."""
    A = np.asarray(A, dtype=float)
    E = np.asarray(E, dtype=complex)
    f = np.empty(A.shape + (2, 2), dtype=complex)
    f[..., 0, 0] = 1.0
    f[..., 0, 1] = E
    f[..., 1, 0] = np.conj(E)
    f[..., 1, 1] = 2 * A - 1
    return f


def factor_tensor(A, E, N: int) -> np.ndarray:
    """N-th Kronecker power of :func:`single_factor`, batched over leading axes."""
    f = single_factor(A, E)
    out = f
    for _ in range(N - 1):
        out = np.einsum("...ij,...kl->...ikjl", out, f).reshape(
            f.shape[:-2] + (out.shape[-2] * 2, out.shape[-1] * 2))
    return out


def apply_n_dots(rho: np.ndarray, c: ChannelCoeffs) -> np.ndarray:
    """Identical independent channel on every dot of a ``2^N`` density matrix."""
    rho = np.asarray(rho, dtype=complex)
    N = n_qubits(rho.shape[0])
    return from_sum_diff(factor_tensor(c.A, c.E, N) * to_sum_diff(rho))


def dual_apply_n_dots(X: np.ndarray, c: ChannelCoeffs) -> np.ndarray:
    """Heisenberg-picture (dual) map; ``tr(L(rho) X) == tr(rho L*(X))``."""
    X = np.asarray(X, dtype=complex)
    N = n_qubits(X.shape[0])
    return from_sum_diff(np.conj(factor_tensor(c.A, c.E, N)) * to_sum_diff(X))


def check_hermitian_output(X: np.ndarray, tol: float = 1e-12) -> None:
    if not is_hermitian(X, tol):
        raise ValueError("channel output not Hermitian")
