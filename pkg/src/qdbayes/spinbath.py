"""Maximally mixed nuclear bath of the box model.

The bath of ``n`` spin-``s`` nuclei decomposes into total-spin multiplets
``K``; a fully mixed bath puts the same weight on every state, so the
probability of sector ``(K, m)`` is ``count(K) / (2s+1)^n``.  Also holds
a brute-force evolution of one electron plus a few spin-1/2 nuclei that
serves as an independent check of the closed-form channel.
"""

from __future__ import annotations

import math
from functools import cached_property
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal

import numpy as np

from .quantcore import tensor

# unit conversion only; energies become angular frequencies in rad/ns
MU_B_UEV_PER_T = 57.8838
HBAR_UEV_NS = 0.6582119

MAX_BATH = 200
MAX_EXACT_DIM = 128

AlphaMode = Literal["literal", "variance_matched"]


@dataclass(frozen=True)
class Material:
    """Host material constants (GaAs defaults)."""

    A_total_ueV: float = 83.0
    n_phys: float = 1.5e6
    g_factor: float = -0.44
    bath_spin_s: float = 0.5


GAAS = Material()


def omega_rad_ns(B, g: float = GAAS.g_factor):
    """Electron Zeeman frequency ``-g mu_B B / hbar`` in rad/ns (B in Tesla)."""
    return -g * MU_B_UEV_PER_T * np.asarray(B, dtype=float) / HBAR_UEV_NS


def hyperfine_alpha(material: Material, n_bath: int, mode: AlphaMode = "variance_matched") -> float:
    """Per-nucleus coupling in rad/ns for a simulated bath of ``n_bath`` nuclei.

    ``literal`` keeps ``A/n_phys``.  ``variance_matched`` rescales so the
    Overhauser variance ``alpha^2 n_bath`` equals the physical one, which
    keeps T2* at its physical value.
    """
    a_total = material.A_total_ueV / HBAR_UEV_NS
    if mode == "literal":
        return a_total / material.n_phys
    if mode == "variance_matched":
        return a_total / math.sqrt(material.n_phys * n_bath)
    raise ValueError(f"unknown alpha mode {mode!r}")


def t2_star(s: float, n_bath: int, alpha: float) -> float:
    """Large-field dephasing time ``sqrt(6 / (s(s+1) n)) / alpha`` in ns."""
    s = float(s)
    return math.sqrt(6.0 / (s * (s + 1) * n_bath)) / alpha


def _as_spin(s) -> Fraction:
    fs = Fraction(s).limit_denominator(1000)
    if fs <= 0 or (2 * fs).denominator != 1:
        raise ValueError(f"spin must be a positive half-integer, got {s!r}")
    return fs


def _binom(a: Fraction | int, b: int) -> int:
    a = Fraction(a)
    if a.denominator != 1:
        raise ValueError(f"non-integer binomial argument {a}")
    a = int(a)
    if b < 0 or a < 0 or a < b:
        return 0
    return math.comb(a, b)


def _k_values(n: int, s: Fraction) -> list[Fraction]:
    top = n * s
    lo = top - math.floor(top)
    vals = []
    k = lo
    while k <= top:
        vals.append(k)
        k += 1
    return vals


def multiplicity_table(n: int, s) -> dict[Fraction, int]:
    """Number of spin-``K`` multiplets in ``n`` coupled spin-``s`` nuclei.

    Alternating binomial sum over ``i = 0..n``; the ``n = 1`` case is
    handled directly since the formula needs ``n >= 2``.
    """
    s = _as_spin(s)
    if n < 1:
        raise ValueError("need at least one nucleus")
    if n > MAX_BATH:
        raise ValueError(f"n_bath capped at {MAX_BATH}")
    if n == 1:
        return {s: 1}
    table = {}
    for K in _k_values(n, s):
        total = 0
        for i in range(n + 1):
            top = (s + 1) * n - (2 * s + 1) * i - K - 2
            total += (-1) ** i * math.comb(n, i) * _binom(top, n - 2)
        if total < 0:
            raise ArithmeticError(f"negative multiplicity {total} for K={K}")
        if total:
            table[K] = total
    return dict(sorted(table.items(), reverse=True))


def multiplicity_oracle(n: int, s) -> dict[Fraction, int]:
    """Same table by coupling one spin at a time (``K x s -> |K-s| .. K+s``)."""
    s = _as_spin(s)
    if n < 1:
        raise ValueError("need at least one nucleus")
    counts: dict[Fraction, int] = {s: 1}
    for _ in range(n - 1):
        nxt: dict[Fraction, int] = {}
        for K, c in counts.items():
            k = abs(K - s)
            while k <= K + s:
                nxt[k] = nxt.get(k, 0) + c
                k += 1
        counts = nxt
    return dict(sorted(counts.items(), reverse=True))


@dataclass(frozen=True)
class BathSpec:
    """Sector weights of the mixed bath; arrays are aligned and read-only."""

    n_bath: int
    s: Fraction
    alpha: float
    K: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)
    P: np.ndarray = field(repr=False)

    @property
    def weights(self) -> list[tuple[float, float, float]]:
        return list(zip(self.K.tolist(), self.m.tolist(), self.P.tolist()))

    @cached_property
    def mirror_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Index pairs ``(K, m) <-> (K, -m-1)`` for ``m`` in ``-K..K-1``.

        A self-mirrored entry (``m = -1/2``) is paired with index
        ``len(K)``, which callers treat as a zero padding slot.
        """
        lookup = {(k, mm): i for i, (k, mm) in enumerate(zip(self.K.tolist(), self.m.tolist()))}
        lo, hi = [], []
        for i, (k, mm) in enumerate(zip(self.K.tolist(), self.m.tolist())):
            if mm == k or mm > -mm - 1:
                continue
            j = lookup[(k, -mm - 1)]
            lo.append(i)
            hi.append(j if j != i else len(self.K))
        return np.array(lo, dtype=int), np.array(hi, dtype=int)

    def sector_probabilities(self) -> dict[Fraction, float]:
        """Total weight ``(2K+1) P_K`` of each multiplet."""
        out: dict[Fraction, float] = {}
        for K, P in zip(self.K, self.P):
            key = Fraction(float(K)).limit_denominator(2)
            out[key] = out.get(key, 0.0) + float(P)
        return out


def bath_weights(n: int, s, alpha: float) -> BathSpec:
    s = _as_spin(s)
    table = multiplicity_table(n, s)
    dim = (2 * s + 1) ** n
    Ks, ms, Ps = [], [], []
    for K, count in table.items():
        p = float(Fraction(count, int(dim)))
        mk = -K
        while mk <= K:
            Ks.append(float(K))
            ms.append(float(mk))
            Ps.append(p)
            mk += 1
    arrays = [np.array(a, dtype=float) for a in (Ks, ms, Ps)]
    for a in arrays:
        a.setflags(write=False)
    total = math.fsum(Ps)
    if abs(total - 1.0) > 1e-12:
        raise ArithmeticError(f"bath weights sum to {total!r}")
    return BathSpec(n_bath=n, s=s, alpha=float(alpha), K=arrays[0], m=arrays[1], P=arrays[2])


def make_bath(material: Material = GAAS, n_bath: int = 49, mode: AlphaMode = "variance_matched") -> BathSpec:
    return bath_weights(n_bath, material.bath_spin_s, hyperfine_alpha(material, n_bath, mode))


# --- brute-force reference -------------------------------------------------

_SZ = np.diag([0.5, -0.5]).astype(complex)
_SP = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|, raises S^z
_SM = _SP.T.copy()


@dataclass(frozen=True)
class ExactChannelSample:
    A_exact: float
    E_exact: complex
    B: float
    t: float


def _site_op(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    mats = [np.eye(2, dtype=complex)] * n_sites
    mats[site] = op
    return tensor(mats)


def box_hamiltonian(n: int, B: float, alpha: float, g: float = GAAS.g_factor) -> np.ndarray:
    """``Omega S^z + alpha S.I`` on electron (site 0) plus ``n`` spin-1/2 nuclei."""
    sites = n + 1
    if 2**sites > MAX_EXACT_DIM:
        raise ValueError(f"exact evolution limited to dimension {MAX_EXACT_DIM}")
    om = float(omega_rad_ns(B, g))
    Sz, Sp, Sm = (_site_op(o, 0, sites) for o in (_SZ, _SP, _SM))
    Iz = sum(_site_op(_SZ, k, sites) for k in range(1, sites))
    Ip = sum(_site_op(_SP, k, sites) for k in range(1, sites))
    Im = sum(_site_op(_SM, k, sites) for k in range(1, sites))
    return om * Sz + alpha * (Sz @ Iz) + 0.5 * alpha * (Sp @ Im + Sm @ Ip)


def exact_reduced_states(rho_el: np.ndarray, n: int, B: float, times, alpha: float,
                         g: float = GAAS.g_factor) -> np.ndarray:
    """Electron state after exact evolution with a fully mixed spin-1/2 bath.

    Returns an array of shape ``(len(times), 2, 2)``.
    """
    H = box_hamiltonian(n, B, alpha, g)
    evals, evecs = np.linalg.eigh(H)
    dim_b = 2**n
    rho0 = np.kron(np.asarray(rho_el, dtype=complex), np.eye(dim_b) / dim_b)
    rho0_eig = evecs.conj().T @ rho0 @ evecs
    out = []
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        ph = np.exp(-1j * evals * t)
        rho_t = evecs @ (ph[:, None] * rho0_eig * ph.conj()[None, :]) @ evecs.conj().T
        out.append(np.einsum("iaja->ij", rho_t.reshape(2, dim_b, 2, dim_b)))
    return np.array(out)


def exact_reference_channel(n: int, B: float, t: float, alpha: float,
                            g: float = GAAS.g_factor, s=0.5) -> ExactChannelSample:
    """(A, E) of the electron channel from brute-force Hamiltonian evolution."""
    if _as_spin(s) != Fraction(1, 2):
        raise ValueError("exact reference only implemented for spin-1/2 nuclei")
    rho_up = np.array([[1, 0], [0, 0]], dtype=complex)
    rho_plus = np.full((2, 2), 0.5, dtype=complex)
    A = exact_reduced_states(rho_up, n, B, [t], alpha, g)[0][0, 0].real
    E = 2.0 * exact_reduced_states(rho_plus, n, B, [t], alpha, g)[0][0, 1]
    return ExactChannelSample(A_exact=float(A), E_exact=complex(E), B=float(B), t=float(t))
