"""Tight-binding Hamiltonian, dephasing dissipator and Liouvillian per sector.

In the doubled Fock space the Liouvillian of a sector block is

    L = -i (H (x) 1 - 1 (x) H~) - 2 gamma * hamming(up, down)

since 2 n n~ - n - n~ = -(n xor n~) on each site.  The block is the
Kronecker product over (up masks) x (down masks) because the basis order
is lexicographic in (bits_up, bits_down).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .fock_space import (
    DomainError,
    LatticeSpec,
    Sector,
    SectorBlock,
    enumerate_sector,
    hop_sign,
    masks_with_popcount,
    popcount,
)

DENSE_MAX = 5000


class ResourceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ComplexOperator:
    """Matrix acting on a sector block (dense ndarray or CSR matrix)."""

    block: SectorBlock
    matrix: object

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def tocsr(self) -> sp.csr_matrix:
        return self.matrix.tocsr() if self.is_sparse else sp.csr_matrix(self.matrix)

    def __matmul__(self, v):
        return self.matrix @ v


def _pack(block: SectorBlock, m, dense_max: int = DENSE_MAX) -> ComplexOperator:
    m = sp.csr_matrix(m, dtype=complex)
    if block.dim <= dense_max:
        return ComplexOperator(block, m.toarray())
    return ComplexOperator(block, m)


def flavor_hopping(L: int, m: int, bonds, wrap_amp: int) -> sp.csr_matrix:
    """Sum_<ij> (c_i^dag c_j + h.c.) on the masks with popcount m."""
    masks = masks_with_popcount(L, m)
    idx = {b: k for k, b in enumerate(masks)}
    rows, cols, vals = [], [], []
    for k, b in enumerate(masks):
        for i, j, closes in bonds:
            amp = wrap_amp if closes else 1
            if amp == 0:
                continue
            for a, c in ((i, j), (j, i)):
                r = hop_sign(b, a, c)
                if r is not None:
                    rows.append(idx[r[0]])
                    cols.append(k)
                    vals.append(amp * r[1])
    n = len(masks)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=float)


def hamming_diagonal(block: SectorBlock) -> np.ndarray:
    up, dn = block.up_bits(), block.down_bits()
    x = np.bitwise_xor(up, dn)
    return np.array([popcount(int(v)) for v in x], dtype=float)


def _flavor_parts(spec: LatticeSpec, block: SectorBlock):
    L = spec.L
    s = block.sector
    tu, td = spec.wrap_amplitudes(s)
    bonds = spec.bonds()
    hu = flavor_hopping(L, s.m1, bonds, tu)
    hd = flavor_hopping(L, s.m2, bonds, td)
    iu = sp.identity(hu.shape[0], format="csr")
    idn = sp.identity(hd.shape[0], format="csr")
    return sp.kron(hu, idn), sp.kron(iu, hd)


def build_tb_hamiltonian(spec: LatticeSpec, block: SectorBlock, flavor: str = "both",
                         dense_max: int = DENSE_MAX) -> ComplexOperator:
    up, down = _flavor_parts(spec, block)
    if flavor == "up":
        m = up
    elif flavor == "down":
        m = down
    elif flavor == "both":
        m = up - down
    else:
        raise DomainError(f"unknown flavor {flavor!r}")
    return _pack(block, m, dense_max)


def build_dissipator(spec: LatticeSpec, block: SectorBlock, dense_max: int = DENSE_MAX) -> ComplexOperator:
    return _pack(block, sp.diags(-2.0 * spec.gamma * hamming_diagonal(block)), dense_max)


def liouvillian_csr(spec: LatticeSpec, block: SectorBlock) -> sp.csr_matrix:
    up, down = _flavor_parts(spec, block)
    diss = sp.diags(-2.0 * spec.gamma * hamming_diagonal(block))
    return (-1j * (up - down) + diss).tocsr()


def build_liouvillian(spec: LatticeSpec, block: SectorBlock, dense_max: int = DENSE_MAX) -> ComplexOperator:
    return _pack(block, liouvillian_csr(spec, block), dense_max)


def sector_liouvillian(spec: LatticeSpec, m1: int, m2: int, dense_max: int = DENSE_MAX) -> ComplexOperator:
    return build_liouvillian(spec, enumerate_sector(spec, Sector(m1, m2)), dense_max)


# --- brute-force oracles on the one-flavor space -----------------------------

@lru_cache(maxsize=16)
def fermion_annihilators(L: int) -> tuple[np.ndarray, ...]:
    """Dense a_j on the 2^L Fock space with Jordan-Wigner signs (site 0 first)."""
    D = 1 << L
    out = []
    for j in range(L):
        a = np.zeros((D, D))
        for b in range(D):
            if (b >> j) & 1:
                a[b ^ (1 << j), b] = -1.0 if popcount(b & ((1 << j) - 1)) % 2 else 1.0
        a.setflags(write=False)
        out.append(a)
    return tuple(out)


def tb_hamiltonian_full(spec: LatticeSpec, wrap_amp: int | None = None) -> np.ndarray:
    a = fermion_annihilators(spec.L)
    H = np.zeros_like(a[0])
    if wrap_amp is None:
        wrap_amp = 1 if spec.is_ring else 0
    for i, j, closes in spec.bonds():
        amp = wrap_amp if closes else 1
        H += amp * (a[i].T @ a[j] + a[j].T @ a[i])
    return H


def lindblad_apply(H: np.ndarray, ls, rho: np.ndarray) -> np.ndarray:
    """-i[H, rho] + sum_l (2 l rho l^dag - {l^dag l, rho})."""
    out = -1j * (H @ rho - rho @ H)
    for l in ls:
        ld = l.conj().T
        out += 2 * l @ rho @ ld - ld @ l @ rho - rho @ ld @ l
    return out


def lindblad_matrix(H, ls) -> sp.csr_matrix:
    """Row-major vectorized Lindbladian: vec(A rho B) = (A kron B^T) vec(rho)."""
    H = sp.csr_matrix(H)
    D = H.shape[0]
    eye = sp.identity(D, format="csr")
    out = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    for l in ls:
        l = sp.csr_matrix(l)
        ld = l.conj().T
        ldl = ld @ l
        out = out + 2 * sp.kron(l, l.conj()) - sp.kron(ldl, eye) - sp.kron(eye, ldl.T)
    return out.tocsr()


def dephasing_operators(spec: LatticeSpec) -> list[np.ndarray]:
    a = fermion_annihilators(spec.L)
    return [np.sqrt(2 * spec.gamma) * (x.T @ x) for x in a]


# --- spin-1/2 XX chain on the full 4^L space --------------------------------

_SX = sp.csr_matrix([[0, 1], [1, 0]], dtype=complex)
_SY = sp.csr_matrix([[0, -1j], [1j, 0]], dtype=complex)
_SZ = sp.csr_matrix([[1, 0], [0, -1]], dtype=complex)


def _site_op(o, j: int, L: int):
    out = sp.identity(1, format="csr", dtype=complex)
    for i in range(L):
        out = sp.kron(out, o if i == j else sp.identity(2, format="csr"), format="csr")
    return out


def xx_hamiltonian(L: int) -> sp.csr_matrix:
    """sum_j (sx sx + sy sy)/2 on a ring, i.e. unit spin-flip amplitude."""
    H = sp.csr_matrix((1 << L, 1 << L), dtype=complex)
    for j in range(L):
        k = (j + 1) % L
        H = H + 0.5 * (_site_op(_SX, j, L) @ _site_op(_SX, k, L) + _site_op(_SY, j, L) @ _site_op(_SY, k, L))
    return H.tocsr()


def build_xx_liouvillian(spec: LatticeSpec, max_sites: int = 8) -> sp.csr_matrix:
    """Lindbladian of the XX ring with l_j = sqrt(gamma/2) sz_j on spin space."""
    L = spec.L
    if L > max_sites:
        raise ResourceError(f"XX spin-space Liouvillian limited to L <= {max_sites}")
    ls = [np.sqrt(spec.gamma / 2) * _site_op(_SZ, j, L) for j in range(L)]
    return lindblad_matrix(xx_hamiltonian(L), ls)


def xx_sector_spectra(spec: LatticeSpec) -> dict[Sector, np.ndarray]:
    """Fermionic blocks with per-flavor boundary twists from particle parity."""
    xs = LatticeSpec(spec.L, spec.gamma, "xx")
    out = {}
    for m1 in range(spec.L + 1):
        for m2 in range(spec.L + 1):
            out[Sector(m1, m2)] = np.linalg.eigvals(sector_liouvillian(xs, m1, m2).toarray())
    return out
