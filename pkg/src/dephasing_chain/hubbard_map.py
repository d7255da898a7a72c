"""Sublattice sign flip, imaginary-u Hubbard Hamiltonian, eta-pairing and NESS."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fock_space import (
    DomainError,
    FockState,
    LatticeSpec,
    Sector,
    SectorBlock,
    devectorize,
    enumerate_sector,
    popcount,
)
from .liouvillian import (
    DENSE_MAX,
    ComplexOperator,
    _flavor_parts,
    _pack,
    build_liouvillian,
)


@dataclass(frozen=True)
class HubbardParams:
    spec: LatticeSpec

    @property
    def u(self) -> complex:
        return 1j * self.spec.gamma


def parity_signs(spec: LatticeSpec, block: SectorBlock) -> np.ndarray:
    """(-1)^(number of down particles on sublattice A) per basis state."""
    a = spec.a_mask
    return np.array([-1.0 if popcount(s.bits_down & a) % 2 else 1.0 for s in block.states])


def build_parity_unitary(spec: LatticeSpec, block: SectorBlock) -> ComplexOperator:
    return _pack(block, sp.diags(parity_signs(spec, block)))


def double_occupancy(block: SectorBlock) -> np.ndarray:
    both = np.bitwise_and(block.up_bits(), block.down_bits())
    return np.array([popcount(int(v)) for v in both], dtype=float)


def hubbard_csr(spec: LatticeSpec, block: SectorBlock) -> sp.csr_matrix:
    """Hopping for both spins + 4u sum n_up n_down - 2u sum n, u = i gamma.

    For the xx/twisted boundaries the closing-bond amplitudes of each
    flavor come from ``spec.wrap_amplitudes``.
    """
    up, down = _flavor_parts(spec, block)
    u = HubbardParams(spec).u
    n = block.sector.n
    diag = 4 * u * double_occupancy(block) - 2 * u * n
    return (up + down + sp.diags(diag)).tocsr()


def build_hubbard(spec: LatticeSpec, block: SectorBlock, dense_max: int = DENSE_MAX) -> ComplexOperator:
    return _pack(block, hubbard_csr(spec, block), dense_max)


def mapping_deviation(spec: LatticeSpec, block: SectorBlock) -> float:
    """max |i U^dag L U - H_Hubb| on one block."""
    Lb = build_liouvillian(spec, block, dense_max=0).tocsr()
    U = sp.diags(parity_signs(spec, block))
    diff = (1j * (U @ Lb @ U) - hubbard_csr(spec, block)).tocoo()
    return float(np.abs(diff.data).max()) if diff.nnz else 0.0


# --- eta pairing ------------------------------------------------------------

def eta_plus(spec: LatticeSpec, source: SectorBlock, target: SectorBlock | None = None) -> sp.csr_matrix:
    """eta+ = sum_A c_dn^dag c_up^dag - sum_B c_dn^dag c_up^dag as a map source -> target."""
    s = source.sector
    if target is None:
        if s.m1 >= spec.L or s.m2 >= spec.L:
            return sp.csr_matrix((0, source.dim), dtype=complex)
        target = enumerate_sector(spec, Sector(s.m1 + 1, s.m2 + 1))
    rows, cols, vals = [], [], []
    for k, (u, d) in enumerate(source.states):
        pu = popcount(u)
        for j in range(spec.L):
            bit = 1 << j
            if u & bit or d & bit:
                continue
            below = bit - 1
            # c_up^dag first, then c_dn^dag passes over all up modes
            sign = (-1) ** (popcount(u & below) + (pu + 1) + popcount(d & below))
            if j % 2:
                sign = -sign
            rows.append(target.index[FockState(u | bit, d | bit)])
            cols.append(k)
            vals.append(sign)
    return sp.csr_matrix((vals, (rows, cols)), shape=(target.dim, source.dim), dtype=complex)


def eta_minus(spec: LatticeSpec, source: SectorBlock) -> sp.csr_matrix:
    """eta- as the adjoint of eta+ from the sector below."""
    s = source.sector
    if s.m1 == 0 or s.m2 == 0:
        return sp.csr_matrix((0, source.dim), dtype=complex)
    lower = enumerate_sector(spec, Sector(s.m1 - 1, s.m2 - 1))
    return eta_plus(spec, lower, source).conj().T.tocsr()


def eta_z(spec: LatticeSpec, block: SectorBlock) -> sp.csr_matrix:
    return (block.sector.n - spec.L) * sp.identity(block.dim, format="csr", dtype=complex)


@dataclass(frozen=True)
class EtaAlgebra:
    block: SectorBlock
    eta_plus: sp.csr_matrix
    eta_minus: sp.csr_matrix
    eta_z: sp.csr_matrix


def build_eta(spec: LatticeSpec, block: SectorBlock) -> EtaAlgebra:
    return EtaAlgebra(block, eta_plus(spec, block), eta_minus(spec, block), eta_z(spec, block))


def _shift(spec, block, d):
    s = block.sector
    m1, m2 = s.m1 + d, s.m2 + d
    if not (0 <= m1 <= spec.L and 0 <= m2 <= spec.L):
        return None
    return enumerate_sector(spec, Sector(m1, m2))


def eta_commutator_norm(spec: LatticeSpec, block: SectorBlock, power: int = 1) -> float:
    """max-norm of H_Hubb (eta+)^p - (eta+)^p H_Hubb on one block."""
    target = block
    E = sp.identity(block.dim, format="csr", dtype=complex)
    for _ in range(power):
        nxt = _shift(spec, target, 1)
        if nxt is None:
            return 0.0
        E = eta_plus(spec, target, nxt) @ E
        target = nxt
    C = (hubbard_csr(spec, target) @ E - E @ hubbard_csr(spec, block)).tocoo()
    return float(np.abs(C.data).max()) if C.nnz else 0.0


def build_ness(spec: LatticeSpec, M: int) -> tuple[SectorBlock, np.ndarray]:
    """(eta+)^M |0>, unnormalized, in sector (M, M) of the Hubbard picture."""
    if not 0 <= M <= spec.L:
        raise DomainError(f"M={M} outside [0, {spec.L}]")
    block = enumerate_sector(spec, Sector(0, 0))
    v = np.ones(1, dtype=complex)
    for _ in range(M):
        nxt = _shift(spec, block, 1)
        v = eta_plus(spec, block, nxt) @ v
        block = nxt
    return block, v


def to_dephasing_picture(spec: LatticeSpec, block: SectorBlock, v: np.ndarray) -> np.ndarray:
    return parity_signs(spec, block) * v


def ness_weight(M: int) -> float:
    return (-1) ** (M * (M - 1) // 2) / math.factorial(M)


def ness_density_matrix(spec: LatticeSpec, M: int | None = None) -> np.ndarray:
    """Undo U on (eta+)^M|0> and devectorize.

    For a single M the result is proportional to the projector onto the
    M-particle subspace with weight (-1)^(M(M-1)/2) M! from reordering the
    pair operators; M=None sums the sectors with those weights divided out,
    which gives the full identity.
    """
    Ms = range(spec.L + 1) if M is None else [M]
    blocks = {}
    for a in range(spec.L + 1):
        for b in range(spec.L + 1):
            s = Sector(a, b)
            blocks[s] = np.zeros(enumerate_sector(spec, s).dim, dtype=complex)
    for m in Ms:
        block, v = build_ness(spec, m)
        w = ness_weight(m) if M is None else 1.0
        blocks[block.sector] = w * to_dephasing_picture(spec, block, v)
    return devectorize(blocks, spec.L)
