"""Two-flavor fermionic Fock bases on a chain, stored as bitmask pairs.

Mode ordering for fermionic signs: all up modes (site 0..L-1), then all
down modes.  The up flavor carries the ket index of a density matrix and
the down (tilde) flavor carries the bra index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import NamedTuple

import numpy as np

MAX_SITES = 32
BOUNDARIES = ("periodic", "open", "xx", "twisted")


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    """Chain geometry and dephasing strength.

    boundary:
      periodic  ring with uniform +1 amplitude on the closing bond
      open      no closing bond
      xx        ring whose closing-bond amplitude per flavor follows the
                Jordan-Wigner parity of that flavor's particle count
      twisted   ring with fixed closing-bond amplitudes ``twist``
    """

    L: int
    gamma: float = 0.0
    boundary: str = "periodic"
    twist: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise DomainError(f"unknown boundary {self.boundary!r}")
        if not 1 <= self.L <= MAX_SITES:
            raise DomainError(f"L must lie in [1, {MAX_SITES}], got {self.L}")
        if self.gamma < 0:
            raise DomainError("gamma must be non-negative")
        if self.boundary != "open" and (self.L < 4 or self.L % 2):
            raise DomainError("ring boundaries need even L >= 4")
        if any(t not in (1, -1) for t in self.twist):
            raise DomainError("twist entries must be +1 or -1")

    @property
    def is_ring(self) -> bool:
        return self.boundary != "open"

    def sublattice(self, site: int) -> str:
        return "A" if site % 2 == 0 else "B"

    @property
    def a_mask(self) -> int:
        return sum(1 << j for j in range(0, self.L, 2))

    def bonds(self) -> list[tuple[int, int, bool]]:
        """Nearest-neighbour bonds (i, j, closes_ring)."""
        out = [(j, j + 1, False) for j in range(self.L - 1)]
        if self.is_ring:
            out.append((self.L - 1, 0, True))
        return out

    def wrap_amplitudes(self, sector: "Sector") -> tuple[int, int]:
        """Closing-bond hopping amplitude for (up, down) in a sector."""
        if self.boundary == "periodic":
            return (1, 1)
        if self.boundary == "xx":
            return (xx_wrap_sign(sector.m1), xx_wrap_sign(sector.m2))
        if self.boundary == "twisted":
            return self.twist
        return (0, 0)


def xx_wrap_sign(count: int) -> int:
    # Jordan-Wigner string around the ring: c_L^dag c_1 picks up (-1)^(n-1)
    return 1 if count % 2 == 1 else -1


@dataclass(frozen=True)
class Sector:
    m1: int
    m2: int

    @property
    def n(self) -> int:
        return self.m1 + self.m2


class FockState(NamedTuple):
    bits_up: int
    bits_down: int


@dataclass(frozen=True)
class SectorBlock:
    spec: LatticeSpec
    sector: Sector
    states: tuple[FockState, ...]
    index: dict = field(repr=False, compare=False, hash=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def up_bits(self) -> np.ndarray:
        return np.fromiter((s.bits_up for s in self.states), dtype=np.int64, count=self.dim)

    def down_bits(self) -> np.ndarray:
        return np.fromiter((s.bits_down for s in self.states), dtype=np.int64, count=self.dim)


def masks_with_popcount(L: int, m: int) -> list[int]:
    return sorted(sum(1 << i for i in c) for c in combinations(range(L), m))


def enumerate_sector(spec: LatticeSpec, sector: Sector) -> SectorBlock:
    L = spec.L
    if not (0 <= sector.m1 <= L and 0 <= sector.m2 <= L):
        raise DomainError(f"sector {sector} out of range for L={L}")
    ups = masks_with_popcount(L, sector.m1)
    downs = masks_with_popcount(L, sector.m2)
    states = tuple(FockState(u, d) for u in ups for d in downs)
    block = SectorBlock(spec, sector, states, {s: i for i, s in enumerate(states)})
    assert block.dim == comb(L, sector.m1) * comb(L, sector.m2)
    return block


def all_sectors(L: int) -> list[Sector]:
    return [Sector(a, b) for a in range(L + 1) for b in range(L + 1)]


def popcount(x: int) -> int:
    return bin(x).count("1")


def apply_mode(state: FockState, flavor: str, site: int, kind: str, L: int):
    """Apply c^dag or c on one mode; returns (new_state, sign) or None."""
    if not 0 <= site < L:
        raise DomainError(f"site {site} outside chain of length {L}")
    up, down = state
    bit = 1 << site
    below = bit - 1
    if flavor == "up":
        occ = bool(up & bit)
        sign = -1 if popcount(up & below) % 2 else 1
    elif flavor == "down":
        occ = bool(down & bit)
        sign = -1 if (popcount(up) + popcount(down & below)) % 2 else 1
    else:
        raise DomainError(f"unknown flavor {flavor!r}")
    if kind == "create":
        if occ:
            return None
    elif kind == "annihilate":
        if not occ:
            return None
    else:
        raise DomainError(f"unknown kind {kind!r}")
    if flavor == "up":
        return FockState(up ^ bit, down), sign
    return FockState(up, down ^ bit), sign


def hop_sign(bits: int, i: int, j: int):
    """c_i^dag c_j on a single-flavor mask; returns (new_bits, sign) or None."""
    if not (bits >> j) & 1:
        return None
    b = bits ^ (1 << j)
    if (b >> i) & 1:
        return None
    s = popcount(b & ((1 << j) - 1)) + popcount(b & ((1 << i) - 1))
    return b | (1 << i), (-1 if s % 2 else 1)


# --- density matrices <-> doubled Fock space -------------------------------

def vectorize(rho: np.ndarray, L: int) -> dict[Sector, np.ndarray]:
    """rho[S, T] becomes the amplitude of FockState(S, T); no extra signs."""
    rho = np.asarray(rho)
    if rho.shape != (1 << L, 1 << L):
        raise DomainError(f"expected a {1 << L}x{1 << L} matrix, got {rho.shape}")
    pops = np.array([popcount(x) for x in range(1 << L)])
    out = {}
    for m1 in range(L + 1):
        ups = np.flatnonzero(pops == m1)
        for m2 in range(L + 1):
            downs = np.flatnonzero(pops == m2)
            out[Sector(m1, m2)] = rho[np.ix_(ups, downs)].reshape(-1).astype(complex)
    return out


def devectorize(blocks: dict[Sector, np.ndarray], L: int) -> np.ndarray:
    pops = np.array([popcount(x) for x in range(1 << L)])
    rho = np.zeros((1 << L, 1 << L), dtype=complex)
    for sec, vec in blocks.items():
        ups = np.flatnonzero(pops == sec.m1)
        downs = np.flatnonzero(pops == sec.m2)
        if vec.size != ups.size * downs.size:
            raise DomainError(f"vector for {sec} has wrong length {vec.size}")
        rho[np.ix_(ups, downs)] = np.asarray(vec).reshape(ups.size, downs.size)
    return rho
