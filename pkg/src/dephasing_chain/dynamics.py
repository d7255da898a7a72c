"""k-point correlators evolved by the (k,k) Liouvillian block, the explicit
two-particle mode, and relaxation exponents.

Correlator convention: for up sites S = (s1 < ... < sk) and down sites
T = (t1 < ... < tk),

    G(S, T) = tr(a^dag_t1 ... a^dag_tk a_sk ... a_s1 rho),

stored as a vector in the order of the sector-(k,k) block.  With this
convention dG/dt = L_block G exactly, where L_block is the same matrix that
acts on the (k,k) components of the vectorized density matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .fock_space import DomainError, LatticeSpec, Sector, SectorBlock, enumerate_sector
from .liouvillian import (
    ComplexOperator,
    ResourceError,
    build_liouvillian,
    dephasing_operators,
    fermion_annihilators,
    lindblad_matrix,
    tb_hamiltonian_full,
)

EXPM_DENSE_MAX = 400
GENERATOR_MAX = 2_000_000


class EvolutionError(RuntimeError):
    pass


def _sites(bits: int) -> list[int]:
    out, j = [], 0
    while bits:
        if bits & 1:
            out.append(j)
        bits >>= 1
        j += 1
    return out


@dataclass
class CorrelatorState:
    k: int
    psi: np.ndarray
    time: float = 0.0
    block: SectorBlock | None = field(default=None, repr=False)

    def tuples(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """(up sites, down sites) for every entry of psi."""
        if self.block is None:
            raise ValueError("state carries no basis")
        return [(tuple(_sites(s.bits_up)), tuple(_sites(s.bits_down))) for s in self.block.states]

    def entry(self, up_sites, down_sites) -> complex:
        """G for arbitrary site tuples, using antisymmetry within each tuple."""
        from .fock_space import FockState

        up, down = list(up_sites), list(down_sites)
        if len(set(up)) < len(up) or len(set(down)) < len(down):
            return 0j
        sign = _perm_sign(up) * _perm_sign(down)
        st = FockState(sum(1 << j for j in up), sum(1 << j for j in down))
        return sign * complex(self.psi[self.block.index[st]])


def _perm_sign(seq) -> int:
    seq = list(seq)
    s = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                s = -s
    return s


def build_k_sector_generator(spec: LatticeSpec, k: int, dense_max: int = EXPM_DENSE_MAX) -> ComplexOperator:
    if k < 1:
        raise DomainError("k must be >= 1")
    if k > spec.L:
        raise DomainError(f"k={k} exceeds L={spec.L}")
    dim = comb(spec.L, k) ** 2
    if dim > GENERATOR_MAX:
        raise ResourceError(f"(k,k) block of dimension {dim} exceeds {GENERATOR_MAX}")
    return build_liouvillian(spec, enumerate_sector(spec, Sector(k, k)), dense_max)


def single_particle_generator(L: int, gamma: float, periodic: bool = True) -> sp.csr_matrix:
    """k = 1 generator in the site basis, index x1 * L + x2; no bitmask limit.

    Equal to the sector-(1,1) block: one particle per flavor never picks up a
    fermionic sign when hopping.
    """
    if L < 2:
        raise DomainError("need L >= 2")
    i = np.arange(L - 1)
    rows, cols = [i, i + 1], [i + 1, i]
    if periodic:
        if L < 3:
            raise DomainError("periodic chain needs L >= 3")
        rows += [[L - 1], [0]]
        cols += [[0], [L - 1]]
    r, c = np.concatenate(rows), np.concatenate(cols)
    T = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(L, L), dtype=complex)
    eye = sp.identity(L, format="csr", dtype=complex)
    # Hamming distance between the two occupations is 0 or 2
    diss = -4.0 * gamma * (1.0 - np.eye(L).ravel())
    return (-1j * (sp.kron(T, eye) - sp.kron(eye, T)) + sp.diags(diss)).tocsr()


def correlator_from_density(rho: np.ndarray, spec: LatticeSpec, k: int,
                            block: SectorBlock | None = None) -> CorrelatorState:
    """G(S, T) from a full 2^L density matrix (brute force, small L only)."""
    block = block or enumerate_sector(spec, Sector(k, k))
    a = fermion_annihilators(spec.L)
    D = 1 << spec.L
    psi = np.empty(block.dim, dtype=complex)
    for idx, st in enumerate(block.states):
        O = np.eye(D)
        for t in _sites(st.bits_down):
            O = O @ a[t].T
        for s in reversed(_sites(st.bits_up)):
            O = O @ a[s]
        psi[idx] = np.trace(O @ rho)
    return CorrelatorState(k, psi, 0.0, block)


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise DomainError("time grid must be non-negative and strictly increasing")
    return t


def _propagate(A, v0, t, dense: bool):
    out = np.empty((t.size, v0.size), dtype=complex)
    v, prev = v0.astype(complex), 0.0
    for i, ti in enumerate(t):
        dt = ti - prev
        if dt > 0:
            v = sla.expm(dt * A) @ v if dense else expm_multiply(dt * A, v)
        if not np.all(np.isfinite(v)):
            raise EvolutionError(f"non-finite state at t={ti}")
        out[i] = v
        prev = ti
    return out


def evolve_vector(A, v0: np.ndarray, t_grid) -> np.ndarray:
    """exp(t A) v0 on a grid: scaling and squaring when small, Krylov action otherwise."""
    t = _check_grid(t_grid)
    dense = A.shape[0] <= EXPM_DENSE_MAX
    if dense:
        A = A.toarray() if sp.issparse(A) else np.asarray(A)
    else:
        A = sp.csr_matrix(A)
    return _propagate(A, np.asarray(v0), t, dense)


def evolve_correlator(generator: ComplexOperator, g0: CorrelatorState, t_grid) -> list[CorrelatorState]:
    if g0.psi.size != generator.shape[0]:
        raise DomainError("correlator and generator dimensions differ")
    t = _check_grid(t_grid)
    series = evolve_vector(generator.matrix, g0.psi, t)
    return [CorrelatorState(g0.k, series[i], float(t[i]), generator.block) for i in range(t.size)]


def evolve_density(spec: LatticeSpec, rho0: np.ndarray, t_grid) -> list[np.ndarray]:
    """Full master-equation evolution on the 2^L space (oracle, L <= 5)."""
    if spec.L > 5:
        raise ResourceError("full master equation limited to L <= 5")
    H = tb_hamiltonian_full(spec)
    Lm = lindblad_matrix(H, dephasing_operators(spec))
    D = 1 << spec.L
    series = evolve_vector(Lm, np.asarray(rho0, dtype=complex).ravel(), t_grid)
    return [v.reshape(D, D) for v in series]


def random_density_matrix(L: int, rng: np.random.Generator) -> np.ndarray:
    D = 1 << L
    X = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    rho = X @ X.conj().T
    return rho / np.trace(rho)


# --- explicit two-particle mode ---------------------------------------------

@dataclass
class TwoParticleMode:
    m: int
    q: float
    xi: float
    rho: np.ndarray  # rho[x1, x2], x1 the up (ket) site, x2 the down (bra) site
    epsilon: float
    L: int
    gamma: float
    form: str = "fitted"
    residual: float = float("nan")

    @property
    def vector(self) -> np.ndarray:
        """Components in the sector-(1,1) block order."""
        return self.rho.reshape(-1)


def _parity(n):
    return np.where(np.asarray(n) % 2 == 0, 1.0, -1.0)


def mode_profile(L: int, gamma: float, m: int, form: str = "fitted") -> np.ndarray:
    """Unnormalized rho_m(x1, x2) on the ring.

    The relative coordinate r = x1 - x2 is taken in (-L/2, L/2] by shifting
    x1 by L, and s = x1 + x2 uses the shifted x1, w = exp(-i q s).

    form "literal": f = (-1)^r (w + (-1)^s w*) e^{-xi |r|}, rho = f for r >= 0
        and -f for r < 0.
    form "fitted":  rho = (w + (-1)^s w*) e^{-xi |r|} for r >= 0 and
        (-1)^r (w + (-1)^s w*) e^{-xi |r|} for r < 0.
    """
    q = np.pi * m / L
    xi = float(np.arccosh(gamma / np.sin(q)))
    x = np.arange(L)
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    r = x1 - x2
    x1 = np.where(r > L // 2, x1 - L, np.where(r <= -(L // 2), x1 + L, x1))
    r = x1 - x2
    s = x1 + x2
    w = np.exp(-1j * q * s)
    core = (w + _parity(s) * np.conj(w)) * np.exp(-xi * np.abs(r))
    if form == "literal":
        f = _parity(r) * core
        return np.where(r >= 0, f, -f)
    if form == "fitted":
        return np.where(r >= 0, core, _parity(r) * core)
    raise DomainError(f"unknown mode form {form!r}")


def mode_epsilon(gamma: float, q: float) -> float:
    return float(-4 * gamma + 4 * np.sqrt(gamma ** 2 - np.sin(q) ** 2))


def two_particle_mode(spec: LatticeSpec, m: int, forms=("literal", "fitted")) -> TwoParticleMode:
    """Closed-form mode; among the candidate sign patterns keep the one with
    the smallest eigen-residual against the sector-(1,1) Liouvillian."""
    L, g = spec.L, spec.gamma
    if spec.boundary != "periodic":
        raise DomainError("two-particle mode is defined on the periodic ring")
    if not 1 <= m <= L // 2:
        raise DomainError(f"m must lie in [1, {L // 2}]")
    q = np.pi * m / L
    if not g > np.sin(q):
        raise DomainError(f"gamma={g} <= sin(q_m)={np.sin(q):.6g}: oscillatory regime, no real xi")
    eps = mode_epsilon(g, q)
    A = build_k_sector_generator(spec, 1, dense_max=0).tocsr()
    best = None
    for form in forms:
        rho = mode_profile(L, g, m, form)
        rho = rho / np.linalg.norm(rho)
        ph = rho.reshape(-1)[np.argmax(np.abs(rho))]
        rho = rho * (abs(ph) / ph)
        v = rho.reshape(-1)
        res = float(np.linalg.norm(A @ v - eps * v))
        if best is None or res < best.residual:
            best = TwoParticleMode(m, q, float(np.arccosh(g / np.sin(q))), rho, eps, L, g, form, res)
    return best


def offdiagonal_decay_rate(rho: np.ndarray, rmin: int = 1, rmax: int | None = None) -> tuple[float, float]:
    """Exponential decay rate of rho(x1, x2) in the ring distance |x1 - x2|.

    Uses the row-summed weight D(r) = sqrt(sum_x |rho(x + r, x)|^2) so the
    oscillating factor averages out; returns (rate, fit residual).
    """
    L = rho.shape[0]
    rmax = L // 2 - 1 if rmax is None else rmax
    if rmax <= rmin:
        raise DomainError("need at least two distances to fit")
    x = np.arange(L)
    rs = np.arange(rmin, rmax + 1)
    D = np.array([np.sqrt(np.sum(np.abs(rho[(x + r) % L, x]) ** 2)) for r in rs])
    if np.any(D <= 0):
        raise DomainError("zero weight at some distance")
    A = np.column_stack([rs, np.ones(rs.size)])
    coef, res, *_ = np.linalg.lstsq(A, np.log(D), rcond=None)
    return float(-coef[0]), float(np.sqrt(res[0] / rs.size)) if res.size else 0.0


# --- relaxation -------------------------------------------------------------

@dataclass
class DecayFit:
    exponent: float
    intercept: float
    residual: float
    npoints: int


def decay_exponent(t, y, window: tuple[float, float] | None = None) -> DecayFit:
    """Least-squares slope of log y against log t on the window."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    if t.size < 2:
        raise DomainError("need at least two points in the window")
    if np.any(y <= 0) or np.any(t <= 0):
        raise DomainError("series must be strictly positive on the window")
    A = np.column_stack([np.log(t), np.ones(t.size)])
    coef, res, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    rms = float(np.sqrt(res[0] / t.size)) if res.size else 0.0
    return DecayFit(float(coef[0]), float(coef[1]), rms, int(t.size))


@dataclass
class RelaxationRun:
    L: int
    gamma: float
    t: np.ndarray
    occupation: np.ndarray  # <2 n_0 - 1>(t)
    coherence: np.ndarray  # G(0; 1)(t), nearest-neighbour off-diagonal correlator
    occupation_fit: DecayFit
    coherence_fit: DecayFit


def relaxation_run(L: int = 200, gamma: float = 1.0, t_grid=None,
                   window: tuple[float, float] = (10.0, 100.0)) -> RelaxationRun:
    """Site 0 filled, all other sites at infinite temperature.

    Then G = delta/2 + e_00/2, the delta/2 part is stationary and
    <2 n_0 - 1>(t) is the (0, 0) entry of exp(t A) e_00.
    """
    t = np.geomspace(1.0, 100.0, 41) if t_grid is None else _check_grid(t_grid)
    A = single_particle_generator(L, gamma)
    v0 = np.zeros(L * L, dtype=complex)
    v0[0] = 1.0
    series = evolve_vector(A, v0, t)
    occ = series[:, 0]
    coh = series[:, 1]
    return RelaxationRun(L, gamma, t, occ, coh,
                         decay_exponent(t, np.abs(occ), window),
                         decay_exponent(t, np.abs(coh), window))
