"""Dense exact diagonalization of sector blocks, clustering and symmetry checks."""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .fock_space import LatticeSpec, Sector, all_sectors, enumerate_sector
from .liouvillian import ComplexOperator, build_liouvillian

ED_MAX_DIM = 5000


class DiagonalizationError(RuntimeError):
    pass


@dataclass
class SpectrumRecord:
    eigenvalue: complex
    sector: Sector
    multiplicity: int = 1
    source: str = "ED"
    right: np.ndarray | None = field(default=None, repr=False)
    left: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Cluster:
    value: complex
    multiplicity: int
    sectors: dict
    ambiguous: bool = False


def _points(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex).ravel()
    return np.column_stack([z.real, z.imag])


def cluster_values(z, tol: float) -> list[np.ndarray]:
    """Group values whose chains of pairwise distances stay below tol."""
    z = np.asarray(z, dtype=complex).ravel()
    if z.size == 0:
        return []
    pairs = cKDTree(_points(z)).query_pairs(tol, output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(z.size, z.size))
    n, labels = connected_components(g, directed=False)
    groups = [np.flatnonzero(labels == c) for c in range(n)]
    # deterministic order: by real part descending, then imaginary part
    groups.sort(key=lambda idx: (-round(float(z[idx].real.mean()), 9), round(float(z[idx].imag.mean()), 9)))
    return groups


def absolute_tol(z, tol_deg: float) -> float:
    z = np.asarray(z, dtype=complex).ravel()
    diam = float(np.ptp(z.real) + np.ptp(z.imag)) if z.size else 0.0
    return tol_deg * max(1.0, diam)


def eigensystem(op: ComplexOperator | np.ndarray, vectors: bool = False):
    a = op.toarray() if isinstance(op, ComplexOperator) else np.asarray(op)
    if a.shape[0] > ED_MAX_DIM:
        raise DiagonalizationError(f"block dimension {a.shape[0]} exceeds dense limit {ED_MAX_DIM}")
    try:
        if vectors:
            w, vl, vr = sla.eig(a, left=True, right=True)
        else:
            w = sla.eigvals(a)
            vl = vr = None
    except sla.LinAlgError as exc:
        raise DiagonalizationError(f"eigensolver failed: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise DiagonalizationError("non-finite eigenvalues")
    if vectors:
        res = np.abs(a @ vr - vr * w).max()
        if res > 1e-8 * max(1.0, np.abs(a).max()):
            raise DiagonalizationError(f"eigenpair residual {res:.3e}")
    return w, vl, vr


def sector_spectrum(op: ComplexOperator, tol_deg: float = 1e-8, vectors: bool = False,
                    source: str = "ED") -> list[SpectrumRecord]:
    w, vl, vr = eigensystem(op, vectors)
    sector = op.block.sector
    out = []
    for idx in cluster_values(w, absolute_tol(w, tol_deg)):
        rec = SpectrumRecord(complex(w[idx].mean()), sector, len(idx), source)
        if vectors:
            rec.right = vr[:, idx]
            rec.left = vl[:, idx]
        out.append(rec)
    assert sum(r.multiplicity for r in out) == op.block.dim
    return out


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


def full_spectrum(spec: LatticeSpec, sectors=None, jobs: int = 1) -> dict[Sector, np.ndarray]:
    """Eigenvalues of every requested sector block of the Liouvillian."""
    sectors = list(sectors) if sectors is not None else all_sectors(spec.L)

    def work(s):
        return s, eigensystem(build_liouvillian(spec, enumerate_sector(spec, s)))[0]

    if jobs <= 1:
        return dict(map(work, sectors))
    with ThreadPoolExecutor(jobs) as ex:
        return dict(ex.map(work, sectors))


def records_from_spectra(spectra: dict[Sector, np.ndarray], tol_deg: float = 1e-8,
                         source: str = "ED") -> list[SpectrumRecord]:
    out = []
    for s, w in spectra.items():
        for idx in cluster_values(w, absolute_tol(w, tol_deg)):
            out.append(SpectrumRecord(complex(w[idx].mean()), s, len(idx), source))
    return out


def slow_modes(records: list[SpectrumRecord], count: int, exclude_zero: bool = True,
               zero_tol: float = 1e-10) -> list[SpectrumRecord]:
    if count < 1:
        raise ValueError("count must be >= 1")
    recs = [r for r in records if not (exclude_zero and abs(r.eigenvalue) < zero_tol)]
    recs.sort(key=lambda r: (-r.eigenvalue.real, r.eigenvalue.imag, r.sector.m1, r.sector.m2))
    return recs[:count]


def degeneracy_histogram(records: list[SpectrumRecord], tol_deg: float = 1e-8) -> list[Cluster]:
    """Cluster records across sectors; multiplicities add up."""
    if not records:
        return []
    z = np.array([r.eigenvalue for r in records])
    tol = absolute_tol(z, tol_deg)
    out = []
    for idx in cluster_values(z, tol):
        mult = sum(records[i].multiplicity for i in idx)
        val = sum(records[i].eigenvalue * records[i].multiplicity for i in idx) / mult
        secs: dict = {}
        for i in idx:
            secs[records[i].sector] = secs.get(records[i].sector, 0) + records[i].multiplicity
        out.append(Cluster(complex(val), mult, secs))
    if len(out) > 1:
        c = np.array([x.value for x in out])
        d, _ = cKDTree(_points(c)).query(_points(c), k=2)
        for x, dist in zip(out, d[:, 1]):
            x.ambiguous = bool(dist < 2 * tol)
    if any(x.ambiguous for x in out):
        warnings.warn("eigenvalue clusters closer than 2*tol_deg", RuntimeWarning, stacklevel=2)
    return out


def lowest_weight_multiplicity(spectra: dict[Sector, np.ndarray], sector: Sector, value: complex,
                               tol: float = 1e-8) -> int:
    """Multiplicity at `value` in `sector` not accounted for by eta+ descendants.

    eta+ is injective on eigenvectors below half filling, so the count in
    sector (m1, m2) minus the count in (m1-1, m2-1) is the number of states
    annihilated by eta-.
    """
    def count(s):
        w = spectra.get(s)
        return 0 if w is None else int(np.sum(np.abs(w - value) < tol))

    below = Sector(sector.m1 - 1, sector.m2 - 1)
    return count(sector) - (count(below) if below.m1 >= 0 and below.m2 >= 0 else 0)


@dataclass
class D2Report:
    n: int | None
    conj_mismatch: float
    reflection_mismatch: float
    conj_counts_ok: bool
    reflection_counts_ok: bool
    tol: float

    @property
    def passed(self) -> bool:
        return (self.conj_counts_ok and self.reflection_counts_ok
                and self.conj_mismatch < self.tol and self.reflection_mismatch < self.tol)


def multiset_mismatch(a, b, tol: float) -> tuple[float, bool]:
    """Hausdorff distance and whether clustered multiplicities agree."""
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    if a.size == 0 and b.size == 0:
        return 0.0, True
    if a.size == 0 or b.size == 0:
        return float("inf"), False
    da, _ = cKDTree(_points(b)).query(_points(a))
    db, _ = cKDTree(_points(a)).query(_points(b))
    haus = float(max(da.max(), db.max()))
    both = np.concatenate([a, b])
    ok = a.size == b.size
    if ok:
        for idx in cluster_values(both, max(tol, 1e-300)):
            if np.sum(idx < a.size) != np.sum(idx >= a.size):
                ok = False
                break
    return haus, ok


def check_d2_symmetry(eigs, gamma: float, N: int | None, tol: float = 1e-10,
                      center: float | None = None) -> D2Report:
    """Invariance under eps -> conj(eps) and eps -> 2c - eps.

    The reflection point c defaults to -2 gamma N; pass ``center`` to test
    another point (e.g. -gamma L for the whole spectrum).
    """
    z = np.asarray(eigs, dtype=complex).ravel()
    c = -2.0 * gamma * N if center is None else center
    cm, cok = multiset_mismatch(z, z.conj(), tol)
    rm, rok = multiset_mismatch(z, 2 * c - z, tol)
    return D2Report(N, cm, rm, cok, rok, tol)


def spectra_by_n(spectra: dict[Sector, np.ndarray]) -> dict[int, np.ndarray]:
    out: dict[int, list] = {}
    for s, w in spectra.items():
        out.setdefault(s.n, []).append(w)
    return {n: np.concatenate(v) for n, v in sorted(out.items())}
