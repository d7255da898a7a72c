import numpy as np
import pytest

from dephasing_chain.ed_spectra import (
    DiagonalizationError,
    check_d2_symmetry,
    cluster_values,
    degeneracy_histogram,
    eigensystem,
    full_spectrum,
    lowest_weight_multiplicity,
    multiset_mismatch,
    records_from_spectra,
    sector_spectrum,
    slow_modes,
    spectra_by_n,
)
from dephasing_chain.fock_space import LatticeSpec, Sector
from dephasing_chain.liouvillian import sector_liouvillian


@pytest.fixture(scope="module")
def l6():
    return full_spectrum(LatticeSpec(6, 0.875), jobs=4)


def test_vacuum_sector():
    recs = sector_spectrum(sector_liouvillian(LatticeSpec(4, 0.5), 0, 0))
    assert len(recs) == 1 and recs[0].eigenvalue == 0


def test_sector_10_records():
    g = 0.5
    recs = sector_spectrum(sector_liouvillian(LatticeSpec(4, g), 1, 0))
    mult = {round(r.eigenvalue.imag, 8): r.multiplicity for r in recs}
    assert mult == {2.0: 1, 0.0: 2, -2.0: 1}


def test_eigenvectors_and_size_limit():
    op = sector_liouvillian(LatticeSpec(4, 0.5), 1, 1)
    w, vl, vr = eigensystem(op, vectors=True)
    A = op.toarray()
    assert np.abs(A @ vr - vr * w).max() < 1e-10
    with pytest.raises(DiagonalizationError):
        eigensystem(np.zeros((6000, 1)))


def test_cluster_values_chains():
    z = np.array([0, 1e-9, 2e-9, 1.0, 1.0 + 1e-12j])
    groups = cluster_values(z, 1.5e-9)
    assert sorted(len(g) for g in groups) == [2, 3]


def test_every_mm_sector_has_zero_mode(l6):
    recs = records_from_spectra(l6)
    zero = [r for r in recs if abs(r.eigenvalue) < 1e-10]
    assert sorted((r.sector.m1, r.sector.m2) for r in zero) == [(m, m) for m in range(7)]


def test_fig1_structure(l6):
    recs = [r for r in records_from_spectra(l6) if abs(r.eigenvalue) > 1e-10]
    clusters = sorted(degeneracy_histogram(recs), key=lambda c: -c.value.real)
    assert clusters[0].multiplicity == 10
    assert abs(clusters[0].value - (-0.635985)) < 1e-6
    assert lowest_weight_multiplicity(l6, Sector(1, 1), clusters[0].value) == 2
    s = slow_modes(recs, 5)
    assert [r.eigenvalue.real for r in s] == sorted((r.eigenvalue.real for r in s), reverse=True)


def test_d2_small_cases():
    g = 0.5
    w = np.linalg.eigvals(sector_liouvillian(LatticeSpec(4, g), 1, 0).toarray())
    assert check_d2_symmetry(w, g, 1).passed
    w0 = np.concatenate(list(full_spectrum(LatticeSpec(4, 0.0)).values()))
    assert np.abs(w0.real).max() < 1e-12
    rep = check_d2_symmetry(w0, 0.0, None, center=0.0)
    assert rep.passed


def test_d2_conjugation_per_n_and_full_reflection(l6):
    g = 0.875
    for N, w in spectra_by_n(l6).items():
        assert check_d2_symmetry(w, g, N).conj_mismatch < 1e-10
    allw = np.concatenate(list(l6.values()))
    rep = check_d2_symmetry(allw, g, None, center=-g * 6)
    assert rep.passed


def test_multiset_mismatch_negative_control():
    a = np.array([1.0, 1.0, 2.0])
    h, ok = multiset_mismatch(a, np.array([1.0, 2.0, 2.0]), 1e-9)
    assert h == 0 and not ok
