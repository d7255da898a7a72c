import numpy as np
import pytest

from dephasing_chain.fock_space import LatticeSpec, Sector, enumerate_sector, vectorize
from dephasing_chain.liouvillian import (
    build_dissipator,
    build_liouvillian,
    build_tb_hamiltonian,
    build_xx_liouvillian,
    dephasing_operators,
    lindblad_apply,
    lindblad_matrix,
    sector_liouvillian,
    tb_hamiltonian_full,
)


def test_tb_hamiltonian_single_particle():
    spec = LatticeSpec(4, 0.5)
    H = build_tb_hamiltonian(spec, enumerate_sector(spec, Sector(1, 0)), "up")
    assert np.allclose(np.sort(np.linalg.eigvalsh(H.toarray())), [-2, 0, 0, 2])
    spec = LatticeSpec(2, 0.5, "open")
    H = build_tb_hamiltonian(spec, enumerate_sector(spec, Sector(1, 0)), "up")
    assert np.allclose(np.sort(np.linalg.eigvalsh(H.toarray())), [-1, 1])


def test_two_flavor_hamiltonian_is_energy_difference():
    spec = LatticeSpec(4, 0.0)
    H = build_tb_hamiltonian(spec, enumerate_sector(spec, Sector(1, 1)), "both")
    e = 2 * np.cos(2 * np.pi * np.arange(4) / 4)
    diffs = np.sort((e[:, None] - e[None, :]).ravel())
    assert np.allclose(np.sort(np.linalg.eigvals(H.toarray()).real), diffs)


@pytest.mark.parametrize("g", [0.3, 0.875])
def test_sector_10_spectrum(g):
    w = np.linalg.eigvals(sector_liouvillian(LatticeSpec(4, g), 1, 0).toarray())
    assert np.allclose(w.real, -2 * g)
    assert np.allclose(np.sort(w.imag), [-2, 0, 0, 2])


def test_identity_is_zero_mode():
    spec = LatticeSpec(4, 0.7)
    for s, v in vectorize(np.eye(16), 4).items():
        if np.any(v):
            L = build_liouvillian(spec, enumerate_sector(spec, s))
            assert np.abs(L @ v).max() < 1e-14


def test_single_mode_coherence_decays_at_2gamma():
    g = 0.6
    l = np.sqrt(2 * g) * np.diag([0.0, 1.0])
    rho = np.array([[0, 0], [1, 0]], dtype=complex)  # |1><0|
    assert np.allclose(lindblad_apply(np.zeros((2, 2)), [l], rho), -2 * g * rho)
    spec = LatticeSpec(2, g, "open")
    D = build_dissipator(spec, enumerate_sector(spec, Sector(1, 0))).toarray()
    assert np.allclose(np.diag(D), -2 * g)


@pytest.mark.parametrize("boundary", ["periodic", "open"])
def test_blocks_match_full_lindbladian(boundary):
    L, g = 4, 0.7
    spec = LatticeSpec(L, g, boundary)
    full = lindblad_matrix(tb_hamiltonian_full(spec), dephasing_operators(spec))
    rng = np.random.default_rng(1)
    rho = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    out = (full @ rho.ravel()).reshape(16, 16)
    lhs = vectorize(out, L)
    for s, v in vectorize(rho, L).items():
        Lb = build_liouvillian(spec, enumerate_sector(spec, s))
        assert np.abs(Lb @ v - lhs[s]).max() < 1e-12


def test_sparse_and_dense_agree():
    spec = LatticeSpec(6, 0.875)
    block = enumerate_sector(spec, Sector(2, 2))
    dense = build_liouvillian(spec, block)
    sparse = build_liouvillian(spec, block, dense_max=0)
    assert not dense.is_sparse and sparse.is_sparse
    assert np.abs(dense.toarray() - sparse.toarray()).max() == 0


def test_xx_spin_liouvillian_examples():
    spec = LatticeSpec(4, 0.5, "xx")
    Lxx = build_xx_liouvillian(spec)
    eye = np.eye(16).ravel()
    assert np.abs(Lxx @ eye).max() < 1e-14
    # single site: sigma+ decays at rate 2 gamma with l = sqrt(gamma/2) sz
    g = 0.5
    sz = np.diag([1.0, -1.0])
    sp_ = np.array([[0, 1], [0, 0]], dtype=complex)
    l = np.sqrt(g / 2) * sz
    assert np.allclose(lindblad_apply(np.zeros((2, 2)), [l], sp_), -2 * g * sp_)
