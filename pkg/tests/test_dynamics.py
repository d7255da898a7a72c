import numpy as np
import pytest

from dephasing_chain.fock_space import DomainError, LatticeSpec
from dephasing_chain.liouvillian import ResourceError
from dephasing_chain.dynamics import (
    CorrelatorState,
    build_k_sector_generator,
    correlator_from_density,
    decay_exponent,
    evolve_correlator,
    evolve_density,
    evolve_vector,
    mode_profile,
    offdiagonal_decay_rate,
    random_density_matrix,
    relaxation_run,
    single_particle_generator,
    two_particle_mode,
)


def test_generator_dimensions_and_limits():
    assert build_k_sector_generator(LatticeSpec(4, 0.5), 1).shape == (16, 16)
    assert build_k_sector_generator(LatticeSpec(4, 0.5), 2).shape == (36, 36)
    with pytest.raises(DomainError):
        build_k_sector_generator(LatticeSpec(4, 0.5), 0)
    with pytest.raises(ResourceError):
        build_k_sector_generator(LatticeSpec(20, 0.5), 10)


def test_kronecker_delta_is_stationary():
    spec = LatticeSpec(4, 0.7)
    gen = build_k_sector_generator(spec, 1)
    g0 = CorrelatorState(1, np.eye(4).ravel().astype(complex), 0.0, gen.block)
    out = evolve_correlator(gen, g0, [0.0, 1.0, 5.0])
    assert np.abs(out[-1].psi - g0.psi).max() < 1e-12


@pytest.mark.parametrize("k", [1, 2])
def test_correlator_duality_against_master_equation(k):
    spec = LatticeSpec(4, 0.6)
    rho0 = random_density_matrix(4, np.random.default_rng(3))
    ts = [0.0, 0.4, 1.3]
    gen = build_k_sector_generator(spec, k)
    g0 = correlator_from_density(rho0, spec, k, gen.block)
    evolved = evolve_correlator(gen, g0, ts)
    for rho_t, g in zip(evolve_density(spec, rho0, ts), evolved):
        ref = correlator_from_density(rho_t, spec, k, gen.block)
        assert np.abs(ref.psi - g.psi).max() < 1e-10


def test_correlator_entry_antisymmetry():
    spec = LatticeSpec(4, 0.6)
    rho0 = random_density_matrix(4, np.random.default_rng(5))
    g = correlator_from_density(rho0, spec, 2)
    assert g.entry((0, 2), (1, 3)) == pytest.approx(-g.entry((2, 0), (1, 3)))
    assert g.entry((1, 1), (0, 2)) == 0
    assert len(g.tuples()) == g.psi.size


def test_single_particle_generator_equals_block():
    spec = LatticeSpec(6, 0.875)
    A = single_particle_generator(6, 0.875).toarray()
    B = build_k_sector_generator(spec, 1).toarray()
    assert np.abs(A - B).max() == 0
    open_spec = LatticeSpec(5, 0.875, "open")
    assert np.abs(single_particle_generator(5, 0.875, False).toarray()
                  - build_k_sector_generator(open_spec, 1).toarray()).max() == 0


def test_evolve_vector_grid_checks():
    A = np.diag([-1.0, -2.0])
    out = evolve_vector(A, np.ones(2), [0.0, 1.0, 2.0])
    assert np.allclose(out[-1], np.exp([-2.0, -4.0]))
    with pytest.raises(DomainError):
        evolve_vector(A, np.ones(2), [1.0, 0.5])


def test_decay_exponent_synthetic():
    t = np.geomspace(1, 100, 30)
    fit = decay_exponent(t, 3 * t ** -0.5, (10, 100))
    assert abs(fit.exponent + 0.5) < 1e-12
    with pytest.raises(DomainError):
        decay_exponent(t, -t, None)


def test_mode_domain_and_profile():
    with pytest.raises(DomainError):
        two_particle_mode(LatticeSpec(8, 0.2), 2)
    with pytest.raises(DomainError):
        mode_profile(8, 1.0, 1, "bogus")
    # the diagonal carries no exponential factor
    L, m = 24, 2
    x = np.arange(L)
    rho = mode_profile(L, 1.0, m)
    assert np.allclose(np.abs(np.diag(rho)), np.abs(2 * np.cos(2 * np.pi * m * x / L)))


def test_mode_decay_rate_is_xi():
    m = two_particle_mode(LatticeSpec(24, 1.0), 1)
    rate, _ = offdiagonal_decay_rate(m.rho)
    assert rate == pytest.approx(m.xi, rel=1e-6)


def test_mode_residual_shrinks_with_size():
    res = [two_particle_mode(LatticeSpec(L, 1.0), 1).residual for L in (6, 12, 24)]
    assert res[0] > res[1] > res[2]
    assert res[2] < 1e-6


def test_relaxation_exponents_small_ring():
    # L^2 above the dense cutoff, so this runs through the Krylov action
    run = relaxation_run(L=80, gamma=1.0, t_grid=np.geomspace(1, 30, 15), window=(5, 30))
    assert run.occupation_fit.exponent == pytest.approx(-0.5, abs=0.05)
    assert run.coherence_fit.exponent < run.occupation_fit.exponent
