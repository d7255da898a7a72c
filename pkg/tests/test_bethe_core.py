import numpy as np
import pytest

from dephasing_chain.bethe_core import (
    BethePhases,
    ConvergenceError,
    PoleError,
    bae_jacobian,
    bae_residual,
    conjugate_seed,
    continue_in_gamma,
    eigenvalue,
    finite_difference_jacobian,
    free_roots,
    free_state,
    match_to_ed,
    solve_bae,
    state_from_dict,
    state_to_dict,
)
from dephasing_chain.fock_space import LatticeSpec, Sector
from dephasing_chain.liouvillian import sector_liouvillian
from dephasing_chain.strings import StringConfig, refine_string, solve_string_centers


def _ed(L, g, m1, m2, boundary="periodic"):
    return np.linalg.eigvals(sector_liouvillian(LatticeSpec(L, g, boundary), m1, m2).toarray())


@pytest.fixture(scope="module")
def string_state():
    cfg = solve_string_centers(StringConfig({1: 1}, {1: [1.0]}), 6, 0.875)
    r = refine_string(cfg, 6, 0.875)
    assert r.found
    return solve_bae(r.k, r.lam, 6, 0.875)


def test_eigenvalue_examples():
    assert eigenvalue([], 0.7) == 0
    # orientation used here: eps = +2i sum cos k - 2 N gamma
    assert eigenvalue([0.0], 0.7) == pytest.approx(2j - 1.4)


def test_free_residual_is_zero():
    L = 6
    k = free_roots(L, [0, 1, 3])
    r, _ = bae_residual(k, [], L, 0.5)
    assert np.abs(r).max() < 1e-14


def test_free_state_matches_ed():
    L, g = 6, 0.875
    ed = _ed(L, g, 1, 0)
    states = [free_state(L, g, [I]) for I in range(L)]
    rep = match_to_ed(states, ed, 1e-12)
    assert rep.all_matched
    st = solve_bae([2 * np.pi / L + 0.01], [], L, g)
    assert st.k[0] == pytest.approx(2 * np.pi / L)


def test_xx_phase_shifts_momenta():
    L, g = 6, 0.5
    ph = BethePhases.xx(2, 0)
    assert ph.f1 == -1 and ph.f2 == 1
    k = free_roots(L, [0, 1], ph)
    assert np.allclose(k.real, [np.pi / L, 3 * np.pi / L])
    st = solve_bae(k, [], L, g, ph)
    assert np.abs(_ed(L, g, 2, 0, "xx") - st.eigenvalue).min() < 1e-12


def test_jacobian_matches_finite_differences(string_state):
    s = string_state
    k = s.k + 0.01
    lam = s.lam + 0.02j
    J = bae_jacobian(k, lam, s.L, s.gamma)
    Jf = finite_difference_jacobian(k, lam, s.L, s.gamma)
    assert np.abs(J - Jf).max() / np.abs(J).max() < 1e-8


def test_string_solution_matches_ed(string_state):
    s = string_state
    assert s.residual_norm < 1e-12
    assert abs(s.eigenvalue.imag) < 1e-12
    assert np.abs(_ed(6, 0.875, 1, 1) - s.eigenvalue).min() < 1e-8


def test_conjugate_seed_gives_conjugate_eigenvalue(string_state):
    free = free_state(6, 0.875, [1, 2])
    k, lam = conjugate_seed(free)
    st = solve_bae(k, lam, 6, 0.875)
    assert st.eigenvalue == pytest.approx(np.conj(free.eigenvalue))


def test_continuation_in_gamma(string_state):
    path = continue_in_gamma(string_state, np.linspace(0.875, 2.0, 11)[1:])
    assert max(p.residual_norm for p in path) < 1e-12
    assert np.abs(_ed(6, 2.0, 1, 1) - path[-1].eigenvalue).min() < 1e-8


def test_pole_and_failure_modes():
    with pytest.raises(PoleError):
        bae_residual([0.0], [0.875], 6, 0.875)
    with pytest.raises(ConvergenceError):
        solve_bae([0.3, 0.3 + 1e-9], [0.1j], 6, 0.875, max_iter=3)


def test_match_negative_control(string_state):
    rep = match_to_ed([string_state.eigenvalue + 0.1], _ed(6, 0.875, 1, 1), 1e-8)
    assert not rep.all_matched


def test_json_round_trip(string_state):
    d = state_to_dict(string_state)
    back = state_from_dict(d)
    assert np.array_equal(back.k, string_state.k) and np.array_equal(back.lam, string_state.lam)
    assert back.eigenvalue == string_state.eigenvalue
