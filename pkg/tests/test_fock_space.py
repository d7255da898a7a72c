import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dephasing_chain.fock_space import (
    DomainError,
    FockState,
    LatticeSpec,
    Sector,
    apply_mode,
    devectorize,
    enumerate_sector,
    vectorize,
)


@pytest.mark.parametrize("L,sector,dim", [(4, (0, 0), 1), (4, (1, 1), 16), (6, (3, 3), 400)])
def test_sector_dimensions(L, sector, dim):
    assert enumerate_sector(LatticeSpec(L), Sector(*sector)).dim == dim


def test_ordering_is_lexicographic_and_deterministic():
    spec = LatticeSpec(4)
    a = enumerate_sector(spec, Sector(2, 1))
    b = enumerate_sector(spec, Sector(2, 1))
    assert a.states == b.states
    assert list(a.states) == sorted(a.states)
    assert all(a.index[s] == i for i, s in enumerate(a.states))


def test_lattice_validation():
    with pytest.raises(DomainError):
        LatticeSpec(2, 0.5, "periodic")
    with pytest.raises(DomainError):
        LatticeSpec(5, 0.5)
    with pytest.raises(DomainError):
        LatticeSpec(4, -1.0)
    with pytest.raises(DomainError):
        enumerate_sector(LatticeSpec(4), Sector(5, 0))
    assert LatticeSpec(2, 0.5, "open").bonds() == [(0, 1, False)]
    assert [LatticeSpec(4).sublattice(j) for j in range(4)] == ["A", "B", "A", "B"]


def test_apply_mode_examples():
    vac = FockState(0, 0)
    assert apply_mode(vac, "up", 0, "create", 4) == (FockState(1, 0), 1)
    once, _ = apply_mode(vac, "up", 0, "create", 4)
    assert apply_mode(once, "up", 0, "create", 4) is None
    assert apply_mode(FockState(0b11, 0), "up", 1, "annihilate", 4) == (FockState(0b01, 0), -1)
    # down modes come after all up modes
    assert apply_mode(FockState(0b1, 0), "down", 0, "create", 4) == (FockState(0b1, 0b1), -1)
    with pytest.raises(DomainError):
        apply_mode(vac, "up", 4, "create", 4)


def _apply_seq(state, ops, L):
    sign = 1
    for flavor, site, kind in ops:
        r = apply_mode(state, flavor, site, kind, L)
        if r is None:
            return None
        state, s = r
        sign *= s
    return state, sign


modes = st.tuples(st.sampled_from(["up", "down"]), st.integers(0, 3))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15), modes, modes)
def test_creation_operators_anticommute(bu, bd, m1, m2):
    if m1 == m2:
        return
    state = FockState(bu, bd)
    a = _apply_seq(state, [(*m1, "create"), (*m2, "create")], 4)
    b = _apply_seq(state, [(*m2, "create"), (*m1, "create")], 4)
    assert (a is None) == (b is None)
    if a is not None:
        assert a[0] == b[0] and a[1] == -b[1]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15), modes, modes)
def test_hop_preserves_sector(bu, bd, m1, m2):
    r = _apply_seq(FockState(bu, bd), [(*m1, "annihilate"), (*m2, "create")], 4)
    if r is not None and m1[0] == m2[0]:
        (u, d), _ = r
        assert bin(u).count("1") == bin(bu).count("1")
        assert bin(d).count("1") == bin(bd).count("1")


def test_vectorize_examples():
    rho = np.zeros((4, 4))
    rho[0, 0] = 1
    v = vectorize(rho, 2)
    assert v[Sector(0, 0)][0] == 1
    assert sum(np.count_nonzero(x) for x in v.values()) == 1
    v = vectorize(np.eye(4), 2)
    assert sum(np.count_nonzero(x) for x in v.values()) == 4


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_vectorize_round_trip(seed):
    rng = np.random.default_rng(seed)
    rho = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    assert np.array_equal(devectorize(vectorize(rho, 4), 4), rho)


def test_vectorize_shape_error():
    with pytest.raises(DomainError):
        vectorize(np.eye(3), 2)
