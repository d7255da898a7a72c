import numpy as np
import pytest

from dephasing_chain.fock_space import LatticeSpec
from dephasing_chain.liouvillian import sector_liouvillian
from dephasing_chain.strings import (
    CenterError,
    KLambdaString,
    StringConfig,
    Theta,
    admissible_J,
    band_asymptotics,
    band_level,
    enumerate_configs,
    f_counting,
    heisenberg_limit,
    refine_string,
    solve_centers,
    solve_string_centers,
    string_contents,
    string_eigenvalue,
    theta,
    validate_config,
)


def test_ideal_string_examples():
    g = 0.875
    k, lam = KLambdaString(1, -0.5, g).roots()
    assert k[0] == pytest.approx(np.arcsin(-0.5j - 0.875))
    assert k[1] == pytest.approx(np.pi - np.arcsin(-0.5j + 0.875))
    assert lam[0] == pytest.approx(-0.5j)
    _, lam = KLambdaString(2, -0.3, g).roots()
    assert sorted(lam, key=lambda z: z.real) == pytest.approx([-0.875 - 0.3j, 0.875 - 0.3j])


def test_counting_functions():
    assert theta(0.0) == 0
    x = np.linspace(-3, 3, 13)
    assert np.allclose(Theta(1, 1, x), theta(x / 2))
    xs = np.linspace(0.05, 4, 40)
    f = f_counting(1, xs, 0.875)
    assert np.all(np.diff(f) > 0)
    assert np.allclose(f_counting(1, -xs, 0.875), -f)


@pytest.mark.parametrize("m", [1, 2])
def test_center_solutions_symmetric(m):
    L, g = 8, 0.875
    J = admissible_J(L, {m: 1}, m)
    if 0.0 in J:
        x, _ = solve_centers([m], [0.0], L, g)
        assert x[0] == 0
    j = max(J)
    xp, _ = solve_centers([m], [j], L, g)
    xm, _ = solve_centers([m], [-j], L, g)
    assert xp[0] == pytest.approx(-xm[0], abs=1e-12)


def test_zero_center_eigenvalue_matches_ed():
    g = 0.875
    assert string_eigenvalue([1], [0.0], g) == pytest.approx(-4 * g)
    ed = np.linalg.eigvals(sector_liouvillian(LatticeSpec(6, g), 1, 1).toarray())
    assert np.abs(ed - (-4 * g)).min() < 1e-10


def test_band_asymptotics():
    assert band_asymptotics(1, 1, 1.0, 100) == pytest.approx(-1.97392088e-3)
    assert band_asymptotics(1, 2, 1.0, 100) / band_asymptotics(1, 1, 1.0, 100) == pytest.approx(4)
    lev = band_level(1, 1, 20.0, 400)
    assert lev.epsilon == pytest.approx(band_asymptotics(1, 1, 20.0, 400), rel=0.05)
    with pytest.raises(ValueError):
        band_asymptotics(0, 1, 1.0, 10)


def test_heisenberg_limit_approached():
    L = 8
    cfg = StringConfig({1: 1}, {1: [1.0]})
    h = heisenberg_limit(cfg, L)
    g = 200.0
    c = solve_string_centers(cfg, L, g)
    assert g * c.epsilon == pytest.approx(h.epsilon_scaled, rel=1e-2)
    assert c.centers[1][0] / g == pytest.approx(h.mu[0], rel=1e-2)


def test_quantum_number_rules():
    assert admissible_J(6, {1: 1}, 1) == [-2.0, -1.0, 0.0, 1.0, 2.0]
    assert string_contents(4) == [{2: 1}, {1: 2}]
    assert string_contents(3) == []
    validate_config(6, StringConfig({1: 1}, {1: [1.0]}))
    with pytest.raises(ValueError):
        validate_config(6, StringConfig({1: 1}, {1: [0.5]}))
    with pytest.raises(ValueError):
        validate_config(6, StringConfig({1: 2}, {1: [1.0, 1.0]}))
    for cfg in enumerate_configs(6, 4):
        validate_config(6, cfg)


def test_config_json_round_trip():
    cfg = solve_string_centers(StringConfig({1: 2}, {1: [-0.5, 0.5]}), 6, 1.5)
    back = StringConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_refine_l6_string_matches_ed():
    g = 0.875
    r = refine_string(StringConfig({1: 1}, {1: [1.0]}), 6, g)
    assert r.found and r.plain_residual < 1e-12
    assert r.eigenvalue.real == pytest.approx(-1.7316789, abs=1e-6)
    ed = np.linalg.eigvals(sector_liouvillian(LatticeSpec(6, g), 1, 1).toarray())
    assert np.abs(ed - r.eigenvalue).min() < 1e-8


def test_small_pair_has_no_centers_below_unit_gamma():
    # for m*gamma < 1 the counting function jumps at x = 0 and small |J| is not reached
    with pytest.raises(CenterError):
        solve_centers([1, 1], [-0.5, 0.5], 6, 0.875)
