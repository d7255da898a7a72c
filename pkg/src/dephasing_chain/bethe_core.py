"""Log-form Bethe equations for the dephasing chain, Newton solver, ED matching.

Charge equations (one per k_j):

    i k_j L - log F1 - sum_a log[(La_a - sin k_j + g)/(La_a - sin k_j - g)] = 2 pi i n_j

Spin equations (one per La_a):

    sum_j log[(La_a - sin k_j + g)/(La_a - sin k_j - g)] - log F2
        - sum_{b != a} log[(La_a - La_b + 2g)/(La_a - La_b - 2g)] = 2 pi i n_a

Eigenvalue: eps = 2i sum_j cos k_j - 2 N g.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

POLE_TOL = 1e-12


class PoleError(ArithmeticError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, trajectory=None, condition=None):
        super().__init__(msg)
        self.trajectory = trajectory or []
        self.condition = condition


@dataclass(frozen=True)
class BethePhases:
    f1: complex = 1.0
    f2: complex = 1.0

    def __post_init__(self):
        if abs(abs(self.f1) - 1) > 1e-12 or abs(abs(self.f2) - 1) > 1e-12:
            raise ValueError("phase factors must have unit modulus")

    @classmethod
    def tight_binding(cls) -> "BethePhases":
        return cls(1.0, 1.0)

    @classmethod
    def xx(cls, N: int, M: int) -> "BethePhases":
        return cls(float((-1) ** (N - M - 1)), float((-1) ** N))


@dataclass
class BetheState:
    k: np.ndarray
    lam: np.ndarray
    L: int
    gamma: float
    phases: BethePhases = field(default_factory=BethePhases)
    residual_norm: float = float("nan")
    eigenvalue: complex = complex("nan")
    branches: np.ndarray | None = None

    @property
    def N(self) -> int:
        return len(self.k)

    @property
    def M(self) -> int:
        return len(self.lam)


def eigenvalue(k, gamma: float) -> complex:
    k = np.asarray(k, dtype=complex)
    if k.size == 0:
        return 0j
    return complex(2j * np.sum(np.cos(k)) - 2 * k.size * gamma)


def _factors(k, lam, gamma):
    s = np.sin(k)
    Ap = lam[None, :] - s[:, None] + gamma
    Am = lam[None, :] - s[:, None] - gamma
    d = lam[:, None] - lam[None, :]
    Dp = d + 2 * gamma
    Dm = d - 2 * gamma
    np.fill_diagonal(Dp, 1.0)
    np.fill_diagonal(Dm, 1.0)
    return Ap, Am, Dp, Dm


def check_poles(k, lam, gamma, tol: float = POLE_TOL):
    k = np.asarray(k, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    Ap, Am, Dp, Dm = _factors(k, lam, gamma)
    m = min([np.abs(x).min() for x in (Ap, Am, Dp, Dm) if x.size] + [np.inf])
    if m < tol:
        raise PoleError(f"rapidity collision: min pole distance {m:.3e}")


def raw_residual(k, lam, L: int, gamma: float, phases: BethePhases = BethePhases()) -> np.ndarray:
    """Residual before subtracting 2 pi i times the branch integers."""
    k = np.asarray(k, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    Ap, Am, Dp, Dm = _factors(k, lam, gamma)
    P = np.log(Ap) - np.log(Am)
    Q = np.log(Dp) - np.log(Dm)
    r = np.empty(k.size + lam.size, dtype=complex)
    r[:k.size] = 1j * k * L - np.log(complex(phases.f1)) - P.sum(axis=1)
    r[k.size:] = P.sum(axis=0) - np.log(complex(phases.f2)) - Q.sum(axis=1)
    return r


def branch_integers(r: np.ndarray) -> np.ndarray:
    return np.round(r.imag / (2 * np.pi))


def bae_residual(k, lam, L: int, gamma: float, phases: BethePhases = BethePhases(),
                 branches=None, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Log-form residual; branch integers chosen to minimize |r| unless given."""
    if check:
        check_poles(k, lam, gamma)
    r = raw_residual(k, lam, L, gamma, phases)
    if branches is None:
        branches = branch_integers(r)
    return r - 2j * np.pi * np.asarray(branches), np.asarray(branches)


def bae_jacobian(k, lam, L: int, gamma: float) -> np.ndarray:
    """Holomorphic Jacobian d r / d (k, lam)."""
    k = np.asarray(k, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    N, M = k.size, lam.size
    Ap, Am, Dp, Dm = _factors(k, lam, gamma)
    dP = 1 / Ap - 1 / Am  # d P_ja / d lam_a; d P_ja / d s_j = -dP
    dQ = 1 / Dp - 1 / Dm
    np.fill_diagonal(dQ, 0.0)
    c = np.cos(k)
    J = np.zeros((N + M, N + M), dtype=complex)
    J[:N, :N] = np.diag(1j * L + dP.sum(axis=1) * c)
    J[:N, N:] = -dP
    J[N:, :N] = -(dP * c[:, None]).T
    J[N:, N:] = np.diag(dP.sum(axis=0) - dQ.sum(axis=1)) + dQ
    return J


def finite_difference_jacobian(k, lam, L, gamma, phases=BethePhases(), h: float = 1e-6) -> np.ndarray:
    x = np.concatenate([np.asarray(k, complex), np.asarray(lam, complex)])
    N = len(k)
    _, br = bae_residual(k, lam, L, gamma, phases, check=False)
    J = np.empty((x.size, x.size), dtype=complex)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        rp, _ = bae_residual((x + e)[:N], (x + e)[N:], L, gamma, phases, br, check=False)
        rm, _ = bae_residual((x - e)[:N], (x - e)[N:], L, gamma, phases, br, check=False)
        J[:, i] = (rp - rm) / (2 * h)
    return J


def solve_bae(k0, lam0, L: int, gamma: float, phases: BethePhases = BethePhases(),
              tol: float = 1e-12, max_iter: int = 100, branches=None) -> BetheState:
    """Damped Newton on the log residual with the analytic Jacobian."""
    k = np.asarray(k0, dtype=complex).copy()
    lam = np.asarray(lam0, dtype=complex).copy()
    N = k.size
    r, br = bae_residual(k, lam, L, gamma, phases, branches)
    nr = float(np.abs(r).max()) if r.size else 0.0
    traj = [nr]
    for _ in range(max_iter):
        if nr < tol:
            break
        J = bae_jacobian(k, lam, L, gamma)
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > 1e15:
            raise ConvergenceError("singular Jacobian", traj, cond)
        step = np.linalg.solve(J, -r)
        t = 1.0
        while t > 1e-10:
            kn, ln = k + t * step[:N], lam + t * step[N:]
            try:
                rn, _ = bae_residual(kn, ln, L, gamma, phases, br)
            except PoleError:
                t /= 2
                continue
            nrn = float(np.abs(rn).max())
            if np.isfinite(nrn) and nrn < nr * (1 - 1e-4 * t):
                break
            t /= 2
        else:
            raise ConvergenceError("line search failed", traj, cond)
        k, lam, r, nr = kn, ln, rn, nrn
        traj.append(nr)
    if not nr < tol:
        raise ConvergenceError(f"no convergence after {max_iter} iterations (|r| = {nr:.3e})", traj)
    return BetheState(k, lam, L, gamma, phases, nr, eigenvalue(k, gamma), br)


def free_roots(L: int, quantum_numbers, phases: BethePhases = BethePhases()) -> np.ndarray:
    """M = 0 roots: e^{ikL} = F1."""
    I = np.asarray(quantum_numbers, dtype=float)
    return (2 * np.pi * I + np.angle(complex(phases.f1))) / L + 0j


def free_state(L: int, gamma: float, quantum_numbers, phases: BethePhases = BethePhases()) -> BetheState:
    k = free_roots(L, quantum_numbers, phases)
    return solve_bae(k, np.zeros(0, complex), L, gamma, phases)


def continue_in_gamma(state: BetheState, gammas, tol: float = 1e-12, min_step: float = 1e-6) -> list[BetheState]:
    """Follow a solution along a gamma path.

    Each requested gamma is reached by sub-steps from the previous one; a
    failed Newton solve halves the sub-step, and a secant predictor from the
    last two accepted points seeds the next solve.
    """
    out = []
    cur, prev = state, None
    for target in map(float, gammas):
        h = target - cur.gamma
        while abs(target - cur.gamma) > 1e-15:
            g = cur.gamma + h if abs(h) < abs(target - cur.gamma) else target
            k0, l0 = cur.k, cur.lam
            if prev is not None and prev.gamma != cur.gamma:
                w = (g - cur.gamma) / (cur.gamma - prev.gamma)
                k0, l0 = cur.k + w * (cur.k - prev.k), cur.lam + w * (cur.lam - prev.lam)
            try:
                nxt = solve_bae(k0, l0, cur.L, g, cur.phases, tol)
            except (ConvergenceError, PoleError) as exc:
                h /= 2
                if abs(h) < min_step:
                    raise ConvergenceError(f"continuation stalled at gamma={cur.gamma:.6g}",
                                           getattr(exc, "trajectory", None)) from exc
                continue
            prev, cur = cur, nxt
            h *= 1.5
        out.append(cur)
    return out


def conjugate_seed(state: BetheState) -> tuple[np.ndarray, np.ndarray]:
    """(k, lam) -> (pi + conj k, -conj lam); maps eps to conj(eps) for even L."""
    return np.pi + np.conj(state.k), -np.conj(state.lam)


@dataclass
class MatchReport:
    distances: np.ndarray
    ed_index: np.ndarray
    unmatched_ed: np.ndarray
    tol: float

    @property
    def all_matched(self) -> bool:
        return bool(np.all(self.distances < self.tol))


def match_to_ed(values, ed_eigs, tol: float = 1e-8) -> MatchReport:
    """Assign each Bethe eigenvalue to a distinct ED level minimizing total distance."""
    v = np.asarray([x.eigenvalue if isinstance(x, BetheState) else x for x in values], dtype=complex)
    e = np.asarray(ed_eigs, dtype=complex)
    if v.size == 0:
        return MatchReport(np.zeros(0), np.zeros(0, int), np.arange(e.size), tol)
    if v.size > e.size:
        raise ValueError("more Bethe states than ED levels")
    D = np.abs(v[:, None] - e[None, :])
    rows, cols = linear_sum_assignment(D)
    dist = np.empty(v.size)
    idx = np.empty(v.size, dtype=int)
    dist[rows] = D[rows, cols]
    idx[rows] = cols
    unmatched = np.setdiff1d(np.arange(e.size), idx)
    return MatchReport(dist, idx, unmatched, tol)


# --- JSON root sets ---------------------------------------------------------

def _pairs(z):
    return [[float(np.real(x)), float(np.imag(x))] for x in np.asarray(z, complex)]


def state_to_dict(state: BetheState) -> dict:
    return {
        "k": _pairs(state.k),
        "lambda": _pairs(state.lam),
        "phases": {"f1": _pairs([state.phases.f1])[0], "f2": _pairs([state.phases.f2])[0]},
        "residual": float(state.residual_norm),
        "eigenvalue": _pairs([state.eigenvalue])[0],
        "L": state.L,
        "gamma": state.gamma,
    }


def state_from_dict(d: dict) -> BetheState:
    z = lambda p: complex(p[0], p[1])
    ph = d.get("phases", {"f1": [1, 0], "f2": [1, 0]})
    k = np.array([z(p) for p in d["k"]], dtype=complex)
    lam = np.array([z(p) for p in d["lambda"]], dtype=complex)
    return BetheState(k, lam, int(d["L"]), float(d["gamma"]), BethePhases(z(ph["f1"]), z(ph["f2"])),
                      float(d.get("residual", np.nan)), z(d["eigenvalue"]) if "eigenvalue" in d else eigenvalue(k, float(d["gamma"])))
