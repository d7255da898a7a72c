"""k-Lambda strings: ideal roots, center equations, real eigenvalues, bands,
the large-gamma Heisenberg limit, and finite-L refinement of string roots.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
from scipy.optimize import brentq, root

from .bethe_core import BethePhases, raw_residual


class BranchError(ArithmeticError):
    pass


class CenterError(RuntimeError):
    pass


# --- counting functions -----------------------------------------------------

def theta(x):
    return 2 * np.arctan(x)


def dtheta(x):
    return 2 / (1 + np.asarray(x, dtype=float) ** 2)


def _theta_terms(n: int, m: int) -> list[tuple[float, float]]:
    """(weight, denominator) pairs so that Theta_nm(x) = sum w * theta(x / a)."""
    terms = [(1.0, float(n + m))]
    if n != m:
        terms.append((1.0, float(abs(n - m))))
    terms += [(2.0, float(a)) for a in range(abs(n - m) + 2, n + m - 1, 2)]
    return terms


def Theta(n: int, m: int, x):
    return sum(w * theta(np.asarray(x) / a) for w, a in _theta_terms(n, m))


def dTheta(n: int, m: int, x):
    return sum(w * dtheta(np.asarray(x) / a) / a for w, a in _theta_terms(n, m))


def f_counting(m: int, x, gamma: float, check: bool = True):
    """sgn(x) (pi - arcsin(ix + m g) + arcsin(ix - m g)), real."""
    x = np.asarray(x, dtype=float)
    z = np.pi - np.arcsin(1j * x + m * gamma) + np.arcsin(1j * x - m * gamma)
    if check:
        bad = np.abs(z.imag) > 1e-13 * np.maximum(1.0, np.abs(z.real))
        if np.any(bad & (x != 0)):
            raise BranchError("arcsin terms failed to cancel in the imaginary part")
    return np.sign(x) * z.real


def df_counting(m: int, x, gamma: float):
    x = np.asarray(x, dtype=float)
    d = -1j / np.sqrt(1 - (1j * x + m * gamma) ** 2) + 1j / np.sqrt(1 - (1j * x - m * gamma) ** 2)
    return np.sign(x) * d.real


# --- ideal strings ----------------------------------------------------------

def string_sign(center: float) -> int:
    """+1 for lambda < 0; lambda >= 0 uses gamma -> -gamma."""
    return 1 if center < 0 else -1


@dataclass(frozen=True)
class KLambdaString:
    m: int
    center: float
    gamma: float

    def offsets(self):
        """Integer offsets (in units of gamma) of sin k and Lambda."""
        m, sg = self.m, string_sign(self.center)
        fam0 = [-sg * (m + 2 - 2 * j) for j in range(1, m + 1)]
        fam1 = [sg * (m + 2 - 2 * j) for j in range(1, m + 1)]
        lam = [sg * (m - 1 - 2 * a) for a in range(m)]
        return fam0, fam1, lam

    def roots(self) -> tuple[np.ndarray, np.ndarray]:
        """2m charge roots and m spin roots of the ideal string."""
        fam0, fam1, lam = self.offsets()
        c = 1j * self.center
        k0 = [np.arcsin(c + p * self.gamma) for p in fam0]
        k1 = [np.pi - np.arcsin(c + p * self.gamma) for p in fam1]
        return np.array(k0 + k1, dtype=complex), np.array([c + o * self.gamma for o in lam], dtype=complex)


def string_eigenvalue_terms(ms, centers, gamma: float) -> np.ndarray:
    return np.array([4 * np.sqrt(1 - (1j * abs(l) - m * gamma) ** 2).imag for m, l in zip(ms, centers)])


def string_eigenvalue(ms, centers, gamma: float) -> float:
    """Real eigenvalue from string centers."""
    ms = list(ms)
    return float(string_eigenvalue_terms(ms, centers, gamma).sum() - 4 * gamma * sum(ms))


def eigenvalue_branch_flags(ms, centers, gamma: float, tol: float = 1e-8) -> list[bool]:
    """True where the principal sqrt sits on its cut (Im near 0, Re < 0)."""
    out = []
    for m, l in zip(ms, centers):
        w = np.sqrt(1 - (1j * abs(l) - m * gamma) ** 2)
        out.append(bool(abs(w.imag) < tol and w.real < 0))
    return out


# --- configurations and quantum numbers -------------------------------------

@dataclass
class StringConfig:
    content: dict  # m -> number of strings of length m
    J: dict  # m -> list of quantum numbers
    centers: dict | None = None  # m -> list of solved centers
    epsilon: float | None = None

    def flat(self) -> tuple[list[int], list[float]]:
        ms, Js = [], []
        for m in sorted(self.content):
            Jm = list(self.J.get(m, []))
            if len(Jm) != self.content[m]:
                raise ValueError(f"content says {self.content[m]} strings of length {m}, got J={Jm}")
            ms += [m] * len(Jm)
            Js += [float(j) for j in Jm]
        return ms, Js

    def flat_centers(self) -> list[float]:
        if self.centers is None:
            raise ValueError("centers not solved")
        return [float(c) for m in sorted(self.content) for c in self.centers[m]]

    @property
    def M(self) -> int:
        return sum(m * c for m, c in self.content.items())

    @property
    def N(self) -> int:
        return 2 * self.M

    def to_dict(self) -> dict:
        return {
            "content": {str(m): c for m, c in sorted(self.content.items())},
            "J": {str(m): [float(j) for j in self.J[m]] for m in sorted(self.content)},
            "centers": None if self.centers is None else {str(m): [float(c) for c in self.centers[m]] for m in sorted(self.content)},
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StringConfig":
        content = {int(m): int(c) for m, c in d["content"].items()}
        J = {int(m): [float(j) for j in v] for m, v in d["J"].items()}
        centers = None if d.get("centers") is None else {int(m): [float(c) for c in v] for m, v in d["centers"].items()}
        return cls(content, J, centers, d.get("epsilon"))


def j_bound(L: int, content: dict, m: int) -> float:
    return (L - 1) / 2 - 0.5 * sum((2 * min(m, n) - (m == n)) * Mn for n, Mn in content.items())


def j_is_integer(L: int, content: dict, m: int) -> bool:
    return (L - content.get(m, 0)) % 2 == 1


def admissible_J(L: int, content: dict, m: int) -> list[float]:
    bound = j_bound(L, content, m)
    start = 0.0 if j_is_integer(L, content, m) else 0.5
    vals = np.arange(start, bound + 1e-9, 1.0)
    return sorted(set([float(-v) + 0.0 for v in vals] + [float(v) for v in vals]))


def validate_config(L: int, config: StringConfig):
    for m, c in config.content.items():
        Jm = config.J.get(m, [])
        if len(Jm) != c:
            raise ValueError(f"need {c} quantum numbers for m={m}")
        if len(set(Jm)) != len(Jm):
            raise ValueError(f"quantum numbers for m={m} must be distinct")
        allowed = admissible_J(L, config.content, m)
        for j in Jm:
            if not any(abs(j - a) < 1e-9 for a in allowed):
                raise ValueError(f"J={j} not admissible for m={m} at L={L} (allowed {allowed})")


def string_contents(N: int) -> list[dict]:
    """All {m: M_m} with sum 2 m M_m = N."""
    M = N // 2
    out = []

    def rec(rem, mmax, cur):
        if rem == 0:
            out.append(dict(cur))
            return
        for m in range(min(rem, mmax), 0, -1):
            for c in range(rem // m, 0, -1):
                cur[m] = c
                rec(rem - m * c, m - 1, cur)
                del cur[m]

    if N % 2 == 0 and M > 0:
        rec(M, M, {})
    return out


def enumerate_configs(L: int, n_max: int) -> list[StringConfig]:
    out = []
    for N in range(2, n_max + 1, 2):
        for content in string_contents(N):
            per_m = [list(combinations(admissible_J(L, content, m), content[m])) for m in sorted(content)]
            for choice in product(*per_m):
                J = {m: list(js) for m, js in zip(sorted(content), choice)}
                out.append(StringConfig(dict(content), J))
    return out


# --- center equations -------------------------------------------------------

def center_residual(ms, Js, lams, L: int, gamma: float) -> np.ndarray:
    lams = np.asarray(lams, dtype=float)
    r = np.empty(len(ms))
    for a, (m, J) in enumerate(zip(ms, Js)):
        s = L * f_counting(m, lams[a], gamma) - 2 * np.pi * J
        for b, n in enumerate(ms):
            if b != a:
                s -= Theta(n, m, (lams[a] - lams[b]) / gamma)
        r[a] = s
    return r


def center_jacobian(ms, lams, L: int, gamma: float) -> np.ndarray:
    lams = np.asarray(lams, dtype=float)
    n = len(ms)
    J = np.zeros((n, n))
    for a, m in enumerate(ms):
        J[a, a] = L * df_counting(m, lams[a], gamma)
        for b, nb in enumerate(ms):
            if b != a:
                d = dTheta(nb, m, (lams[a] - lams[b]) / gamma) / gamma
                J[a, a] -= d
                J[a, b] += d
    return J


def _newton_centers(ms, Js, x, L, gamma, tol, max_iter=100):
    r = center_residual(ms, Js, x, L, gamma)
    nr = np.abs(r).max()
    for _ in range(max_iter):
        if nr < tol:
            break
        Jm = center_jacobian(ms, x, L, gamma)
        try:
            step = np.linalg.lstsq(Jm, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-10:
            xn = x + t * step
            rn = center_residual(ms, Js, xn, L, gamma)
            if np.abs(rn).max() < nr:
                break
            t /= 2
        else:
            break
        x, r, nr = xn, rn, np.abs(rn).max()
    return x, nr


def _single_center(m, J, L, gamma):
    if J == 0:
        return 0.0
    target = 2 * np.pi * abs(J) / L
    F = lambda x: L * f_counting(m, x, gamma) - 2 * np.pi * abs(J)
    lo, hi = 1e-300, 1.0
    if F(lo) > 0:
        raise CenterError(f"no center for m={m}, J={J}: 2 pi |J|/L={target:.6f} below f_m(0+)")
    while F(hi) < 0:
        hi *= 2
        if hi > 1e300:
            raise CenterError(f"no center for m={m}, J={J}")
    x = brentq(F, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(np.sign(J) * x)


def solve_centers(ms, Js, L: int, gamma: float, tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Real centers solving the string-center equations; raises CenterError."""
    ms = list(ms)
    Js = [float(j) for j in Js]
    if len(ms) == 1:
        x = np.array([_single_center(ms[0], Js[0], L, gamma)])
        x, nr = _newton_centers(ms, Js, x, L, gamma, tol)
        nr = float(np.abs(center_residual(ms, Js, x, L, gamma)).max())
        if nr < tol * max(1.0, L):
            return x, nr
        raise CenterError(f"center residual {nr:.3e}")
    guesses = []
    for scale in (1.0, 0.5, 2.0, 0.25, 4.0):
        g0 = np.array([gamma * m * np.tan(np.pi * J / L) * scale for m, J in zip(ms, Js)])
        guesses.append(g0 + 1e-3 * np.sign(Js))
    best = (None, np.inf)
    for x0 in guesses:
        x, nr = _newton_centers(ms, Js, x0, L, gamma, tol)
        if nr >= tol:
            sol = root(lambda y: center_residual(ms, Js, y, L, gamma), x0, method="hybr", options={"xtol": 1e-15})
            x, nr = _newton_centers(ms, Js, sol.x, L, gamma, tol)
        if nr < best[1]:
            best = (x, nr)
        if nr < tol:
            return x, float(nr)
    raise CenterError(f"center equations did not converge (|r| = {best[1]:.3e})")


def solve_string_centers(config: StringConfig, L: int, gamma: float, tol: float = 1e-12) -> StringConfig:
    validate_config(L, config)
    ms, Js = config.flat()
    x, _ = solve_centers(ms, Js, L, gamma, tol)
    centers, i = {}, 0
    for m in sorted(config.content):
        c = config.content[m]
        centers[m] = [float(v) for v in x[i:i + c]]
        i += c
    return StringConfig(dict(config.content), {m: list(v) for m, v in config.J.items()}, centers,
                        string_eigenvalue(ms, x, gamma))


# --- bands and the Heisenberg limit ------------------------------------------

@dataclass(frozen=True)
class BandLevel:
    n: int
    j: int
    epsilon: float


def band_asymptotics(n: int, j: int, gamma: float, L: int) -> float:
    if n < 1 or j < 1:
        raise ValueError("n and j must be >= 1")
    return -(1 / gamma) * 2 * np.pi ** 2 * (n + j - 1) ** 2 / (n * L ** 2)


def band_quantum_number(n: int, j: int, L: int) -> float:
    return L / 2 - n - j + 1


def band_level(n: int, j: int, gamma: float, L: int) -> BandLevel:
    """Single n-string with the j-th largest admissible J."""
    J = band_quantum_number(n, j, L)
    x, _ = solve_centers([n], [J], L, gamma)
    return BandLevel(n, j, string_eigenvalue([n], x, gamma))


@dataclass
class HeisenbergCenters:
    mu: np.ndarray
    epsilon_scaled: float
    residual: float


def heisenberg_residual(ms, Js, mu, L):
    mu = np.asarray(mu, dtype=float)
    r = np.empty(len(ms))
    for a, (m, J) in enumerate(zip(ms, Js)):
        s = L * theta(mu[a] / m) - 2 * np.pi * J
        for b, n in enumerate(ms):
            if b != a:
                s -= Theta(n, m, mu[a] - mu[b])
        r[a] = s
    return r


def heisenberg_limit(config: StringConfig, L: int, tol: float = 1e-12) -> HeisenbergCenters:
    """Rescaled centers mu = lambda/gamma as gamma -> infinity; gamma*eps."""
    ms, Js = config.flat()
    x0 = np.array([m * np.tan(np.pi * J / L) for m, J in zip(ms, Js)])
    if len(ms) == 1:
        mu = x0
    else:
        sol = root(lambda y: heisenberg_residual(ms, Js, y, L), x0, method="hybr", options={"xtol": 1e-15})
        mu = sol.x
    nr = float(np.abs(heisenberg_residual(ms, Js, mu, L)).max())
    if nr > tol * max(1.0, L):
        raise CenterError(f"Heisenberg center residual {nr:.3e}")
    eps = -sum(2 * m / (m ** 2 + u ** 2) for m, u in zip(ms, mu))
    return HeisenbergCenters(mu, float(eps), nr)


# --- finite-L refinement ----------------------------------------------------

@dataclass
class _KRoot:
    cluster: int
    anchor: int
    t: int  # s = Lambda_anchor + t*gamma - delta
    w_ref: complex  # cos k of the ideal root, fixes the sqrt branch
    fam: int = 0  # 0: k = arcsin s, 1: k = pi - arcsin s


class AnchoredStrings:
    """Parametrization of string roots with exact integer offsets.

    Per string: a complex center c, chained spin roots
        Lambda_a = c + gamma * o_a + (eps_1 + ... + eps_a),
    and each charge root tied to the spin root that carries its vanishing
    factor, s_j = Lambda_anchor + t_j gamma - delta_j.  Variables are c,
    log eps and log delta, so every near-pole factor is a single small
    variable or a short sum of them and never a difference of O(1) numbers.
    """

    def __init__(self, ms, centers, gamma: float, choice: int = 0, sigmas=None,
                 cos_rule: str = "family"):
        self.ms = list(ms)
        self.cos_rule = cos_rule
        self.gamma = gamma
        self.nc = len(self.ms)
        self.sigmas = list(sigmas) if sigmas is not None else [string_sign(c) for c in centers]
        self.lam_idx: list[tuple[int, int]] = []
        self.kroots: list[_KRoot] = []
        bit = 0
        for ci, (m, lam) in enumerate(zip(self.ms, centers)):
            sg = self.sigmas[ci]
            ref = lam if lam != 0 else -sg * 1e-6
            for a in range(m):
                self.lam_idx.append((ci, a))
            for fam in (0, 1):
                for j in range(1, m + 1):
                    p = (-sg if fam == 0 else sg) * (m + 2 - 2 * j)
                    s0 = 1j * ref + gamma * p
                    k0 = np.arcsin(s0) if fam == 0 else np.pi - np.arcsin(s0)
                    cands = []
                    for a in range(m):
                        o = sg * (m - 1 - 2 * a)
                        if o == p + 1:
                            cands.append((a, -1))
                        if o == p - 1:
                            cands.append((a, 1))
                    want = -1 if k0.imag < -1e-9 else (1 if k0.imag > 1e-9 else 0)
                    pick = [cd for cd in cands if want == 0 or cd[1] == want] or cands
                    if len(pick) > 1:
                        a, t = pick[(choice >> bit) & 1]
                        bit += 1
                    else:
                        a, t = pick[0]
                    self.kroots.append(_KRoot(ci, a, t, complex(np.cos(k0)), fam))
        self.n_choices = bit
        self.N = len(self.kroots)
        self.M = len(self.lam_idx)
        self.eps_off = np.cumsum([0] + [m - 1 for m in self.ms])
        self.neps = int(self.eps_off[-1])
        self.nvar = self.nc + self.neps + self.N
        self.centers0 = np.array([1j * c for c in centers], dtype=complex)
        k_ideal = np.array([-1j * np.log(1j * self._s_ideal(r) + r.w_ref) for r in self.kroots])
        self.k_ideal = k_ideal
        self._precompute()

    def _s_ideal(self, r: _KRoot) -> complex:
        o = self._lam_off(r.cluster, r.anchor)
        return self.centers0[r.cluster] + self.gamma * (o + r.t)

    def _lam_off(self, ci: int, a: int) -> int:
        return self.sigmas[ci] * (self.ms[ci] - 1 - 2 * a)

    def _chain(self, ci: int, a: int, b: int) -> np.ndarray:
        """Coefficients of eps in (fine_a - fine_b) within string ci."""
        v = np.zeros(self.neps)
        o = self.eps_off[ci]
        if a > b:
            v[o + b:o + a] = 1.0
        elif a < b:
            v[o + a:o + b] = -1.0
        return v

    def _precompute(self):
        N, M, g = self.N, self.M, self.gamma
        lc = np.array([ci for ci, _ in self.lam_idx])
        self._lam_cluster = lc
        self._lam_int = np.array([self._lam_off(ci, a) for ci, a in self.lam_idx], dtype=float)
        self._lam_eps = np.array([self._chain(ci, a, 0) for ci, a in self.lam_idx]).reshape(M, self.neps)
        kc = np.array([r.cluster for r in self.kroots])
        self._k_cluster = kc
        self._k_int = np.array([self._lam_off(r.cluster, r.anchor) + r.t for r in self.kroots], dtype=float)
        self._k_eps = np.array([self._chain(r.cluster, r.anchor, 0) for r in self.kroots]).reshape(N, self.neps)
        self._w_ref = np.array([r.w_ref for r in self.kroots])
        self._fam_sign = np.array([1.0 if r.fam == 0 else -1.0 for r in self.kroots])
        self._z_ideal = np.exp(1j * self.k_ideal)
        # same-string factors Lambda_b - s_j = g*int + eps-chain + delta_j
        self._A_same = kc[:, None] == lc[None, :]
        self._A_int = np.zeros((N, M))
        self._A_eps = np.zeros((N, M, self.neps))
        for j, r in enumerate(self.kroots):
            for b, (cb, bb) in enumerate(self.lam_idx):
                if cb == r.cluster:
                    self._A_int[j, b] = self._lam_off(cb, bb) - self._lam_off(cb, r.anchor) - r.t
                    self._A_eps[j, b] = self._chain(cb, bb, r.anchor)
        self._D_same = (lc[:, None] == lc[None, :]) & ~np.eye(M, dtype=bool)
        self._D_int = np.zeros((M, M))
        self._D_eps = np.zeros((M, M, self.neps))
        for a, (ca, aa) in enumerate(self.lam_idx):
            for b, (cb, bb) in enumerate(self.lam_idx):
                if ca == cb and a != b:
                    self._D_int[a, b] = self._lam_off(ca, aa) - self._lam_off(cb, bb)
                    self._D_eps[a, b] = self._chain(ca, aa, bb)

    def split(self, x):
        c = x[:self.nc]
        eps = np.exp(x[self.nc:self.nc + self.neps])
        d = np.exp(x[self.nc + self.neps:])
        return c, eps, d

    def lambdas(self, x) -> np.ndarray:
        c, eps, _ = self.split(x)
        return c[self._lam_cluster] + self.gamma * self._lam_int + self._lam_eps @ eps

    def sines(self, x) -> np.ndarray:
        c, eps, d = self.split(x)
        return c[self._k_cluster] + self.gamma * self._k_int + self._k_eps @ eps - d

    def cosines(self, x) -> np.ndarray:
        s = self.sines(x)
        w = np.sqrt(1 - s * s)
        if self.cos_rule == "family":
            # principal sheet of arcsin per family
            return self._fam_sign * w
        flip = np.abs(w - self._w_ref) > np.abs(-w - self._w_ref)
        return np.where(flip, -w, w)

    def exp_ik(self, x) -> np.ndarray:
        return 1j * self.sines(x) + self.cosines(x)

    def ks(self, x) -> np.ndarray:
        # continuous in x: measured from the ideal root, not the principal log
        return self.k_ideal - 1j * np.log(self.exp_ik(x) / self._z_ideal)

    def _factors(self, x):
        _, eps, d = self.split(x)
        g = self.gamma
        La = self.lambdas(x)
        s = self.sines(x)
        fine = self._A_eps @ eps + d[:, None]
        cross = La[None, :] - s[:, None]
        Ap = np.where(self._A_same, g * (self._A_int + 1) + fine, cross + g)
        Am = np.where(self._A_same, g * (self._A_int - 1) + fine, cross - g)
        dfine = self._D_eps @ eps
        dcross = La[:, None] - La[None, :]
        Dp = np.where(self._D_same, g * (self._D_int + 2) + dfine, dcross + 2 * g)
        Dm = np.where(self._D_same, g * (self._D_int - 2) + dfine, dcross - 2 * g)
        np.fill_diagonal(Dp, 1.0)
        np.fill_diagonal(Dm, 1.0)
        return Ap, Am, Dp, Dm

    def raw_residual(self, x, L: int, phases: BethePhases = BethePhases()) -> np.ndarray:
        Ap, Am, Dp, Dm = self._factors(x)
        P = np.log(Ap) - np.log(Am)
        Q = np.log(Dp) - np.log(Dm)
        r = np.empty(self.N + self.M, dtype=complex)
        r[:self.N] = 1j * L * self.ks(x) - np.log(complex(phases.f1)) - P.sum(axis=1)
        r[self.N:] = P.sum(axis=0) - np.log(complex(phases.f2)) - Q.sum(axis=1)
        return r

    def residual(self, x, L, phases, branches):
        return self.raw_residual(x, L, phases) - 2j * np.pi * branches

    def jacobian(self, x, L, phases, branches, h: float = 1e-7):
        J = np.empty((self.N + self.M, self.nvar), dtype=complex)
        for i in range(self.nvar):
            e = np.zeros(self.nvar, dtype=complex)
            e[i] = h
            J[:, i] = (self.residual(x + e, L, phases, branches) - self.residual(x - e, L, phases, branches)) / (2 * h)
        return J

    def eigenvalue(self, x) -> complex:
        return complex(2j * np.sum(self.cosines(x)) - 2 * self.N * self.gamma)

    def max_deviation(self, x) -> float:
        _, eps, d = self.split(x)
        return float(max(np.abs(eps).max(initial=0.0), np.abs(d).max(initial=0.0)))


def _newton_anchored(S: AnchoredStrings, x, L, phases, tol, max_iter=80):
    with np.errstate(all="ignore"):
        r0 = S.raw_residual(x, L, phases)
        if not np.all(np.isfinite(r0)):
            return x, np.inf
        br = np.round(r0.imag / (2 * np.pi))
        r = r0 - 2j * np.pi * br
        nr = np.abs(r).max()
        for _ in range(max_iter):
            if not np.isfinite(nr) or nr < tol:
                break
            # branches follow the iterate so log cuts crossed by P terms do not stall
            br = np.round(S.raw_residual(x, L, phases).imag / (2 * np.pi))
            r = S.residual(x, L, phases, br)
            nr = np.abs(r).max()
            J = S.jacobian(x, L, phases, br)
            if not np.all(np.isfinite(J)):
                break
            try:
                step = np.linalg.lstsq(J, -r, rcond=None)[0]
            except np.linalg.LinAlgError:
                break
            t = 1.0
            while t > 1e-8:
                xn = x + t * step
                rn = S.residual(xn, L, phases, br)
                nrn = np.abs(rn).max()
                if np.isfinite(nrn) and nrn < nr * (1 - 1e-4 * t):
                    break
                t /= 2
            else:
                break
            x, r, nr = xn, rn, nrn
    return x, float(nr)


def effective_quantum_numbers(ms, lam_eff, L: int, gamma: float) -> np.ndarray:
    out = []
    for a, m in enumerate(ms):
        s = L * f_counting(m, lam_eff[a], gamma, check=False)
        for b, n in enumerate(ms):
            if b != a:
                s -= Theta(n, m, (lam_eff[a] - lam_eff[b]) / gamma)
        out.append(s / (2 * np.pi))
    return np.array(out)


@dataclass
class RefinedString:
    config: StringConfig
    L: int
    gamma: float
    found: bool
    tries: int
    k: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    residual: float = float("inf")
    plain_residual: float = float("inf")
    eigenvalue: complex = complex("nan")
    center_eigenvalue: float = float("nan")
    max_deviation: float = float("nan")


def _total_momentum(k, L) -> int:
    return int(np.round((np.sum(k) * L / (2 * np.pi)).real)) % L


def _accept(S, x, ms, Js, L, gamma, I0):
    k = S.ks(x)
    La = S.lambdas(x)
    z = np.exp(1j * k)
    if z.size > 1 and np.min(np.abs(z[:, None] - z[None, :]) + np.eye(z.size) * 9) < 1e-6:
        return False
    if La.size > 1 and np.min(np.abs(La[:, None] - La[None, :]) + np.eye(La.size) * 9) < 1e-6:
        return False
    # members must stay recognizably attached to their string
    if S.max_deviation(x) > gamma / 2:
        return False
    if _total_momentum(k, L) != I0:
        return False
    lam_eff, i = [], 0
    for m in ms:
        lam_eff.append(float(La[i:i + m].imag.mean()))
        i += m
    Je = effective_quantum_numbers(ms, lam_eff, L, gamma)
    return bool(np.max(np.abs(np.sort(Je) - np.sort(Js))) <= 0.5)


def refine_string(config: StringConfig, L: int, gamma: float, phases: BethePhases = BethePhases(),
                  budget: int = 120, tol: float = 1e-12, seed: int = 0) -> RefinedString:
    """Solve the full Bethe equations near an ideal string configuration.

    Multi-start Newton in the anchored variables.  Seeds are deterministic
    given `seed`.  A solution is accepted only if it is physical (distinct
    e^{ik} and Lambda), keeps every string member within gamma/2 of its
    ideal offset, has the total momentum of the ideal configuration, and
    reproduces the requested quantum numbers from its effective centers.
    """
    if config.centers is None:
        config = solve_string_centers(config, L, gamma)
    ms, Js = config.flat()
    centers = config.flat_centers()
    eps12 = string_eigenvalue(ms, centers, gamma)
    variants = []
    sig_opts = [[string_sign(c)] if c != 0 else [-1, 1] for c in centers]
    for sigmas in product(*sig_opts):
        S0 = AnchoredStrings(ms, centers, gamma, 0, sigmas)
        for rule in ("family", "continuity"):
            for choice in range(1 << S0.n_choices):
                variants.append(AnchoredStrings(ms, centers, gamma, choice, sigmas, rule))
    rng = np.random.default_rng(seed)
    per = max(8, budget // len(variants))
    tries = 0
    for S in variants:
        I0 = _total_momentum(S.k_ideal, L)
        mk = np.log(2 * gamma) - np.abs(S.k_ideal.imag) * L
        base = np.concatenate([np.full(S.neps, np.log(1e-2)), mk])
        for t in range(per):
            tries += 1
            if t == 0:
                logs = base.astype(complex)
            elif t % 3 == 2:
                logs = rng.uniform(-30, 0, base.size) + 1j * rng.uniform(-np.pi, np.pi, base.size)
            else:
                logs = base + rng.normal(size=base.size) + 1j * rng.uniform(0, 2 * np.pi, base.size)
            x = np.concatenate([S.centers0, logs])
            x, nr = _newton_anchored(S, x, L, phases, tol)
            if not nr < tol:
                continue
            if not _accept(S, x, ms, Js, L, gamma, I0):
                continue
            k, La = S.ks(x), S.lambdas(x)
            with np.errstate(all="ignore"):
                rp = raw_residual(k, La, L, gamma, phases)
            plain = float(np.abs(rp - 2j * np.pi * np.round(rp.imag / (2 * np.pi))).max())
            return RefinedString(config, L, gamma, True, tries, k, La, nr, plain,
                                 S.eigenvalue(x), eps12, S.max_deviation(x))
        if tries >= budget:
            break
    return RefinedString(config, L, gamma, False, tries, center_eigenvalue=eps12)
