"""Spectra, Bethe roots and correlator dynamics of the dephasing tight-binding chain.

Exit codes: 0 success, 2 invalid input, 1 numerical failure (a JSON
diagnostic is written next to the requested output).
"""
from __future__ import annotations

import argparse
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bethe_core import (
    BethePhases,
    ConvergenceError,
    PoleError,
    free_roots,
    match_to_ed,
    solve_bae,
    state_from_dict,
    state_to_dict,
)
from .dynamics import (
    EvolutionError,
    build_k_sector_generator,
    decay_exponent,
    evolve_vector,
    single_particle_generator,
    two_particle_mode,
)
from .ed_spectra import (
    DiagonalizationError,
    default_jobs,
    degeneracy_histogram,
    full_spectrum,
    records_from_spectra,
)
from .fock_space import MAX_SITES, DomainError, LatticeSpec, Sector, enumerate_sector
from .hubbard_map import mapping_deviation
from .io import dumps, metadata, read_config, write_config, write_csv, write_json, write_jsonl
from .liouvillian import ResourceError
from .strings import (
    BranchError,
    CenterError,
    StringConfig,
    band_asymptotics,
    band_level,
    enumerate_configs,
    heisenberg_limit,
    refine_string,
    solve_string_centers,
    validate_config,
)

NUMERICAL = (ConvergenceError, PoleError, DiagonalizationError, EvolutionError, CenterError,
             BranchError, np.linalg.LinAlgError, FloatingPointError)
INVALID = (DomainError, ResourceError, ValueError, KeyError)


class Failure(RuntimeError):
    """Numerical failure carrying extra diagnostic fields."""

    def __init__(self, msg, **info):
        super().__init__(msg)
        self.info = info


# --- argument types -----------------------------------------------------------

def _floats(s: str) -> list[float]:
    s = s.strip()
    return [float(x) for x in s.split(",")] if s else []


def _ints(s: str) -> list[int]:
    s = s.strip()
    return [int(x) for x in s.split(",")] if s else []


def _mapping(s: str) -> dict[int, list[float]]:
    """'1:0.5,-0.5;2:0' -> {1: [0.5, -0.5], 2: [0.0]}"""
    out = {}
    for part in filter(None, (p.strip() for p in s.split(";"))):
        m, vals = part.split(":", 1)
        out[int(m)] = _floats(vals)
    return out


def _content(s: str) -> dict[int, int]:
    """'1:2;2:1' -> {1: 2, 2: 1}"""
    out = {}
    for part in filter(None, (p.strip() for p in s.split(";"))):
        m, c = part.split(":", 1)
        out[int(m)] = int(c)
    return out


def _spec(a) -> LatticeSpec:
    return LatticeSpec(a.L, a.gamma, a.boundary)


# --- subcommands --------------------------------------------------------------

def cmd_spectrum(a, meta):
    spec = _spec(a)
    secs = None
    if a.sectors:
        secs = [Sector(*map(int, p.split(":"))) for p in a.sectors.split(";") if p.strip()]
    spectra = full_spectrum(spec, secs, a.jobs)
    recs = records_from_spectra(spectra, a.tol_deg)
    recs.sort(key=lambda r: (r.sector.m1, r.sector.m2, -r.eigenvalue.real, r.eigenvalue.imag))
    rows = [{"re": r.eigenvalue.real, "im": r.eigenvalue.imag, "multiplicity": r.multiplicity,
             "sector": [r.sector.m1, r.sector.m2], "source": r.source} for r in recs]
    if a.out.suffix == ".csv":
        write_csv(a.out, meta(), ["re", "im", "multiplicity", "m1", "m2", "source"],
                  [[x["re"], x["im"], x["multiplicity"], *x["sector"], x["source"]] for x in rows])
    else:
        write_jsonl(a.out, meta(), rows)
    print(f"{len(rows)} clusters, {sum(r.multiplicity for r in recs)} eigenvalues -> {a.out}")


def cmd_degeneracies(a, meta):
    spec = _spec(a)
    spectra = full_spectrum(spec, None, a.jobs)
    recs = [r for r in records_from_spectra(spectra, a.tol_deg) if abs(r.eigenvalue) > a.zero_tol]
    clusters = degeneracy_histogram(recs, a.tol_deg)
    clusters.sort(key=lambda c: (-c.value.real, c.value.imag))
    clusters = clusters[:a.count]
    rows = [{"re": c.value.real, "im": c.value.imag, "multiplicity": c.multiplicity,
             "sectors": [[s.m1, s.m2, n] for s, n in sorted(c.sectors.items(), key=lambda kv: (kv[0].m1, kv[0].m2))],
             "ambiguous": c.ambiguous} for c in clusters]
    write_jsonl(a.out, meta(), rows)
    for r in rows:
        print(f"{r['re']:+.10f}{r['im']:+.10f}i  x{r['multiplicity']}")


def cmd_verify_map(a, meta):
    spec = _spec(a)
    worst = 0.0
    for m1 in range(spec.L + 1):
        for m2 in range(spec.L + 1):
            worst = max(worst, mapping_deviation(spec, enumerate_sector(spec, Sector(m1, m2))))
    ok = worst < a.tol
    print(f"max |i U^dag L U - H_Hubb| = {worst:.3e} ({'ok' if ok else 'FAILED'})")
    if a.out:
        write_json(a.out, meta(), {"max_deviation": worst, "tol": a.tol, "passed": ok})
    if not ok:
        raise Failure("mapping deviation above tolerance", max_deviation=worst)


def _phases(a, N, M):
    if a.phases == "xx":
        return BethePhases.xx(N, M)
    return BethePhases.tight_binding()


def cmd_solve_bae(a, meta):
    if a.seed_file:
        seed = state_from_dict(__import__("json").loads(Path(a.seed_file).read_text()))
        k0, lam0 = seed.k, seed.lam
    elif a.free is not None:
        k0 = free_roots(a.L, _floats(a.free), _phases(a, len(_floats(a.free)), 0))
        lam0 = np.zeros(0, complex)
    else:
        raise ValueError("give --seed-file or --free")
    N, M = len(k0), len(lam0)
    ph = _phases(a, N, M)
    st = solve_bae(k0, lam0, a.L, a.gamma, ph, a.tol, a.max_iter)
    out = state_to_dict(st)
    if a.match_ed:
        spec = LatticeSpec(a.L, a.gamma, "xx" if a.phases == "xx" else "periodic")
        sec = Sector(N - M, M)
        w = full_spectrum(spec, [sec])[sec]
        rep = match_to_ed([st], w, a.match_tol)
        out["ed_distance"] = float(rep.distances[0])
        out["ed_sector"] = [sec.m1, sec.m2]
    write_json(a.out, meta(), {"state": out})
    print(f"residual {st.residual_norm:.3e}  eps = {st.eigenvalue.real:+.12f}{st.eigenvalue.imag:+.12f}i")
    if a.match_ed and out["ed_distance"] > a.match_tol:
        raise Failure("no ED level within tolerance", ed_distance=out["ed_distance"])


def _solve_one(args):
    cfg, L, gamma, refine, budget = args
    row = {"config": None, "status": "ok"}
    try:
        cfg = solve_string_centers(cfg, L, gamma)
    except CenterError as exc:
        row.update(config=cfg.to_dict(), status="no_center", error=str(exc))
        return row
    row["config"] = cfg.to_dict()
    if refine:
        r = refine_string(cfg, L, gamma, budget=budget)
        row["refined"] = {"found": r.found, "tries": r.tries}
        if r.found:
            row["refined"].update(eigenvalue=r.eigenvalue, residual=r.residual,
                                  max_deviation=r.max_deviation,
                                  k=[[z.real, z.imag] for z in r.k],
                                  **{"lambda": [[z.real, z.imag] for z in r.lam]})
    return row


def cmd_strings(a, meta):
    if a.all:
        cfgs = enumerate_configs(a.L, a.n_max)
    else:
        if not a.content or not a.J:
            raise ValueError("give --content and --J, or --all")
        cfg = StringConfig(_content(a.content), _mapping(a.J))
        validate_config(a.L, cfg)
        cfgs = [cfg]
    work = [(c, a.L, a.gamma, a.refine, a.budget) for c in cfgs]
    if a.jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(a.jobs) as ex:
            rows = list(ex.map(_solve_one, work))
    else:
        rows = [_solve_one(w) for w in work]
    write_jsonl(a.out, meta(), rows)
    for r in rows:
        c = r["config"]
        line = f"{dumps(c['content'])} J={dumps(c['J'])} eps_centers={c['epsilon']} {r['status']}"
        ref = r.get("refined")
        if ref is not None:
            line += f"  refined eps={ref['eigenvalue'].real:.12g}" if ref["found"] else "  refine: not found"
        print(line)
    if not a.all and rows[0]["status"] != "ok":
        raise Failure(rows[0].get("error", "center solve failed"))


def cmd_bands(a, meta):
    asym = band_asymptotics(a.n, a.j, a.gamma, a.L)
    row = {"n": a.n, "j": a.j, "gamma": a.gamma, "L": a.L, "asymptotic": asym}
    if a.solve:
        row["solved"] = band_level(a.n, a.j, a.gamma, a.L).epsilon
    print(f"{asym:.6g}" + (f"  solved {row['solved']:.6g}" if a.solve else ""))
    if a.out:
        write_json(a.out, meta(), {"band": row})


def cmd_heisenberg(a, meta):
    cfg = StringConfig(_content(a.content), _mapping(a.J))
    validate_config(a.L, cfg)
    h = heisenberg_limit(cfg, a.L)
    row = {"mu": h.mu, "gamma_epsilon": h.epsilon_scaled, "residual": h.residual}
    print(f"gamma*eps -> {h.epsilon_scaled:.12g}; mu = {dumps(h.mu)}")
    if a.out:
        write_json(a.out, meta(), {"heisenberg": row})


def _grid(a) -> np.ndarray:
    if a.grid == "geom":
        return np.geomspace(a.t_min, a.t_max, a.nt)
    return np.linspace(0.0, a.t_max, a.nt)


def cmd_evolve(a, meta):
    t = _grid(a)
    if a.k == 1 and (a.L > MAX_SITES or a.first_quantized):
        A = single_particle_generator(a.L, a.gamma)
        dim = a.L * a.L
    else:
        if a.L > MAX_SITES:
            raise DomainError(f"k={a.k} needs L <= {MAX_SITES}")
        G = build_k_sector_generator(LatticeSpec(a.L, a.gamma), a.k, dense_max=0)
        A, dim = G.matrix, G.shape[0]
    v0 = np.zeros(dim, dtype=complex)
    v0[0] = 1.0  # deviation of G at the first basis entry: sites 0..k-1 filled
    series = evolve_vector(A, v0, t)
    obs = {"occupation": series[:, 0], "coherence": series[:, 1]}
    rows = [[ti, name, z.real, z.imag] for name, ys in obs.items() for ti, z in zip(t, ys)]
    write_csv(a.out, meta(), ["t", "observable", "re", "im"], rows)
    if a.fit:
        lo, hi = _floats(a.fit)
        for name, ys in obs.items():
            f = decay_exponent(t, np.abs(ys), (lo, hi))
            print(f"{name}: exponent {f.exponent:+.4f} (rms {f.residual:.2e}, {f.npoints} points)")


def cmd_mode(a, meta):
    spec = LatticeSpec(a.L, a.gamma)
    md = two_particle_mode(spec, a.m)
    rows = [[x1, x2, md.rho[x1, x2].real, md.rho[x1, x2].imag] for x1 in range(a.L) for x2 in range(a.L)]
    m2 = dict(meta())
    m2["mode"] = {"m": md.m, "q": md.q, "xi": md.xi, "epsilon": md.epsilon, "form": md.form,
                  "residual": md.residual}
    write_csv(a.out, m2, ["x1", "x2", "re", "im"], rows)
    print(f"eps_m = {md.epsilon:.12g}, xi = {md.xi:.12g}, eigen-residual {md.residual:.3e} ({md.form})")
    if md.residual > a.tol:
        raise Failure("closed-form mode is not an eigenvector to tolerance", residual=md.residual)


# --- parser -------------------------------------------------------------------

def _common(p, lattice=True, out_required=True):
    if lattice:
        p.add_argument("--L", type=int, required=True)
        p.add_argument("--gamma", type=float, required=True)
        p.add_argument("--boundary", default="periodic", choices=["periodic", "open", "xx"])
    p.add_argument("--out", type=Path, required=out_required, default=None)
    p.add_argument("--jobs", type=int, default=default_jobs())
    p.add_argument("--config", type=Path, default=None, help="flat key = value file; flags override")
    p.add_argument("--no-clock", action="store_true", help="write wall_clock_s = null for byte-identical output")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dephasing-chain", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="sector-resolved ED spectrum")
    _common(p)
    p.add_argument("--sectors", default="", help="'m1:m2;m1:m2' (default: all)")
    p.add_argument("--tol-deg", type=float, default=1e-8)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("degeneracies", help="slowest clusters with multiplicities")
    _common(p)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--tol-deg", type=float, default=1e-8)
    p.add_argument("--zero-tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_degeneracies)

    p = sub.add_parser("verify-map", help="check i U^dag L U = H_Hubb on every sector")
    _common(p, out_required=False)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_verify_map)

    p = sub.add_parser("solve-bae", help="Newton solve of the Bethe equations")
    _common(p)
    p.add_argument("--free", default=None, help="quantum numbers of an M = 0 state, e.g. '0,1'")
    p.add_argument("--seed-file", default=None, help="JSON root set used as the initial guess")
    p.add_argument("--phases", default="tb", choices=["tb", "xx"])
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--match-ed", action="store_true")
    p.add_argument("--match-tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_solve_bae)

    p = sub.add_parser("strings", help="string-center equations and finite-L refinement")
    _common(p)
    p.add_argument("--content", default="", help="'m:count;...'")
    p.add_argument("--J", default="", help="'m:J1,J2;...'")
    p.add_argument("--all", action="store_true", help="every admissible configuration")
    p.add_argument("--n-max", type=int, default=4)
    p.add_argument("--refine", action="store_true")
    p.add_argument("--budget", type=int, default=120)
    p.set_defaults(func=cmd_strings)

    p = sub.add_parser("bands", help="asymptotic band eigenvalue")
    _common(p, lattice=False, out_required=False)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--solve", action="store_true", help="also solve the center equation")
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("heisenberg", help="large-gamma string centers")
    _common(p, lattice=False, out_required=False)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--content", required=True)
    p.add_argument("--J", required=True)
    p.set_defaults(func=cmd_heisenberg)

    p = sub.add_parser("evolve", help="correlator evolution in the (k,k) sector")
    _common(p, lattice=False)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--t-min", type=float, default=1.0)
    p.add_argument("--t-max", type=float, default=100.0)
    p.add_argument("--nt", type=int, default=41)
    p.add_argument("--grid", default="geom", choices=["geom", "lin"])
    p.add_argument("--first-quantized", action="store_true")
    p.add_argument("--fit", default="", help="'t_lo,t_hi' window for log-log exponents")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("mode", help="explicit two-particle mode")
    _common(p, lattice=False)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_mode)
    return ap


# jobs only changes scheduling, so it is left out to keep outputs byte-identical
_SKIP = {"func", "config", "command", "no_clock", "jobs"}


def _resolved(a) -> dict:
    out = {"command": a.command}
    for k, v in vars(a).items():
        if k in _SKIP:
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def _config_path(argv) -> Path | None:
    for i, x in enumerate(argv):
        if x == "--config" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if x.startswith("--config="):
            return Path(x.split("=", 1)[1])
    return None


def _apply_config(ap, argv):
    """Parse with values from --config as defaults, so flags override."""
    path = _config_path(argv)
    cmd = next((x for x in argv if not x.startswith("-")), None)
    sp = next(x for x in ap._actions if isinstance(x, argparse._SubParsersAction))
    if path is not None and cmd in sp.choices:
        p = sp.choices[cmd]
        known = {act.dest: act for act in p._actions}
        for k, v in read_config(path).items():
            # written configs carry the command and leave unset options empty
            if (k == "command" and v == cmd) or v == "":
                continue
            if k not in known or k in _SKIP:
                raise ValueError(f"config key {k!r} not accepted by {cmd}")
            act = known[k]
            if isinstance(act, argparse._StoreTrueAction):
                p.set_defaults(**{k: v.lower() in ("1", "true", "yes", "on")})
            else:
                p.set_defaults(**{k: v})
            act.required = False
    return ap.parse_args(argv)


def _diag_path(a) -> Path:
    out = getattr(a, "out", None)
    return Path(str(out) + ".diag.json") if out else Path(f"{a.command}.diag.json")


def run(argv=None) -> int:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        a = _apply_config(ap, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    config = _resolved(a)

    def meta():
        wall = None if a.no_clock else round(time.perf_counter() - t0, 6)
        return metadata(a.command, config, wall)

    try:
        if getattr(a, "out", None) is not None:
            a.out.parent.mkdir(parents=True, exist_ok=True)
        a.func(a, meta)
        if getattr(a, "out", None) is not None:
            write_config(str(a.out) + ".config", config)
        return 0
    except INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (Failure, *NUMERICAL) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc), "config": config,
                "traceback": traceback.format_exc()}
        if isinstance(exc, Failure):
            diag.update(exc.info)
        if isinstance(exc, ConvergenceError):
            diag.update(trajectory=exc.trajectory, condition=exc.condition)
        p = _diag_path(a)
        p.write_text(dumps(diag) + "\n", encoding="utf-8")
        print(f"numerical failure: {exc} (diagnostics in {p})", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
