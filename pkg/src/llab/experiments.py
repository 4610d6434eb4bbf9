"""Monte Carlo experiments: sample tables, invariance checks, trends, tails.

Every experiment is a pure function of its inputs. Noise for sample ``i`` uses
stream ``i`` under the base seed; GFF magnetic potentials use a disjoint
stream family. Output tables are CSV with a fixed header, written atomically
next to a JSON manifest.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields as dc_fields
from functools import partial

import numpy as np
from scipy import stats

from .eigensolver import ConvergenceError, dense_oracle, lowest_eigs
from .fields import (MagneticPotential, build_model, gff_potential, gff_stream, model_from_smooth,
                     mollify, renorm_constant, sample_white_noise, uniform_potential, uniform_vector,
                     zero_model, zero_potential)
from .grid import Grid, make_grid
from .io import atomic_write
from .operator import assemble_direct, gauge_transform

CSV_COLUMNS = ["experiment", "seed", "stream", "L", "N", "eps", "A_spec", "n", "lambda_n",
               "residual", "solver", "wall_ms"]

# squared L2 mass of the Townes soliton from an imaginary-time ground-state solve
TOWNES_MASS = 11.70089652
C_GN_REFERENCE = 2.0 / TOWNES_MASS
RHO_REFERENCE = 2.0 / C_GN_REFERENCE

MC_TOL = 1e-6


# ---------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    experiment: str
    L_list: list
    N_list: list
    eps_list: list
    n_samples: int = 1
    base_seed: int = 0
    A_spec: str = "zero"
    k: int = 1
    output_path: str | None = None

    def __post_init__(self):
        self.L_list = [float(x) for x in _as_list(self.L_list, "L_list")]
        self.N_list = [int(x) for x in _as_list(self.N_list, "N_list")]
        self.eps_list = [float(x) for x in _as_list(self.eps_list, "eps_list")]
        if len(self.N_list) == 1 and len(self.L_list) > 1:
            self.N_list = self.N_list * len(self.L_list)
        if len(self.N_list) != len(self.L_list):
            raise ValueError("N_list must have one entry per L (or a single entry)")
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be >= 1")
        self.n_samples = int(self.n_samples)
        self.base_seed = int(self.base_seed)
        self.k = int(self.k)
        if not 1 <= self.k <= 32:
            raise ValueError("k must be in 1..32")
        parse_A_spec(self.A_spec)
        for L, N in zip(self.L_list, self.N_list):
            g = make_grid(L, N)
            for e in self.eps_list:
                if not e >= 2 * g.delta:
                    raise ValueError(f"eps={e} below 2*delta={2 * g.delta} for L={L}, N={N}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dc_fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        missing = {"experiment", "L_list", "N_list", "eps_list"} - set(d)
        if missing:
            raise ValueError(f"missing config fields: {sorted(missing)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            d = json.load(f)
        if not isinstance(d, dict):
            raise ValueError("config must be a JSON object")
        return cls.from_dict(d)

    def triples(self):
        for L, N in zip(self.L_list, self.N_list):
            for e in self.eps_list:
                yield L, N, e


def _as_list(x, name):
    if isinstance(x, (int, float)):
        return [x]
    x = list(x)
    if not x:
        raise ValueError(f"{name} must be nonempty")
    return x


def parse_A_spec(spec: str):
    """``zero`` | ``uniform[:b]`` | ``gff[:cutoff]`` -> (kind, parameter)."""
    s = str(spec).strip().lower().replace(" ", ":")
    kind, _, arg = s.partition(":")
    try:
        if kind == "zero" and not arg:
            return "zero", None
        if kind == "uniform":
            return "uniform", float(arg) if arg else 1.0
        if kind == "gff":
            return "gff", float(arg) if arg else None
    except ValueError:
        pass
    raise ValueError(f"bad A_spec {spec!r}; expected zero, uniform:b or gff[:cutoff]")


def make_potential(grid: Grid, spec: str, seed: int = 0, stream: int = 0) -> MagneticPotential:
    kind, arg = parse_A_spec(spec)
    if kind == "zero":
        return zero_potential(grid)
    if kind == "uniform":
        return uniform_potential(grid, arg)
    return gff_potential(grid, seed, arg, stream_id=gff_stream() + stream)


def default_threads() -> int:
    v = os.environ.get("LLAB_THREADS")
    if v:
        n = int(v)
        if n < 1:
            raise ValueError("LLAB_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _map(fn, items, threads=None):
    n = default_threads() if threads is None else threads
    items = list(items)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- output

def rows_to_csv(rows) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: _fmt(r.get(c, "")) for c in CSV_COLUMNS})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def manifest(cfg, extra: dict | None = None) -> dict:
    from . import __version__
    echo = asdict(cfg) if hasattr(cfg, "__dataclass_fields__") else dict(cfg)
    m = {"config": echo, "code_version": __version__, "C_GN": C_GN_REFERENCE,
         "rho": RHO_REFERENCE, "mc_residual_tol": MC_TOL,
         "threads": default_threads()}
    if extra:
        m.update(extra)
    return m


def write_outputs(path, rows, meta: dict):
    """CSV at ``path`` and its manifest at ``path + '.manifest.json'``."""
    atomic_write(path, rows_to_csv(rows))
    atomic_write(str(path) + ".manifest.json",
                 json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")


# ---------------------------------------------------------------- spectra

def solve_sample(grid: Grid, eps: float, seed: int, stream: int, A_spec: str, k: int,
                 tol: float = MC_TOL, ir_mass: float = 0.0, method: str = "auto"):
    """Build one realization and return its lowest ``k`` eigenpairs."""
    noise = sample_white_noise(grid, seed, stream)
    model = build_model(noise, eps, ir_mass)
    A = make_potential(grid, A_spec, seed, stream)
    H = assemble_direct(grid, A, model)
    return lowest_eigs(H, k, tol, method=method, seed=stream)


def _mc_job(job, timing=False, tol=MC_TOL):
    experiment, seed, i, L, N, eps, A_spec, k = job
    grid = make_grid(L, N)
    base = {"experiment": experiment, "seed": seed, "stream": i, "L": L, "N": N, "eps": eps,
            "A_spec": A_spec}
    try:
        res = solve_sample(grid, eps, seed, i, A_spec, k, tol)
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return [dict(base, n=n + 1, lambda_n=float("nan"), residual=float("nan"),
                     solver=f"failed: {exc}", wall_ms="") for n in range(k)]
    wall = round(res.provenance["wall_ms"], 3) if timing else ""
    solver = res.provenance["solver"]
    rows = []
    for n in range(k):
        tag = solver if res.converged[n] else f"{solver} (unconverged)"
        rows.append(dict(base, n=n + 1, lambda_n=float(res.eigenvalues[n]),
                         residual=float(res.residuals[n]), solver=tag, wall_ms=wall))
    return rows


def run_spectrum_mc(cfg: ExperimentConfig, timing: bool = False, tol: float = MC_TOL,
                    threads: int | None = None, write: bool = True) -> list[dict]:
    """Lowest ``k`` eigenvalues for every (L, N, eps, sample) of the config.

    Solver failures are recorded in the ``solver`` column and the run
    continues. With ``timing`` off the wall-clock column stays empty so reruns
    are byte-identical.
    """
    jobs = [(cfg.experiment, cfg.base_seed, i, L, N, e, cfg.A_spec, cfg.k)
            for (L, N, e) in cfg.triples() for i in range(cfg.n_samples)]
    rows = [r for out in _map(partial(_mc_job, timing=timing, tol=tol), jobs, threads) for r in out]
    if write and cfg.output_path:
        write_outputs(cfg.output_path, rows, manifest(cfg, {"residual_tol": tol}))
    return rows


def lambda_table(rows, n: int = 1) -> dict:
    """``{(L, N, eps): array of lambda_n}`` from sample rows."""
    out = {}
    for r in rows:
        if int(r["n"]) != n:
            continue
        key = (float(r["L"]), int(r["N"]), float(r["eps"]))
        out.setdefault(key, []).append(float(r["lambda_n"]))
    return {key: np.array(v) for key, v in out.items()}


# ---------------------------------------------------------------- translation

def _linear_vector(spec: str, y):
    kind, arg = parse_A_spec(spec)
    if kind == "gff":
        raise ValueError("translation test needs a linear potential (zero or uniform)")
    if kind == "zero":
        return np.zeros(2)
    return np.array(uniform_vector(arg, y[0], y[1]), dtype=float)


def gauge_mechanism_check(L: float, N: int, eps: float, A_spec: str, y, seed: int = 0,
                          stream: int = 0, k: int = 5, tol: float = 1e-10) -> dict:
    """Translated-box operator versus ``gauge_transform`` with ``phi_y(x) = A(y).x``.

    The same noise values drive both boxes (the noise is transported with the
    box), so the two operators must agree entrywise and spectrally.
    """
    y = np.asarray(y, dtype=float)
    Ay = _linear_vector(A_spec, y)
    g0 = make_grid(L, N)
    gy = make_grid(L, N, center=(float(y[0]), float(y[1])))
    noise = sample_white_noise(g0, seed, stream)
    m0 = build_model(noise, eps)
    my = model_from_smooth(gy, m0.xi_eps, eps, m0.C_eps)
    H0 = assemble_direct(g0, make_potential(g0, A_spec), m0)
    Hy = assemble_direct(gy, make_potential(gy, A_spec), my)
    X1, X2 = g0.coords()
    Hg = gauge_transform(H0, Ay[0] * X1 + Ay[1] * X2)
    # links touching the exterior never enter the operator
    entry = max(np.abs(Hg.U1[1:-1] - Hy.U1[1:-1]).max(), np.abs(Hg.U2[:, 1:-1] - Hy.U2[:, 1:-1]).max(),
                np.abs(Hg.potential - Hy.potential).max())
    if N <= 16:
        a, b = dense_oracle(Hy).eigenvalues, dense_oracle(Hg).eigenvalues
    else:
        a = lowest_eigs(Hy, k, tol, strict=True).eigenvalues
        b = lowest_eigs(Hg, k, tol, strict=True).eigenvalues
    return {"y": y.tolist(), "max_entry_difference": float(entry),
            "max_eigenvalue_difference": float(np.abs(a - b).max()), "n_eigenvalues": int(a.size)}


def _translated_lambda1(job):
    L, N, eps, A_spec, seed, stream, center = job
    g = make_grid(L, N, center=center)
    noise = sample_white_noise(g, seed, stream)
    H = assemble_direct(g, make_potential(g, A_spec), build_model(noise, eps))
    return lowest_eigs(H, 1, MC_TOL, seed=stream).lambda1()


def translation_invariance_test(cfg: ExperimentConfig, shifts, threads: int | None = None,
                                alpha: float = 0.01, mechanism_samples: int = 3) -> dict:
    """Two-sample KS test of lambda_1 on ``B_{0,L}`` against ``B_{y,L}``.

    The translated group uses independent noise streams (``n + i``) unless
    ``y = 0``, where the two boxes coincide and the samples are the same.
    """
    L, N, eps = cfg.L_list[0], cfg.N_list[0], cfg.eps_list[0]
    _linear_vector(cfg.A_spec, (0.0, 0.0))
    n = cfg.n_samples
    seed = cfg.base_seed
    run = partial(_map, _translated_lambda1, threads=threads)
    base = np.array(run([(L, N, eps, cfg.A_spec, seed, i, (0.0, 0.0)) for i in range(n)]))
    reports = []
    for y in shifts:
        y = (float(y[0]), float(y[1]))
        off = 0 if y == (0.0, 0.0) else n
        moved = np.array(run([(L, N, eps, cfg.A_spec, seed, off + i, y) for i in range(n)]))
        ks = stats.ks_2samp(base, moved)
        mech = [gauge_mechanism_check(L, N, eps, cfg.A_spec, y, seed, i, k=3)
                for i in range(mechanism_samples)]
        reports.append({
            "y": list(y), "ks_statistic": float(ks.statistic), "p_value": float(ks.pvalue),
            "passed": bool(ks.pvalue > alpha), "mechanism": mech,
            "mechanism_max_eigenvalue_difference": max(m["max_eigenvalue_difference"] for m in mech),
            "mean_base": float(base.mean()), "mean_shifted": float(moved.mean())})
    return {"L": L, "N": N, "eps": eps, "A_spec": cfg.A_spec, "n_per_group": n, "alpha": alpha,
            "shifts": reports, "policy": "KS p-value threshold is a test policy"}


# ---------------------------------------------------------------- scaling identity

def _check_beta(beta: float) -> int:
    beta = float(beta)
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    m = -math.log2(beta)
    if abs(m - round(m)) > 1e-12:
        raise ValueError(f"beta={beta} does not nest the lattices; use beta = 2^-m")
    return int(round(m))


def rescale_potential(A: MagneticPotential, big: Grid, beta: float) -> MagneticPotential:
    """``A_beta(x) = beta A(beta x)`` on the dilated box (same N, spacing / beta)."""
    return MagneticPotential(big, beta * A.A1, beta * A.A2, f"rescaled({A.description})",
                             beta * A.holder_norm_estimate, dict(A.params, beta=beta))


def scaling_delta(L: float, N: int, eps: float, beta: float) -> float:
    """``beta^2 (C_big(eps) - C_small(eps))`` from exact Parseval sums on both grids."""
    _check_beta(beta)
    small, big = make_grid(L, N), make_grid(L / beta, N)
    return beta**2 * (renorm_constant(big, eps) - renorm_constant(small, eps))


def scaling_delta_ladder(L: float, N: int, eps: float, betas=(0.5, 0.25, 0.125)) -> dict:
    out = []
    for b in betas:
        d = scaling_delta(L, N, eps, b)
        out.append({"beta": b, "delta": d, "ratio": d / (b**2 * math.log(1 / b))})
    r = np.array([o["ratio"] for o in out])
    return {"L": L, "N": N, "eps": eps, "ladder": out,
            "ratio_spread": float(r.max() / r.min() - 1) if np.all(r > 0) else float("inf")}


def scaling_identity_test(L: float, N: int, eps: float, beta: float = 0.5, seed: int | None = 0,
                          A_spec: str = "zero", k: int = 3, tol: float = 1e-10,
                          atol: float = 1e-8) -> dict:
    """Exact lattice similarity between ``B_{0,L}`` and ``B_{0,L/beta}``.

    The dilated box reuses N, so its Laplacian is ``beta^2`` times the small
    one. Its smooth noise is the pulled-back field ``beta^2 xi_eps`` and its
    constant is ``beta^2 C_big(eps)``; link phases of ``A_beta`` coincide with
    those of ``A``. Hence ``lambda_n(big) = beta^2 lambda_n(small) + delta``
    with ``delta = beta^2 C_big(eps) - beta^2 C_small(eps)``. ``seed=None``
    runs the noise-free case where delta = 0.
    """
    _check_beta(beta)
    small, big = make_grid(L, N), make_grid(L / beta, N)
    if seed is None:
        ms, mb = zero_model(small, eps), zero_model(big, eps)
        delta = 0.0
    else:
        noise = sample_white_noise(small, seed, 0)
        xi_eps = mollify(noise, eps)
        Cs = renorm_constant(small, eps)
        Cb = beta**2 * renorm_constant(big, eps)
        ms = model_from_smooth(small, xi_eps, eps, Cs)
        mb = model_from_smooth(big, beta**2 * xi_eps, eps, Cb)
        delta = Cb - beta**2 * Cs
    As = make_potential(small, A_spec, seed or 0, 0)
    Ab = rescale_potential(As, big, beta)
    rs = lowest_eigs(assemble_direct(small, As, ms), k, tol, strict=True)
    rb = lowest_eigs(assemble_direct(big, Ab, mb), k, tol, strict=True)
    pred = beta**2 * rs.eigenvalues + delta
    err = np.abs(rb.eigenvalues - pred)
    return {"L": L, "N": N, "eps": eps, "beta": beta, "seed": seed, "A_spec": A_spec,
            "lambda_small": rs.eigenvalues.tolist(), "lambda_big": rb.eigenvalues.tolist(),
            "delta": delta, "identity_error": err.tolist(), "max_error": float(err.max()),
            "holds": bool(err.max() <= atol),
            "delta_ratio": delta / (beta**2 * math.log(1 / beta)) if delta else 0.0,
            "potential_convention": "A_beta(x) = beta A(beta x) on the dilated box"}


# ---------------------------------------------------------------- boxes

@dataclass
class BoxTiling:
    L: float
    r: float
    N1: list = field(default_factory=list)
    N2: list = field(default_factory=list)

    def __post_init__(self):
        if not (self.r > 0 and self.L > 0):
            raise ValueError("L and r must be positive")
        if self.r > self.L:
            raise ValueError("tile size r must not exceed L")
        L, r = float(self.L), float(self.r)
        kmax = int(math.ceil(L / (2 * r) + 1))
        ks = range(-kmax, kmax + 1)
        tiny = 1e-12 * L
        self.N1 = [(a, b) for a in ks for b in ks
                   if max(abs(a), abs(b)) * r + r / 2 <= L / 2 + tiny]
        self.N2 = [(a, b) for a in ks for b in ks
                   if max(abs(a), abs(b)) * r < L / 2 + 3 * r / 4 - tiny]

    def reach(self) -> float:
        """Half-side of the smallest centred box containing every N2 tile."""
        return max(max(abs(a), abs(b)) for a, b in self.N2) * self.r + 0.75 * self.r


def _box_grid(side: float, center, delta: float) -> Grid:
    n = side / delta
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"box side {side} is not a multiple of the spacing {delta}")
    return make_grid(side, int(round(n)) - 1, center=center)


def restrict_potential(A: MagneticPotential, sub: Grid) -> MagneticPotential:
    a, b = A.grid.offset_of(sub)
    N = sub.N
    return MagneticPotential(sub, A.A1[a:a + N + 1, b:b + N], A.A2[a:a + N, b:b + N + 1],
                             A.description, A.holder_norm_estimate, A.params)


def box_decomposition_test(L: float, r: float, seed: int, delta: float = 0.125,
                           eps: float = 0.25, A_spec: str = "zero", tol: float = 1e-9) -> dict:
    """Upper bound ``lambda_1(B_{0,L}) <= min_{N1} lambda_1(B_{kr,r})`` and the
    smallest ``K`` with ``min_{N2} lambda_1(B_{kr,3r/2}) - K/r^2 <= lambda_1(B_{0,L})``.

    One noise realization lives on an ambient box covering every tile. It is
    mollified once there; each box restricts the smooth field and solves its
    own Dirichlet problem for h. All boxes share the ambient constant, so
    each box operator is a principal submatrix of the ambient one.
    """
    tiling = BoxTiling(L, r)
    side = 2 * tiling.reach()
    side = math.ceil(side / (2 * delta) - 1e-9) * 2 * delta
    amb = _box_grid(side, (0.0, 0.0), delta)
    noise = sample_white_noise(amb, seed, 0)
    xi_eps = mollify(noise, eps)
    C = renorm_constant(amb, eps)
    A_amb = make_potential(amb, A_spec, seed, 0)

    def lam1(side_, center):
        g = _box_grid(side_, center, delta)
        m = model_from_smooth(g, amb.restrict(xi_eps, g), eps, C)
        H = assemble_direct(g, restrict_potential(A_amb, g), m)
        return lowest_eigs(H, 1, tol, strict=True).lambda1()

    lamL = lam1(L, (0.0, 0.0))
    up = {k: lam1(r, (k[0] * r, k[1] * r)) for k in tiling.N1}
    low = {k: lam1(1.5 * r, (k[0] * r, k[1] * r)) for k in tiling.N2}
    min_up, min_low = min(up.values()), min(low.values())
    slack = tol * max(1.0, abs(lamL)) * 10
    return {"L": L, "r": r, "seed": seed, "delta": delta, "eps": eps, "A_spec": A_spec,
            "lambda_L": lamL, "min_N1": min_up, "min_N2": min_low,
            "n_N1": len(tiling.N1), "n_N2": len(tiling.N2),
            "upper_bound_holds": bool(lamL <= min_up + slack),
            "K_needed": max(0.0, r**2 * (min_low - lamL)), "ambient_L": side}


def box_K_study(L_list, r: float, seeds, **kw) -> dict:
    """Per-L worst-case ``K`` over seeds and the upper-bound pass count."""
    out = {}
    for L in L_list:
        reps = [box_decomposition_test(L, r, s, **kw) for s in seeds]
        Ks = np.array([x["K_needed"] for x in reps])
        out[float(L)] = {"K_max": float(Ks.max()), "K_mean": float(Ks.mean()),
                         "upper_bound_passes": int(sum(x["upper_bound_holds"] for x in reps)),
                         "n": len(reps), "K_all": Ks.tolist()}
    Kmax = [v["K_max"] for v in out.values()]
    ratio = max(Kmax) / min(Kmax) if min(Kmax) > 0 else float("inf")
    return {"r": r, "per_L": out, "K_ratio": ratio}


# ---------------------------------------------------------------- tails

def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    den = 1 + z**2 / n
    c = (p + z**2 / (2 * n)) / den
    h = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / den
    lo = 0.0 if k == 0 else max(0.0, c - h)
    hi = 1.0 if k == n else min(1.0, c + h)
    return lo, hi


def tail_envelope(x, L: float, rho: float, r: float = 1.0, eta: float = 0.0):
    """Lower and upper envelope shapes of ``P(-lambda_1 >= x)``, NaN for ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    xp = np.where(x > 0, x, np.nan)
    with np.errstate(over="ignore"):
        lo = -np.expm1(-(xp / (2 * r**2)) * np.exp(2 * math.log(L) - (1 + eta) * rho * xp))
        hi = (2 * xp / r**2) * np.exp(2 * math.log(L) - (1 - eta) * rho * xp)
    return lo, hi


def exceedance_table(lam1: np.ndarray, x_list) -> list[dict]:
    s = -np.asarray(lam1, dtype=float)
    n = s.size
    rows = []
    for x in x_list:
        c = int(np.sum(s >= x))
        lo, hi = wilson_interval(c, n)
        rows.append({"x": float(x), "count": c, "p": c / n, "ci_low": lo, "ci_high": hi})
    return rows


def tail_slope(table, min_count: int = 10, p_max: float = 0.5) -> dict:
    """Weighted least-squares slope of ``log P`` over the resolvable window.

    The window keeps points in the upper tail (``P <= p_max``) with at least
    ``min_count`` exceedances; weights are binomial inverse variances of
    ``log P``.
    """
    pts = [t for t in table if t["count"] >= min_count and t["p"] <= p_max]
    if len(pts) < 3:
        return {"slope": float("nan"), "stderr": float("nan"), "window": [], "n_points": len(pts)}
    x = np.array([t["x"] for t in pts])
    c = np.array([t["count"] for t in pts], dtype=float)
    n = c / np.array([t["p"] for t in pts])
    y = np.log(c / n)
    w = 1 / ((1 - c / n) / c)
    X = np.vstack([np.ones_like(x), x]).T
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    beta = cov @ (X.T @ (w * y))
    return {"slope": float(beta[1]), "stderr": float(math.sqrt(cov[1, 1])),
            "window": [float(x.min()), float(x.max())], "n_points": len(pts)}


def _tail_job(job):
    L, N, eps, seed, i = job
    return solve_sample(make_grid(L, N), eps, seed, i, "zero", 1).lambda1()


def tail_estimate(L: float, x_list=None, n_samples: int = 4000, base_seed: int = 0,
                  N: int = 255, eps: float = 0.125, rho: float | None = None,
                  threads: int | None = None, samples=None) -> dict:
    """Empirical ``P(-lambda_1^L >= x)`` with Wilson intervals and the envelope overlay.

    ``samples`` reuses precomputed lambda_1 values instead of solving.
    """
    rho = RHO_REFERENCE if rho is None else rho
    if samples is None:
        jobs = [(L, N, eps, base_seed, i) for i in range(n_samples)]
        samples = np.array(_map(_tail_job, jobs, threads))
    samples = np.asarray(samples, dtype=float)
    if x_list is None:
        s = -samples
        x_list = np.linspace(np.quantile(s, 0.01), s.max(), 40)
    table = exceedance_table(samples, x_list)
    lo, hi = tail_envelope([t["x"] for t in table], L, rho)
    for t, a, b in zip(table, lo, hi):
        t["envelope_low"], t["envelope_high"] = float(a), float(b)
    fit = tail_slope(table)
    ps = [t["p"] for t in table]
    return {"L": L, "N": N, "eps": eps, "n_samples": int(samples.size), "rho": rho,
            "table": table, "slope": fit, "monotone": bool(np.all(np.diff(ps) <= 0)),
            "slope_over_minus_rho": fit["slope"] / -rho,
            "lambda1_quantiles": np.quantile(samples, [0.01, 0.1, 0.5, 0.9, 0.99]).tolist(),
            "samples": samples}


# ---------------------------------------------------------------- asymptotics

def _asym_job(job):
    L, N, eps, seed, i, specs, k, ir_mass = job
    g = make_grid(L, N)
    model = build_model(sample_white_noise(g, seed, i), eps, ir_mass)
    out = {}
    for spec in specs:
        H = assemble_direct(g, make_potential(g, spec, seed, i), model)
        out[spec] = lowest_eigs(H, k, MC_TOL, seed=i).eigenvalues[:k].tolist()
    return out


def _ls_slope(x, y, se):
    w = 1 / np.asarray(se) ** 2
    X = np.vstack([np.ones_like(x), x]).T
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    b = cov @ (X.T @ (w * y))
    return float(b[1]), float(math.sqrt(cov[1, 1]))


def asymptotic_fit(L_list, n_samples: int = 200, delta: float = 0.125, eps: float = 0.25,
                   A_specs=("zero", "uniform:1", "gff"), k: int = 2, base_seed: int = 0,
                   ir_mass: float = 1.0, threads: int | None = None) -> dict:
    """Mean lambda_n versus log L at fixed spacing and eps, per A-spec.

    The constant uses the massive Green function (``ir_mass``) so it does not
    drift with the box size; see the module notes in the README.
    """
    L_list = [float(L) for L in L_list]
    if len(L_list) < 3:
        raise ValueError("need at least three box sizes")
    specs = tuple(A_specs)
    per = {s: {n: [] for n in range(1, k + 1)} for s in specs}
    raw = {}
    for L in L_list:
        N = int(round(L / delta)) - 1
        jobs = [(L, N, eps, base_seed, i, specs, k, ir_mass) for i in range(n_samples)]
        res = _map(_asym_job, jobs, threads)
        for s in specs:
            arr = np.array([r[s] for r in res])
            raw[(s, L)] = arr
            for n in range(1, k + 1):
                v = arr[:, n - 1]
                per[s][n].append((float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))))
    logL = np.log(L_list)
    out = {"L_list": L_list, "delta": delta, "eps": eps, "n_samples": n_samples,
           "ir_mass": ir_mass, "C_GN": C_GN_REFERENCE, "fits": {}}
    for s in specs:
        out["fits"][s] = {}
        for n in range(1, k + 1):
            m = np.array([a for a, _ in per[s][n]])
            se = np.array([b for _, b in per[s][n]])
            slope, sse = _ls_slope(logL, m, se)
            out["fits"][s][n] = {"means": m.tolist(), "stderr": se.tolist(), "slope": slope,
                                 "slope_stderr": sse, "slope_over_minus_C_GN": slope / -C_GN_REFERENCE}
    # paired slope differences remove the shared noise
    out["paired"] = {}
    for s in specs[1:]:
        d = [raw[(s, L)][:, 0] - raw[(specs[0], L)][:, 0] for L in L_list]
        m = np.array([v.mean() for v in d])
        se = np.array([v.std(ddof=1) / math.sqrt(v.size) for v in d])
        slope, sse = _ls_slope(logL, m, np.maximum(se, 1e-15))
        out["paired"][s] = {"slope_difference": slope, "stderr": sse}
    return out


# ---------------------------------------------------------------- eps ladder

def _eps_job(job):
    L, N, eps_list, seed, i, A_spec = job
    g = make_grid(L, N)
    noise = sample_white_noise(g, seed, i)
    A = make_potential(g, A_spec, seed, i)
    lam, X0 = [], None
    for e in eps_list:
        H = assemble_direct(g, A, build_model(noise, e))
        if X0 is not None and N > 48:
            # warm start from the previous rung of the ladder
            r = lowest_eigs(H, 1, MC_TOL, method="lobpcg", seed=i, X0=X0, multilevel=False)
        else:
            r = lowest_eigs(H, 1, MC_TOL, seed=i)
        lam.append(r.lambda1())
        X0 = r.eigenvectors[:, :, :1]
    return lam


def epsilon_convergence_study(L: float, N_list, eps_list, n_samples: int = 100,
                              base_seed: int = 0, A_spec: str = "zero",
                              threads: int | None = None) -> dict:
    """Coupled eps-ladder: the same noise realization at every eps on one grid.

    Reports per-realization ``|lambda_1(eps_j) - lambda_1(eps_{j+1})|`` and
    whether the medians decrease strictly along the ladder.
    """
    eps_list = [float(e) for e in eps_list]
    out = {"L": L, "eps_list": eps_list, "n_samples": n_samples, "A_spec": A_spec, "per_N": {}}
    for N in ([N_list] if isinstance(N_list, int) else N_list):
        g = make_grid(L, N)
        for e in eps_list:
            if e < 2 * g.delta:
                raise ValueError(f"eps={e} below 2*delta on N={N}")
        jobs = [(L, N, eps_list, base_seed, i, A_spec) for i in range(n_samples)]
        lam = np.array(_map(_eps_job, jobs, threads))
        diffs = np.abs(np.diff(lam, axis=1))
        med = np.median(diffs, axis=0)
        out["per_N"][int(N)] = {"lambda1": lam, "differences": diffs, "medians": med.tolist(),
                                "strictly_decreasing": bool(np.all(np.diff(med) < 0)) if med.size > 1 else True}
    return out
