"""Command-line entry point: ``llab <subcommand> [--config cfg.json] [flags]``.

Exit status: 0 on success, 1 on invalid input, 2 when a solver fails.
Experiment flags override values from the JSON config.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import experiments as ex
from .eigensolver import ConvergenceError
from .fields import build_model, mollify, sample_white_noise
from .grid import make_grid
from .io import atomic_write, field_to_csv, save_field
from .semigroup import EvolutionError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


CONTRACTS = {
    "sample": "Sample one noise realization and write a field (noise, xi_eps, h or Z) "
              "as a binary container, or as CSV with --csv.",
    "spectrum": "Lowest k eigenvalues per sample; writes the CSV table and a manifest "
                "next to it (--out). One row per (sample, n).",
    "scaling": "Coupled scaling identity on B_{0,L} and B_{0,L/beta} for beta = 2^-m; "
               "prints the identity error per eigenvalue and the delta ratio.",
    "boxes": "Box decomposition bounds for tiles of size r; prints the upper-bound "
             "pass count and the smallest K per box size.",
    "tail": "Empirical exceedance probabilities of -lambda_1 with Wilson intervals "
            "and the fitted log-slope against -rho.",
    "asymptotic": "Mean lambda_n against log L at fixed spacing and eps, per A-spec; "
                  "prints slopes relative to -C_GN.",
    "eps-study": "Coupled eps-ladder on one grid; prints median successive differences "
                 "of lambda_1.",
    "gn": "Gagliardo-Nirenberg constant by maximizing J on a grid; prints C_GN and "
          "rho = 2/C_GN.",
    "rho": "Rate problem on B_{0,r}: minimal 1/2 ||phi||^2 with lambda_1(-Delta+phi) <= -1.",
    "translate": "KS test of lambda_1 on B_{0,L} against B_{y,L} plus the exact gauge "
                 "mechanism check. A must be zero or uniform.",
}


def _floats(s):
    return [float(x) for x in s.split(",")]


def _ints(s):
    return [int(x) for x in s.split(",")]


def _experiment_flags(p, with_k=True):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--L", type=_floats, help="box side(s), comma separated")
    p.add_argument("--N", type=_ints, help="interior points per side, comma separated")
    p.add_argument("--eps", type=_floats, help="mollification scale(s), comma separated")
    p.add_argument("--samples", type=int, help="number of samples")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--A", help="magnetic potential: zero | uniform:b | gff[:cutoff]")
    if with_k:
        p.add_argument("--k", type=int, help="number of eigenvalues")
    p.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="llab", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name):
        return sub.add_parser(name, help=CONTRACTS[name], description=CONTRACTS[name])

    s = add("sample")
    s.add_argument("--L", type=float, required=True)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stream", type=int, default=0)
    s.add_argument("--field", choices=["noise", "xi_eps", "h", "Z"], default="xi_eps")
    s.add_argument("--csv", action="store_true", help="write CSV (j, k, value) instead of binary")
    s.add_argument("--out", required=True)

    _experiment_flags(add("spectrum"))

    s = add("scaling")
    _experiment_flags(s)
    s.add_argument("--beta", type=float, default=0.5)
    s.add_argument("--noise-free", action="store_true")

    s = add("boxes")
    _experiment_flags(s, with_k=False)
    s.add_argument("--r", type=float, required=True)
    s.add_argument("--delta", type=float, default=0.125)

    s = add("tail")
    _experiment_flags(s, with_k=False)

    s = add("asymptotic")
    _experiment_flags(s)
    s.add_argument("--delta", type=float, default=0.125)
    s.add_argument("--ir-mass", type=float, default=1.0)
    s.add_argument("--specs", default="zero,uniform:1,gff",
                   help="comma-separated A-specs compared on the same noise")

    _experiment_flags(add("eps-study"), with_k=False)

    s = add("gn")
    s.add_argument("--L", type=float, required=True)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--tol", type=float, default=1e-8)

    s = add("rho")
    s.add_argument("--r", type=float, required=True)
    s.add_argument("--N", type=int)
    s.add_argument("--tol", type=float, default=1e-6)

    s = add("translate")
    _experiment_flags(s, with_k=False)
    s.add_argument("--shift", type=_floats, action="append",
                   help="translation y as 'y1,y2'; repeatable (default: L,0)")
    return p


def _config(args, experiment: str, defaults: dict) -> ex.ExperimentConfig:
    d = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config) as f:
            loaded = json.load(f)
        if not isinstance(loaded, dict):
            raise ValueError("config must be a JSON object")
        unknown = set(loaded) - {f for f in ex.ExperimentConfig.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        d.update(loaded)
    flags = {"L_list": "L", "N_list": "N", "eps_list": "eps", "n_samples": "samples",
             "base_seed": "seed", "A_spec": "A", "k": "k", "output_path": "out"}
    for key, name in flags.items():
        v = getattr(args, name, None)
        if v is not None:
            d[key] = v
    d.setdefault("experiment", experiment)
    for key in ("L_list", "N_list", "eps_list"):
        if key not in d:
            raise ValueError(f"missing --{flags[key]} (or {key} in the config)")
    return ex.ExperimentConfig.from_dict(d)


def _emit(report, out=None):
    text = json.dumps(report, indent=2, sort_keys=True, default=ex._json_default) + "\n"
    if out:
        atomic_write(out, text)
    sys.stdout.write(text)


def _cmd_sample(a):
    g = make_grid(a.L, a.N)
    noise = sample_white_noise(g, a.seed, a.stream)
    if a.field == "noise":
        v = noise.xi
    elif a.field == "xi_eps":
        v = mollify(noise, a.eps)
    else:
        v = getattr(build_model(noise, a.eps), a.field)
    if a.csv:
        atomic_write(a.out, field_to_csv(v))
    else:
        save_field(a.out, v, g.L, "site")
    print(f"wrote {a.field} (N={g.N}, L={g.L}) to {a.out}")


def _cmd_spectrum(a):
    cfg = _config(a, "spectrum", {"n_samples": 1, "base_seed": 0, "A_spec": "zero", "k": 1})
    rows = ex.run_spectrum_mc(cfg)
    failed = [r for r in rows if str(r["solver"]).startswith("failed")]
    if not cfg.output_path:
        sys.stdout.write(ex.rows_to_csv(rows))
    else:
        print(f"wrote {len(rows)} rows to {cfg.output_path}")
    if failed:
        print(f"{len(failed)} rows have solver failures", file=sys.stderr)
        return 2
    return 0


def _cmd_scaling(a):
    cfg = _config(a, "scaling", {"A_spec": "zero", "k": 3, "base_seed": 0})
    seed = None if a.noise_free else cfg.base_seed
    rep = ex.scaling_identity_test(cfg.L_list[0], cfg.N_list[0], cfg.eps_list[0], a.beta, seed,
                                   cfg.A_spec, cfg.k)
    _emit(rep, cfg.output_path)


def _cmd_boxes(a):
    cfg = _config(a, "boxes", {"n_samples": 1, "base_seed": 0, "A_spec": "zero",
                               "N_list": [int(round(float(a.L[0]) / a.delta)) - 1] if a.L else [1]})
    seeds = range(cfg.base_seed, cfg.base_seed + cfg.n_samples)
    rep = ex.box_K_study(cfg.L_list, a.r, seeds, delta=a.delta, eps=cfg.eps_list[0],
                         A_spec=cfg.A_spec)
    _emit(rep, cfg.output_path)


def _cmd_tail(a):
    cfg = _config(a, "tail", {"n_samples": 1000, "base_seed": 0})
    rep = ex.tail_estimate(cfg.L_list[0], None, cfg.n_samples, cfg.base_seed, cfg.N_list[0],
                           cfg.eps_list[0])
    rep.pop("samples")
    _emit(rep, cfg.output_path)


def _cmd_asymptotic(a):
    L = a.L or []
    cfg = _config(a, "asymptotic", {"n_samples": 200, "base_seed": 0, "A_spec": "zero", "k": 2,
                                     "N_list": [int(round(x / a.delta)) - 1 for x in L] or [1]})
    specs = [x.strip() for x in a.specs.split(",") if x.strip()]
    for x in specs:
        ex.parse_A_spec(x)
    rep = ex.asymptotic_fit(cfg.L_list, cfg.n_samples, a.delta, cfg.eps_list[0], specs, cfg.k,
                            cfg.base_seed, a.ir_mass)
    _emit(rep, cfg.output_path)


def _cmd_eps(a):
    cfg = _config(a, "eps-study", {"n_samples": 100, "base_seed": 0, "A_spec": "zero"})
    rep = ex.epsilon_convergence_study(cfg.L_list[0], cfg.N_list, cfg.eps_list, cfg.n_samples,
                                       cfg.base_seed, cfg.A_spec)
    for v in rep["per_N"].values():
        v.pop("lambda1")
        v.pop("differences")
    _emit(rep, cfg.output_path)


def _cmd_gn(a):
    from .variational import gn_constant
    r = gn_constant(make_grid(a.L, a.N), a.tol)
    print(f"C_GN = {r.value:.8f}")
    print(f"rho = 2/C_GN = {2 / r.value:.6f}")
    print(f"iterations = {r.iterations}, gradient = {r.gradient_norm_final:.2e}")


def _cmd_rho(a):
    from .variational import rate_rho
    r = rate_rho(a.r, a.tol, a.N)
    print(f"rho_r(-1) = {r.value:.6f} (r = {a.r}, N = {r.grid_spec['N']})")
    print(f"lambda_1 = {r.extra['lambda1']:.8f}, violation = {r.extra['violation']:.2e}")


def _cmd_translate(a):
    cfg = _config(a, "translate", {"n_samples": 500, "base_seed": 0, "A_spec": "uniform:1"})
    shifts = a.shift or [[cfg.L_list[0], 0.0]]
    for y in shifts:
        if len(y) != 2:
            raise ValueError("--shift takes two comma-separated numbers")
    rep = ex.translation_invariance_test(cfg, shifts)
    _emit(rep, cfg.output_path)


COMMANDS = {"sample": _cmd_sample, "spectrum": _cmd_spectrum, "scaling": _cmd_scaling,
            "boxes": _cmd_boxes, "tail": _cmd_tail, "asymptotic": _cmd_asymptotic,
            "eps-study": _cmd_eps, "gn": _cmd_gn, "rho": _cmd_rho, "translate": _cmd_translate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        rc = COMMANDS[args.command](args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (ConvergenceError, EvolutionError, np.linalg.LinAlgError) as e:
        print(f"llab: solver failure: {e}", file=sys.stderr)
        return 2
    except (ValueError, IndexError, KeyError, OSError, json.JSONDecodeError) as e:
        print(f"llab: invalid input: {e}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
