import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llab import experiments as ex
from llab.eigensolver import ConvergenceError, lowest_eigs
from llab.experiments import (CSV_COLUMNS, BoxTiling, ExperimentConfig, asymptotic_fit,
                              box_decomposition_test, epsilon_convergence_study, exceedance_table,
                              gauge_mechanism_check, parse_A_spec, read_csv, run_spectrum_mc,
                              scaling_delta, scaling_delta_ladder, scaling_identity_test,
                              tail_estimate, tail_slope, translation_invariance_test,
                              wilson_interval)
from llab.fields import renorm_constant
from llab.grid import make_grid


def _cfg(**kw):
    d = dict(experiment="t", L_list=[4.0], N_list=[15], eps_list=[0.6], n_samples=3, k=2)
    d.update(kw)
    return ExperimentConfig(**d)


# ---------------------------------------------------------------- config

def test_config_broadcast_and_triples():
    c = ExperimentConfig("t", [4, 8], [31], [1.0, 2.0])
    assert c.N_list == [31, 31]
    assert list(c.triples()) == [(4.0, 31, 1.0), (4.0, 31, 2.0), (8.0, 31, 1.0), (8.0, 31, 2.0)]


@pytest.mark.parametrize("kw", [dict(eps_list=[0.3]), dict(k=0), dict(k=33), dict(n_samples=0),
                                dict(A_spec="vortex"), dict(N_list=[15, 31]), dict(L_list=[])])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        _cfg(**kw)


def test_config_from_dict_and_json(tmp_path):
    d = dict(experiment="t", L_list=[4.0], N_list=[15], eps_list=[0.6])
    assert ExperimentConfig.from_dict(d).n_samples == 1
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict(dict(d, colour="red"))
    with pytest.raises(ValueError, match="missing"):
        ExperimentConfig.from_dict({"experiment": "t"})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    assert ExperimentConfig.from_json(p).L_list == [4.0]
    p.write_text("[1, 2]")
    with pytest.raises(ValueError):
        ExperimentConfig.from_json(p)


@pytest.mark.parametrize("spec,out", [("zero", ("zero", None)), ("uniform", ("uniform", 1.0)),
                                      ("uniform:2.5", ("uniform", 2.5)), ("GFF", ("gff", None)),
                                      ("gff:0.25", ("gff", 0.25))])
def test_parse_A_spec(spec, out):
    assert parse_A_spec(spec) == out


@pytest.mark.parametrize("spec", ["zero:1", "uniform:x", "landau", ""])
def test_parse_A_spec_rejects(spec):
    with pytest.raises(ValueError):
        parse_A_spec(spec)


def test_threads_env(monkeypatch):
    monkeypatch.setenv("LLAB_THREADS", "3")
    assert ex.default_threads() == 3
    monkeypatch.setenv("LLAB_THREADS", "0")
    with pytest.raises(ValueError):
        ex.default_threads()


# ---------------------------------------------------------------- spectrum MC

def test_spectrum_rows_csv_and_byte_identical_reruns(tmp_path):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    rows = run_spectrum_mc(_cfg(output_path=str(p1), A_spec="gff"), threads=1)
    run_spectrum_mc(_cfg(output_path=str(p2), A_spec="gff"), threads=1)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert len(rows) == 6 and [r["n"] for r in rows[:2]] == [1, 2]
    back = read_csv(p1)
    assert float(back[0]["lambda_n"]) == rows[0]["lambda_n"]
    assert all(r["wall_ms"] == "" for r in back)
    man = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert man["config"]["A_spec"] == "gff" and man["code_version"]
    assert abs(man["rho"] * man["C_GN"] - 2) < 1e-12


def test_spectrum_matches_direct_solve_and_parallel():
    cfg = _cfg(A_spec="uniform:1")
    rows = run_spectrum_mc(cfg, threads=1, write=False)
    par = run_spectrum_mc(cfg, threads=2, write=False)
    assert [r["lambda_n"] for r in rows] == [r["lambda_n"] for r in par]
    res = ex.solve_sample(make_grid(4.0, 15), 0.6, 0, 1, "uniform:1", 2)
    assert rows[2]["lambda_n"] == res.eigenvalues[0] and rows[2]["stream"] == 1
    tab = ex.lambda_table(rows, 2)
    assert tab[(4.0, 15, 0.6)].size == 3


def test_spectrum_failure_recorded(monkeypatch):
    def boom(*a, **k):
        raise ConvergenceError("no")
    monkeypatch.setattr(ex, "solve_sample", boom)
    rows = run_spectrum_mc(_cfg(), threads=1, write=False)
    assert all(r["solver"].startswith("failed") and math.isnan(r["lambda_n"]) for r in rows)


def test_timing_column_filled():
    rows = run_spectrum_mc(_cfg(n_samples=1), timing=True, threads=1, write=False)
    assert all(isinstance(r["wall_ms"], float) for r in rows)


# ---------------------------------------------------------------- translation

@pytest.mark.parametrize("spec", ["zero", "uniform:1"])
def test_gauge_mechanism_dense(spec):
    rep = gauge_mechanism_check(3.0, 10, 0.6, spec, (0.75, -1.5), seed=2)
    assert rep["max_entry_difference"] < 1e-12
    assert rep["max_eigenvalue_difference"] < 1e-11


def test_gauge_mechanism_rejects_gff():
    with pytest.raises(ValueError):
        gauge_mechanism_check(3.0, 10, 0.6, "gff", (1.0, 0.0))


def test_translation_zero_shift_identical_samples():
    rep = translation_invariance_test(_cfg(n_samples=6, A_spec="uniform:1"), [(0.0, 0.0)],
                                      threads=1, mechanism_samples=1)
    s = rep["shifts"][0]
    assert s["ks_statistic"] == 0.0 and s["p_value"] == 1.0 and s["passed"]


# ---------------------------------------------------------------- scaling

@pytest.mark.parametrize("spec", ["zero", "uniform:1", "gff"])
def test_scaling_identity_exact(spec):
    rep = scaling_identity_test(4.0, 31, 0.5, 0.5, seed=3, A_spec=spec)
    assert rep["holds"], rep["identity_error"]
    assert rep["delta"] == pytest.approx(scaling_delta(4.0, 31, 0.5, 0.5), rel=1e-12)


def test_scaling_noise_free_delta_zero():
    rep = scaling_identity_test(4.0, 31, 0.5, 0.25, seed=None, A_spec="uniform:1")
    assert rep["delta"] == 0.0 and rep["holds"]
    lam_s = np.array(rep["lambda_small"])
    assert np.allclose(rep["lambda_big"], 0.0625 * lam_s, rtol=1e-9)


@pytest.mark.parametrize("beta", [0.0, 1.0, 0.3, -0.5])
def test_scaling_beta_validation(beta):
    with pytest.raises(ValueError):
        scaling_delta(4.0, 31, 0.5, beta)


def test_scaling_delta_definition_and_sign():
    L, N, eps = 8.0, 255, 1.0
    d = scaling_delta(L, N, eps, 0.5)
    C_small = renorm_constant(make_grid(L, N), eps)
    C_big = renorm_constant(make_grid(2 * L, N), eps)
    assert d == pytest.approx(0.25 * (C_big - C_small), rel=1e-14)
    lad = scaling_delta_ladder(L, N, eps, (0.5, 0.25))
    assert all(o["delta"] > 0 for o in lad["ladder"])


# ---------------------------------------------------------------- boxes

@settings(max_examples=30, deadline=None)
@given(st.sampled_from([1.0, 2.0, 4.0]), st.integers(1, 8))
def test_box_tiling_invariants(r, m):
    L = r * m
    t = BoxTiling(L, r)
    assert set(t.N1) <= set(t.N2)
    for a, b in t.N1:
        assert max(abs(a), abs(b)) * r + r / 2 <= L / 2 + 1e-9
    # enlarged N2 tiles cover the big box
    ks = sorted({a for a, _ in t.N2})
    assert max(ks) * r + 0.75 * r >= L / 2
    assert t.reach() >= L / 2


def test_box_tiling_rejects():
    with pytest.raises(ValueError):
        BoxTiling(4.0, 8.0)
    with pytest.raises(ValueError):
        BoxTiling(0.0, 1.0)


def test_box_counts_l16_r4():
    t = BoxTiling(16.0, 4.0)
    assert len(t.N1) == 9 and len(t.N2) == 25


@pytest.mark.parametrize("spec", ["zero", "gff"])
def test_box_decomposition_small(spec):
    rep = box_decomposition_test(4.0, 2.0, seed=1, A_spec=spec)
    assert rep["upper_bound_holds"]
    assert rep["lambda_L"] <= rep["min_N1"] + 1e-8
    assert rep["K_needed"] >= 0 and rep["n_N1"] == 1


# ---------------------------------------------------------------- tails

def test_wilson_interval():
    lo, hi = wilson_interval(0, 50)
    assert lo == 0.0 and 0 < hi < 0.1
    lo, hi = wilson_interval(30, 100)
    assert lo < 0.3 < hi
    with pytest.raises(ValueError):
        wilson_interval(1, 0)


def test_exceedance_and_slope_on_exponential_law():
    rng = np.random.default_rng(0)
    s = rng.exponential(0.5, 20000)
    rep = tail_estimate(8.0, x_list=np.linspace(0.1, 2.5, 25), samples=-s)
    assert rep["monotone"]
    assert abs(rep["slope"]["slope"] + 2) < 4 * rep["slope"]["stderr"] + 0.05
    tab = exceedance_table(-s, [0.5])
    assert tab[0]["count"] == int(np.sum(s >= 0.5))


def test_tail_slope_needs_points():
    fit = tail_slope([{"x": 1.0, "count": 3, "p": 0.1}])
    assert math.isnan(fit["slope"])


def test_tail_estimate_solves_small():
    rep = tail_estimate(4.0, n_samples=20, N=15, eps=0.6, threads=1)
    assert rep["n_samples"] == 20 and rep["monotone"]
    res = ex.solve_sample(make_grid(4.0, 15), 0.6, 0, 7, "zero", 1)
    assert rep["samples"][7] == res.lambda1()


# ---------------------------------------------------------------- trends

def test_asymptotic_fit_small():
    rep = asymptotic_fit([1.0, 2.0, 4.0], n_samples=4, delta=0.125, eps=0.25, k=1, threads=1)
    assert set(rep["fits"]) == {"zero", "uniform:1", "gff"}
    assert len(rep["fits"]["zero"][1]["means"]) == 3
    # shared noise: by the diamagnetic inequality the field can only raise each mean
    for s in ("uniform:1", "gff"):
        assert np.all(np.array(rep["fits"][s][1]["means"]) >= np.array(rep["fits"]["zero"][1]["means"]) - 1e-6)
        assert np.isfinite(rep["paired"][s]["slope_difference"])
    with pytest.raises(ValueError):
        asymptotic_fit([1.0, 2.0], n_samples=2)


def test_epsilon_study_identical_rungs_zero():
    rep = epsilon_convergence_study(4.0, 31, [0.5, 0.5], n_samples=3, threads=1)
    assert np.all(rep["per_N"][31]["differences"] == 0)
    with pytest.raises(ValueError):
        epsilon_convergence_study(4.0, 31, [0.1], n_samples=1)


def test_epsilon_study_coupled_to_direct_solve():
    rep = epsilon_convergence_study(4.0, 31, [1.0, 0.5], n_samples=2, threads=1)
    lam = ex.solve_sample(make_grid(4.0, 31), 0.5, 0, 1, "zero", 1).lambda1()
    assert abs(rep["per_N"][31]["lambda1"][1, 1] - lam) < 1e-5 * max(1, abs(lam))
