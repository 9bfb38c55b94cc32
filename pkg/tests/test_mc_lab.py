from __future__ import annotations

import numpy as np
import pytest

from shiftlab.errors import ConfigError
from shiftlab.fixtures import affine_proxy_joint, bent_proxy_joint, latent_score_joint
from shiftlab.mc_lab import (
    BENCH_METHODS,
    ExperimentConfig,
    replication_rng,
    run_finite_sample_experiment,
    run_permutation_benchmark,
    run_proxy_bias_sweep,
    run_theorem1_experiment,
    run_theorem2_experiment,
)
from shiftlab.shifts import ShiftSpec

SYM = "symmetric_dirichlet"


def t1_config(joint, k2=0.1, k1=0.05, n_reps=2000, seed=0, **kw):
    return ExperimentConfig(joint, ShiftSpec(SYM, k2), ShiftSpec(SYM, k1), n_reps=n_reps, seed=seed, **kw)


def t2_config(joint, scale=0.3, n_reps=1000, seed=0):
    spec = ShiftSpec("asymmetric_marginal", scale)
    return ExperimentConfig(joint, spec, spec, n_reps=n_reps, seed=seed)


# -- configuration -----------------------------------------------------------

def test_config_validation(D0):
    with pytest.raises(ConfigError):
        t1_config(D0, n_reps=99)
    with pytest.raises(ConfigError):
        t1_config(D0, x_weighting="bogus")
    with pytest.raises(ConfigError):
        t1_config(D0, seed=-1)
    with pytest.raises(ConfigError):
        t1_config(D0, n_batches=0)
    with pytest.raises(ConfigError):
        run_theorem1_experiment(t2_config(D0))
    with pytest.raises(ConfigError):
        run_theorem2_experiment(t1_config(D0))


def test_replication_streams_are_independent_of_scheduling():
    a = replication_rng(7, 1, 42).random(3)
    b = replication_rng(7, 1, 42).random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, replication_rng(7, 2, 42).random(3))
    assert not np.array_equal(a, replication_rng(7, 1, 43).random(3))


# -- symmetric-shift experiment ----------------------------------------------

def test_symmetric_experiment_is_bit_reproducible(D0):
    r1 = run_theorem1_experiment(t1_config(D0, n_reps=300, seed=11))
    r2 = run_theorem1_experiment(t1_config(D0, n_reps=300, seed=11))
    for m in ("A", "B_scaled", "C"):
        assert np.array_equal(r1.per_rep[m], r2.per_rep[m])
        assert r1[m].empirical_mse == r2[m].empirical_mse


def test_symmetric_experiment_prefix_does_not_depend_on_n_reps(D0):
    short = run_theorem1_experiment(t1_config(D0, n_reps=200, seed=5))
    long = run_theorem1_experiment(t1_config(D0, n_reps=500, seed=5))
    for m in short.per_rep:
        assert np.array_equal(short.per_rep[m], long.per_rep[m][:200])


def test_symmetric_experiment_matches_prediction_on_D0(D0):
    r = run_theorem1_experiment(t1_config(D0, n_reps=4000, seed=1))
    assert r.all_pass
    assert r["A"].theory_total == pytest.approx(0.0375)
    assert r["C"].theory_total == pytest.approx(0.0330)
    assert r.extras["ordering_fraction_C_le_A"] >= 0.9


def test_symmetric_experiment_vanishing_shift_gives_vanishing_mse(D0):
    r = run_theorem1_experiment(t1_config(D0, k2=1e-6, k1=1e-6, n_reps=200))
    for m in ("A", "B_scaled", "C"):
        assert r[m].empirical_mse < 1e-5


def test_symmetric_experiment_standard_error_scales_with_root_n(D0):
    small = run_theorem1_experiment(t1_config(D0, n_reps=1000, seed=2))
    big = run_theorem1_experiment(t1_config(D0, n_reps=4000, seed=3))
    for m in ("A", "C"):
        ratio = small[m].mc_standard_error / big[m].mc_standard_error
        assert ratio == pytest.approx(2.0, rel=0.15)


def test_second_stage_error_does_not_depend_on_method(D0):
    # err_A - err_C carries only the first-stage shift: regressing it on the
    # first-stage magnitude leaves no intercept
    r = run_theorem1_experiment(t1_config(D0, n_reps=4000, seed=4))
    d = r.per_rep["A"] - r.per_rep["C"]
    s = r.extras["stage1_magnitude"]
    X = np.column_stack([np.ones_like(s), s])
    coef, *_ = np.linalg.lstsq(X, d, rcond=None)
    resid = d - X @ coef
    cov = np.linalg.inv(X.T @ X) * resid.var(ddof=2)
    assert abs(coef[0]) <= 4 * np.sqrt(cov[0, 0])
    assert coef[1] > 0


def test_symmetric_experiment_reports_both_tolerance_rules(D0):
    r = run_theorem1_experiment(t1_config(D0, n_reps=500))
    assert set(r.extras["pass_max_rule"]) == {"A", "B_scaled", "C"}
    assert r.batch_ordering("C", "C", 10) == 1.0


# -- invariant-conditional experiment ----------------------------------------

def test_invariant_conditional_zero_scale_is_exact(D0):
    r = run_theorem2_experiment(t2_config(D0, scale=0.0, n_reps=100))
    for m in ("A", "B", "B_scaled", "C"):
        assert r[m].empirical_mse == 0.0


def test_invariant_conditional_ordering_on_D0(D0):
    r = run_theorem2_experiment(t2_config(D0, n_reps=1000, seed=2))
    assert r.all_pass
    for m in ("A", "B", "B_scaled"):
        d, se = r.extras[f"C_minus_{m}"]
        assert d <= 4 * se


def test_invariant_conditional_with_paired_proxy_perturbation(D0):
    spec = ShiftSpec("paired_perturbation", 0.05, y1_marginal_only=True)
    r = run_theorem2_experiment(ExperimentConfig(D0, spec, spec, n_reps=500, seed=3))
    assert r["C"].passed


# -- finite samples ----------------------------------------------------------

def test_finite_sample_variances_match_oracle(D0):
    rep = run_finite_sample_experiment(D0, 0, 4000, 2000, n_reps=2000, seed=0)
    assert rep.rho == 0.5
    for m in ("A", "C"):
        assert rep.results[m].passed, rep.results[m]
    assert rep.results["A"].n_var < rep.results["C"].n_var


def test_finite_sample_linear_proxy(D0):
    rep = run_finite_sample_experiment(affine_proxy_joint(), 0, 2000, 4000, n_reps=2000, seed=1,
                                       linear_proxy_beta=(0.3, 0.2))
    assert rep.proxy_bias["linear_proxy_holds"]
    assert rep.results["B_scaled"].passed
    assert abs(rep.proxy_bias["empirical"]) <= 4 * rep.proxy_bias["se"]


def test_finite_sample_bent_proxy_has_no_sigma_B():
    rep = run_finite_sample_experiment(bent_proxy_joint(), 1, 1000, 1000, n_reps=50, seed=1,
                                       linear_proxy_beta=(1.0, 0.0))
    assert not rep.proxy_bias["linear_proxy_holds"]
    assert rep.results["B_scaled"].oracle is None and rep.results["B_scaled"].passed is None


def test_finite_sample_config_errors(D0):
    with pytest.raises(ConfigError):
        run_finite_sample_experiment(D0, 0, 999, 1000, n_reps=10, seed=0)
    with pytest.raises(ConfigError):
        run_finite_sample_experiment(D0, 0, 1000, 1000, n_reps=1, seed=0)


def test_proxy_bias_does_not_shrink():
    rows = run_proxy_bias_sweep(bent_proxy_joint(), 1, (1.0, 0.0), sizes=(1000, 10000), n_reps=100, seed=0)
    pop = rows[0]["population_bias"]
    assert pop != 0
    for row in rows:
        assert abs(row["bias"] - pop) <= 4 * row["se"] + 1e-12


# -- permutation benchmark ---------------------------------------------------

def test_benchmark_shape_and_reproducibility():
    j = latent_score_joint()
    kw = dict(joint=j, shift_grid=(0.0, 1.0), proxy_strengths=(0.0,), n_splits=4, seed=9, n_total=600)
    t1, t2 = run_permutation_benchmark(**kw), run_permutation_benchmark(**kw)
    assert t1.rows == t2.rows
    assert len(t1.rows) == 2 * len(BENCH_METHODS)
    row = t1.cell(0.0, 1.0, "C")
    assert {"mse", "mse_se", "r2", "r2_se"} <= set(row)
    d, se = t1.paired(0.0, 1.0, "C", "A")
    assert np.isfinite(d) and se >= 0
    with pytest.raises(KeyError):
        t1.cell(0.5, 1.0, "C")


def test_benchmark_config_errors():
    j = latent_score_joint()
    with pytest.raises(ConfigError):
        run_permutation_benchmark()
    with pytest.raises(ConfigError):
        run_permutation_benchmark(joint=j, shift_grid=(1.5,))
    with pytest.raises(ConfigError):
        run_permutation_benchmark(joint=j, n_splits=1)
