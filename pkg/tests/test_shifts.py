from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shiftlab.dist_core import Alphabet, cond_mean_y2_given_y1_x, new_conditional_joint
from shiftlab.errors import (
    ConfigError,
    EmptySampleSet,
    GeneratorError,
    KappaOutOfRange,
    ScaleOutOfRange,
    ZeroCellInBase,
    ZeroMarginalCell,
)
from shiftlab.estimators import SampleSet
from shiftlab.fixtures import random_joint
from shiftlab.shifts import (
    ShiftDraw,
    ShiftSpec,
    asymmetric_array,
    draw_shift,
    paired_array,
    permute_codes,
    permute_covariates,
    sample_asymmetric_shift,
    sample_paired_perturbation,
    sample_symmetric_shift,
    shift_array,
    symmetric_array,
    validate_generator,
    y2_conditional_preserved,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _check_draw(joint, draw, shifted):
    sums = draw.delta.reshape(draw.delta.shape[0], -1).sum(axis=1)
    assert np.all(np.abs(sums) <= 1e-10)
    assert np.all(shifted.table >= 0) and np.all(shifted.table <= 1)
    np.testing.assert_allclose(joint.table + draw.delta, shifted.table, atol=1e-15)


# -- shift specs and draw types -----------------------------------------------------

def test_shift_spec_validation_and_round_trip():
    s = ShiftSpec("asymmetric_marginal", 0.3, "shared_seed")
    assert ShiftSpec.from_dict(s.to_dict()) == s
    assert s.preserves_y2_conditional
    assert not ShiftSpec("paired_perturbation", 0.1).preserves_y2_conditional
    assert ShiftSpec("paired_perturbation", 0.1, y1_marginal_only=True).preserves_y2_conditional
    with pytest.raises(ConfigError):
        ShiftSpec("gaussian", 0.1)
    with pytest.raises(KappaOutOfRange):
        ShiftSpec("symmetric_dirichlet", 1.0)
    with pytest.raises(KappaOutOfRange):
        ShiftSpec("symmetric_dirichlet", 0.0)
    with pytest.raises(ScaleOutOfRange):
        ShiftSpec("asymmetric_marginal", 1.0)
    with pytest.raises(ConfigError):
        ShiftSpec(cross_x_mode="global")


def test_shift_draw_must_sum_to_zero():
    with pytest.raises(GeneratorError):
        ShiftDraw(np.array([[[0.1, 0.0], [0.0, 0.0]]]))


# -- symmetric ---------------------------------------------------------------

@given(seeds, st.floats(min_value=0.01, max_value=0.9), st.sampled_from(["independent", "shared_seed"]))
def test_symmetric_draws_respect_both_constraints(seed, kappa, mode):
    rng = np.random.default_rng(seed)
    j = random_joint(rng, 3, 2, 3)
    draw, shifted = sample_symmetric_shift(j, kappa, rng, mode)
    _check_draw(j, draw, shifted)


def test_symmetric_tiny_kappa_barely_moves(D0, rng):
    deltas = [np.abs(sample_symmetric_shift(D0, 1e-6, rng)[0].delta).max() for _ in range(100)]
    assert max(deltas) < 0.01


def test_symmetric_variance_matches_kappa_law(D0):
    tables = symmetric_array(D0.table, 0.2, np.random.default_rng(0), 40_000)
    s = tables[:, 0, 0, 0] - 0.4
    var = np.mean((s - s.mean()) ** 2)
    se = np.std((s - s.mean()) ** 2, ddof=1) / np.sqrt(len(s))
    assert abs(var - 0.048) <= 4 * se


def test_symmetric_rejects_zero_cells_and_bad_kappa(rng):
    a = Alphabet((0,), (0, 1), (0, 1))
    j = new_conditional_joint(a, [1.0], [[[0.5, 0.5], [0.0, 0.0]]])
    with pytest.raises(ZeroCellInBase):
        sample_symmetric_shift(j, 0.1, rng)
    with pytest.raises(KappaOutOfRange):
        sample_symmetric_shift(random_joint(rng), 1.5, rng)


def test_determinism(D0):
    spec = ShiftSpec("symmetric_dirichlet", 0.2)
    a = shift_array(spec, D0.table, np.random.default_rng(99), 50)
    b = shift_array(spec, D0.table, np.random.default_rng(99), 50)
    assert np.array_equal(a, b)
    d1, _ = draw_shift(ShiftSpec("paired_perturbation", 0.1), D0, np.random.default_rng(3))
    d2, _ = draw_shift(ShiftSpec("paired_perturbation", 0.1), D0, np.random.default_rng(3))
    assert np.array_equal(d1.delta, d2.delta)


def test_second_stage_is_centered_given_first(D0):
    """Regress each period -1 shift cell on the period -2 shift cell; slope ~ 0."""
    rng = np.random.default_rng(2)
    n = 20_000
    first = symmetric_array(D0.table, 0.1, rng, n)
    second = np.empty_like(first)
    for r in range(n):
        second[r] = symmetric_array(first[r], 0.05, rng, 1)[0]
    s2 = (first - D0.table).reshape(n, -1)
    s1 = (second - first).reshape(n, -1)
    for c in range(s2.shape[1]):
        x, y = s2[:, c], s1[:, c]
        xc = x - x.mean()
        slope = (xc @ y) / (xc @ xc)
        resid = y - y.mean() - slope * xc
        se = np.sqrt(np.sum(resid**2 * xc**2)) / (xc @ xc)  # heteroskedasticity-robust
        assert abs(slope) <= 4 * se
        assert abs(y.mean()) <= 4 * y.std(ddof=1) / np.sqrt(n)


def test_shared_seed_correlates_covariates_but_keeps_per_x_moments(D0):
    spec = ShiftSpec("symmetric_dirichlet", 0.2, "shared_seed")
    tables = shift_array(spec, D0.table, np.random.default_rng(5), 20_000)
    a, b = tables[:, 0, 0, 0], tables[:, 1, 0, 0]
    assert np.corrcoef(a, b)[0, 1] > 0.5
    indep = shift_array(ShiftSpec("symmetric_dirichlet", 0.2), D0.table, np.random.default_rng(5), 20_000)
    assert abs(np.corrcoef(indep[:, 0, 0, 0], indep[:, 1, 0, 0])[0, 1]) < 0.05
    report = validate_generator(spec, D0, 20_000, np.random.default_rng(6))
    assert report.all_pass


# -- asymmetric --------------------------------------------------------------

@given(seeds, st.floats(min_value=0.0, max_value=0.9))
def test_asymmetric_preserves_conditional(seed, scale):
    rng = np.random.default_rng(seed)
    j = random_joint(rng, 3, 3, 2)
    draw, shifted = sample_asymmetric_shift(j, scale, rng)
    _check_draw(j, draw, shifted)
    assert y2_conditional_preserved(j, shifted)
    q0, q1 = cond_mean_y2_given_y1_x(j), cond_mean_y2_given_y1_x(shifted)
    ok = ~np.isnan(q1)
    assert np.all(np.abs(q0[ok] - q1[ok]) <= 1e-12)


@pytest.mark.parametrize("kappa", [5e-324, 1e-300, 1e-30])
def test_vanishing_strength_is_the_null_shift(D0, rng, kappa):
    draw, shifted = sample_symmetric_shift(D0, kappa, rng)
    assert np.all(np.isfinite(shifted.table))
    assert np.abs(draw.delta).max() < 1e-12
    draw, shifted = sample_asymmetric_shift(D0, kappa, rng)
    assert np.abs(draw.delta).max() < 1e-12


def test_asymmetric_paired_method_preserves_conditional(D0, rng):
    _, shifted = sample_asymmetric_shift(D0, 0.2, rng, method="paired")
    assert y2_conditional_preserved(D0, shifted)


def test_asymmetric_marginal_mean_preserved(D0):
    tables = asymmetric_array(D0.table, 0.3, np.random.default_rng(11), 100_000)
    p = tables[:, 0, 0, :].sum(axis=-1)
    assert abs(p.mean() - 0.5) <= 3 * p.std(ddof=1) / np.sqrt(len(p))


def test_asymmetric_zero_scale_is_identity(D0, rng):
    draw, shifted = sample_asymmetric_shift(D0, 0.0, rng)
    assert np.all(draw.delta == 0)
    assert np.array_equal(shifted.table, D0.table)


def test_asymmetric_rejects_zero_marginal(rng):
    a = Alphabet((0,), (0, 1), (0, 1))
    j = new_conditional_joint(a, [1.0], [[[0.5, 0.5], [0.0, 0.0]]])
    with pytest.raises(ZeroMarginalCell):
        sample_asymmetric_shift(j, 0.1, rng)
    with pytest.raises(ScaleOutOfRange):
        sample_asymmetric_shift(random_joint(rng), -0.1, rng)


# -- paired ------------------------------------------------------------------

def test_paired_forced_signs_are_exact_negatives(D0):
    plus, _ = sample_paired_perturbation(D0, 0.1, np.random.default_rng(8), signs=[1, 1])
    minus, _ = sample_paired_perturbation(D0, 0.1, np.random.default_rng(8), signs=[-1, -1])
    # exact up to the rounding of forming p + delta and subtracting p again
    np.testing.assert_allclose(plus.delta, -minus.delta, rtol=0, atol=1e-15)
    assert np.any(plus.delta != 0)


def test_paired_is_centered(D0):
    deltas = paired_array(D0.table, 0.2, np.random.default_rng(0), 100_000) - D0.table
    mean = deltas.mean(axis=0)
    se = deltas.std(axis=0, ddof=1) / np.sqrt(deltas.shape[0])
    assert np.all(np.abs(mean) <= 3 * se)


def test_paired_point_mass_row_gives_null_shift(rng):
    a = Alphabet((0, 1), (0, 1), (0, 1))
    t = np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.25, 0.25], [0.25, 0.25]]])
    j = new_conditional_joint(a, [0.5, 0.5], t)
    draw, shifted = sample_paired_perturbation(j, 0.2, rng)
    assert np.all(draw.delta[0] == 0)
    assert np.any(draw.delta[1] != 0)
    _check_draw(j, draw, shifted)


@given(seeds, st.floats(min_value=0.0, max_value=1.0), st.booleans())
def test_paired_draws_stay_feasible(seed, magnitude, marginal_only):
    rng = np.random.default_rng(seed)
    j = random_joint(rng, 2, 3, 2)
    draw, shifted = sample_paired_perturbation(j, magnitude, rng, y1_marginal_only=marginal_only)
    _check_draw(j, draw, shifted)
    if marginal_only:
        assert y2_conditional_preserved(j, shifted)


# -- generator validation ----------------------------------------------------

def test_validate_generator_symmetric_passes(D0):
    report = validate_generator(ShiftSpec("symmetric_dirichlet", 0.2), D0, 20_000, np.random.default_rng(1))
    assert report.centering_pass and report.variance_pass and report.covariance_pass


def test_validate_generator_paired_fails_variance_law(D0):
    report = validate_generator(ShiftSpec("paired_perturbation", 0.2), D0, 20_000, np.random.default_rng(1))
    assert report.centering_pass
    assert not report.variance_pass


def test_variance_is_linear_in_kappa(D0):
    def var(kappa):
        t = symmetric_array(D0.table, kappa, np.random.default_rng(4), 40_000)[:, 0, 0, 0]
        return t.var()

    assert var(0.5) / var(0.05) == pytest.approx(10.0, abs=0.5)


def test_validate_generator_needs_enough_draws(D0, rng):
    with pytest.raises(ConfigError):
        validate_generator(ShiftSpec(), D0, 999, rng)


# -- permutation -------------------------------------------------------------

def _mutual_information(x, y, nx, ny):
    counts = np.zeros((nx, ny))
    np.add.at(counts, (x, y), 1)
    p = counts / counts.sum()
    px, py = p.sum(axis=1, keepdims=True), p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (px @ py)[nz])))


def test_permute_fraction_zero_is_identity(rng):
    x = rng.integers(0, 5, 100)
    assert np.array_equal(permute_codes(x, 0.0, 3, rng), x)


def test_permute_full_keeps_multiset(rng):
    x = rng.integers(0, 5, 500)
    out = permute_codes(x, 1.0, 1, rng)
    assert np.array_equal(np.sort(out), np.sort(x))
    assert not np.array_equal(out, x)


def test_permutation_reduces_mutual_information(D0):
    decreases = 0
    flat_p = (D0.px[:, None, None] * D0.table).ravel()
    for seed in range(100):
        rng = np.random.default_rng(seed)
        flat = rng.choice(8, size=1000, p=flat_p)
        x, y = np.divmod(flat, 4)
        before = _mutual_information(x, y, 2, 4)
        after = _mutual_information(permute_codes(x, 0.5, 1, rng), y, 2, 4)
        decreases += after < before
    assert decreases >= 95


def test_permute_covariates_moves_only_x(rng):
    s = SampleSet.from_rows([(-2, "a", 0.0, 1.0), (-2, "b", 1.0, 1.0), (-1, "c", 1.0, None), (0, "d", None, None)])
    out = permute_covariates(s, 1.0, 2, rng)
    assert sorted(out.x) == ["a", "b", "c", "d"]
    assert np.array_equal(out.y1, s.y1, equal_nan=True)
    assert np.array_equal(out.period, s.period)


def test_permute_errors(rng):
    with pytest.raises(EmptySampleSet):
        permute_covariates(SampleSet.from_rows([]), 0.5, 1, rng)
    with pytest.raises(ConfigError):
        permute_codes(np.arange(3), 1.5, 1, rng)
    with pytest.raises(ConfigError):
        permute_codes(np.arange(3), 0.5, -1, rng)
