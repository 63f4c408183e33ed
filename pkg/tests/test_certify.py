import dataclasses
import math

import numpy as np
import pytest

from app.errors import CertificationFailed, InvalidParameter, NotCertified
from app.lab import certify as cert
from app.lab.constructions import (
    BlockConstruction,
    block_analytic_norms,
    block_decomposition,
    non_cyclic_family,
    non_cyclic_start,
    padded_family,
    random_family,
    two_lines,
)
from app.lab.iterates import Dictionary, Policy, greedy_run, run
from app.lab.quantities import decomposition_value, dictionary_rho


# ========== PER-STEP IDENTITIES ==========

def test_identities_exact_on_axes(axes):
    t = run(axes, [1.0, 2.0], Policy.remotest(), 5)
    report = cert.step_identities(t, axes)
    assert report.passed
    assert all(c.max_violation <= 1e-12 for c in report.checks)


def test_identities_on_slow_blocks(small_blocks):
    _, F, x0 = small_blocks
    t = run(F, x0, Policy.cyclic(), 200)
    report = cert.step_identities(t, F)
    assert [c.name for c in report.checks] == ["monotone_norms", "pythagoras", "one_sweep_identity"]
    assert max(c.max_violation for c in report.checks) < 1e-9


def test_corrupted_trajectory_is_caught(rng):
    F = random_family(rng, 4, 3)
    t = run(F, rng.standard_normal(4), Policy.remotest(), 10)
    norms = t.norms.copy()
    norms[3] = norms[2] * 1.5
    report = cert.step_identities(dataclasses.replace(t, norms=norms), F)
    assert not report.passed
    assert report["monotone_norms"].details["worst_step"] == 3
    assert "monotone_norms" in report.failed
    with pytest.raises(CertificationFailed):
        report.raise_if_failed()


def test_identities_reject_a_different_family(rng):
    F = random_family(rng, 4, 3)
    t = run(F, rng.standard_normal(4), Policy.remotest(), 5)
    with pytest.raises(InvalidParameter):
        cert.step_identities(t, random_family(rng, 4, 2))
    with pytest.raises(InvalidParameter):
        cert.step_identities(t, random_family(rng, 4, 3))


def test_report_serialization(axes):
    t = run(axes, [1.0, 2.0], Policy.remotest(), 5)
    data = cert.step_identities(t, axes).to_dict()
    assert data["passed"] is True
    first = data["checks"][0]
    assert set(first) >= {"name", "statement", "tolerance", "max_violation", "pass"}


# ========== RECURSIVE DECAY ==========

def test_decay_extremal_first_step():
    check = cert.recursive_decay_check([2.0, 0.0], 2.0)
    assert check.passed


def test_decay_hypothesis_violation_is_flagged():
    check = cert.recursive_decay_check([1.0, 1.0, 1.0], 1.0)
    assert not check.hypothesis
    assert check.first_hypothesis_failure == 2
    assert cert.recursive_decay_check([2.0], 1.0).first_hypothesis_failure == 1
    with pytest.raises(InvalidParameter):
        cert.recursive_decay_check([0.5], 0.0)


def test_decay_equality_sequence_up_to_a_million():
    for c1 in (1.0, 0.9, 0.5):
        c = np.empty(1_000_000)
        c[0] = c1
        for n in range(1, len(c)):
            c[n] = c[n - 1] * (1 - c[n - 1])
        check = cert.recursive_decay_check(c, 1.0)
        assert check.hypothesis and check.conclusion


def test_decay_random_hypothesis_sequences(rng):
    count, length = 10_000, 1000
    A = rng.uniform(0.1, 10.0, size=count)
    c = np.empty((count, length))
    c[:, 0] = A * rng.uniform(0.0, 1.0, size=count)
    for n in range(1, length):
        c[:, n] = c[:, n - 1] * (1 - c[:, n - 1] / A) * rng.uniform(0.0, 1.0, size=count) ** 0.1
    lengths = rng.integers(1, length + 1, size=count)
    for row, a, size in zip(c, A, lengths):
        check = cert.recursive_decay_check(row[:size], a)
        assert check.hypothesis
        assert check.conclusion


# ========== CYCLIC RATE LEDGER ==========

def test_rate_exponents():
    assert cert.cyclic_rate_exponent(3) == pytest.approx(0.0439, abs=1e-4)
    assert cert.cyclic_rate_exponent(2) == pytest.approx(1 / (8 * math.sqrt(2) + 2))
    assert cert.cyclic_rate_exponent(2) == pytest.approx(0.0751, abs=1e-4)


def test_ledger_on_axes(axes):
    ledger = cert.cyclic_rate_ledger(axes, [1.0, 2.0], 10)
    assert ledger.passed
    assert ledger.nu[0] == pytest.approx(1.0)
    assert ledger.a[1] == 0.0
    assert ledger.s_ub == pytest.approx(3.0, abs=1e-6)


@pytest.mark.parametrize("K", [2, 3, 4])
def test_ledger_on_random_families(rng, K):
    checked = 0
    for _ in range(4):
        F = random_family(rng, 2 * K, K)
        try:
            ledger = cert.cyclic_rate_ledger(F, rng.standard_normal(2 * K), 500)
        except NotCertified:
            continue
        checked += 1
        assert ledger.passed, ledger.checks.failed
        assert np.all(np.diff(ledger.b) >= 0)
        assert np.all(np.diff(ledger.a) <= 1e-12 * ledger.a[0])
        assert ledger.to_dict()["exponent"] == cert.cyclic_rate_exponent(K)
    assert checked >= 2


def test_ledger_validation(axes):
    with pytest.raises(InvalidParameter):
        cert.cyclic_rate_ledger(axes, [0.0, 0.0], 10)
    with pytest.raises(InvalidParameter):
        cert.cyclic_rate_ledger(axes, [1.0, 2.0], 0)


# ========== RATE FIT ==========

def test_fit_exact_power_law():
    n = np.arange(1, 2001, dtype=float)
    norms = np.r_[1.0, n ** -0.5]
    fit = cert.rate_fit(norms, (10, 2000))
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.power_law


def test_fit_flags_geometric_decay():
    ns = np.unique(np.geomspace(1, 1000, 60).astype(int))
    fit = cert.rate_fit(0.9 ** ns, (1, 1000), ns)
    assert not fit.power_law
    assert fit.r2 < 0.99


def test_fit_validation():
    with pytest.raises(InvalidParameter):
        cert.rate_fit(np.ones(100), (50, 55))
    with pytest.raises(InvalidParameter):
        cert.rate_fit(np.r_[np.ones(50), np.zeros(50)], (1, 99))
    with pytest.raises(InvalidParameter):
        cert.rate_fit(np.ones(100), (0, 50))


def test_fit_on_short_block_closed_form():
    cfg = BlockConstruction.slow_blocks(0.25, 400)
    ns = np.unique(np.geomspace(100, 10_000, 200).astype(int))
    fit = cert.rate_fit(block_analytic_norms(cfg, ns), (100, 10_000), ns)
    assert -(1 + 0.25) / 2 - 0.05 <= fit.slope <= -0.5 + 0.02


# ========== PREDICTED FACTORS ==========

def test_bound_report_orthogonal_lines(axes):
    report = cert.bound_report(axes)
    assert report.remotest_factor == 0.0
    assert report.alternating_factor == pytest.approx(math.sqrt(1 - (1 / 8) ** 2))
    assert report.alternating_factor == pytest.approx(0.99216, abs=1e-5)


def test_bound_report_two_lines():
    report = cert.bound_report(two_lines(math.pi / 3))
    assert report.remotest_factor == pytest.approx(0.8660, abs=1e-4)
    assert report.alternating_factor == pytest.approx(0.99804, abs=1e-5)
    assert report.violations() == []


def test_bound_report_with_trajectory(rng):
    for _ in range(20):
        F = random_family(rng, int(rng.integers(2, 6)), int(rng.integers(2, 5)))
        t = run(F, rng.standard_normal(F.ambient_dim), Policy.remotest(), 30)
        report = cert.bound_report(F, t)
        assert report.remotest_factor <= report.alternating_factor
        assert report.empirical_factor <= 1.0
        assert report.to_dict()["empirical_policy"] == "remotest"
        assert cert.remotest_geometric_bound(t, F).passed


def test_geometric_bound_needs_full_complement_sum(rng):
    F = padded_family(random_family(rng, 3, 2), 1)
    t = run(F, [1.0, 0.0, 0.0, 0.0], Policy.remotest(), 5)
    with pytest.raises(InvalidParameter):
        cert.remotest_geometric_bound(t, F)


# ========== TWO-MEMBER BOUNDS ==========

def test_two_member_sqrt_bounds(rng):
    checked = 0
    for _ in range(6):
        F = random_family(rng, 3, 2, ranks=[1, 1])
        x0 = rng.standard_normal(3)
        t = run(F, x0, Policy.remotest(), 60)
        try:
            checks = [cert.remotest_sqrt_bound(t, F), cert.alternating_sqrt_bound(F, x0, 30),
                      cert.s_monotonicity(t, F, n_check=10)]
        except NotCertified:
            continue
        checked += 1
        assert all(c.passed for c in checks)
    assert checked >= 3


def test_sqrt_bound_with_explicit_decomposition(small_blocks):
    cfg, F, x0 = small_blocks
    t = run(F, x0, Policy.remotest(), 500)
    x1 = t.iterates[1]
    s_ub = decomposition_value(F, x1, block_decomposition(cfg, x1))
    check = cert.remotest_sqrt_bound(t, F, s_ub)
    assert check.passed
    assert check.details["s_x1"] == s_ub


def test_sqrt_bounds_need_two_members(rng):
    F = random_family(rng, 4, 3)
    t = run(F, rng.standard_normal(4), Policy.remotest(), 5)
    with pytest.raises(InvalidParameter):
        cert.remotest_sqrt_bound(t, F, 1.0)
    with pytest.raises(InvalidParameter):
        cert.s_monotonicity(t, F)


# ========== GREEDY ==========

def test_greedy_rate_bound_with_certified_floor(rng):
    for _ in range(10):
        D = Dictionary.from_vectors(rng.standard_normal((4, 2)))
        estimate = dictionary_rho(D, seed=0)
        assert estimate.lower_bound is not None
        weakness = [0.7]
        t = greedy_run(D, rng.standard_normal(2), weakness, n_steps=30)
        assert cert.greedy_rate_bound(t, estimate.lower_bound, weakness).passed
        pure = greedy_run(D, rng.standard_normal(2), n_steps=30)
        assert cert.greedy_rate_bound(pure, estimate.lower_bound).passed


# ========== NON-CYCLIC DYNAMICS ==========

def test_find_period():
    assert cert.find_period([1, 2, 1, 2, 1, 2], 5) == 2
    assert cert.find_period([3, 1, 2, 2, 2, 2], 5, start=2) == 1
    assert cert.find_period([1, 2, 3, 4], 2) is None


def test_bakers_agreement_on_long_run():
    F, params = non_cyclic_family()
    t = run(F, non_cyclic_start(), Policy.remotest(), 2000)
    report = cert.bakers_agreement(t, params)
    assert report.passed, report.failed
    assert report["even_indices_match_orbit"].details["compared_steps"] >= 400
    assert report["no_short_period"].details["period"] is None


def test_identities_hold_far_below_the_square_root_of_tiny():
    F, _ = non_cyclic_family()
    t = run(F, non_cyclic_start(), Policy.remotest(), 2000)
    assert t.norms[-1] < 1e-200
    assert not t.underflow
    report = cert.step_identities(t, F)
    assert report.passed, report.failed


def test_bakers_agreement_detects_wrong_orbit():
    F, params = non_cyclic_family()
    t = run(F, non_cyclic_start(), Policy.remotest(), 200)
    shifted = dataclasses.replace(params, lambda0=-params.lambda0)
    assert not cert.bakers_agreement(t, shifted)["even_indices_match_orbit"].passed


# ========== CONSTRUCTION CHECKS ==========

def test_analytic_agreement(small_blocks):
    cfg, F, x0 = small_blocks
    t = run(F, x0, Policy.cyclic(), 200)
    assert cert.analytic_agreement(cfg, t).passed


def test_witness_floor_flags_shortfall(axes):
    t = run(axes, [1.0, 2.0], Policy.remotest(), 5)
    check = cert.witness_floor(t, [0.5, 0.5])
    assert not check.passed
    assert check.details["worst_step"] == 1
