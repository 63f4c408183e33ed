import itertools
import math

import numpy as np
import pytest
import scipy.optimize

from app.errors import DegenerateInput, InvalidParameter, NotInSubspaceSum
from app.lab.constructions import (
    BlockConstruction,
    block_decomposition,
    block_family,
    non_cyclic_family,
    padded_family,
    random_family,
    two_lines,
)
from app.lab.hilbert import family_from_spanning
from app.lab.iterates import Dictionary, remotest_choice
from app.lab.quantities import (
    FULL_SPHERE,
    RESTRICTED,
    decomposition_value,
    dictionary_rho,
    friedrichs_number,
    greedy_direction,
    nu_decomposition,
    quantity_report,
    rho_estimate,
    s_norm,
)

HALF_SQRT2 = 1 / math.sqrt(2)


def _rayleigh_oracle(F, rng, samples=20_000):
    """Best sampled value of the normalized pairwise-correlation quotient, refined by BFGS."""
    bases = [m.basis for m in F.members]
    cuts = np.cumsum([B.shape[1] for B in bases])[:-1]

    def quotient(z):
        parts = [B @ p for B, p in zip(bases, np.split(z, cuts))]
        total = sum(parts)
        sq = sum(p @ p for p in parts)
        return (total @ total - sq) / ((F.K - 1) * sq)

    Z = rng.standard_normal((samples, sum(B.shape[1] for B in bases)))
    ys = [Zk @ B.T for Zk, B in zip(np.split(Z, cuts, axis=1), bases)]
    total = sum(ys)
    sq = sum(np.sum(y * y, axis=1) for y in ys)
    values = (np.sum(total * total, axis=1) - sq) / ((F.K - 1) * sq)
    best = int(np.argmax(values))
    refined = scipy.optimize.minimize(lambda z: -quotient(z), Z[best], method="BFGS")
    return float(values.max()), max(float(values.max()), -float(refined.fun))


# ========== FRIEDRICHS NUMBER ==========

@pytest.mark.parametrize("theta", [math.pi / 6, math.pi / 4, math.pi / 3])
def test_friedrichs_of_two_lines_is_cosine(theta):
    assert friedrichs_number(two_lines(theta)) == pytest.approx(math.cos(theta), abs=1e-10)


def test_friedrichs_of_orthogonal_lines_is_zero():
    F = family_from_spanning([[row] for row in np.eye(3)], 3)
    assert friedrichs_number(F) == 0.0


def test_friedrichs_of_non_cyclic_family_is_below_one(rng):
    F, _ = non_cyclic_family()
    c = friedrichs_number(F)
    sampled, refined = _rayleigh_oracle(F, rng, samples=100_000)
    assert 0.0 < c < 1.0
    assert sampled <= c + 1e-12
    assert refined == pytest.approx(c, abs=1e-3)


def test_friedrichs_matches_rayleigh_oracle(rng):
    for _ in range(50):
        F = random_family(rng, int(rng.integers(2, 6)), int(rng.integers(2, 4)))
        c = friedrichs_number(F)
        sampled, refined = _rayleigh_oracle(F, rng)
        assert sampled <= c + 1e-12
        assert refined == pytest.approx(c, abs=1e-3)


# ========== SPHERE CONSTANTS ==========

def test_rho_of_orthogonal_axes(axes):
    estimate = rho_estimate(axes, FULL_SPHERE, seed=0)
    assert estimate.value == pytest.approx(HALF_SQRT2, abs=1e-9)
    np.testing.assert_allclose(np.abs(estimate.witness), [HALF_SQRT2, HALF_SQRT2], atol=1e-6)
    assert estimate.lower_bound <= estimate.value
    assert estimate.method == "grid"


def test_rho_star_of_orthogonal_lines_is_one():
    F = family_from_spanning([[row] for row in np.eye(3)], 3)
    estimate = rho_estimate(F, RESTRICTED, seed=0)
    assert estimate.value == 1.0
    assert estimate.lower_bound == 1.0


def test_two_member_rho_never_exceeds_half_sqrt2(rng):
    for i in range(100):
        d = int(rng.integers(2, 6))
        F = random_family(rng, d, 2)
        estimate = rho_estimate(F, FULL_SPHERE, restarts=2, seed=i, iterations=20)
        assert estimate.value <= HALF_SQRT2 + 1e-6


def test_rho_star_above_friedrichs_floor(rng):
    for i in range(100):
        d = int(rng.integers(2, 7))
        K = int(rng.integers(2, 5))
        F = random_family(rng, d, K)
        c = friedrichs_number(F)
        estimate = rho_estimate(F, RESTRICTED, restarts=2, seed=i, iterations=30)
        assert estimate.value >= (1 - c) / (K - 1) - 1e-6


def test_estimates_are_deterministic_per_seed(rng):
    F = random_family(rng, 4, 3)
    first = rho_estimate(F, FULL_SPHERE, restarts=4, seed=7, iterations=50)
    second = rho_estimate(F, FULL_SPHERE, restarts=4, seed=7, iterations=50)
    assert first.value == second.value
    np.testing.assert_array_equal(first.witness, second.witness)


def test_rho_estimate_validation(axes):
    with pytest.raises(InvalidParameter):
        rho_estimate(axes, FULL_SPHERE, restarts=0)
    with pytest.raises(InvalidParameter):
        rho_estimate(axes, "sphere")


def test_quantity_report_chain(rng):
    for i in range(10):
        F = random_family(rng, int(rng.integers(2, 5)), int(rng.integers(2, 4)))
        report = quantity_report(F, restarts=2, seed=i)
        assert report.violations() == []
        assert report.rho.value <= report.rho_star.value + 1e-8
        data = report.to_dict()
        assert data["rho"]["seed"] == i
        assert data["rho_star"]["mode"] == RESTRICTED


# ========== DICTIONARY RHO ==========

def test_dictionary_rho_standard_basis_plane():
    estimate = dictionary_rho(Dictionary.from_vectors(np.eye(2)), seed=0)
    assert estimate.value == pytest.approx(HALF_SQRT2, abs=1e-6)
    assert estimate.lower_bound <= estimate.value


def test_dictionary_rho_standard_basis_space():
    estimate = dictionary_rho(Dictionary.from_vectors(np.eye(3)), seed=0)
    assert estimate.value >= 1 / math.sqrt(3) - 1e-12
    assert estimate.value <= 1 / math.sqrt(3) + 2e-2


def test_dictionary_rho_non_spanning():
    estimate = dictionary_rho(Dictionary.from_vectors([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), seed=0)
    assert estimate.value == 0.0
    np.testing.assert_allclose(np.abs(estimate.witness), [0.0, 0.0, 1.0], atol=1e-12)
    assert estimate.flags == {"spanning": False}


def test_dictionary_rho_needs_explicit_atoms(axes):
    with pytest.raises(InvalidParameter):
        dictionary_rho(Dictionary.induced(axes))


# ========== S-NORM ==========

def test_s_norm_of_single_complement_vector():
    F = two_lines(math.pi / 3)
    result = s_norm(F, [0.0, 2.0])
    assert result.certified
    assert result.value == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(result.decomposition[0], [0.0, 2.0], atol=1e-6)
    np.testing.assert_allclose(result.decomposition[1], [0.0, 0.0], atol=1e-6)


def test_s_norm_of_zero(axes):
    result = s_norm(axes, [0.0, 0.0])
    assert result.value == 0.0
    assert result.certified


def test_s_norm_matches_brute_force_on_two_complement_lines():
    angle = math.radians(75)
    f = np.array([math.cos(angle), math.sin(angle)])
    # L_1 is the y-axis, L_2 the line orthogonal to f
    F = family_from_spanning([[[0.0, 1.0]], [[-f[1], f[0]]]], 2)
    y = np.array([1.0, 1.0])

    # y_1 = (t, 0), y_2 = y - y_1 must be parallel to f
    def misfit(t):
        rest = y - np.array([t, 0.0])
        return rest[0] * f[1] - rest[1] * f[0]

    t = scipy.optimize.brentq(misfit, -10.0, 10.0, xtol=1e-15)
    brute = abs(t) + float(np.linalg.norm(y - np.array([t, 0.0])))

    result = s_norm(F, y)
    assert result.certified
    assert result.value == pytest.approx(brute, abs=1e-6)


def test_s_norm_on_random_instances(rng):
    certified = 0
    for _ in range(25):
        d = int(rng.integers(2, 7))
        F = random_family(rng, d, int(rng.integers(2, 5)))
        y = rng.standard_normal(d)
        size = float(np.linalg.norm(y))
        result = s_norm(F, y)
        assert result.value >= size - 1e-10
        assert result.dual_value <= result.value + 1e-12
        assert result.gap >= -1e-12
        np.testing.assert_allclose(sum(result.decomposition), y, atol=1e-8 * (1 + size))
        for k, part in enumerate(result.decomposition):
            inside, _ = F.split(k, part)
            assert np.linalg.norm(inside) <= 1e-8 * (1 + size)
        if result.certified:
            certified += 1
            assert result.gap <= 1e-8 * (1 + size)
    assert certified >= 15


def test_s_norm_outside_complement_sum(rng):
    F = padded_family(random_family(rng, 3, 2), 1)
    with pytest.raises(NotInSubspaceSum):
        s_norm(F, [0.0, 0.0, 0.0, 1.0])
    with pytest.raises(InvalidParameter):
        s_norm(F, [1.0, 0.0, 0.0, 0.0], tol=0.0)


def test_decomposition_value_bounds_s_norm():
    cfg = BlockConstruction.slow_blocks(0.25, 5)
    F, x0 = block_family(cfg)
    bound = decomposition_value(F, x0, block_decomposition(cfg, x0))
    assert bound >= s_norm(F, x0).dual_value - 1e-12
    with pytest.raises(InvalidParameter):
        decomposition_value(F, x0, (x0, np.zeros_like(x0)))


# ========== DIRECTIONS ==========

def test_greedy_direction_on_axes(axes):
    g = greedy_direction(axes, [1.0, 2.0])
    np.testing.assert_array_equal(g.g, [0.0, 1.0])
    assert g.rho_x == pytest.approx(2 / math.sqrt(5))
    assert g.achieving_index == 1


def test_greedy_direction_rejects_zero(axes):
    with pytest.raises(DegenerateInput):
        greedy_direction(axes, [0.0, 0.0])


def test_greedy_direction_agrees_with_remotest_choice(rng):
    F = random_family(rng, 5, 4)
    for _ in range(20):
        x = rng.standard_normal(5)
        g = greedy_direction(F, x)
        index, dists = remotest_choice(F, x)
        assert g.achieving_index == index
        assert g.rho_x == pytest.approx(dists.max() / np.linalg.norm(x))
        assert g.g @ x == pytest.approx(dists.max())


def test_greedy_direction_times_s_norm_dominates_norm(rng):
    cfg = BlockConstruction.slow_blocks(0.25, 4)
    F, _ = block_family(cfg)
    for _ in range(10):
        x = rng.standard_normal(F.ambient_dim)
        result = s_norm(F, x)
        assert greedy_direction(F, x).rho_x * result.value >= np.linalg.norm(x) - 1e-6


def test_nu_on_axes(axes):
    nu = nu_decomposition(axes, [1.0, 2.0])
    np.testing.assert_array_equal(nu.v[0], [0.0, 2.0])
    np.testing.assert_array_equal(nu.v[1], [1.0, 0.0])
    assert nu.nu == pytest.approx(1.0)
    np.testing.assert_array_equal(nu.image, [0.0, 0.0])


def test_nu_one_sweep_identity(rng):
    F = random_family(rng, 5, 3)
    for _ in range(20):
        y = rng.standard_normal(5)
        nu = nu_decomposition(F, y)
        size = float(np.linalg.norm(y))
        assert np.linalg.norm(nu.image) ** 2 == pytest.approx(size ** 2 * (1 - nu.nu ** 2), rel=1e-10)
        for k, v in enumerate(nu.v):
            inside, _ = F.split(k, v)
            assert np.linalg.norm(inside) < 1e-10


def test_nu_bounded_below_by_s_norm(rng):
    F = random_family(rng, 4, 3)
    for _ in range(10):
        y = rng.standard_normal(4)
        s_ub = s_norm(F, y).value
        nu = nu_decomposition(F, y)
        assert nu.nu >= np.linalg.norm(y) / (F.K * s_ub) - 1e-9


def test_nu_rejects_zero(axes):
    with pytest.raises(DegenerateInput):
        nu_decomposition(axes, [0.0, 0.0])


def test_nu_and_direction_of_tiny_vectors(axes, rng):
    nu = nu_decomposition(axes, [1e-170, 2e-170])
    assert nu.nu == pytest.approx(1.0, rel=1e-14)
    g = greedy_direction(axes, [1e-170, 2e-170])
    assert g.rho_x == pytest.approx(2 / math.sqrt(5), rel=1e-14)

    F = random_family(rng, 5, 3)
    y = rng.standard_normal(5)
    assert nu_decomposition(F, 1e-200 * y).nu == pytest.approx(nu_decomposition(F, y).nu, rel=1e-12)


def test_restricted_floor_ignores_member_order(rng):
    planes = [rng.standard_normal((2, 3)) for _ in range(3)]
    floors = []
    for order in itertools.permutations(range(3)):
        F = family_from_spanning([planes[i] for i in order], 3)
        estimate = rho_estimate(F, RESTRICTED, seed=0)
        assert estimate.lower_bound is not None
        assert estimate.lower_bound <= estimate.value
        floors.append(estimate.lower_bound)
    assert max(floors) - min(floors) < 1e-12
