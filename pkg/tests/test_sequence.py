
import numpy as np
import pytest

from conftest import random_density
from starbell.linalg import is_density, kron
from starbell.network import BranchConfig, PartySetting, SourceSpec
from starbell.sequence import (
    PHI_PLUS,
    SX_I,
    SZ_I,
    BranchState,
    CorrelatorVector,
    DepthExhausted,
    ZeroProbabilityBranch,
    alice_marginal,
    correlator_recursion,
    correlators,
    evolve_correlators,
    evolve_source,
    luders_average,
    luders_closed_form,
    luders_conditional,
    source_state,
    survival_factor,
)

PHI = np.outer(PHI_PLUS, PHI_PLUS.conj())
REFERENCE_BRANCH = BranchConfig((PartySetting(0.8, 0.8), PartySetting(1.0, 1.0)))


def close(a, b, tol=1e-12):
    return np.max(np.abs(np.asarray(a) - np.asarray(b))) < tol


def ctuple(c):
    return np.array(c.as_tuple())


# ---------------------------------------------------------------- averaged update


def test_zero_sharpness_leaves_state():
    out = luders_average(BranchState(PHI), PartySetting(0, 0))
    assert close(out.rho, PHI) and out.depth == 1


def test_sharp_update_halves_correlators():
    out = luders_average(BranchState(PHI), PartySetting(1, 1))
    assert close(ctuple(correlators(out.rho)), [0.5, 0, 0, 0.5])
    expected = 0.5 * PHI + 0.25 * SZ_I @ PHI @ SZ_I + 0.25 * SX_I @ PHI @ SX_I
    assert close(out.rho, expected)


def test_operating_point_correlators():
    out = luders_average(BranchState(PHI), PartySetting(0.8, 0.8))
    assert close(ctuple(correlators(out.rho)), [0.8, 0, 0, 0.8])


def test_depth_exhausted():
    with pytest.raises(DepthExhausted):
        luders_average(BranchState(PHI, depth=2, length=2), PartySetting(1, 1))


# ---------------------------------------------------------------- conditional update


def test_sharp_z_collapses_pair():
    for b in (0, 1):
        post, p = luders_conditional(BranchState(PHI), PartySetting(1, 1), 0, b)
        assert p == pytest.approx(0.5)
        ket = np.zeros(4)
        ket[3 * b] = 1.0
        assert close(post.rho, np.outer(ket, ket))


def test_trivial_measurement_keeps_state():
    for y in (0, 1):
        post, p = luders_conditional(BranchState(PHI), PartySetting(0, 0), y, 0)
        assert p == pytest.approx(0.5)
        assert close(post.rho, PHI)


def test_unsharp_branches_average_back():
    setting = PartySetting(0.8, 0.8)
    total = np.zeros((4, 4), dtype=complex)
    for b in (0, 1):
        post, p = luders_conditional(BranchState(PHI), setting, 0, b)
        assert p == pytest.approx(0.5)
        total += p * post.rho
    k = [kron(np.diag(np.sqrt([0.9, 0.1])), np.eye(2)), kron(np.diag(np.sqrt([0.1, 0.9])), np.eye(2))]
    assert close(total, sum(x @ PHI @ x for x in k))


def test_zero_probability_is_signalled():
    state = BranchState(np.diag([1, 0, 0, 0]).astype(complex))
    with pytest.raises(ZeroProbabilityBranch) as info:
        luders_conditional(state, PartySetting(1, 1), 0, 1)
    assert info.value.probability < 1e-15


# ---------------------------------------------------------------- correlator recursion


def test_recursion_examples():
    c = CorrelatorVector(1, 0, 0, 1)
    assert close(ctuple(correlator_recursion(c, PartySetting(0.8, 0.8))), [0.8, 0, 0, 0.8])
    assert close(ctuple(correlator_recursion(c, PartySetting(0, 0))), [1, 0, 0, 1])
    assert close(ctuple(correlator_recursion(c, PartySetting(1, 0))), [1, 0, 0, 0.5])


def test_survival_factor():
    assert survival_factor(0.8) == pytest.approx(0.8)
    assert survival_factor(1.0) == 0.5


# ---------------------------------------------------------------- sources


def test_evolve_source_examples():
    assert close(evolve_source(SourceSpec(1.0), REFERENCE_BRANCH, 0).rho, PHI)
    c = correlators(evolve_source(SourceSpec(1.0), REFERENCE_BRANCH, 1).rho)
    assert close(ctuple(c), [0.8, 0, 0, 0.8])
    assert close(evolve_source(SourceSpec(0.9), REFERENCE_BRANCH, 0).rho, 0.9 * PHI + 0.025 * np.eye(4))


def test_evolve_source_range():
    with pytest.raises(ValueError):
        evolve_source(SourceSpec(), REFERENCE_BRANCH, 3)
    with pytest.raises(ValueError):
        evolve_source(SourceSpec(), REFERENCE_BRANCH, -1)


def test_fast_path_matches_matrix_path():
    for depth in range(3):
        slow = correlators(evolve_source(SourceSpec(0.7), REFERENCE_BRANCH, depth).rho)
        fast = evolve_correlators(SourceSpec(0.7), REFERENCE_BRANCH, depth)
        assert close(ctuple(slow), ctuple(fast))


# ---------------------------------------------------------------- randomized properties (1000 each)


def _random_setting(rng):
    return PartySetting(*rng.uniform(0, 1, 2))


def test_average_update_is_physical(rng):
    for _ in range(1000):
        rho = random_density(rng)
        out = luders_average(BranchState(rho), _random_setting(rng)).rho
        assert abs(np.trace(out) - 1) < 1e-12
        assert np.max(np.abs(out - out.conj().T)) < 1e-12
        assert np.min(np.linalg.eigvalsh(out)) >= -1e-10
        assert is_density(out)


def test_kraus_sum_matches_three_term_form(rng):
    for _ in range(1000):
        rho = random_density(rng)
        s = _random_setting(rng)
        assert close(luders_average(BranchState(rho), s).rho, luders_closed_form(rho, s))


def test_conditional_mixture_matches_average(rng):
    for _ in range(1000):
        rho = random_density(rng)
        s = _random_setting(rng)
        mix = np.zeros((4, 4), dtype=complex)
        for y in (0, 1):
            for b in (0, 1):
                post, p = luders_conditional(BranchState(rho), s, y, b)
                mix += 0.5 * p * post.rho
        assert close(mix, luders_average(BranchState(rho), s).rho)


def test_recursion_matches_matrix_path(rng):
    for _ in range(1000):
        rho = random_density(rng)
        s = _random_setting(rng)
        arith = correlator_recursion(correlators(rho), s)
        matrix = correlators(luders_average(BranchState(rho), s).rho)
        assert close(ctuple(arith), ctuple(matrix))


def test_alice_marginal_unchanged(rng):
    for _ in range(1000):
        rho = random_density(rng)
        before = alice_marginal(BranchState(rho))
        after = alice_marginal(luders_average(BranchState(rho), _random_setting(rng)))
        assert close(before, after)


def test_source_states_are_physical(rng):
    for v in rng.uniform(0, 1, 50):
        assert is_density(source_state(v))
        assert correlators(source_state(v)).t_zz == pytest.approx(v)
