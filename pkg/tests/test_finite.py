from itertools import chain, combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holocorr.errors import CapExceededError, ValidationError
from holocorr.ergostats import product_correlation_factorization_check
from holocorr.finite import (
    FiniteCorrespondence,
    FiniteMeasure,
    check_average_mixing_equivalence,
    check_hierarchy,
    check_main_theorem,
    check_product_invariance,
    check_set_average_inequality,
    class_period,
    correlation_exact,
    direct_indicator_series,
    dumps_instance,
    invariant_measures,
    is_almost_invariant,
    is_ergodic,
    is_mixing,
    is_weak_mixing,
    koopman_matrix,
    kron_product,
    load_instance,
    loads_instance,
    preimage_set,
    pullback,
    random_instance,
    random_instances,
    recurrent_classes,
    save_instance,
)
from holocorr.numerics import seeded_stream

SWAP = FiniteCorrespondence.swap()
UNIF2 = np.array([0.5, 0.5])
BLOCKS = FiniteCorrespondence(np.kron(np.eye(2, dtype=int), [[0, 1], [1, 0]]))


def ones(m):
    return FiniteCorrespondence.all_ones(m)


def powerset(items):
    items = list(items)
    return chain.from_iterable(combinations(items, r) for r in range(len(items) + 1))


def test_validation():
    with pytest.raises(ValidationError, match="column sums"):
        FiniteCorrespondence([[1, 1], [0, 1]])
    with pytest.raises(ValidationError, match="row"):
        FiniteCorrespondence([[2, 2], [0, 0]])
    with pytest.raises(ValidationError):
        FiniteCorrespondence([[1, -1], [0, 2]])
    with pytest.raises(ValidationError):
        FiniteMeasure([0.5, 0.6])


def test_pullback_examples():
    mu = np.array([0.2, 0.5, 0.3])
    np.testing.assert_array_equal(pullback(FiniteCorrespondence.identity(3), mu), mu)
    np.testing.assert_allclose(pullback(ones(3), np.full(3, 1 / 3)), 1.0)
    np.testing.assert_allclose(pullback(SWAP, [0.7, 0.3]), [0.3, 0.7])
    with pytest.raises(ValidationError):
        pullback(SWAP, [1.0, 0, 0])


def test_invariant_measure_examples():
    (mu,) = invariant_measures(SWAP)
    np.testing.assert_allclose(mu.mu, [0.5, 0.5])
    blocks = invariant_measures(BLOCKS)
    assert len(blocks) == 2
    np.testing.assert_allclose(blocks[0].mu, [0.5, 0.5, 0, 0])
    np.testing.assert_allclose(blocks[1].mu, [0, 0, 0.5, 0.5])
    (u,) = invariant_measures(ones(4))
    np.testing.assert_allclose(u.mu, 0.25)


def test_koopman_matrix_examples():
    np.testing.assert_array_equal(koopman_matrix(FiniteCorrespondence.identity(3)), np.eye(3))
    np.testing.assert_allclose(koopman_matrix(ones(3)), np.full((3, 3), 1 / 3))
    np.testing.assert_allclose(koopman_matrix(ones(2)), [[0.5, 0.5], [0.5, 0.5]])


def test_correlation_exact_examples():
    chi = np.array([1.0, 0.0])
    phi, psi = np.array([0.3, -1.2]), np.array([2.0, 0.7])
    assert correlation_exact(SWAP, UNIF2, phi, psi, 0) == pytest.approx(np.sum(UNIF2 * phi * psi))
    assert [correlation_exact(SWAP, UNIF2, chi, chi, n) for n in range(4)] == [0.5, 0.0, 0.5, 0.0]
    mu = np.full(3, 1 / 3)
    phi, psi = np.array([1.0, -2.0, 5.0]), np.array([0.5, 0.25, 3.0])
    for n in (1, 2, 5):
        assert correlation_exact(ones(3), mu, phi, psi, n) == pytest.approx(np.mean(phi) * np.mean(psi), abs=1e-14)
    with pytest.raises(ValidationError, match="not invariant"):
        correlation_exact(SWAP, [0.9, 0.1], chi, chi, 1)


def test_almost_invariance_examples():
    assert is_almost_invariant(SWAP, UNIF2, [])
    assert is_almost_invariant(SWAP, UNIF2, [0, 1])
    assert not is_almost_invariant(SWAP, UNIF2, [0])
    pp = kron_product(SWAP, SWAP)
    assert is_almost_invariant(pp, np.full(4, 0.25), [0, 3])


def _brute_almost_invariant(fc, mu, B):
    B = set(B)
    null = [b for b in B if mu[b] == 0]
    for drop in powerset(null):
        Bp = B - set(drop)
        if preimage_set(fc, Bp) <= B:
            return True
    return False


def test_almost_invariance_matches_brute_force():
    rng = seeded_stream(3, 0)
    for _ in range(60):
        fc, mu = random_instance(rng, max_states=5)
        for B in powerset(range(fc.m)):
            assert is_almost_invariant(fc, mu, B) == _brute_almost_invariant(fc, mu, B)


def _brute_ergodic(fc, mu):
    for B in powerset(range(fc.m)):
        if _brute_almost_invariant(fc, mu, B):
            mass = mu[list(B)].sum() if B else 0.0
            if 1e-12 < mass < 1 - 1e-12:
                return False
    return True


def test_ergodic_matches_brute_force():
    for fc, mu in random_instances(5, 150, max_states=5):
        assert is_ergodic(fc, mu) == _brute_ergodic(fc, mu)


def test_ergodic_examples():
    assert is_ergodic(SWAP, UNIF2)
    assert not is_ergodic(BLOCKS, np.full(4, 0.25))
    assert is_ergodic(ones(3), np.full(3, 1 / 3))
    big = FiniteCorrespondence.identity(21)
    with pytest.raises(CapExceededError):
        is_ergodic(big, np.full(21, 1 / 21))
    assert not is_ergodic(big, np.full(21, 1 / 21), method="structural")


def test_mixing_examples():
    assert is_mixing(ones(3), np.full(3, 1 / 3)) and is_weak_mixing(ones(3), np.full(3, 1 / 3))
    assert not is_mixing(SWAP, UNIF2) and not is_weak_mixing(SWAP, UNIF2)
    ident = FiniteCorrespondence.identity(2)
    assert not is_mixing(ident, UNIF2) and not is_weak_mixing(ident, UNIF2) and not is_ergodic(ident, UNIF2)


def test_swap_weak_mixing_statistic():
    # |I_n - 1/4| = 1/4 for phi = psi = indicator of state 0
    chi = np.array([1.0, 0.0])
    devs = [abs(correlation_exact(SWAP, UNIF2, chi, chi, n) - 0.25) for n in range(50)]
    np.testing.assert_allclose(devs, 0.25)


def test_direct_series_agrees_with_decider():
    for fc, mu in random_instances(17, 100, max_states=4):
        dev = direct_indicator_series(fc, mu, horizon=300)
        if is_mixing(fc, mu):
            assert dev[-1, 0] < 0.05
        if is_ergodic(fc, mu):
            assert dev[-1, 1] < 0.05


def test_decider_agreement_on_random_instances():
    # the mixing deciders raise InconsistencyError on disagreement
    outcomes = set()
    for fc, mu in random_instances(2024, 1000, max_states=5):
        outcomes.add((is_mixing(fc, mu), is_weak_mixing(fc, mu)))
    assert outcomes == {(True, True), (False, False)}


def test_period_detection():
    assert class_period(SWAP, [0, 1]) == 2
    cyc = FiniteCorrespondence(np.roll(np.eye(3, dtype=int), 1, axis=1))
    assert class_period(cyc, [0, 1, 2]) == 3
    assert class_period(ones(3), [0, 1, 2]) == 1


def test_kron_examples():
    i2 = FiniteCorrespondence.identity(2)
    np.testing.assert_array_equal(kron_product(i2, i2).M, np.eye(4))
    sw = kron_product(SWAP, SWAP)
    np.testing.assert_array_equal(sw.M, np.fliplr(np.eye(4)))
    a = FiniteCorrespondence([[1, 2], [1, 0]])
    b = ones(3)
    p = kron_product(a, b)
    assert p.d == 6 and np.all(p.M.sum(axis=0) == 6)
    with pytest.raises(CapExceededError):
        kron_product(ones(21), ones(20))


def test_composition_conserves_column_sums():
    for (f1, _), (f2, _) in zip(random_instances(8, 30), random_instances(9, 30)):
        if f1.m != f2.m:
            continue
        comp = FiniteCorrespondence(f1.M @ f2.M)
        assert comp.d == f1.d * f2.d


def test_koopman_rows_sum_to_one():
    for fc, _ in random_instances(10, 50):
        np.testing.assert_allclose(koopman_matrix(fc).sum(axis=1), 1.0, atol=1e-15)


def test_perron_consistency():
    for fc, _ in random_instances(11, 200):
        measures = invariant_measures(fc)
        assert measures
        for mu in measures:
            assert np.max(np.abs(fc.M @ mu.mu - fc.d * mu.mu)) <= 1e-12
            assert recurrent_classes(fc)


def test_product_invariance_examples():
    assert check_product_invariance(SWAP, SWAP, UNIF2, UNIF2, 1) == 0.0
    assert check_product_invariance(SWAP, ones(3), UNIF2, np.full(3, 1 / 3), 4) <= 1e-12
    rng = seeded_stream(12, 0)
    for _ in range(100):
        a, mu_a = random_instance(rng, max_states=4)
        b, mu_b = random_instance(rng, max_states=4)
        for n in range(1, 6):
            assert check_product_invariance(a, b, mu_a, mu_b, n) <= 1e-9


def test_main_theorem_examples():
    assert check_main_theorem(SWAP, UNIF2) == (False, False, False, True)
    assert check_main_theorem(ones(2), UNIF2) == (True, True, True, True)


def test_hierarchy_examples():
    assert check_hierarchy(ones(3), np.full(3, 1 / 3)) == (True, True, True, True)
    assert check_hierarchy(SWAP, UNIF2) == (False, False, True, True)
    assert check_hierarchy(FiniteCorrespondence.identity(2), UNIF2) == (False, False, False, True)


def test_average_mixing_examples():
    assert check_average_mixing_equivalence(SWAP, UNIF2)
    assert is_ergodic(SWAP, UNIF2)
    assert check_average_mixing_equivalence(BLOCKS, np.full(4, 0.25))
    assert not is_ergodic(BLOCKS, np.full(4, 0.25))
    assert check_average_mixing_equivalence(ones(3), np.full(3, 1 / 3))


def test_set_average_examples():
    full = check_set_average_inequality(ones(3), np.full(3, 1 / 3), [0, 1, 2], [0, 1, 2], 20)
    assert full["limit"] == pytest.approx(1.0) and full["product"] == pytest.approx(1.0)
    sw = check_set_average_inequality(SWAP, UNIF2, [0], [0, 1], 20)
    assert sw["limit"] == pytest.approx(0.5) and sw["product"] == pytest.approx(0.5)
    assert sw["b_almost_invariant"]
    # F(i) = {i, i+1}: A = {0, 1} only grows under F, so mu(F^j(A) & A) stays 1/2
    grow = FiniteCorrespondence(np.eye(4, dtype=int) + np.roll(np.eye(4, dtype=int), 1, axis=1))
    mu = np.full(4, 0.25)
    assert is_ergodic(grow, mu)
    res = check_set_average_inequality(grow, mu, [0, 1], [0, 1], 50)
    assert res["limit"] == pytest.approx(0.5) and res["product"] == pytest.approx(0.25)


def test_set_average_inequality_on_ergodic_instances():
    rng = seeded_stream(13, 0)
    checked = 0
    for _ in range(300):
        fc, mu = random_instance(rng, max_states=5)
        if not is_ergodic(fc, mu):
            continue
        support = np.nonzero(mu > 0)[0]
        A = [int(i) for i in support if rng.random() < 0.5] or [int(support[0])]
        B = [int(i) for i in support if rng.random() < 0.5] or [int(support[-1])]
        # horizon is a multiple of every possible period; transients last at most m steps
        res = check_set_average_inequality(fc, mu, A, B, 1200)
        assert res["limit"] >= res["product"] - fc.m / 1200
        checked += 1
    assert checked > 50


def test_finite_factorization_is_exact():
    for (f1, m1), (f2, m2) in zip(random_instances(14, 20, max_states=4), random_instances(15, 20, max_states=4)):
        rng = np.random.default_rng(f1.m * 10 + f2.m)
        p1, c1 = rng.normal(size=f1.m), rng.random(f1.m) < 0.5
        p2, c2 = rng.normal(size=f2.m), rng.random(f2.m) < 0.5
        prod = kron_product(f1, f2)
        mu = np.kron(m1, m2)
        left = [correlation_exact(f1, m1, p1, c1, n) for n in range(8)]
        right = [correlation_exact(f2, m2, p2, c2, n) for n in range(8)]
        both = [correlation_exact(prod, mu, np.kron(p1, p2), np.kron(c1, c2), n) for n in range(8)]
        assert product_correlation_factorization_check((left, right), both) <= 1e-13


def test_instance_round_trip(tmp_path):
    fc, mu = random_instance(seeded_stream(16, 0))
    path = tmp_path / "inst.txt"
    save_instance(path, fc, mu)
    back, mu2 = load_instance(path)
    np.testing.assert_array_equal(back.M, fc.M)
    np.testing.assert_array_equal(mu2, mu)
    assert loads_instance(dumps_instance(fc))[1] is None


def test_instance_errors():
    with pytest.raises(ValidationError, match="declared d"):
        loads_instance("m = 2\nd = 2\nM =\n0 1\n1 0\n")
    with pytest.raises(ValidationError, match="2x2"):
        loads_instance("m = 2\nM =\n0 1\n")
    with pytest.raises(ValidationError, match="line 3"):
        loads_instance("m = 2\nM =\n0 x\n1 0\n")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_instances_are_valid(seed):
    fc, mu = random_instance(seeded_stream(seed, 0))
    assert np.all(fc.M.sum(axis=0) == fc.d)
    assert abs(mu.sum() - 1) < 1e-12
    assert np.max(np.abs(fc.M @ mu - fc.d * mu)) <= 1e-10
    assert sum(len(c) for c in recurrent_classes(fc)) == fc.m
