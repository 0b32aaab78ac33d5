import itertools

import numpy as np
import pytest

from faithbench.theory import (
    MAX_D,
    TheoryInstance,
    brute_force_optimal,
    check_baseline_dependence,
    check_corollary_insertion,
    exact_deletion_sum,
    exact_insertion_sum,
    monotone_orderings,
    random_instance,
)

INST = TheoryInstance([1.0, 2.0, 3.0], [3.0, -1.0, 2.0])


def brute_deletion(inst, order, regime):
    """Direct evaluation: sum over steps of f at the perturbed input (expected value for uniform)."""
    x = inst.x.copy()
    total = 0.0
    for u in order:
        x[u] = 0.0 if regime == "zero" else inst.x[u] + 0.5
        total += x @ inst.w + inst.b
    return total


def brute_insertion(inst, order, regime):
    rep = np.zeros(inst.d) if regime == "zero" else inst.x + 0.5
    x = rep.copy()
    total = 0.0
    for u in order:
        x[u] = inst.x[u]
        total += x @ inst.w + inst.b
    return total


def test_deletion_examples():
    assert exact_deletion_sum(INST, (2, 0, 1)) == -1.0
    assert exact_deletion_sum(INST, (0, 2, 1)) == 2.0


def test_uniform_examples():
    assert exact_deletion_sum(INST, (1, 2, 0), "uniform") == 23.0
    assert exact_deletion_sum(INST, (0, 2, 1), "uniform") == 27.0


def test_insertion_examples():
    assert exact_insertion_sum(INST, (2, 0, 1)) == 22.0
    assert exact_insertion_sum(INST, (1, 0, 2)) == 6.0


@pytest.mark.parametrize("regime", ["zero", "uniform"])
def test_closed_forms_match_direct_evaluation(regime):
    rng = np.random.default_rng(0)
    for d in (2, 3, 5):
        inst = random_instance(rng, d)
        for p in itertools.permutations(range(d)):
            assert exact_deletion_sum(inst, p, regime) == pytest.approx(brute_deletion(inst, p, regime), abs=1e-12)
            assert exact_insertion_sum(inst, p, regime) == pytest.approx(brute_insertion(inst, p, regime), abs=1e-12)


def test_zero_regime_unique_minimizer():
    v = brute_force_optimal(INST, "zero")
    assert v.deletion_optima == {(2, 0, 1)}
    assert v.contribution_direction == "descending"
    assert v.insertion_optima == {(2, 0, 1)} and v.insertion_value == 22.0


def test_uniform_regime_depends_on_w_only():
    v = brute_force_optimal(INST, "uniform")
    assert v.deletion_optima == {(1, 2, 0)}
    assert v.weight_direction == "ascending"
    other = TheoryInstance([0.9, -1.3, 0.05], INST.w, 4.0)
    assert brute_force_optimal(other, "uniform").deletion_optima == v.deletion_optima


def test_tied_contributions():
    v = brute_force_optimal(TheoryInstance([1.0, 2.0], [2.0, 1.0]), "zero")
    assert v.deletion_optima == {(0, 1), (1, 0)}


def test_constant_weights_tie_uniform_regime():
    v = brute_force_optimal(TheoryInstance([0.1, 0.5, 0.9], [1.0, 1.0, 1.0]), "uniform")
    assert len(v.deletion_optima) == 6


def test_zero_model_ties_everything():
    inst = TheoryInstance([0.1, 0.5, 0.9], [0.0, 0.0, 0.0])
    for regime in ("zero", "uniform"):
        v = brute_force_optimal(inst, regime)
        assert len(v.deletion_optima) == 6 and len(v.insertion_optima) == 6


def test_regimes_can_agree():
    # x*w descending is [2, 1, 0]; w ascending is also [2, 1, 0] when w = [3, 2, 1] is scaled by large x
    inst = TheoryInstance([0.1, 1.0, 10.0], [3.0, 2.0, 1.0])
    assert brute_force_optimal(inst, "zero").deletion_optima == brute_force_optimal(inst, "uniform").deletion_optima


def test_monotone_orderings_with_ties():
    assert monotone_orderings([1.0, 2.0, 2.0], descending=True) == {(1, 2, 0), (2, 1, 0)}


def test_validation():
    with pytest.raises(ValueError):
        exact_deletion_sum(INST, (0, 0, 1))
    with pytest.raises(ValueError):
        exact_deletion_sum(INST, (0, 1, 2), "gaussian")
    with pytest.raises(ValueError):
        brute_force_optimal(TheoryInstance(np.ones(MAX_D + 1), np.ones(MAX_D + 1)))
    with pytest.raises(ValueError):
        TheoryInstance([1.0], [1.0])


def test_random_suites_small():
    reports = check_baseline_dependence(count=10, dims=(3, 4), seed=5)
    assert all(r.passed for r in reports.values())
    assert check_corollary_insertion(count=10, dims=(3, 4), seed=6).passed
