from __future__ import annotations

import math
from math import comb

import numpy as np
import pytest

from dynkinlab import (
    AdaptedProcess,
    GeneratorSpec,
    Mode,
    NodeId,
    StoppingRule,
    build_lattice,
    evaluate_at_rule,
    one_step,
    solve_bsde,
)
from dynkinlab.bsde import hit_levels, hits_no_later, reachable_before_stop
from dynkinlab.errors import MissingPayoff, NoConvergence, StepTooCoarse

COHERENT = [GeneratorSpec.zero(), GeneratorSpec.linear_z(0.3), GeneratorSpec.kappa_abs(0.5)]


def random_rule(lat, rng, p=0.3) -> StoppingRule:
    return StoppingRule(tuple(rng.random(lat.level_size(i)) < p for i in range(lat.steps + 1)))


def test_one_step_zero_generator():
    x, z = one_step(GeneratorSpec.zero(), 0.0, 0.25, 3.0, 1.0)
    assert x == 2.0
    assert z == pytest.approx(2.0 / (2 * 0.5))


def test_one_step_kappa_abs():
    x, z = one_step(GeneratorSpec.kappa_abs(0.5), 0.0, 0.25, 3.0, 1.0)
    assert z == 2.0
    assert x == 1.75


@pytest.mark.parametrize("gen", COHERENT, ids=lambda g: g.family.value)
def test_one_step_flat_children(gen):
    assert one_step(gen, 0.3, 0.1, 1.25, 1.25) == (1.25, 0.0)


def test_one_step_implicit_in_y():
    # x = e + dt * a * x  =>  x = e / (1 - a dt)
    x, _ = one_step(GeneratorSpec.linear_yz(0.4, 0.0), 0.0, 0.5, 2.0, 2.0)
    assert x == pytest.approx(2.0 / 0.8, abs=1e-11)


def test_one_step_divergence_detected():
    with pytest.raises(NoConvergence):
        one_step(GeneratorSpec.linear_yz(10.0, 0.0), 0.0, 1.0, 1.0, 1.0)


def test_solve_bsde_martingale():
    lat = build_lattice(1.0, 6)
    X, Z = solve_bsde(lat, GeneratorSpec.zero(), lambda t, w: w)
    assert X.root == pytest.approx(0.0, abs=1e-15)
    for i in range(lat.steps):
        np.testing.assert_allclose(X.values[i], lat.walk(i), atol=1e-14)
        np.testing.assert_allclose(Z.values[i], 1.0, atol=1e-12)
    assert np.all(Z.terminal == 0)


def test_solve_bsde_constant():
    lat = build_lattice(1.0, 5, Mode.FULL_TREE)
    X, _ = solve_bsde(lat, GeneratorSpec.zero(), np.full(32, 2.5))
    assert all(np.all(v == 2.5) for v in X.values)


def test_solve_bsde_kappa_two_levels():
    # hand recursion: children |w| in {sqrt(.5)*2, 0}; z = +-1; x = sqrt(.5) - 0.5*0.5*1
    lat = build_lattice(1.0, 2)
    X, Z = solve_bsde(lat, GeneratorSpec.kappa_abs(0.5), lambda t, w: np.abs(w))
    level1 = math.sqrt(0.5) - 0.25
    np.testing.assert_allclose(X.values[1], [level1, level1], rtol=0, atol=1e-15)
    np.testing.assert_allclose(Z.values[1], [-1.0, 1.0], atol=1e-15)
    assert X.root == pytest.approx(level1, abs=1e-15)
    assert Z.root == 0.0


def test_solve_bsde_terminal_mapping():
    lat = build_lattice(1.0, 2)
    X, _ = solve_bsde(lat, GeneratorSpec.zero(), {NodeId(2, 0): 0.0, NodeId(2, 1): 4.0, NodeId(2, 2): 8.0})
    assert X.root == 4.0
    with pytest.raises(MissingPayoff):
        solve_bsde(lat, GeneratorSpec.zero(), {NodeId(2, 0): 0.0})


def test_solve_bsde_checks_step():
    lat = build_lattice(1.0, 2)
    with pytest.raises(StepTooCoarse):
        solve_bsde(lat, GeneratorSpec.linear_yz(3.0, 0.0), np.zeros(3))


def test_zero_generator_matches_binomial_expectation(rng):
    N = 30
    lat = build_lattice(2.0, N)
    f = rng.normal(size=N + 1)
    X, _ = solve_bsde(lat, GeneratorSpec.zero(), f)
    expected = sum(comb(N, k) * f[k] for k in range(N + 1)) / 2**N
    assert X.root == pytest.approx(expected, abs=1e-13)


def test_stopping_rule_keeps_terminal_level():
    lat = build_lattice(1.0, 3, Mode.FULL_TREE)
    rule = StoppingRule.terminal_only(lat)
    assert all(NodeId(3, k) in rule for k in range(8))
    assert NodeId(0, 0) not in rule
    assert len(rule.stop_set) == 8


def test_stopping_rule_union_and_equality():
    lat = build_lattice(1.0, 3)
    a = StoppingRule.from_nodes(lat, [NodeId(1, 0)])
    b = StoppingRule.from_nodes(lat, [NodeId(2, 2)])
    u = a.union(b)
    assert u.stop_set == a.stop_set | b.stop_set
    assert u == b.union(a)
    assert hash(u) == hash(b.union(a))
    assert a != b


def test_hits_no_later():
    lat = build_lattice(1.0, 3, Mode.FULL_TREE)
    early = StoppingRule.stop_from_level(lat, 1)
    late = StoppingRule.terminal_only(lat)
    assert hits_no_later(lat, early, late)
    assert not hits_no_later(lat, late, early)
    assert hits_no_later(lat, early, early)
    np.testing.assert_array_equal(hit_levels(lat, early), np.ones(8))
    np.testing.assert_array_equal(hit_levels(lat, late), np.full(8, 3))


def test_hit_levels_agree_with_hits_no_later(rng):
    for mode in Mode:
        lat = build_lattice(1.0, 4, mode)
        for _ in range(30):
            a, b = random_rule(lat, rng), random_rule(lat, rng)
            assert hits_no_later(lat, a, b) == bool(np.all(hit_levels(lat, a) <= hit_levels(lat, b)))


def test_evaluate_immediate_stop():
    lat = build_lattice(1.0, 3, Mode.FULL_TREE)
    payoff = AdaptedProcess.from_function(lat, lambda t, w: 1 + t + w)
    node = NodeId(1, 1)
    rule = StoppingRule.stop_from_level(lat, 1)
    v = evaluate_at_rule(lat, GeneratorSpec.kappa_abs(0.5), payoff, rule, from_node=node)
    assert v == payoff[node]


def test_evaluate_terminal_rule_is_expectation():
    lat = build_lattice(1.0, 4)
    payoff = {NodeId(4, k): float(k * k) for k in range(5)}
    v = evaluate_at_rule(lat, GeneratorSpec.zero(), payoff, StoppingRule.terminal_only(lat))
    assert v == pytest.approx(sum(comb(4, k) * k * k for k in range(5)) / 16, abs=1e-14)


def test_evaluate_missing_payoff():
    lat = build_lattice(1.0, 3, Mode.FULL_TREE)
    rule = StoppingRule.stop_from_level(lat, 1)
    payoff = {NodeId(1, 0): 1.0}
    with pytest.raises(MissingPayoff):
        evaluate_at_rule(lat, GeneratorSpec.zero(), payoff, rule)
    # unreachable stop nodes may be left out
    payoff[NodeId(1, 1)] = 2.0
    assert evaluate_at_rule(lat, GeneratorSpec.zero(), payoff, rule) == 1.5


def test_reachable_before_stop():
    lat = build_lattice(1.0, 3, Mode.FULL_TREE)
    rule = StoppingRule.from_nodes(lat, [NodeId(1, 1)])
    reach = reachable_before_stop(lat, rule, lat.root)
    assert reach[1].tolist() == [True, True]
    assert reach[2].tolist() == [True, True, False, False]
    assert reach[3].sum() == 4


@pytest.mark.parametrize("gen", COHERENT + [GeneratorSpec.linear_yz(0.5, 0.3)], ids=lambda g: g.family.value)
def test_comparison(gen, rng):
    for mode in Mode:
        lat = build_lattice(1.0, 8, mode)
        n = lat.level_size(lat.steps)
        for _ in range(25):
            eta = rng.normal(size=n)
            xi = eta + rng.exponential(size=n) * (rng.random(n) < 0.5)
            X, _ = solve_bsde(lat, gen, xi)
            Y, _ = solve_bsde(lat, gen, eta)
            assert all(np.all(a >= b - 1e-12) for a, b in zip(X.values, Y.values))


@pytest.mark.parametrize("gen", COHERENT, ids=lambda g: g.family.value)
def test_stopped_terminal_invariance(gen, rng):
    lat = build_lattice(1.0, 6, Mode.FULL_TREE)
    N = lat.steps
    leaves = np.arange(2**N)
    for _ in range(20):
        sigma = random_rule(lat, rng)
        frozen = AdaptedProcess(lat, [rng.normal(size=lat.level_size(i)) for i in range(N + 1)])
        hits = hit_levels(lat, sigma)
        zeta = np.array([frozen.values[h][leaf >> (N - h)] for leaf, h in zip(leaves, hits)])
        at_sigma = evaluate_at_rule(lat, gen, frozen, sigma)
        at_T = solve_bsde(lat, gen, zeta)[0].root
        assert abs(at_sigma - at_T) <= 1e-12


def test_stopped_terminal_invariance_needs_coherence(rng):
    lat = build_lattice(1.0, 4, Mode.FULL_TREE)
    gen = GeneratorSpec.linear_yz(0.5, 0.0)
    sigma = StoppingRule.stop_from_level(lat, 1)
    frozen = AdaptedProcess.constant(lat, 1.0)
    at_sigma = evaluate_at_rule(lat, gen, frozen, sigma)
    at_T = solve_bsde(lat, gen, np.ones(16))[0].root
    assert at_T - at_sigma > 1e-2


@pytest.mark.parametrize("gen", COHERENT, ids=lambda g: g.family.value)
def test_coherence_nested_rules(gen, rng):
    lat = build_lattice(1.0, 6, Mode.FULL_TREE)
    n = lat.level_size(lat.steps)
    for _ in range(20):
        X, _ = solve_bsde(lat, gen, rng.normal(size=n))
        sigma = random_rule(lat, rng, 0.2)
        tau = random_rule(lat, rng, 0.2).union(sigma)  # tau hits no later than sigma
        assert hits_no_later(lat, tau, sigma)
        inner = {}
        for node in tau.stop_set:
            inner[node] = evaluate_at_rule(lat, gen, X, sigma, from_node=node)
            assert abs(inner[node] - X[node]) <= 1e-10
        outer = evaluate_at_rule(lat, gen, inner, tau)
        assert abs(outer - X.root) <= 1e-10
