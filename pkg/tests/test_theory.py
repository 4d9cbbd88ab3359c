import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdcal.cutoff import retain, top_k
from vdcal.enumeration import GeometricModel
from vdcal.ranked_dist import GeometricRankedModel, RankedDistribution
from vdcal.theory import (HardStepParams, PremiseError, TradeoffParams, argmin_branching, c_min, enumerate_cutoff_policies,
                          entropy_loss, step_hardness, thm1_bound, thm2_bound, tilted_entropy, verify_decomposition,
                          verify_decomposition_random, verify_delta_regimes, verify_thm1, verify_thm2,
                          verify_thm2_random)
from vdcal.valid_set import from_sequences


def brute_tilted_entropy(a, v):
    w = np.exp(-a * np.arange(v) / v)
    p = w / w.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


# tilted entropy and entropy loss

def test_tilted_entropy_examples():
    assert tilted_entropy(0.0, 2) == pytest.approx(math.log(2), abs=1e-15)
    assert tilted_entropy(50.0, 2) < 1e-6
    assert tilted_entropy(2.0, 2) == pytest.approx(brute_tilted_entropy(2.0, 2), abs=1e-12)


@given(st.floats(0.0, 80.0), st.integers(1, 64))
def test_tilted_entropy_matches_brute(a, v):
    assert tilted_entropy(a, v) == pytest.approx(brute_tilted_entropy(a, v), abs=1e-10)


def test_entropy_loss_examples():
    assert entropy_loss(0.0, 5) == 0.0
    L = 1e-3
    assert entropy_loss(L, 2) / L**2 == pytest.approx(1 / 32, rel=0.01)
    assert abs(entropy_loss(50.0, 2) - math.log(2)) < 1e-6


def test_entropy_loss_monotone_dense_grid():
    a = np.linspace(0.0, 50.0, 2001)
    for v in range(2, 65):
        d = entropy_loss(a, v)
        assert np.all(np.diff(d) >= -1e-12)
        assert np.all(d[1:] > 0)


def test_c_min_examples():
    assert argmin_branching(math.exp(-1e-2), 256) == 2
    assert c_min(1e-30, 40) == pytest.approx(math.log(2), abs=1e-6)
    eps = 0.2
    assert c_min(eps, 2) == entropy_loss(math.log(1 / eps), 2)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            c_min(bad, 10)


# bounds

def test_thm2_bound_examples():
    assert thm2_bound(TradeoffParams(0.1, (1, 1, 1), 10)).per_position == 1.0
    near_one = thm2_bound(TradeoffParams(1 - 1e-9, (2, 3), 10))
    assert near_one.per_position == pytest.approx(1.0, abs=1e-12)
    b = thm2_bound(TradeoffParams(0.1, (2, 2, 2), 10))
    assert b.per_position == pytest.approx(math.exp(-3 * entropy_loss(math.log(10), 2)), rel=1e-14)


def test_tradeoff_params_rejected():
    for eps in (0.0, 1.0):
        with pytest.raises(ValueError):
            TradeoffParams(eps, (2,), 4)
    with pytest.raises(ValueError):
        TradeoffParams(0.1, (5,), 4)


@given(st.floats(1e-6, 0.999), st.lists(st.integers(2, 20), min_size=1, max_size=6))
def test_per_position_tighter_than_coarse(eps, profile):
    b = thm2_bound(TradeoffParams(eps, tuple(profile), 20))
    assert b.per_position <= b.coarse * (1 + 1e-12)


def test_thm1_bound_examples():
    assert thm1_bound(HardStepParams(0.1, 0.7, 0, 0.3)) == 1.0
    assert thm1_bound(HardStepParams(0.1, 0.7, 4, 0.0)) == pytest.approx(math.exp(-2.8), rel=1e-15)
    # budget covers three of the five hard steps
    eta, delta = 0.1, 1 - math.exp(-0.3)
    assert thm1_bound(HardStepParams(eta, 0.5, 5, delta)) == pytest.approx(math.exp(-0.5 * 2), rel=1e-12)


@given(st.floats(0.01, 2.0), st.floats(0.01, 3.0), st.integers(0, 10), st.floats(0.0, 0.95))
def test_thm1_bound_monotone(eta, rho, m, delta):
    b = thm1_bound(HardStepParams(eta, rho, m, delta))
    assert thm1_bound(HardStepParams(eta, rho, m + 1, delta)) <= b
    assert thm1_bound(HardStepParams(eta, rho * 1.5, m, delta)) <= b
    assert thm1_bound(HardStepParams(eta, rho, m, min(delta + 0.04, 0.99))) >= b


def test_hard_step_params_rejected():
    for bad in [(0.0, 1.0, 1, 0.1), (0.1, 0.0, 1, 0.1), (0.1, 1.0, -1, 0.1), (0.1, 1.0, 1, 1.0)]:
        with pytest.raises(ValueError):
            HardStepParams(*bad)


def test_thm1_constructed_two_step():
    # two steps, model ranks one invalid token between the two valid ones at each prefix
    vs = from_sequences([[0, 0], [0, 2], [2, 0], [2, 2]])
    rankings = {(): (0, 1, 2), (0,): (0, 1, 2), (2,): (0, 1, 2)}
    policies = enumerate_cutoff_policies(vs, rankings)
    assert len(policies) == 27
    hard = step_hardness(policies, 2, eta=0.1)
    assert hard == pytest.approx([math.log(2)] * 2)
    checks, violations = verify_thm1(vs, rankings, [0.1], [0.0, 0.1])
    assert violations == 0 and checks
    for c in checks:
        assert c.worst_recall <= c.bound + 1e-12
    # zero slack: only the top-1 policy keeps full precision, recall exactly exp(-rho m)
    c0 = next(c for c in checks if c.delta == 0.0)
    assert c0.worst_recall == pytest.approx(c0.bound, abs=1e-12)


# verification harnesses

def test_verify_thm2_example():
    rep = verify_thm2(GeometricRankedModel((1.0, 1.0), 1.0, 10), (2, 2), 0.5)
    assert rep.triggered and not rep.violated
    assert rep.chain_rule_error <= 1e-9
    assert rep.validity == pytest.approx(1 - rep.invalid_mass, abs=1e-12)


def test_verify_thm2_not_triggered_when_hot():
    rep = verify_thm2(GeometricRankedModel((1.0, 1.0), 1e6, 10), (2, 2), 0.1)
    assert not rep.triggered and rep.bound is None and not rep.violated


def test_verify_thm2_premise_error():
    with pytest.raises(PremiseError):
        verify_thm2(GeometricRankedModel((1.0,), 1.0, 4), (2,), 0.1, ranking=lambda p: (0, 2, 1, 3))


def test_local_validity_geometric():
    for lam, v, n in [(1.0, 2, 10), (0.3, 3, 40), (2.0, 1, 5)]:
        model = GeometricRankedModel((lam,), 1.0, n)
        rep = verify_thm2(model, (v,), 0.5)
        q = math.exp(-lam)
        assert rep.validity == pytest.approx(1 - q**v, abs=q**n + 1e-12)


def test_verify_thm2_random_small():
    rep = verify_thm2_random(60, seed=3)
    assert rep.violations == 0 and rep.max_slack >= -1e-9
    assert rep.details["max_chain_rule_error"] <= 1e-9


def test_verify_decomposition_oracle_and_top1():
    vs = from_sequences([[0, 0], [0, 1], [2, 1]])
    rep = verify_decomposition(vs.valid_tokens, vs)
    assert rep.ok and set(rep.alpha) == {1.0} and set(rep.beta) == {1.0}
    # greedy picks token 0 then 0: a valid sequence, so precision 1
    d = RankedDistribution([0.5, 0.3, 0.2], (0, 1, 2))
    greedy = lambda prefix: retain(d, top_k(1)).token_set  # noqa: E731
    rep = verify_decomposition(greedy, vs)
    assert rep.ok and rep.precision == rep.precision_product == 1.0


def test_verify_decomposition_random_small():
    rep = verify_decomposition_random(50, seed=1)
    assert rep.violations == 0 and rep.max_slack <= 1e-12
    assert set(rep.to_json()) >= {"check", "instances", "violations", "max_slack", "tolerance"}


def test_delta_regimes():
    assert verify_delta_regimes().ok


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_geometric_engine_interleave_premise(seed):
    rng = random.Random(seed)
    profile = tuple(rng.randint(1, 3) for _ in range(rng.randint(1, 3)))
    model = GeometricRankedModel(tuple(rng.uniform(0.2, 3) for _ in profile), rng.uniform(0.3, 3), 6)
    perm = lambda prefix: tuple(range(6))  # noqa: E731
    a = verify_thm2(model, profile, 0.5)
    b = verify_thm2(model, profile, 0.5, ranking=perm)
    assert a.diversity == b.diversity and a.validity == b.validity
    assert GeometricModel(model)(()).tokens == tuple(range(6))
