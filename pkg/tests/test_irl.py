import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import expectimax_q
from prefhunter.analysis import mean_shift_tiers, spearman
from prefhunter.errors import NonFiniteObjective
from prefhunter.irl import (MAP_BIRL, MLE_IRL, IrlConfig, IrlResult, discounted_return, inverse_learning_error,
                            log_likelihood, log_prior, map_birl, mle_irl, normalize)
from prefhunter.mdp import AttackerAction as A, AttackerMdp, MdpState, greedy_policy, rollout, value_iteration
from prefhunter.synth import generate, script_by_name
from prefhunter.trajectory import Trajectory, replay

MDP = AttackerMdp()


def traj(acts, outcomes=None, exit_synthesized=False, label="t"):
    return Trajectory(steps=replay(acts, outcomes), exit_synthesized=exit_synthesized, label=label)


C2_ONLY = traj([A.InitialAccessUser, A.C2, A.C2, A.C2])
MIXED = traj([A.InitialAccessRoot, A.C2, A.IngressToolTransfer, A.DefenseEvasion, A.PrivEsc, A.DataExfil])


def replica_trajectory(name):
    return generate(script_by_name(name))[1].trajectory


def test_config_validation():
    with pytest.raises(ValueError):
        IrlConfig(prior="laplace")
    with pytest.raises(ValueError):
        IrlConfig(beta=-1)
    with pytest.raises(ValueError):
        IrlConfig(restarts=-1)


def test_normalize():
    assert normalize([1, -4, 2, 0, 0, 0]).tolist() == [0.25, -1, 0.5, 0, 0, 0]
    assert normalize(np.zeros(6)).tolist() == [0] * 6


def test_likelihood_of_uniform_policies():
    one = traj([A.InitialAccessUser])
    assert log_likelihood(one, np.ones(6), MDP, beta=1e-12) == pytest.approx(-math.log(8))
    assert log_likelihood(MIXED, np.zeros(6), MDP, beta=5.0) == pytest.approx(-6 * math.log(8))


@settings(max_examples=15)
@given(arrays(np.float64, 6, elements=st.floats(-2, 2)), st.floats(0.1, 10))
def test_likelihood_matches_independent_softmax(w, beta):
    Q = expectimax_q(MDP, w, depth=500)
    expect = 0.0
    for s, a in MIXED.steps:
        row = [beta * q for q in Q[s.index]]
        top = max(row)
        expect += row[int(a)] - top - math.log(sum(math.exp(x - top) for x in row))
    assert log_likelihood(MIXED, w, MDP, beta) == pytest.approx(expect, abs=1e-5)


def test_log_prior():
    cfg = IrlConfig(prior="gaussian", sigma=2.0)
    lp, g = log_prior(np.array([2.0, 0, 0, 0, 0, 0]), cfg)
    assert lp == pytest.approx(-0.5) and g[0] == pytest.approx(-0.5)
    box = IrlConfig(prior="uniform", bound=1.0)
    assert log_prior(np.full(6, 0.5), box)[0] == 0.0
    assert log_prior(np.full(6, 1.5), box)[0] == -math.inf


def test_map_trace_is_monotone_and_within_bounds():
    r = map_birl(MIXED, MDP, IrlConfig())
    assert r.method == MAP_BIRL
    assert all(b >= a - 1e-9 for a, b in zip(r.trace, r.trace[1:]))
    assert np.abs(r.w).max() <= 5.0 + 1e-12
    assert len(r.trace) <= IrlConfig().max_iters + 1


def test_c2_evidence_puts_attributability_on_top():
    r = map_birl(C2_ONLY, MDP, IrlConfig())
    assert mean_shift_tiers(r.normalized_w)[0] == ["attributability"]
    m = mle_irl(C2_ONLY, MDP.simulator(), IrlConfig())
    assert int(np.argmax(m.w)) == 1


GRID = np.array(list(itertools.product([-5, -2.5, 0, 2.5, 5], repeat=6)), dtype=float)


@pytest.mark.parametrize("acts", [
    [A.InitialAccessUser, A.IngressToolTransfer, A.C2, A.IngressToolTransfer],
    [A.InitialAccessRoot, A.C2, A.IngressToolTransfer, A.DefenseEvasion, A.PrivEsc, A.DataExfil],
    [A.InitialAccessUser, A.IngressToolTransfer, A.DefenseEvasion, A.IngressToolTransfer, A.DefenseEvasion],
], ids=["tools-and-c2", "mixed", "evasion"])
def test_map_agrees_with_grid_search(acts):
    X = traj(acts)
    best, best_w, mu = -math.inf, None, None
    states = [s.index for s, _ in X.steps]
    actions = [int(a) for _, a in X.steps]
    for w in GRID:
        Q, mu = value_iteration(MDP, w, warm_start=mu)
        z = 5.0 * Q[states]
        ll = float((z[np.arange(len(states)), actions] - np.log(np.exp(z).sum(axis=1))).sum())
        if ll > best:
            best, best_w = ll, w
    r = map_birl(X, MDP, IrlConfig())
    assert log_likelihood(X, r.w, MDP, 5.0) >= best - 1e-3
    assert mean_shift_tiers(r.normalized_w)[0] == mean_shift_tiers(normalize(best_w))[0]


def test_gaussian_prior_without_evidence_weight_returns_zero():
    r = map_birl(MIXED, MDP, IrlConfig(prior="gaussian", beta=1e-9))
    assert np.abs(r.w).max() < 1e-6


def test_synthesized_exit_is_not_evidence():
    with_exit = traj([A.InitialAccessUser, A.C2, A.Exit], exit_synthesized=True)
    without = traj([A.InitialAccessUser, A.C2])
    assert np.allclose(map_birl(with_exit, MDP).w, map_birl(without, MDP).w)


def test_results_are_deterministic_and_serialisable():
    a = map_birl(MIXED, MDP, IrlConfig(seed=3))
    b = map_birl(MIXED, MDP, IrlConfig(seed=3))
    assert a.dumps() == b.dumps()
    back = IrlResult.from_json(a.to_json())
    assert np.array_equal(back.w, a.w) and back.trace == a.trace and back.method == a.method


def test_mle_without_confidence_stays_at_start():
    r = mle_irl(MIXED, MDP.simulator(), IrlConfig(beta=0.0, mle_iters=60))
    assert r.method == MLE_IRL
    assert not np.any(r.w)


def test_mle_agrees_with_map_on_a_replica():
    X = replica_trajectory("CADETS-2")
    m = map_birl(X, MDP)
    e = mle_irl(X, MDP.simulator())
    assert spearman(m.w, e.w)[0] >= 0.8


def test_mle_ranking_is_stable_across_seeds():
    X = replica_trajectory("CADETS-1")
    orders = {tuple(np.argsort(-mle_irl(X, MDP.simulator(), IrlConfig(seed=s)).w)) for s in (42, 7)}
    assert len(orders) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_weights_are_reported():
    with pytest.raises(NonFiniteObjective):
        map_birl(MIXED, MDP, IrlConfig(step=math.inf, step_max=math.inf, prior="gaussian", restarts=1))


# --- inverse learning error ----------------------------------------------

def test_ile_hand_computed_case():
    # gamma 0.8, Eva = 1, Dis = -0.25: the learned policy cleans up (+1) and then
    # drops another tool (-0.25 * 0.8); the observed run cleans up and leaves.
    mdp = AttackerMdp(gamma=0.8)
    X = Trajectory(steps=((MdpState(active=True, ioc=True), A.DefenseEvasion), (MdpState(active=True), A.Exit)),
                   exit_synthesized=False)
    w = np.array([-0.25, 0, 0, 0, 0, 1.0])
    assert discounted_return(X, w, 0.8) == pytest.approx(1.0)
    mean, sd = inverse_learning_error(X, w, mdp)
    assert mean == pytest.approx(0.2, abs=1e-12)
    assert sd == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("w_true", [[1, 2, 0, 1, 0, 0.5], [0.5, 1, 2, 0, 1, 0], [-0.25, 0, 0, 0, 0, 1]])
def test_ile_vanishes_on_optimal_evidence(w_true):
    mdp = AttackerMdp(p_esc=1.0)
    policy = greedy_policy(value_iteration(mdp, w_true)[0])
    X = rollout(mdp, policy, horizon=20, rng_seed=0)
    r = map_birl(X, mdp)
    assert inverse_learning_error(X, r, mdp)[0] < 0.05
    assert inverse_learning_error(X, np.asarray(w_true, float), mdp)[0] < 1e-9


def test_ile_of_empty_evidence_is_zero():
    assert inverse_learning_error([], np.ones(6), MDP) == (0.0, 0.0)
    with pytest.raises(ValueError):
        inverse_learning_error(MIXED, np.ones(6), MDP, n_samples=0)
