import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import expectimax_q
from prefhunter import kernels
from prefhunter.mdp import (ALL_STATES, INITIAL_STATE, N_ACTIONS, N_STATES, TERMINAL, TERMINAL_STATE, AttackerAction,
                            AttackerMdp, MdpState, bellman_residual, features, greedy_policy, rollout, value_iteration)

A = AttackerAction
weights = arrays(np.float64, 6, elements=st.floats(-3, 3))


def test_state_indexing_round_trips():
    for i in range(N_STATES):
        assert MdpState.from_index(i).index == i
    assert INITIAL_STATE.index == 0 and TERMINAL_STATE.index == TERMINAL
    with pytest.raises(ValueError):
        MdpState(privs="admin")
    assert MdpState.from_json(MdpState(active=True, c2=True).to_json()) == MdpState(active=True, c2=True)


def test_action_names():
    assert A.parse("C2") is A.C2
    with pytest.raises(ValueError):
        A.parse("Teleport")
    assert A.InitialAccessRoot.is_initial_access and not A.C2.is_initial_access
    assert N_ACTIONS == 8


def test_transitions_are_stochastic_for_every_pair():
    T = AttackerMdp(p_esc=0.8).transition_matrix()
    assert T.shape == (N_STATES, N_ACTIONS, N_STATES)
    assert np.allclose(T.sum(axis=2), 1.0)
    assert (T >= 0).all()


def test_privesc_branch():
    mdp = AttackerMdp(p_esc=0.8)
    s = MdpState(active=True)
    assert mdp.transition(s, A.PrivEsc) == {s.replace(privs="root"): 0.8, s: pytest.approx(0.2)}
    assert mdp.transition(s.replace(privs="root"), A.PrivEsc) == {s.replace(privs="root"): 1.0}
    assert AttackerMdp(p_esc=1.0).transition(s, A.PrivEsc) == {s.replace(privs="root"): 1.0}


def test_feature_map():
    active = MdpState(active=True)
    assert list(features(active, A.IngressToolTransfer)) == [1, 0, 0, 0, 0, 0]
    assert list(features(active, A.C2)) == [0, 1, 0, 0, 0, 0]
    assert list(features(INITIAL_STATE, A.InitialAccessRoot)) == [0, 0, 1, 0, 0, 0]
    assert list(features(active, A.PrivEsc)) == [0, 0, 0, 1, 0, 0]
    assert list(features(active, A.DataExfil)) == [0, 0, 0, 0, 1, 0]
    assert list(features(active.replace(ioc=True), A.DefenseEvasion)) == [0, 0, 0, 0, 0, 1]
    assert not features(active, A.DefenseEvasion).any()
    assert not features(INITIAL_STATE, A.C2).any()
    assert not features(TERMINAL_STATE, A.C2).any()


def test_bad_parameters():
    with pytest.raises(ValueError):
        AttackerMdp(gamma=1.0)
    with pytest.raises(ValueError):
        AttackerMdp(p_esc=0.0)
    with pytest.raises(ValueError):
        value_iteration(AttackerMdp(), np.zeros(6), tol=0)


def test_zero_weights_give_zero_values():
    Q, mu = value_iteration(AttackerMdp(), np.zeros(6))
    assert not Q.any()
    assert greedy_policy(Q).tolist() == [0] * N_STATES


def test_only_c2_valued():
    mdp = AttackerMdp(gamma=0.9)
    Q, _ = value_iteration(mdp, [0, 1, 0, 0, 0, 0])
    active = MdpState(active=True).index
    assert Q[active, A.C2] == pytest.approx(1 / (1 - 0.9), abs=1e-6)
    assert greedy_policy(Q)[active] == A.C2


@settings(max_examples=30)
@given(weights, st.floats(0.5, 0.97), st.floats(0.1, 1.0))
def test_value_iteration_matches_expectimax(w, gamma, p_esc):
    mdp = AttackerMdp(gamma=gamma, p_esc=p_esc)
    Q, mu = value_iteration(mdp, w)
    depth = 60
    bound = gamma**depth * np.abs(mdp.reward(w)).max() / (1 - gamma) + 1e-6
    assert np.abs(Q - expectimax_q(mdp, w, depth)).max() <= bound
    assert np.allclose(Q, mu @ w, atol=1e-9)
    assert bellman_residual(mdp, w, Q) < 1e-6


@settings(max_examples=30)
@given(weights, st.floats(0.01, 100))
def test_policy_is_scale_invariant(w, c):
    mdp = AttackerMdp()
    p1 = greedy_policy(value_iteration(mdp, w)[0])
    p2 = greedy_policy(value_iteration(mdp, c * w)[0])
    Q = value_iteration(mdp, w)[0]
    # compare only where the optimum is unique
    gap = np.sort(Q, axis=1)
    clear = gap[:, -1] - gap[:, -2] > 1e-6
    assert (p1[clear] == p2[clear]).all()


def test_warm_start_reaches_the_same_fixpoint():
    mdp = AttackerMdp()
    w1, w2 = np.array([1, 2, 0, 1, -1, 0.5]), np.array([1.1, 1.9, 0.1, 1, -1, 0.4])
    _, mu1 = value_iteration(mdp, w1)
    Qa, _ = value_iteration(mdp, w2)
    Qb, _ = value_iteration(mdp, w2, warm_start=mu1)
    assert np.abs(Qa - Qb).max() < 1e-6


def test_rollout_respects_policy_and_terminal():
    mdp = AttackerMdp(p_esc=1.0)
    policy = np.full(N_STATES, int(A.Exit))
    policy[0] = int(A.InitialAccessUser)
    t = rollout(mdp, policy, horizon=10, rng_seed=0)
    assert t.actions == [A.InitialAccessUser, A.Exit]
    with pytest.raises(ValueError):
        rollout(mdp, policy, horizon=0)


def test_policy_returns_match_closed_form():
    mdp = AttackerMdp(gamma=0.9)
    policy = np.full(N_STATES, int(A.C2))
    policy[0] = int(A.InitialAccessUser)
    rets = mdp.simulator().policy_returns(policy, [0, 1, 0, 0, 0, 0], 0, 5, 10, np.random.default_rng(0))
    assert np.allclose(rets, sum(0.9**k for k in range(1, 5)))


@pytest.mark.skipif("compiled" not in kernels.available(), reason="extension not built")
@settings(max_examples=25)
@given(weights, st.floats(0.5, 0.97), st.floats(0.1, 1.0))
def test_compiled_and_python_planners_agree(w, gamma, p_esc):
    mdp = AttackerMdp(gamma=gamma, p_esc=p_esc)
    args = (mdp.succ, np.ascontiguousarray(mdp.prob), mdp.phi, np.ascontiguousarray(w), gamma, 1e-10, 100_000)
    Qc, muc, _, _ = kernels.load("compiled").bellman_occupancy(*args)
    Qp, mup, _, _ = kernels.load("python").bellman_occupancy(*args)
    assert np.allclose(Qc, Qp, atol=1e-8)
    assert np.allclose(muc, mup, atol=1e-8)


@pytest.mark.skipif("compiled" not in kernels.available(), reason="extension not built")
def test_compiled_and_python_samplers_agree():
    mdp = AttackerMdp(p_esc=0.6)
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.ones(N_ACTIONS), size=N_STATES)
    starts = rng.integers(0, 16, size=50)
    uniforms = rng.random((50, 30, 2))
    common = (mdp.succ, np.ascontiguousarray(mdp.prob), mdp.phi, probs, starts, 30, TERMINAL, uniforms)
    out_c = kernels.load("compiled").sample_episodes(*common)
    out_p = kernels.load("python").sample_episodes(*common)
    for a, b in zip(out_c, out_p):
        assert np.array_equal(np.asarray(a), np.asarray(b))
    policy = rng.integers(0, N_ACTIONS, size=N_STATES).astype(np.int64)
    r = np.ascontiguousarray(mdp.reward(rng.normal(size=6)))
    u = rng.random((40, 25))
    rc = kernels.load("compiled").policy_returns(mdp.succ, np.ascontiguousarray(mdp.prob), r, policy, 0, 25, 0.95,
                                                 TERMINAL, u)
    rp = kernels.load("python").policy_returns(mdp.succ, np.ascontiguousarray(mdp.prob), r, policy, 0, 25, 0.95,
                                               TERMINAL, u)
    assert np.allclose(rc, rp)


@pytest.mark.skipif("compiled" not in kernels.available(), reason="extension not built")
def test_compiled_and_python_td_agree():
    mdp = AttackerMdp(p_esc=0.6)
    rng = np.random.default_rng(2)
    probs = rng.dirichlet(np.ones(N_ACTIONS), size=N_STATES)
    starts = rng.integers(0, 16, size=20)
    ep = kernels.load("python").sample_episodes(mdp.succ, np.ascontiguousarray(mdp.prob), mdp.phi, probs, starts,
                                                15, TERMINAL, rng.random((20, 15, 2)))
    results = []
    for name in ("compiled", "python"):
        mu = np.zeros((N_STATES, N_ACTIONS, 6))
        kernels.load(name).td_occupancy(*ep, mu, np.array([1.0, 0.5, 0, 2, -1, 0.3]), 0.95, 0.2, 2)
        results.append(mu)
    assert np.allclose(results[0], results[1])


def test_backend_selection():
    assert kernels.BACKEND in kernels.available()
    with pytest.raises(ValueError):
        kernels.load("fortran")
    assert len(ALL_STATES) == 16
