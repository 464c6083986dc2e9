"""Pure-Python/numpy twins of the compiled kernels in ``_ckernels.pyx``.

Used when the extension is not built, or when ``PREFHUNTER_PURE_PYTHON`` is
set.  Results match the compiled path to floating-point round-off.
"""
import numpy as np

# actions within this relative distance of the best are treated as tied
TIE_RTOL = 1e-10


def first_max(Q):
    """Lowest action index whose value ties the row maximum."""
    Q = np.asarray(Q)
    m = Q.max(axis=-1, keepdims=True)
    return np.argmax(Q >= m - TIE_RTOL * (1.0 + np.abs(m)), axis=-1)


def bellman_occupancy(succ, prob, phi, w, gamma, tol, max_iter, mu0=None):
    S, A, F = phi.shape
    mu = np.zeros((S, A, F)) if mu0 is None else np.array(mu0, dtype=float)
    Q = mu @ w
    residual = 0.0
    it = 0
    while it < max_iter:
        it += 1
        greedy = first_max(Q)
        # (S, A, K, F): occupancy of the greedy action at each successor
        nxt = mu[succ, greedy[succ]]
        nmu = phi + gamma * np.einsum("sak,sakf->saf", prob, nxt)
        nQ = nmu @ w
        residual = float(np.abs(nQ - Q).max())
        Q, mu = nQ, nmu
        if residual < tol:
            break
    return Q, mu, it, residual


def _sample(row, u):
    acc = 0.0
    for a, p in enumerate(row):
        acc += p
        if u < acc:
            return a
    return len(row) - 1


def _step(succ, prob, s, a, u):
    acc = 0.0
    for k in range(succ.shape[2]):
        acc += prob[s, a, k]
        if u < acc:
            return int(succ[s, a, k])
    return int(succ[s, a, 0])


def sample_episodes(succ, prob, phi, policy, starts, horizon, terminal, uniforms):
    states, actions, nexts, feats, done = [], [], [], [], []
    policy = np.asarray(policy).tolist()
    for i, s in enumerate(np.asarray(starts).tolist()):
        for t in range(horizon):
            if s == terminal:
                break
            a = _sample(policy[s], uniforms[i, t, 0])
            s2 = _step(succ, prob, s, a, uniforms[i, t, 1])
            states.append(s)
            actions.append(a)
            nexts.append(s2)
            feats.append(phi[s, a])
            done.append(s2 == terminal)
            s = s2
    F = phi.shape[2]
    return (
        np.array(states, dtype=np.int64),
        np.array(actions, dtype=np.int64),
        np.array(nexts, dtype=np.int64),
        np.array(feats, dtype=np.float64).reshape(-1, F),
        np.array(done, dtype=bool),
    )


def td_occupancy(states, actions, nexts, feats, done, mu, w, gamma, alpha, sweeps):
    """Q-learning on feature returns; updates ``mu`` in place."""
    for _ in range(sweeps):
        for i in range(len(states)):
            s, a, s2 = states[i], actions[i], nexts[i]
            target = feats[i].copy()
            if not done[i]:
                best = int(first_max(mu[s2] @ w))
                target += gamma * mu[s2, best]
            mu[s, a] += alpha * (target - mu[s, a])
    return mu


def policy_returns(succ, prob, reward, policy, s0, horizon, gamma, terminal, uniforms):
    out = np.zeros(uniforms.shape[0])
    for i in range(uniforms.shape[0]):
        s, g, disc = s0, 0.0, 1.0
        for t in range(horizon):
            if s == terminal:
                break
            a = policy[s]
            g += disc * reward[s, a]
            disc *= gamma
            s = _step(succ, prob, s, a, uniforms[i, t])
        out[i] = g
    return out
