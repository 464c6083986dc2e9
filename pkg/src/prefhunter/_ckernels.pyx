# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for planning, simulation and TD estimation.

Every function here has a behaviour-identical twin in ``_pykernels``; the
test-suite checks the two against each other.
"""
import numpy as np

from libc.math cimport fabs


# actions within this relative distance of the best are treated as tied
cdef double TIE_RTOL = 1e-10


cdef inline Py_ssize_t _first_max(const double* q, Py_ssize_t n) nogil:
    cdef Py_ssize_t a
    cdef double v = q[0]
    for a in range(1, n):
        if q[a] > v:
            v = q[a]
    v -= TIE_RTOL * (1.0 + fabs(v))
    for a in range(n):
        if q[a] >= v:
            return a
    return 0


cdef inline Py_ssize_t _greedy(double[:, ::1] Q, Py_ssize_t s, Py_ssize_t n_actions) nogil:
    return _first_max(&Q[s, 0], n_actions)


def bellman_occupancy(const long[:, :, ::1] succ, const double[:, :, ::1] prob,
                      const double[:, :, ::1] phi, const double[::1] w,
                      double gamma, double tol, long max_iter, mu0=None):
    cdef Py_ssize_t S = succ.shape[0], A = succ.shape[1], K = succ.shape[2]
    cdef Py_ssize_t F = phi.shape[2]
    cdef Py_ssize_t s, a, k, f, s2, g, it
    cdef double residual = 0.0, q, p, diff

    if mu0 is None:
        mu_arr = np.zeros((S, A, F), dtype=np.float64)
    else:
        mu_arr = np.array(mu0, dtype=np.float64, order="C", copy=True)
    nmu_arr = np.zeros((S, A, F), dtype=np.float64)
    Q_arr = np.ascontiguousarray(mu_arr @ np.asarray(w))
    nQ_arr = np.zeros((S, A), dtype=np.float64)
    greedy_arr = np.zeros(S, dtype=np.int64)
    cdef double[:, :, ::1] mu = mu_arr
    cdef double[:, :, ::1] nmu = nmu_arr
    cdef double[:, ::1] Q = Q_arr
    cdef double[:, ::1] nQ = nQ_arr
    cdef long[::1] greedy = greedy_arr

    it = 0
    with nogil:
        while it < max_iter:
            it += 1
            for s in range(S):
                greedy[s] = _greedy(Q, s, A)
            residual = 0.0
            for s in range(S):
                for a in range(A):
                    for f in range(F):
                        nmu[s, a, f] = phi[s, a, f]
                    for k in range(K):
                        p = prob[s, a, k]
                        if p == 0.0:
                            continue
                        s2 = succ[s, a, k]
                        g = greedy[s2]
                        for f in range(F):
                            nmu[s, a, f] += gamma * p * mu[s2, g, f]
                    q = 0.0
                    for f in range(F):
                        q += w[f] * nmu[s, a, f]
                    nQ[s, a] = q
                    diff = fabs(q - Q[s, a])
                    if diff > residual:
                        residual = diff
            for s in range(S):
                for a in range(A):
                    Q[s, a] = nQ[s, a]
                    for f in range(F):
                        mu[s, a, f] = nmu[s, a, f]
            if residual < tol:
                break
    return Q_arr, mu_arr, it, residual


cdef inline Py_ssize_t _sample(const double[:, ::1] table, Py_ssize_t s, Py_ssize_t n, double u) nogil:
    cdef Py_ssize_t a
    cdef double acc = 0.0
    for a in range(n):
        acc += table[s, a]
        if u < acc:
            return a
    return n - 1


cdef inline Py_ssize_t _step(const long[:, :, ::1] succ, const double[:, :, ::1] prob,
                             Py_ssize_t s, Py_ssize_t a, double u) nogil:
    cdef Py_ssize_t k, K = succ.shape[2]
    cdef double acc = 0.0
    for k in range(K):
        acc += prob[s, a, k]
        if u < acc:
            return succ[s, a, k]
    return succ[s, a, 0]


def sample_episodes(const long[:, :, ::1] succ, const double[:, :, ::1] prob,
                    const double[:, :, ::1] phi, const double[:, ::1] policy,
                    const long[::1] starts, long horizon, long terminal,
                    const double[:, :, ::1] uniforms):
    cdef Py_ssize_t n = starts.shape[0], A = succ.shape[1], F = phi.shape[2]
    cdef Py_ssize_t i, t, f, s, a, s2, m = 0
    cdef Py_ssize_t cap = n * horizon

    states_arr = np.empty(cap, dtype=np.int64)
    actions_arr = np.empty(cap, dtype=np.int64)
    nexts_arr = np.empty(cap, dtype=np.int64)
    feats_arr = np.empty((cap, F), dtype=np.float64)
    done_arr = np.empty(cap, dtype=np.uint8)
    cdef long[::1] states = states_arr
    cdef long[::1] actions = actions_arr
    cdef long[::1] nexts = nexts_arr
    cdef double[:, ::1] feats = feats_arr
    cdef unsigned char[::1] done = done_arr

    with nogil:
        for i in range(n):
            s = starts[i]
            for t in range(horizon):
                if s == terminal:
                    break
                a = _sample(policy, s, A, uniforms[i, t, 0])
                s2 = _step(succ, prob, s, a, uniforms[i, t, 1])
                states[m] = s
                actions[m] = a
                nexts[m] = s2
                for f in range(F):
                    feats[m, f] = phi[s, a, f]
                done[m] = 1 if s2 == terminal else 0
                m += 1
                s = s2
    return (states_arr[:m], actions_arr[:m], nexts_arr[:m], feats_arr[:m],
            done_arr[:m].astype(bool))


def td_occupancy(const long[::1] states, const long[::1] actions,
                 const long[::1] nexts, const double[:, ::1] feats,
                 const unsigned char[::1] done, double[:, :, ::1] mu,
                 const double[::1] w, double gamma, double alpha, long sweeps):
    """Q-learning on feature returns; updates ``mu`` in place."""
    cdef Py_ssize_t n = states.shape[0], A = mu.shape[1], F = mu.shape[2]
    cdef Py_ssize_t i, sw, f, a, s, act, s2, best
    cdef double q, target
    cdef double[::1] qrow = np.zeros(A, dtype=np.float64)

    with nogil:
        for sw in range(sweeps):
            for i in range(n):
                s = states[i]
                act = actions[i]
                s2 = nexts[i]
                best = 0
                if not done[i]:
                    for a in range(A):
                        q = 0.0
                        for f in range(F):
                            q += w[f] * mu[s2, a, f]
                        qrow[a] = q
                    best = _first_max(&qrow[0], A)
                for f in range(F):
                    target = feats[i, f]
                    if not done[i]:
                        target += gamma * mu[s2, best, f]
                    mu[s, act, f] += alpha * (target - mu[s, act, f])
    return np.asarray(mu)


def policy_returns(const long[:, :, ::1] succ, const double[:, :, ::1] prob,
                   const double[:, ::1] reward, const long[::1] policy,
                   long s0, long horizon, double gamma, long terminal,
                   const double[:, ::1] uniforms):
    cdef Py_ssize_t n = uniforms.shape[0]
    cdef Py_ssize_t i, t, s, a
    cdef double g, disc

    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            s = s0
            g = 0.0
            disc = 1.0
            for t in range(horizon):
                if s == terminal:
                    break
                a = policy[s]
                g += disc * reward[s, a]
                disc *= gamma
                s = _step(succ, prob, s, a, uniforms[i, t])
            out[i] = g
    return out_arr
