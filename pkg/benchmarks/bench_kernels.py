"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from prefhunter import kernels
from prefhunter.mdp import TERMINAL, AttackerMdp


def cases(mdp, w):
    succ, prob, phi = mdp.succ, np.ascontiguousarray(mdp.prob), mdp.phi
    rng = np.random.default_rng(0)
    policy = np.full((17, 8), 1 / 8)
    starts = rng.integers(0, 16, size=128).astype(np.int64)
    uni = rng.random((128, 40, 2))
    reward = np.ascontiguousarray(mdp.reward(w))
    greedy = np.zeros(17, dtype=np.int64)

    def run(k):
        Q, mu, _, _ = k.bellman_occupancy(succ, prob, phi, w, 0.95, 1e-8, 100_000)
        batch = k.sample_episodes(succ, prob, phi, policy, starts, 40, TERMINAL, uni)
        st, ac, nx, ft, dn = batch
        k.td_occupancy(st, ac, nx, np.ascontiguousarray(ft), dn.astype(np.uint8), np.zeros((17, 8, 6)), w, 0.95, 0.2, 2)
        k.policy_returns(succ, prob, reward, greedy, 0, 40, 0.95, TERMINAL, rng.random((1000, 40)))

    return {
        "bellman_occupancy": lambda k: k.bellman_occupancy(succ, prob, phi, w, 0.95, 1e-8, 100_000),
        "sample_episodes": lambda k: k.sample_episodes(succ, prob, phi, policy, starts, 40, TERMINAL, uni),
        "policy_returns": lambda k: k.policy_returns(succ, prob, reward, greedy, 0, 40, 0.95, TERMINAL,
                                                     uni[:, :, 0].copy()),
        "all": run,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    mdp = AttackerMdp()
    w = np.array([0.8, 1.0, -0.6, 0.7, -0.3, 0.2])
    backends = {name: kernels.load(name) for name in kernels.available()}
    print(f"backends: {', '.join(backends)}")
    for name, fn in cases(mdp, w).items():
        row = []
        for bname, k in backends.items():
            t = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
            row.append((bname, t))
        base = dict(row).get("python")
        cells = "  ".join(f"{b}={t * 1e3:8.2f} ms" for b, t in row)
        speed = f"  speedup x{base / dict(row)['compiled']:.1f}" if base and "compiled" in dict(row) else ""
        print(f"{name:18s} {cells}{speed}")


if __name__ == "__main__":
    main()
